"""Layout functions: shape/stride pairs mapping logical coordinates to offsets.

A layout has one ``LayoutDim`` per logical dimension.  A flat dimension is a
single ``(shape, stride)`` pair.  A nested dimension carries tuples and takes a
single integer coordinate that is wrapped around its sub-shapes in
column-major order::

    L(c) = (c % s0) * t0 + ((c // s0) % s1) * t1 + ... + (c // (s0*...*s_{k-2})) * t_{k-1}

The final component is never reduced, so a dimension whose stride tuple is one
entry longer than its shape tuple is an *open* dimension: ``(4,):(1,32)`` maps
``5`` to ``(5 % 4) * 1 + (5 // 4) * 32 = 33`` and has no finite extent.

Offsets are in units of the layout's own element; byte offsets are
``offset * element_bytes``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterator, Sequence, Union

import numpy as np

IntTuple = Union[int, tuple]

#: Tiles larger than this are rejected so that exhaustive enumeration stays cheap.
MAX_LAYOUT_ELEMENTS = 1 << 24


class LayoutError(ValueError):
    """Malformed layout, out-of-domain coordinate, or non-representable operation."""


def _flatten(t: IntTuple) -> tuple:
    if isinstance(t, tuple):
        return tuple(itertools.chain.from_iterable(_flatten(x) for x in t))
    return (t,)


def _congruent(a: IntTuple, b: IntTuple) -> bool:
    if isinstance(a, tuple) and isinstance(b, tuple):
        return len(a) == len(b) and all(_congruent(x, y) for x, y in zip(a, b))
    return not isinstance(a, tuple) and not isinstance(b, tuple)


def _is_int(x) -> bool:
    return isinstance(x, (int, np.integer)) and not isinstance(x, bool)


@dataclass(frozen=True)
class LayoutDim:
    shape: IntTuple
    stride: IntTuple

    def __post_init__(self) -> None:
        shapes, strides = _flatten(self.shape), _flatten(self.stride)
        if not all(_is_int(s) for s in shapes) or not all(_is_int(t) for t in strides):
            raise LayoutError(f"shape/stride entries must be integers: {self}")
        if any(s < 1 for s in shapes):
            raise LayoutError(f"non-positive shape entry in {self.shape}")
        if _congruent(self.shape, self.stride):
            return
        # open form: a flat shape tuple with exactly one extra trailing stride
        if (
            isinstance(self.shape, tuple)
            and isinstance(self.stride, tuple)
            and len(self.stride) == len(self.shape) + 1
            and all(not isinstance(x, tuple) for x in self.shape + self.stride)
        ):
            return
        raise LayoutError(f"shape {self.shape} and stride {self.stride} are not congruent")

    @property
    def is_open(self) -> bool:
        return len(_flatten(self.stride)) == len(_flatten(self.shape)) + 1

    @property
    def flat_shape(self) -> tuple:
        return _flatten(self.shape)

    @property
    def flat_stride(self) -> tuple:
        return _flatten(self.stride)

    @property
    def extent(self) -> int | None:
        if self.is_open:
            return None
        return math.prod(self.flat_shape)

    def modes(self) -> list[tuple[int, int]]:
        """Flat (shape, stride) pairs in wrap order; the open residue is omitted."""
        return list(zip(self.flat_shape, self.flat_stride))

    def eval(self, c):
        shapes, strides = self.flat_shape, self.flat_stride
        if len(strides) == 1:
            return c * strides[0]
        rest = c
        out = 0
        for s, t in zip(shapes[: len(strides) - 1], strides[:-1]):
            out = out + (rest % s) * t
            rest = rest // s
        return out + rest * strides[-1]

    def __str__(self) -> str:
        return f"{_fmt(self.shape)}:{_fmt(self.stride)}"


def _fmt(t: IntTuple) -> str:
    if isinstance(t, tuple):
        return "(" + ",".join(_fmt(x) for x in t) + ")"
    return str(t)


@dataclass(frozen=True)
class Layout:
    dims: tuple[LayoutDim, ...]
    element_bytes: int = 1

    def __post_init__(self) -> None:
        if self.element_bytes < 1:
            raise LayoutError("element_bytes must be positive")
        if not self.is_open and self.size() > MAX_LAYOUT_ELEMENTS:
            raise LayoutError(
                f"layout {self} has {self.size()} elements, above the cap of {MAX_LAYOUT_ELEMENTS}"
            )

    @property
    def rank(self) -> int:
        return len(self.dims)

    @property
    def shape(self) -> tuple:
        return tuple(d.shape for d in self.dims)

    @property
    def stride(self) -> tuple:
        return tuple(d.stride for d in self.dims)

    @property
    def extents(self) -> tuple:
        return tuple(d.extent for d in self.dims)

    @property
    def is_open(self) -> bool:
        return any(d.is_open for d in self.dims)

    def modes(self) -> list[tuple[int, int]]:
        """All flat modes, first dimension fastest (the 1-D linearization order)."""
        return [m for d in self.dims for m in d.modes()]

    def size(self) -> int:
        if self.is_open:
            raise LayoutError(f"open layout {self} has no finite size")
        return math.prod(d.extent for d in self.dims)

    def cosize(self) -> int:
        lo, hi = self.offset_range()
        if lo < 0:
            raise LayoutError(f"layout {self} reaches negative offset {lo}")
        return hi + 1

    def offset_range(self) -> tuple[int, int]:
        """Exact (min, max) offset; every residue combination is reachable."""
        self.size()
        lo = sum(min(0, (s - 1) * t) for s, t in self.modes())
        hi = sum(max(0, (s - 1) * t) for s, t in self.modes())
        return lo, hi

    def __call__(self, *coord):
        return eval_layout(self, coord)

    def eval_unchecked(self, coord: Sequence):
        """Evaluate without domain checks; works on numpy arrays (broadcasting)."""
        out = 0
        for d, c in zip(self.dims, coord):
            out = out + d.eval(c)
        return out

    def delinearize(self, index):
        """Map a linear index to a coordinate, first dimension fastest."""
        coord = []
        rest = index
        for d in self.dims[:-1]:
            coord.append(rest % d.extent)
            rest = rest // d.extent
        coord.append(rest)
        return tuple(coord)

    def eval_linear(self, index):
        return self.eval_unchecked(self.delinearize(index))

    def coords(self) -> Iterator[tuple[int, ...]]:
        """Row-major enumeration of the coordinate domain."""
        return itertools.product(*(range(e) for e in self.extents))

    def offsets(self) -> np.ndarray:
        """Offsets of every coordinate, in linear (first-dimension-fastest) order."""
        return self.eval_linear(np.arange(self.size(), dtype=np.int64))

    def __str__(self) -> str:
        return f"{_fmt(self.shape)}:{_fmt(self.stride)}"


def _default_strides(shapes: Sequence[IntTuple]) -> tuple:
    # row-major across dimensions, compact column-major inside a nested dimension
    strides = []
    running = 1
    for shape in reversed(shapes):
        if isinstance(shape, tuple):
            inner = []
            acc = running
            for s in _flatten(shape):
                inner.append(acc)
                acc *= s
            strides.append(_unflatten_like(shape, inner))
            running = acc
        else:
            strides.append(running)
            running *= shape
    return tuple(reversed(strides))


def _unflatten_like(template: IntTuple, flat: list):
    it = iter(flat)

    def build(t):
        if isinstance(t, tuple):
            return tuple(build(x) for x in t)
        return next(it)

    return build(template)


def make_layout(
    shapes: Sequence[IntTuple] | int,
    strides: Sequence[IntTuple] | int | None = None,
    element_bytes: int = 1,
) -> Layout:
    """Build a validated layout; omitted strides give the contiguous row-major layout."""
    if _is_int(shapes):
        shapes = (shapes,)
    if strides is not None and _is_int(strides):
        strides = (strides,)
    shapes = tuple(shapes)
    if strides is None:
        strides = _default_strides(shapes)
    strides = tuple(strides)
    if len(shapes) != len(strides):
        raise LayoutError(f"arity mismatch: {len(shapes)} shapes vs {len(strides)} strides")
    return Layout(tuple(LayoutDim(s, t) for s, t in zip(shapes, strides)), element_bytes)


def identity(n: int, element_bytes: int = 1) -> Layout:
    return make_layout((n,), (1,), element_bytes)


def _check_coord(layout: Layout, coord: Sequence) -> None:
    if len(coord) != layout.rank:
        raise LayoutError(f"coordinate {tuple(coord)} has rank {len(coord)}, layout has {layout.rank}")
    for i, (c, d) in enumerate(zip(coord, layout.dims)):
        ext = d.extent
        if c < 0 or (ext is not None and c >= ext):
            raise LayoutError(f"coordinate component {i}={c} outside [0, {ext})")


def eval_layout(layout: Layout, coord: Sequence[int]) -> int:
    coord = tuple(int(c) for c in coord)
    _check_coord(layout, coord)
    return int(layout.eval_unchecked(coord))


def size(layout: Layout) -> int:
    return layout.size()


def cosize(layout: Layout) -> int:
    return layout.cosize()


def is_dense(layout: Layout) -> bool:
    """True iff the layout is a bijection onto [0, size)."""
    modes = sorted(((s, t) for s, t in layout.modes() if s > 1), key=lambda m: m[1])
    expect = 1
    for s, t in modes:
        if t != expect:
            return False
        expect *= s
    return True


def view_compatible(src: Layout, dst: Layout) -> bool:
    """Both layouts cover the same number of bytes and each covers its span exactly."""
    if src.is_open or dst.is_open:
        return False
    if src.size() * src.element_bytes != dst.size() * dst.element_bytes:
        return False
    return is_dense(src) and is_dense(dst)


def _coalesce(modes: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out: list[tuple[int, int]] = []
    for s, t in modes:
        if s == 1:
            continue
        if out and out[-1][0] * out[-1][1] == t:
            ps, pt = out[-1]
            out[-1] = (ps * s, pt)
        else:
            out.append((s, t))
    return out or [(1, 0)]


def _compose_mode(outer: list[tuple[int, int]], n: int, r: int) -> list[tuple[int, int]]:
    if r == 0 or n == 1:
        return [(n, 0)]
    result = []
    rest_n, rest_r = n, r
    for s, t in outer[:-1]:
        if rest_r % s == 0:
            rest_r //= s
            continue
        if s % rest_r != 0:
            raise LayoutError(f"stride {rest_r} does not divide outer mode {s}:{t}")
        take = min(s // rest_r, rest_n)
        if rest_n % take != 0:
            raise LayoutError(f"shape {rest_n} does not divide into outer mode {s}:{t}")
        result.append((take, rest_r * t))
        rest_n //= take
        rest_r = 1
        if rest_n == 1:
            return result
    result.append((rest_n, rest_r * outer[-1][1]))
    return result


def compose(outer: Layout, inner: Layout) -> Layout:
    """Layout ``R`` with ``R(c) = outer.eval_linear(inner(c))`` for every c in inner's domain."""
    if inner.cosize() > outer.size():
        raise LayoutError(
            f"domain overflow: inner cosize {inner.cosize()} exceeds outer size {outer.size()}"
        )
    if any(t < 0 for _, t in inner.modes()):
        raise LayoutError("composition with negative inner strides is not supported")
    outer_modes = _coalesce(outer.modes())
    dims = []
    for d in inner.dims:
        sub = []
        for n, r in d.modes():
            sub.extend(_compose_mode(outer_modes, n, r))
        if len(sub) == 1:
            dims.append(LayoutDim(sub[0][0], sub[0][1]))
        else:
            dims.append(LayoutDim(tuple(s for s, _ in sub), tuple(t for _, t in sub)))
    return Layout(tuple(dims), outer.element_bytes)
