"""Lowering of a bound kernel to the unrolled per-statement IR."""

from __future__ import annotations

import math

from ..dsl import ast as A
from ..dsl.binding import BoundProgram
from ..dsl.expr import ExprError, builtin_name, fold
from ..dtypes import ELEMENT_BYTES, RAW_TYPES, DtypeError, element_bytes, is_numeric
from ..layout import LayoutError, make_layout
from .intrinsics import IntrinsicDescriptor, load_descriptor
from .nodes import (
    Access, Alloc, Annotation, Assertion, Barrier, Binary, Concat, Const, IndexValue,
    KernelIr, Load, Matmul, MemDecl, Part, ProgramPoint, Reset, Select, Store, TagBinding,
    Unary, ViewAlias,
)

DEFAULT_INSTANCE_CAP = 1 << 22
ANNOTATIONS = frozenset({"sched_barrier", "sched_group_barrier", "materialize", "buffer_load", "use_agpr"})
_NUMERIC_CALLS = {"exp": 1, "max": 2, "min": 2}
_NUMERIC_BINOPS = {"+", "-", "*", "/"}


class LoweringError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.message = message
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line else ""
        super().__init__(where + message)


class CapExceeded(LoweringError):
    """Raised when unrolling would produce more instances than allowed."""


def _err(msg: str, node=None) -> LoweringError:
    pos = getattr(node, "pos", None) or A.Pos()
    return LoweringError(msg, pos.line, pos.col)


class _Lowerer:
    def __init__(self, program: BoundProgram, instance_cap: int, descriptor: IntrinsicDescriptor):
        self.program = program
        self.kernel = program.kernel
        self.cap = instance_cap
        self.descriptor = descriptor
        self.decls: dict[str, MemDecl] = {}
        self.nodes: list = []
        self.tag_bindings: list[TagBinding] = []
        self.phase = 0
        self.sid = {id(s): i for i, s in enumerate(A.walk_stmts(self.kernel.body))}
        self.aid: dict[int, str] = {}
        for s in A.walk_stmts(self.kernel.body):
            if isinstance(s, A.AssertStmt):
                self.aid[id(s)] = f"a{len(self.aid)}"

    # --- helpers -----------------------------------------------------------

    def emit(self, cls, stmt, inst: tuple, **fields):
        if len(self.nodes) >= self.cap:
            raise CapExceeded(
                f"unrolling exceeds the instance cap of {self.cap}", stmt.pos.line, stmt.pos.col
            )
        point = ProgramPoint(self.sid[id(stmt)], inst, stmt.pos.line)
        node = cls(point=point, phase=self.phase, **fields)
        self.nodes.append(node)
        return node

    def add_decl(self, decl: MemDecl, node) -> None:
        old = self.decls.get(decl.name)
        if old is not None:
            same = (old.space, old.dtype, old.layout, old.root) == (
                decl.space, decl.dtype, decl.layout, decl.root)
            if not same:
                raise _err(f"'{decl.name}' redeclared with a different type or layout", node)
            return
        self.decls[decl.name] = decl

    def tile(self, name: str, env: dict, node) -> MemDecl:
        b = env.get(name)
        if b is None or b[0] != "tile":
            raise _err(f"'{name}' is not a tile", node)
        return self.decls[b[1]]

    def index(self, e, env: dict, free: frozenset = frozenset()):
        """Fold an integer expression; remaining free names must be thread builtins or ``free``."""
        sub = {}
        for n in A.names_in(e):
            if n in free:
                continue
            b = env.get(n)
            if b is None:
                if n in ("threadIdx", "blockIdx"):
                    continue
                raise _err(f"undeclared identifier '{n}'", e)
            if b[0] == "tile":
                raise _err(f"tile '{n}' used in an index expression", e)
            sub[n] = b[1]
        try:
            out = fold(e, sub)
        except ExprError as exc:
            raise _err(str(exc), e) from None
        for n in A.names_in(out):
            if not n.startswith("$") and n not in free:
                raise _err(f"'{n}' is not an integer expression", e)
        return out

    def is_index(self, e, env: dict) -> bool:
        if isinstance(e, A.Num):
            return isinstance(e.value, int)
        if isinstance(e, A.Name):
            b = env.get(e.id)
            return b is not None and b[0] in ("index", "int")
        if isinstance(e, A.Attr):
            return builtin_name(e) is not None
        if isinstance(e, A.BinOp):
            return self.is_index(e.left, env) and self.is_index(e.right, env)
        if isinstance(e, A.UnaryOp):
            return self.is_index(e.operand, env)
        if isinstance(e, A.IfExp):
            return all(self.is_index(x, env) for x in (e.body, e.test, e.orelse))
        return False

    def access(self, e: A.Subscript, env: dict, free: frozenset = frozenset()) -> Access:
        if not isinstance(e.value, A.Name):
            raise _err("only named tiles can be subscripted", e)
        decl = self.tile(e.value.id, env, e)
        if len(e.index) != decl.layout.rank:
            raise _err(
                f"'{decl.name}' has rank {decl.layout.rank} but is indexed with {len(e.index)} subscripts", e
            )
        return Access(decl.name, tuple(self.index(x, env, free) for x in e.index))

    def scalar_access(self, name: str, env: dict, node) -> Access:
        decl = self.tile(name, env, node)
        if decl.layout.size() != 1:
            raise _err(f"tile '{name}' used as a scalar value", node)
        return Access(decl.name, tuple(A.Num(0) for _ in range(decl.layout.rank)))

    def region(self, e, env: dict) -> tuple:
        """A whole tile (by name) or a prefix-indexed slice, elements in row-major order."""
        if isinstance(e, A.Name):
            decl, prefix = self.tile(e.id, env, e), ()
        elif isinstance(e, A.Subscript) and isinstance(e.value, A.Name):
            decl = self.tile(e.value.id, env, e)
            if len(e.index) > decl.layout.rank:
                raise _err(f"too many subscripts for '{decl.name}'", e)
            prefix = tuple(self.index(x, env) for x in e.index)
        else:
            raise _err("matmul operands must be tiles or tile slices", e)
        rest = decl.layout.extents[len(prefix):]
        out = []
        for idx in _row_major(rest):
            out.append(Access(decl.name, prefix + tuple(A.Num(i) for i in idx)))
        return tuple(out)

    # --- values ------------------------------------------------------------

    def value(self, e, env: dict):
        if self.is_index(e, env) and not isinstance(e, A.Num):
            return IndexValue(self.index(e, env))
        if isinstance(e, A.Num):
            return Const(e.value)
        if isinstance(e, A.Name):
            return Load(self.scalar_access(e.id, env, e))
        if isinstance(e, A.Subscript):
            return Load(self.access(e, env))
        if isinstance(e, A.UnaryOp):
            if e.op != "-":
                raise _err(f"operator '{e.op}' is not defined on data", e)
            return Unary("-", self.value(e.operand, env))
        if isinstance(e, A.BinOp):
            if e.op not in _NUMERIC_BINOPS:
                raise _err(f"operator '{e.op}' is not defined on data", e)
            return Binary(e.op, self.value(e.left, env), self.value(e.right, env))
        if isinstance(e, A.IfExp):
            if not self.is_index(e.test, env):
                raise _err("selection condition must be an integer expression", e.test)
            return Select(self.index(e.test, env), self.value(e.body, env), self.value(e.orelse, env))
        if isinstance(e, A.Call) and isinstance(e.func, A.Name):
            fn = e.func.id
            if fn in _NUMERIC_CALLS:
                if len(e.args) != _NUMERIC_CALLS[fn]:
                    raise _err(f"{fn}() takes {_NUMERIC_CALLS[fn]} argument(s)", e)
                args = [self.value(a, env) for a in e.args]
                return Unary("exp", args[0]) if fn == "exp" else Binary(fn, args[0], args[1])
            if fn in ("lo", "hi"):
                return Concat((self.part(e, env),))
            if fn == "concat":
                return Concat(self.concat_parts(e, env))
            if fn == "matmul":
                raise _err("matmul() must be assigned directly to a tile", e)
        raise _err(f"unsupported expression in data context: {type(e).__name__}", e)

    def part(self, e, env: dict) -> Part:
        if isinstance(e, A.Call) and isinstance(e.func, A.Name) and e.func.id in ("lo", "hi"):
            if len(e.args) != 1:
                raise _err(f"{e.func.id}() takes one argument", e)
            inner = e.args[0]
            half = e.func.id
        else:
            inner, half = e, "all"
        if isinstance(inner, A.Name):
            acc = self.scalar_access(inner.id, env, inner)
        elif isinstance(inner, A.Subscript):
            acc = self.access(inner, env)
        else:
            raise _err("concat() parts must be tile elements", inner)
        if half != "all" and self.decls[acc.decl].element_bytes < 2:
            raise _err("lo()/hi() need elements of at least two bytes", e)
        return Part(acc, half)

    def concat_parts(self, e: A.Call, env: dict) -> tuple:
        parts = []
        for a in e.args:
            if isinstance(a, A.Generator):
                lo = self.index(a.start, env)
                hi = self.index(a.stop, env)
                if not (isinstance(lo, A.Num) and isinstance(hi, A.Num)):
                    raise _err("concat() generator bounds must be constant", a)
                for v in range(lo.value, hi.value):
                    inner = dict(env)
                    inner[a.var] = ("int", A.Num(v))
                    parts.append(self.part(a.elt, inner))
            else:
                parts.append(self.part(a, env))
        if not parts:
            raise _err("concat() needs at least one part", e)
        return tuple(parts)

    def value_dtype(self, v) -> str | None:
        if isinstance(v, Load):
            return self.decls[v.access.decl].dtype
        if isinstance(v, Concat):
            n = self.concat_bytes(v)
            name = f"u{8 * n}"
            if name not in ELEMENT_BYTES:
                raise LoweringError(f"concat() produces {n} bytes, which is no element type")
            return name
        if isinstance(v, IndexValue):
            return "i32"
        if isinstance(v, Const):
            return None
        kids = [v.x] if isinstance(v, Unary) else [v.a, v.b]
        found = [self.value_dtype(k) for k in kids]
        floats = [t for t in found if t in ("fp32", "bf16", "fp8")]
        if floats:
            return floats[0]
        return next((t for t in found if t is not None), None)

    def concat_bytes(self, v: Concat) -> int:
        n = 0
        for p in v.parts:
            eb = self.decls[p.access.decl].element_bytes
            n += eb if p.half == "all" else eb // 2
        return n

    def copyable(self, v, dtype: str) -> bool:
        nbytes = element_bytes(dtype)
        if isinstance(v, Load):
            src = self.decls[v.access.decl].dtype
            return src == dtype or (
                element_bytes(src) == nbytes and (src in RAW_TYPES or dtype in RAW_TYPES)
            )
        if isinstance(v, Concat):
            return self.concat_bytes(v) == nbytes
        if isinstance(v, Const):
            return is_numeric(dtype) or v.value == 0
        if isinstance(v, IndexValue):
            return is_numeric(dtype)
        if isinstance(v, Select):
            return self.copyable(v.a, dtype) and self.copyable(v.b, dtype)
        return False

    def check_numeric(self, v, node) -> None:
        if isinstance(v, Load):
            dt = self.decls[v.access.decl].dtype
            if not is_numeric(dt):
                raise _err(f"arithmetic on non-numeric element type {dt}", node)
        elif isinstance(v, Concat):
            raise _err("concat() result used in arithmetic", node)
        elif isinstance(v, Unary):
            self.check_numeric(v.x, node)
        elif isinstance(v, (Binary, Select)):
            self.check_numeric(v.a, node)
            self.check_numeric(v.b, node)

    def store(self, stmt, inst, dst: Access, value, node) -> None:
        dtype = self.decls[dst.decl].dtype
        if self.copyable(value, dtype):
            self.emit(Store, stmt, inst, dst=dst, value=value, numeric=False)
            return
        if not is_numeric(dtype):
            raise _err(f"cannot store a computed value into {dtype} element of '{dst.decl}'", node)
        self.check_numeric(value, node)
        self.emit(Store, stmt, inst, dst=dst, value=value, numeric=True)

    # --- declarations --------------------------------------------------------

    def shape_of(self, e) -> tuple:
        elts = e.elts if isinstance(e, A.TupleExpr) else (e,)
        out = []
        for x in elts:
            if isinstance(x, A.TupleExpr):
                out.append(tuple(self.const_int(y) for y in x.elts))
            else:
                out.append(self.const_int(x))
        return tuple(out)

    def const_int(self, e) -> int:
        if not (isinstance(e, A.Num) and isinstance(e.value, int)):
            raise _err("shape and stride entries must be integer constants", e)
        return e.value

    def dtype_arg(self, e) -> str:
        if not isinstance(e, A.Name) or e.id not in ELEMENT_BYTES:
            raise _err("expected an element type", e)
        return e.id

    def declare(self, target: A.Name, call: A.Call, env: dict, stmt, inst) -> None:
        fn = call.func
        if isinstance(fn, A.Name) and fn.id in ("make_shared", "make_local"):
            if len(call.args) != 2:
                raise _err(f"{fn.id}(shape, dtype) takes two arguments", call)
            shape = self.shape_of(call.args[0])
            dtype = self.dtype_arg(call.args[1])
            space = "shared" if fn.id == "make_shared" else "register"
            try:
                layout = make_layout(shape, None, element_bytes(dtype))
            except LayoutError as exc:
                raise _err(str(exc), call) from None
            self.add_decl(MemDecl(target.id, space, dtype, layout, target.id, True, call.pos.line), call)
            env[target.id] = ("tile", target.id)
            self.emit(Alloc, stmt, inst, decl=target.id)
            return
        # X.view(shape, dtype[, strides])
        src_name = fn.value.id if isinstance(fn.value, A.Name) else None
        if src_name is None:
            raise _err("view() must be called on a named tile", call)
        src = self.tile(src_name, env, call)
        if len(call.args) not in (2, 3):
            raise _err("view(shape, dtype[, strides]) takes two or three arguments", call)
        shape = self.shape_of(call.args[0])
        dtype = self.dtype_arg(call.args[1])
        strides = self.shape_of(call.args[2]) if len(call.args) == 3 else None
        try:
            layout = make_layout(shape, strides, element_bytes(dtype))
        except LayoutError as exc:
            raise _err(str(exc), call) from None
        decl = MemDecl(target.id, src.space, dtype, layout, src.root, src.writable, call.pos.line, src.name)
        self.add_decl(decl, call)
        env[target.id] = ("tile", target.id)
        self.emit(ViewAlias, stmt, inst, decl=target.id, source=src.name)

    # --- statements ----------------------------------------------------------

    def block(self, body, env: dict, inst: tuple) -> None:
        for s in body:
            self.stmt(s, env, inst)

    def stmt(self, s, env: dict, inst: tuple) -> None:
        if isinstance(s, A.For):
            lo, hi = self.index(s.start, env), self.index(s.stop, env)
            if not (isinstance(lo, A.Num) and isinstance(hi, A.Num)):
                raise _err("loop bounds must be compile-time constants", s)
            for v in range(lo.value, hi.value):
                inner = dict(env)
                inner[s.var] = ("int", A.Num(v))
                self.block(s.body, inner, inst + (v,))
                # names introduced in the body stay visible after the loop
                for k, b in inner.items():
                    if k != s.var:
                        env[k] = b
            return
        if isinstance(s, A.Assign):
            for t, v in zip(s.targets, s.values):
                self.assign(s, t, v, env, inst)
            return
        if isinstance(s, A.ExprStmt):
            self.call_stmt(s, env, inst)
            return
        if isinstance(s, A.TagStmt):
            for d in s.defs:
                self.tag_def(s, d, env, inst)
            return
        if isinstance(s, A.AssertStmt):
            free = frozenset(q.var for q in s.quantifiers)
            quants = tuple((q.var, self.const_int(q.extent)) for q in s.quantifiers)
            left = self.access(s.left, env, free)
            right = self.access(s.right, env, free)
            self.emit(Assertion, s, inst, assertion_id=self.aid[id(s)], op=s.op,
                      left=left, right=right, quantifiers=quants)
            return
        raise _err(f"unsupported statement {type(s).__name__}", s)

    def assign(self, stmt, target, value, env: dict, inst: tuple) -> None:
        if isinstance(value, A.Call) and (
            (isinstance(value.func, A.Name) and value.func.id in ("make_shared", "make_local"))
            or (isinstance(value.func, A.Attr) and value.func.attr == "view")
        ):
            if not isinstance(target, A.Name):
                raise _err("tile declarations must be assigned to a name", target)
            self.declare(target, value, env, stmt, inst)
            return
        if isinstance(value, A.Call) and isinstance(value.func, A.Name) and value.func.id == "matmul":
            self.matmul(stmt, target, value, env, inst)
            return
        if isinstance(target, A.Name):
            b = env.get(target.id)
            if b is not None and b[0] == "tile":
                self.store(stmt, inst, self.scalar_access(target.id, env, target), self.value(value, env), value)
                return
            if self.is_index(value, env):
                env[target.id] = ("index", self.index(value, env))
                return
            v = self.value(value, env)
            dtype = self.value_dtype(v) or "fp32"
            layout = make_layout((1,), None, element_bytes(dtype))
            self.add_decl(MemDecl(target.id, "register", dtype, layout, target.id, True, stmt.pos.line), target)
            env[target.id] = ("tile", target.id)
            self.store(stmt, inst, self.scalar_access(target.id, env, target), v, value)
            return
        dst = self.access(target, env)
        self.store(stmt, inst, dst, self.value(value, env), value)

    def matmul(self, stmt, target, call: A.Call, env: dict, inst: tuple) -> None:
        desc = self.descriptor
        if len(call.args) != 3:
            raise _err("matmul(a, b, c) takes three operands", call)
        if self.program.threads % desc.lanes:
            raise _err(f"matmul needs whole {desc.lanes}-lane warps; threads = {self.program.threads}", call)
        a, b, c = (self.region(x, env) for x in call.args)
        dst = self.region(target, env)
        if len(a) != len(b) or len(a) % desc.slots:
            raise _err(
                f"matmul operands hold {len(a)} and {len(b)} elements; {desc.name} needs equal "
                f"multiples of {desc.slots}", call)
        if len(c) != desc.accumulators or len(dst) != desc.accumulators:
            raise _err(f"matmul accumulators must hold {desc.accumulators} elements for {desc.name}", call)
        for region, want in ((a, desc.operand_dtype), (b, desc.operand_dtype)):
            got = self.decls[region[0].decl].dtype
            if got != want:
                raise _err(f"matmul operand type {got} does not match {desc.name} ({want})", call)
        for region in (c, dst):
            got = self.decls[region[0].decl].dtype
            if not is_numeric(got) or got in RAW_TYPES:
                raise _err(f"matmul accumulator type {got} is not numeric", call)
        self.emit(Matmul, stmt, inst, dst=dst, a=a, b=b, c=c, descriptor=desc)

    def call_stmt(self, s: A.ExprStmt, env: dict, inst: tuple) -> None:
        call = s.value
        if not isinstance(call.func, A.Name):
            raise _err("unsupported call statement", call)
        fn = call.func.id
        if fn == "syncthreads":
            self.emit(Barrier, s, inst)
            self.phase += 1
        elif fn == "reset":
            if len(call.args) != 1 or not isinstance(call.args[0], A.Name):
                raise _err("reset() takes one shared tile", call)
            decl = self.tile(call.args[0].id, env, call)
            if decl.space != "shared":
                raise _err(f"reset() applies to shared tiles, '{decl.name}' is {decl.space}", call)
            self.emit(Reset, s, inst, decl=decl.root)
        elif fn in ANNOTATIONS:
            from ..dsl.printer import expr_str

            self.emit(Annotation, s, inst, name=fn, args=tuple(expr_str(a) for a in call.args))
        else:
            raise _err(f"'{fn}()' cannot be used as a statement", call)

    def tag_def(self, stmt, d: A.TagDef, env: dict, inst: tuple) -> None:
        decl = self.tile(d.tensor, env, d)
        if len(d.vars) != decl.layout.rank:
            raise _err(f"tag function on '{d.tensor}' binds {len(d.vars)} coordinates, tile has rank "
                       f"{decl.layout.rank}", d)
        inner = {k: v for k, v in env.items() if k not in d.vars}
        exprs = tuple(self.index(x, inner, frozenset(d.vars)) for x in d.exprs)
        node = self.emit(TagBinding, stmt, inst, name=d.name, decl=decl.name, vars=tuple(d.vars), exprs=exprs)
        self.tag_bindings.append(node)

    def run(self) -> KernelIr:
        env: dict = {}
        for p in self.kernel.params:
            if p.kind != "tensor":
                continue
            shape = tuple(self.const_int(x) for x in p.shape)
            try:
                eb = element_bytes(p.dtype)
                layout = make_layout(shape, None, eb)
            except (DtypeError, LayoutError) as exc:
                raise _err(str(exc), p) from None
            self.decls[p.name] = MemDecl(p.name, "global", p.dtype, layout, p.name, True, p.pos.line)
            env[p.name] = ("tile", p.name)
        self.block(self.kernel.body, env, ())
        consts = dict(self.program.consts)
        return KernelIr(
            name=self.kernel.name,
            consts=consts,
            threads=self.program.threads,
            grid=self.program.grid,
            decls=self.decls,
            nodes=self.nodes,
            tag_bindings=self.tag_bindings,
            assertion_ids=list(self.aid.values()),
        )


def _row_major(extents: tuple):
    if not extents:
        yield ()
        return
    total = math.prod(extents)
    for lin in range(total):
        idx = []
        rest = lin
        for e in reversed(extents):
            idx.append(rest % e)
            rest //= e
        yield tuple(reversed(idx))


def lower(program: BoundProgram, instance_cap: int = DEFAULT_INSTANCE_CAP,
          descriptor: IntrinsicDescriptor | str = "mfma_32x32x8_bf16") -> KernelIr:
    """Unroll every loop and forall, resolve tiles and aliases, and assign phases."""
    if isinstance(descriptor, str):
        descriptor = load_descriptor(descriptor)
    return _Lowerer(program, instance_cap, descriptor).run()
