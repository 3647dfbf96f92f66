"""Random layout generators shared by the layout tests and the acceptance suite."""

from __future__ import annotations

import random

import numpy as np


def random_layout(rng: random.Random, max_size: int = 4096, pow2: bool = False):
    sizes = [1, 2, 4, 8] if pow2 else [1, 2, 3, 4, 5, 8]
    rank = rng.randint(1, 3)
    shapes, strides = [], []
    total = 1
    for _ in range(rank):
        if rng.random() < 0.4:
            k = rng.randint(2, 3)
            s = tuple(rng.choice(sizes[:4]) for _ in range(k))
            t = tuple(rng.randint(0, 40) for _ in range(k))
            e = int(np.prod(s))
        else:
            s = rng.choice(sizes)
            t = rng.randint(0, 60)
            e = s
        if total * e > max_size:
            continue
        total *= e
        shapes.append(s)
        strides.append(t)
    if not shapes:
        shapes, strides = [4], [1]
    return tuple(shapes), tuple(strides)


def compact_colmajor(rng: random.Random):
    rank = rng.randint(1, 3)
    shapes = [rng.choice([1, 2, 4, 8]) for _ in range(rank)]
    strides, acc = [], 1
    for s in shapes:
        strides.append(acc)
        acc *= s
    order = list(range(rank))
    rng.shuffle(order)
    return tuple(shapes[i] for i in order), tuple(strides[i] for i in order)
