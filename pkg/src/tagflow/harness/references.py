"""Reference implementations for unit tests, computed in float64."""

from __future__ import annotations

import numpy as np


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.asarray(a, np.float64) @ np.asarray(b, np.float64)


def matmul_nt(a: np.ndarray, bt: np.ndarray) -> np.ndarray:
    """``a @ bt.T``: the second operand is stored row-per-output-column."""
    return np.asarray(a, np.float64) @ np.asarray(bt, np.float64).T


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, gqa: int = 1, scale: float = 1.0) -> np.ndarray:
    """softmax(scale * Q K^T) V per head; q is (sq, hq, d), k and v are (sk, hkv, d)."""
    q, k, v = (np.asarray(x, np.float64) for x in (q, k, v))
    heads = np.arange(q.shape[1]) // gqa
    s = np.einsum("qhd,khd->hqk", q, k[:, heads]) * scale
    s -= s.max(axis=-1, keepdims=True)
    p = np.exp(s)
    p /= p.sum(axis=-1, keepdims=True)
    return np.einsum("hqk,khd->qhd", p, v[:, heads])


def identity(x: np.ndarray) -> np.ndarray:
    return np.asarray(x, np.float64)


REFERENCES = {
    "attention": attention,
    "identity": identity,
    "matmul": matmul,
    "matmul_nt": matmul_nt,
}
