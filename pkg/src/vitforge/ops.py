"""Dense tensor math kernels and the seeded random stream.

Everything operates on plain numpy arrays: float32 is the working precision
for training, float64 the verification precision for gradient checks. Each
kernel is a pure function of its inputs, and every public kernel rejects
non-finite results instead of letting NaN/Inf propagate silently.
"""

from __future__ import annotations

import hashlib

import numpy as np
from scipy.special import erf

__all__ = [
    "ShapeError",
    "Rng",
    "matmul",
    "softmax_rows",
    "attention_context",
    "layer_norm",
    "gelu",
    "gelu_grad",
]

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327
_MASK64 = 0xFFFFFFFFFFFFFFFF


class ShapeError(ValueError):
    """Raised when operand shapes cannot be combined."""


def _ensure_finite(name: str, x: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"{name} produced non-finite values")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Plain 2-D matrix product ``a (m,k) @ b (k,n) -> (m,n)``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    return _ensure_finite("matmul", a @ b)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction so huge logits cannot overflow.

    The denominator sums the exponentials in value-sorted order, which makes
    each row's result invariant (bitwise) under permutation of its entries.
    """
    m = np.asarray(m)
    if not np.all(np.isfinite(m)):
        raise ValueError("softmax_rows requires finite inputs")
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    denom = np.sort(e, axis=-1).sum(axis=-1, keepdims=True)
    return _ensure_finite("softmax_rows", e / denom)


def attention_context(a: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Attention-weighted value sum ``a (t,t) @ v (t,d)``, accumulated in a
    token-order-independent way.

    The products a[i,j] * v[j,k] are sorted over j before reduction, so
    permuting the tokens permutes the output rows bitwise instead of
    perturbing the rounding of each sum.
    """
    a = np.asarray(a)
    v = np.asarray(v)
    if a.ndim != 2 or v.ndim != 2 or a.shape[1] != v.shape[0]:
        raise ShapeError(f"attention_context shapes disagree: {a.shape} vs {v.shape}")
    products = a[:, :, None] * v[None, :, :]
    context = np.sort(products, axis=1).sum(axis=1)
    return _ensure_finite("attention_context", context)


def layer_norm(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    eps: float = 1e-6,
) -> np.ndarray:
    """Standardize each last-axis vector, then apply the learned affine.

    Uses population variance (divide by D, not D-1), the transformer
    convention.
    """
    x = np.asarray(x)
    gamma = np.asarray(gamma)
    beta = np.asarray(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match last axis {d}"
        )
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mean = x.mean(axis=-1, keepdims=True)
    var = np.square(x - mean).mean(axis=-1, keepdims=True)
    normed = (x - mean) / np.sqrt(var + eps)
    return _ensure_finite("layer_norm", normed * gamma + beta)


def gelu(x: np.ndarray) -> np.ndarray:
    """Elementwise x * Phi(x) using the exact Gaussian CDF (not the tanh fit)."""
    x = np.asarray(x)
    if not np.all(np.isfinite(x)):
        raise ValueError("gelu requires finite inputs")
    phi = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return _ensure_finite("gelu", x * phi)


def gelu_grad(x: np.ndarray) -> np.ndarray:
    """d/dx of gelu: Phi(x) + x * pdf(x)."""
    x = np.asarray(x)
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return cdf + x * pdf


class Rng:
    """Deterministic scalar stream: one seed, one reproducible sequence.

    Backed by PCG64, whose output is specified independently of platform, so
    equal seeds give bit-equal streams everywhere. Child streams are derived
    by hashing the parent seed with a label, which keeps subsystems (init,
    shuffling, augmentation) statistically independent yet replayable.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, *labels) -> "Rng":
        tag = "/".join(str(l) for l in labels)
        digest = hashlib.sha256(f"{self.seed}:{tag}".encode()).digest()
        return Rng(int.from_bytes(digest[:8], "little"))

    def uniform(self, shape=None, low: float = 0.0, high: float = 1.0):
        return self._gen.uniform(low, high, size=shape)

    def normal(self, shape=None, std: float = 1.0):
        return self._gen.standard_normal(size=shape) * std

    def trunc_normal(self, shape, std: float = 1.0) -> np.ndarray:
        """Normal draws truncated to two standard deviations via resampling."""
        out = np.atleast_1d(self._gen.standard_normal(size=shape))
        bad = np.abs(out) > 2.0
        while np.any(bad):
            out[bad] = self._gen.standard_normal(size=int(bad.sum()))
            bad = np.abs(out) > 2.0
        return (out * std).reshape(shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def coin(self, p: float = 0.5) -> bool:
        return bool(self._gen.uniform() < p)
