"""Analysis/synthesis transform pairs.

A pair maps a signal ``x`` (length ``N``, row-major for images) to its
coefficient vector ``a = analyze(x)`` and back with ``synthesize``. The n-th
coefficient is the n-th analysis functional applied to ``x``; ``adjoint`` is
the transpose of the analysis operator and turns a coefficient-domain vector
into the signal-domain vector it weighs. The sensing vector of a tree node is
``adjoint`` of the indicator of the node's coefficient range.

Kinds:
    - ``identity``: the canonical basis.
    - ``haar2d``: orthonormal non-standard (square) 2D Haar decomposition.
    - ``cdf97_2d``: biorthogonal CDF 9/7 via the JPEG 2000 lifting
      factorization with whole-sample symmetric extension.

Wavelet coefficients are laid out band by band: the approximation band first,
then the detail bands of each level from coarse to fine, each level ordered
(top-right, bottom-left, bottom-right) of the square decomposition and every
band flattened row-major.

All operators accept leading batch dimensions, i.e. arrays of shape
``(..., N)``, and are pure functions of their input.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from enum import Enum
from functools import lru_cache
from typing import Callable, Optional, Union

import numpy as np

from kahs.utils import is_power_of_two

__all__ = [
    "DimensionError",
    "TransformKind",
    "TransformPair",
    "PermutedTransform",
    "identity_pair",
    "haar2d_pair",
    "cdf97_2d_pair",
    "permuted",
    "make_pair",
    "band_order",
]

# JPEG 2000 irreversible 9/7 lifting constants
CDF97_ALPHA = -1.586134342059924
CDF97_BETA = -0.052980118572961
CDF97_GAMMA = 0.882911075530934
CDF97_DELTA = 0.443506852043971
CDF97_ZETA = 1.149604398860241

_SQRT2 = np.sqrt(2.0)

Step = Callable[[np.ndarray], np.ndarray]


class DimensionError(ValueError):
    """Raised for invalid transform sizes or mismatching dimensions."""


class TransformKind(str, Enum):
    IDENTITY = "identity"
    HAAR2D = "haar2d"
    CDF97_2D = "cdf97_2d"


# -----------------------------------------------------------------------------
# 1D steps, all acting on the last axis
# -----------------------------------------------------------------------------
def _haar_forward(x: np.ndarray) -> np.ndarray:
    even, odd = x[..., 0::2], x[..., 1::2]
    return np.concatenate(((even + odd) / _SQRT2, (even - odd) / _SQRT2), axis=-1)


def _haar_inverse(c: np.ndarray) -> np.ndarray:
    half = c.shape[-1] // 2
    low, high = c[..., :half], c[..., half:]
    return _interleave((low + high) / _SQRT2, (low - high) / _SQRT2)


def _next(s: np.ndarray) -> np.ndarray:
    # s[i+1], mirrored at the right edge
    return np.concatenate((s[..., 1:], s[..., -1:]), axis=-1)


def _prev(d: np.ndarray) -> np.ndarray:
    # d[i-1], mirrored at the left edge
    return np.concatenate((d[..., :1], d[..., :-1]), axis=-1)


def _next_transposed(d: np.ndarray) -> np.ndarray:
    """Transpose of ``s -> s + _next(s)``."""
    out = d.copy()
    out[..., 1:] += d[..., :-1]
    out[..., -1] += d[..., -1]
    return out


def _prev_transposed(s: np.ndarray) -> np.ndarray:
    """Transpose of ``d -> d + _prev(d)``."""
    out = s.copy()
    out[..., :-1] += s[..., 1:]
    out[..., 0] += s[..., 0]
    return out


def _interleave(even: np.ndarray, odd: np.ndarray) -> np.ndarray:
    out = np.empty(even.shape[:-1] + (2 * even.shape[-1],), dtype=np.result_type(even, odd))
    out[..., 0::2] = even
    out[..., 1::2] = odd
    return out


def _cdf97_forward(x: np.ndarray) -> np.ndarray:
    s = x[..., 0::2].astype(float, copy=True)
    d = x[..., 1::2].astype(float, copy=True)
    d += CDF97_ALPHA * (s + _next(s))
    s += CDF97_BETA * (d + _prev(d))
    d += CDF97_GAMMA * (s + _next(s))
    s += CDF97_DELTA * (d + _prev(d))
    return np.concatenate((s * CDF97_ZETA, d / CDF97_ZETA), axis=-1)


def _cdf97_inverse(c: np.ndarray) -> np.ndarray:
    half = c.shape[-1] // 2
    s = c[..., :half] / CDF97_ZETA
    d = c[..., half:] * CDF97_ZETA
    s -= CDF97_DELTA * (d + _prev(d))
    d -= CDF97_GAMMA * (s + _next(s))
    s -= CDF97_BETA * (d + _prev(d))
    d -= CDF97_ALPHA * (s + _next(s))
    return _interleave(s, d)


def _cdf97_adjoint(c: np.ndarray) -> np.ndarray:
    half = c.shape[-1] // 2
    s = c[..., :half] * CDF97_ZETA
    d = c[..., half:] / CDF97_ZETA
    d += CDF97_DELTA * _prev_transposed(s)
    s += CDF97_GAMMA * _next_transposed(d)
    d += CDF97_BETA * _prev_transposed(s)
    s += CDF97_ALPHA * _next_transposed(d)
    return _interleave(s, d)


# -----------------------------------------------------------------------------
# Square multilevel driver
# -----------------------------------------------------------------------------
def _rows(step: Step, block: np.ndarray) -> np.ndarray:
    return step(block)


def _cols(step: Step, block: np.ndarray) -> np.ndarray:
    return np.swapaxes(step(np.swapaxes(block, -1, -2)), -1, -2)


def _decompose(image: np.ndarray, levels: int, forward: Step) -> np.ndarray:
    out = image.astype(float, copy=True)
    size = out.shape[-1]
    for _ in range(levels):
        block = out[..., :size, :size]
        out[..., :size, :size] = _cols(forward, _rows(forward, block))
        size //= 2
    return out


def _recompose(coeffs: np.ndarray, levels: int, backward: Step) -> np.ndarray:
    """Undo `_decompose` with the inverse (or transposed) 1D step."""
    out = coeffs.astype(float, copy=True)
    side = out.shape[-1]
    for level in reversed(range(levels)):
        size = side >> level
        block = out[..., :size, :size]
        out[..., :size, :size] = _rows(backward, _cols(backward, block))
    return out


@lru_cache(maxsize=32)
def band_order(side: int, levels: int) -> np.ndarray:
    """Flat indices of the square decomposition in coefficient order."""
    grid = np.arange(side * side).reshape(side, side)
    coarse = side >> levels
    parts = [grid[:coarse, :coarse].ravel()]
    for level in range(levels, 0, -1):
        h = side >> level
        parts.append(grid[:h, h : 2 * h].ravel())
        parts.append(grid[h : 2 * h, :h].ravel())
        parts.append(grid[h : 2 * h, h : 2 * h].ravel())
    order = np.concatenate(parts)
    order.setflags(write=False)
    return order


# -----------------------------------------------------------------------------
# Pairs
# -----------------------------------------------------------------------------
class TransformPair(ABC):
    """An invertible analysis/synthesis operator pair of dimension ``N``."""

    kind: TransformKind
    orthogonal: bool

    def __init__(self, dimension: int, side: Optional[int] = None, levels: int = 0):
        if dimension < 1:
            raise DimensionError(f"Dimension must be positive, got {dimension}")
        self.dimension = dimension
        self.side = side
        self.levels = levels

    def __repr__(self) -> str:
        shape = f", side={self.side}, levels={self.levels}" if self.side else ""
        return f"{type(self).__name__}(N={self.dimension}{shape})"

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.dimension,):
            raise DimensionError(
                f"Expected trailing dimension {self.dimension}, got shape {x.shape}"
            )
        return x

    def analyze(self, x: np.ndarray) -> np.ndarray:
        """Signal to coefficients."""
        return self._analyze(self._check(x))

    def synthesize(self, a: np.ndarray) -> np.ndarray:
        """Coefficients to signal (exact inverse of `analyze`)."""
        return self._synthesize(self._check(a))

    def adjoint(self, c: np.ndarray) -> np.ndarray:
        """Transpose of the analysis operator."""
        return self._adjoint(self._check(c))

    @abstractmethod
    def _analyze(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _synthesize(self, a: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def _adjoint(self, c: np.ndarray) -> np.ndarray: ...


class _IdentityPair(TransformPair):
    kind = TransformKind.IDENTITY
    orthogonal = True

    def _analyze(self, x: np.ndarray) -> np.ndarray:
        return x.copy()

    _synthesize = _analyze
    _adjoint = _analyze


class _WaveletPair(TransformPair):
    _forward: Step
    _inverse: Step
    _transposed: Step

    def __init__(self, side: int, levels: int):
        super().__init__(side * side, side, levels)
        self._order = band_order(side, levels)

    def _to_grid(self, x: np.ndarray) -> np.ndarray:
        return x.reshape(x.shape[:-1] + (self.side, self.side))

    def _to_bands(self, grid: np.ndarray) -> np.ndarray:
        flat = grid.reshape(grid.shape[:-2] + (self.dimension,))
        return flat[..., self._order]

    def _from_bands(self, c: np.ndarray) -> np.ndarray:
        flat = np.empty_like(c)
        flat[..., self._order] = c
        return self._to_grid(flat)

    def _analyze(self, x: np.ndarray) -> np.ndarray:
        return self._to_bands(_decompose(self._to_grid(x), self.levels, type(self)._forward))

    def _synthesize(self, a: np.ndarray) -> np.ndarray:
        grid = _recompose(self._from_bands(a), self.levels, type(self)._inverse)
        return grid.reshape(a.shape)

    def _adjoint(self, c: np.ndarray) -> np.ndarray:
        grid = _recompose(self._from_bands(c), self.levels, type(self)._transposed)
        return grid.reshape(c.shape)


class _Haar2DPair(_WaveletPair):
    kind = TransformKind.HAAR2D
    orthogonal = True
    _forward = staticmethod(_haar_forward)
    _inverse = staticmethod(_haar_inverse)
    _transposed = staticmethod(_haar_inverse)


class _CDF97Pair(_WaveletPair):
    kind = TransformKind.CDF97_2D
    orthogonal = False
    _forward = staticmethod(_cdf97_forward)
    _inverse = staticmethod(_cdf97_inverse)
    _transposed = staticmethod(_cdf97_adjoint)


class PermutedTransform(TransformPair):
    """A pair whose coefficients are shuffled before they reach the leaves.

    Leaf ``j`` carries coefficient ``perm[j]`` of the inner pair.
    """

    def __init__(self, inner: TransformPair, perm: np.ndarray):
        super().__init__(inner.dimension, inner.side, inner.levels)
        perm = np.asarray(perm, dtype=np.intp)
        if perm.shape != (inner.dimension,):
            raise DimensionError(
                f"Permutation of length {perm.size} does not match N={inner.dimension}"
            )
        self.inner = inner
        self.kind = inner.kind
        self.orthogonal = inner.orthogonal
        self.perm = perm
        self.inverse_perm = np.argsort(perm)

    def __repr__(self) -> str:
        return f"PermutedTransform({self.inner!r})"

    def permute(self, a: np.ndarray) -> np.ndarray:
        return np.asarray(a)[..., self.perm]

    def unpermute(self, c: np.ndarray) -> np.ndarray:
        return np.asarray(c)[..., self.inverse_perm]

    def _analyze(self, x: np.ndarray) -> np.ndarray:
        return self.permute(self.inner.analyze(x))

    def _synthesize(self, a: np.ndarray) -> np.ndarray:
        return self.inner.synthesize(self.unpermute(a))

    def _adjoint(self, c: np.ndarray) -> np.ndarray:
        return self.inner.adjoint(self.unpermute(c))


AnyPair = Union[TransformPair, PermutedTransform]


def _check_side(side: int, levels: Optional[int]) -> int:
    if not is_power_of_two(side) or side < 2:
        raise DimensionError(f"Image side must be a power of two >= 2, got {side}")
    depth = side.bit_length() - 1
    if levels is None:
        return depth
    if not 1 <= levels <= depth:
        raise DimensionError(
            f"Decomposition levels must lie in [1, {depth}] for side {side}, got {levels}"
        )
    return levels


def identity_pair(dimension: int) -> TransformPair:
    return _IdentityPair(dimension)


def haar2d_pair(side: int, levels: Optional[int] = None) -> TransformPair:
    """Orthonormal non-standard Haar pair, full depth unless `levels` is given."""
    return _Haar2DPair(side, _check_side(side, levels))


def cdf97_2d_pair(side: int, levels: Optional[int] = None) -> TransformPair:
    """Biorthogonal CDF 9/7 pair, full depth unless `levels` is given."""
    return _CDF97Pair(side, _check_side(side, levels))


def permuted(inner: TransformPair, seed: int) -> PermutedTransform:
    """Wrap `inner` with a seeded uniformly random leaf assignment."""
    rng = np.random.default_rng(seed)
    return PermutedTransform(inner, rng.permutation(inner.dimension))


def make_pair(
    kind: Union[TransformKind, str], dimension: int, levels: Optional[int] = None
) -> TransformPair:
    """Build a pair of `kind`; 2D kinds take ``dimension = side**2``."""
    kind = TransformKind(kind)
    if kind is TransformKind.IDENTITY:
        return identity_pair(dimension)
    side = int(round(np.sqrt(dimension)))
    if side * side != dimension:
        raise DimensionError(f"{kind.value} needs a square dimension, got {dimension}")
    if kind is TransformKind.HAAR2D:
        return haar2d_pair(side, levels)
    return cdf97_2d_pair(side, levels)
