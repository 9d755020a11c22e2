"""Orthonormal real Zernike functions on the unit disk.

Indices use the OSA/ANSI single-index convention ``j = (n(n+2) + m) / 2`` with
signed ``m``: ``m >= 0`` is the cosine branch and ``m < 0`` the sine branch.
Every function is scaled to unit norm under the disk measure ``r dr dtheta``,
so coefficient dot products equal disk integrals of function products.
"""

from __future__ import annotations

import math
import warnings
from functools import lru_cache
from typing import NamedTuple

import numpy as np

MAX_ORDER_CAP = 12
RANK_RTOL = 1e-10


class RankDeficiencyWarning(UserWarning):
    """Least-squares system lost rank; a minimum-norm solution was returned."""


class UnderdeterminedError(ValueError):
    pass


class ZernikeIndex(NamedTuple):
    n: int
    m: int

    @property
    def j(self) -> int:
        return (self.n * (self.n + 2) + self.m) // 2

    def validate(self) -> None:
        if self.n < 0 or abs(self.m) > self.n or (self.n - abs(self.m)) % 2:
            raise ValueError(f"invalid Zernike index (n={self.n}, m={self.m})")


def index_from_j(j: int) -> ZernikeIndex:
    if j < 0:
        raise ValueError(f"negative Zernike index {j}")
    n = int((math.isqrt(8 * j + 1) - 1) // 2)
    m = 2 * j - n * (n + 2)
    return ZernikeIndex(n, m)


@lru_cache(maxsize=None)
def _radial_coefficients(n: int, m: int) -> tuple[tuple[int, int], ...]:
    """(power, integer coefficient) pairs of R_n^m, computed exactly once."""
    terms = []
    for k in range((n - m) // 2 + 1):
        c = (-1) ** k * math.factorial(n - k) // (
            math.factorial(k)
            * math.factorial((n + m) // 2 - k)
            * math.factorial((n - m) // 2 - k)
        )
        terms.append((n - 2 * k, c))
    return tuple(terms)


def radial_poly(n: int, m: int, r):
    """Zernike radial polynomial ``R_n^m(r)`` for ``0 <= m <= n``.

    Returns zero when ``n - m`` is odd. ``r`` may be a scalar or an array
    with every entry in ``[0, 1]``.
    """
    if m < 0 or m > n:
        raise ValueError(f"radial order requires 0 <= m <= n, got n={n}, m={m}")
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0.0) or np.any(r_arr > 1.0):
        raise ValueError("radial coordinate outside [0, 1]")
    if (n - m) % 2:
        out = np.zeros_like(r_arr)
    else:
        out = np.zeros_like(r_arr)
        for power, c in _radial_coefficients(n, m):
            out = out + c * r_arr**power
    return float(out) if out.ndim == 0 else out


def norm_factor(n: int, m: int) -> float:
    ZernikeIndex(n, m).validate()
    return math.sqrt((n + 1) * (2 - (m == 0)) / math.pi)


def eval_basis(idx: ZernikeIndex | tuple[int, int], r, theta):
    """Evaluate one normalized Zernike function at polar points."""
    idx = ZernikeIndex(*idx)
    idx.validate()
    radial = radial_poly(idx.n, abs(idx.m), r)
    if idx.m >= 0:
        angular = np.cos(idx.m * np.asarray(theta, dtype=float))
    else:
        angular = np.sin(-idx.m * np.asarray(theta, dtype=float))
    out = norm_factor(idx.n, idx.m) * radial * angular
    return float(out) if np.ndim(out) == 0 else out


def coeff_dot(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"coefficient length mismatch: {a.shape} vs {b.shape}")
    return float(a @ b)


class ZernikeBasis:
    """Truncated set of all normalized Zernike functions with ``n <= max_order``.

    Parameters
    ----------
    max_order : int
        Highest radial order. ``max_order=5`` gives the 21-function basis.
    """

    def __init__(self, max_order: int = 5):
        if not 0 <= max_order <= MAX_ORDER_CAP:
            raise ValueError(f"max_order must lie in [0, {MAX_ORDER_CAP}], got {max_order}")
        self.max_order = int(max_order)
        size = (max_order + 1) * (max_order + 2) // 2
        self.indices = [index_from_j(j) for j in range(size)]
        self.norm_factors = np.array([norm_factor(n, m) for n, m in self.indices])
        ns = np.array([i.n for i in self.indices])
        ms = np.array([i.m for i in self.indices])
        self._n = ns
        self._m = ms
        # Monomial table: radial[j] = sum_p table[j, p] * r**p, normalization folded in.
        table = np.zeros((size, max_order + 1))
        for j, (n, m) in enumerate(self.indices):
            for power, c in _radial_coefficients(n, abs(m)):
                table[j, power] = c
        self._table = table * self.norm_factors[:, None]
        self._pairs = self._rotation_pairs()

    def __len__(self) -> int:
        return len(self.indices)

    def __repr__(self) -> str:
        return f"ZernikeBasis(max_order={self.max_order})"

    @property
    def size(self) -> int:
        return len(self.indices)

    def _rotation_pairs(self):
        """(cos index, sin index, m) for every m > 0 pair."""
        pairs = []
        for j, (n, m) in enumerate(self.indices):
            if m > 0:
                pairs.append((j, ZernikeIndex(n, -m).j, m))
        return pairs

    def eval_matrix(self, r, theta) -> np.ndarray:
        """Matrix with entry ``(s, i) = Z_i(r[s], theta[s])``."""
        if self.size == 0:
            raise ValueError("empty basis")
        r = np.atleast_1d(np.asarray(r, dtype=float))
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if r.shape != theta.shape:
            raise ValueError("r and theta must have the same shape")
        if np.any(r < 0.0) or np.any(r > 1.0):
            raise ValueError("radial coordinate outside [0, 1]")
        powers = r[..., None] ** np.arange(self.max_order + 1)
        radial = powers @ self._table.T
        ang = np.abs(self._m) * theta[..., None]
        angular = np.where(self._m >= 0, np.cos(ang), np.sin(ang))
        return radial * angular

    def fit(self, r, theta, samples, *, return_rank: bool = False):
        """Least-squares Zernike coefficients of ``samples`` at polar points.

        Solved through an SVD with relative singular-value cutoff ``1e-10``.
        When the system is rank deficient a :class:`RankDeficiencyWarning`
        is issued and the minimum-norm solution is returned.
        """
        samples = np.asarray(samples, dtype=float)
        E = self.eval_matrix(r, theta)
        if E.shape[0] != samples.shape[0]:
            raise ValueError(f"{E.shape[0]} points but {samples.shape[0]} samples")
        if E.shape[0] < self.size:
            raise UnderdeterminedError(
                f"{E.shape[0]} points cannot determine {self.size} coefficients"
            )
        coeffs, _, rank, _ = np.linalg.lstsq(E, samples, rcond=RANK_RTOL)
        if rank < self.size:
            warnings.warn(
                f"rank {rank} < {self.size}; minimum-norm solution returned",
                RankDeficiencyWarning,
                stacklevel=2,
            )
        return (coeffs, rank) if return_rank else coeffs

    def reconstruct(self, coeffs, r, theta):
        coeffs = np.asarray(coeffs, dtype=float)
        if coeffs.shape[0] != self.size:
            raise ValueError(f"expected {self.size} coefficients, got {coeffs.shape[0]}")
        scalar = np.ndim(r) == 0
        out = self.eval_matrix(r, theta) @ coeffs
        return float(out[0]) if scalar and out.ndim == 1 else out

    def rotation_matrix(self, dtheta: float) -> np.ndarray:
        """Coefficient map ``R`` with ``f_R(r, t) = f(r, t + dtheta)``.

        Block diagonal over (cos, sin) pairs sharing ``(n, |m|)``; orthogonal,
        and ``R(a) @ R(b) == R(a + b)``.
        """
        R = np.eye(self.size)
        for jc, js, m in self._pairs:
            c, s = math.cos(m * dtheta), math.sin(m * dtheta)
            R[jc, jc] = c
            R[jc, js] = s
            R[js, jc] = -s
            R[js, js] = c
        return R
