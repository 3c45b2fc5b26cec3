"""Dense linear algebra for low-rank tensor models.

Kronecker/Hadamard products, core-tensor vectorization and mode folding,
and natural-parameter Gaussian algebra. The conventions fixed here are the
contract for the whole package:

* ``vec`` flattens a core tensor in C order (last mode fastest), which pairs
  with the forward-ordered Kronecker product ``u^1 x u^2 x ... x u^K``.
* ``mode_unfold(k)`` produces the ``r_k x prod(other ranks)`` matrix that
  pairs with the *reversed* Kronecker product of the remaining factors,
  ``u^K x ... x u^{k+1} x u^{k-1} x ... x u^1``.

Together they satisfy, for every core ``W`` and factor set ``{u^k}``:

    vec(W)' (u^1 x ... x u^K) == u^k' W_(k) (u^K x ... skip k ... x u^1)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

PSD_JITTER = 1e-9


def symmetrize(m: np.ndarray) -> np.ndarray:
    """Average a matrix with its transpose; covariance outputs drift otherwise."""
    return 0.5 * (m + m.T)


def safe_cholesky(m: np.ndarray, jitter: float = PSD_JITTER) -> np.ndarray:
    """Cholesky with a single jitter retry for semidefinite inputs."""
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        return np.linalg.cholesky(m + jitter * np.eye(m.shape[0]))


def inv_psd(m: np.ndarray, jitter: float = PSD_JITTER) -> np.ndarray:
    """Inverse of a symmetric PD matrix via Cholesky, symmetrized."""
    chol = safe_cholesky(m, jitter)
    eye = np.eye(m.shape[0])
    half = np.linalg.solve(chol, eye)
    return symmetrize(half.T @ half)


def kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product (thin wrapper, kept as the package-wide spelling)."""
    return np.kron(np.asarray(a), np.asarray(b))


def kron_all(vecs: Sequence[np.ndarray]) -> np.ndarray:
    """Kronecker product of a sequence of vectors, left to right.

    An empty sequence yields the scalar identity ``[1.0]`` so callers can
    fold over "all modes but k" without special cases.
    """
    out = np.ones(1)
    for v in vecs:
        out = np.kron(out, np.asarray(v))
    return out


def hadamard(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Element-wise vector product; lengths must match."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise ValueError(f"hadamard: shape mismatch {u.shape} vs {v.shape}")
    return u * v


@dataclass(eq=False)
class GaussianNat:
    """Gaussian in natural form: precision ``lam`` and shift ``eta = lam @ mean``.

    ``lam`` may be rank-deficient (PSD only); conversion to moment form
    requires strict positive definiteness.
    """

    lam: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        self.lam = np.atleast_2d(np.asarray(self.lam, dtype=float))
        self.eta = np.atleast_1d(np.asarray(self.eta, dtype=float))
        if self.lam.shape[0] != self.lam.shape[1]:
            raise ValueError(f"precision must be square, got {self.lam.shape}")
        if self.eta.shape[0] != self.lam.shape[0]:
            raise ValueError(
                f"shift length {self.eta.shape[0]} != precision dim {self.lam.shape[0]}"
            )

    @property
    def dim(self) -> int:
        return self.eta.shape[0]

    @classmethod
    def zero(cls, dim: int) -> "GaussianNat":
        return cls(np.zeros((dim, dim)), np.zeros(dim))

    @classmethod
    def from_moment(cls, mean: np.ndarray, cov: np.ndarray) -> "GaussianNat":
        lam = inv_psd(np.atleast_2d(cov))
        return cls(lam, lam @ np.atleast_1d(mean))

    def to_moment(self) -> tuple[np.ndarray, np.ndarray]:
        """Moment-form (mean, cov). Raises if the precision is not strictly PD."""
        try:
            chol = np.linalg.cholesky(self.lam)
        except np.linalg.LinAlgError as exc:
            raise ValueError("precision is not positive definite") from exc
        eye = np.eye(self.dim)
        half = np.linalg.solve(chol, eye)
        cov = symmetrize(half.T @ half)
        return cov @ self.eta, cov


def gaussian_merge(factors: Sequence[GaussianNat]) -> GaussianNat:
    """Product of Gaussian factors in natural form: sum precisions and shifts."""
    factors = list(factors)
    if not factors:
        raise ValueError("gaussian_merge needs at least one factor")
    dim = factors[0].dim
    lam = np.zeros((dim, dim))
    eta = np.zeros(dim)
    for f in factors:
        if f.dim != dim:
            raise ValueError(f"dimension mismatch: {f.dim} != {dim}")
        lam += f.lam
        eta += f.eta
    return GaussianNat(symmetrize(lam), eta)


@dataclass(eq=False)
class TuckerCore:
    """Dense core tensor with the package vec/unfold conventions."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)

    @property
    def ranks(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def vec(self) -> np.ndarray:
        """Flatten in C order (last mode fastest); pairs with forward Kronecker."""
        return self.values.reshape(-1)

    @classmethod
    def from_vec(cls, v: np.ndarray, ranks: Sequence[int]) -> "TuckerCore":
        v = np.asarray(v, dtype=float)
        expected = int(np.prod(ranks))
        if v.size != expected:
            raise ValueError(f"vec length {v.size} != prod(ranks) {expected}")
        return cls(v.reshape(tuple(ranks)))

    @classmethod
    def identity_diagonal(cls, ranks: Sequence[int]) -> "TuckerCore":
        """All-zero core with ones on the superdiagonal (the CP core)."""
        ranks = tuple(ranks)
        if len(set(ranks)) != 1:
            raise ValueError("identity-diagonal core needs equal ranks on all modes")
        values = np.zeros(ranks)
        values[(np.arange(ranks[0]),) * len(ranks)] = 1.0
        return cls(values)

    def mode_unfold(self, k: int) -> np.ndarray:
        """Fold out mode ``k`` (0-based): ``r_k x prod(r_j, j != k)``.

        Column order runs mode 1 fastest, mode K slowest (mode k removed),
        matching the reversed-Kronecker pairing documented at module level.
        """
        ndim = self.values.ndim
        if not 0 <= k < ndim:
            raise ValueError(f"mode {k} out of range for {ndim} modes")
        moved = np.moveaxis(self.values, k, 0)
        return moved.reshape(self.ranks[k], -1, order="F")


def tucker_value(core: TuckerCore, factors: Sequence[np.ndarray]) -> float:
    """Multilinear form vec(W)' (u^1 x ... x u^K)."""
    return float(core.vec() @ kron_all(factors))
