"""Matern kernels and their linear SDE / state-space representations.

A Matern GP with half-integer smoothness is the stationary solution of an
LTI SDE dz/dx = F z + L w(x); over any ordered index set it discretizes to
a Gauss-Markov chain z_{s+1} = A_s z_s + q_s with A_s = expm(F * gap) and
stationary covariance P_inf solving F P + P F' + L q_s L' = 0. Only
smoothness 1/2 and 3/2 are supported; both have closed forms throughout,
so no generic matrix exponential is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import symmetrize

SUPPORTED_NU = (0.5, 1.5)

# Below this value of lam*gap the stationary-identity form of the process
# noise loses all significant digits to cancellation; switch to its series.
_SMALL_GAP = 1e-2


@dataclass(frozen=True)
class MaternHyper:
    """Matern hyperparameters: smoothness nu in {1/2, 3/2}, lengthscale, variance."""

    nu: float
    lengthscale: float
    variance: float

    def __post_init__(self):
        if self.nu not in SUPPORTED_NU:
            raise ValueError(f"unsupported smoothness nu={self.nu}; use 0.5 or 1.5")
        if self.lengthscale <= 0:
            raise ValueError("lengthscale must be positive")
        if self.variance <= 0:
            raise ValueError("variance must be positive")


@dataclass(eq=False, frozen=True)
class MaternSsm:
    """State-space parameters of a Matern GP.

    State order ``m`` is 0 for nu=1/2 (state = function value) and 1 for
    nu=3/2 (state = value and first derivative).
    """

    F: np.ndarray
    L: np.ndarray
    q_s: float
    P_inf: np.ndarray
    m: int
    hyper: MaternHyper

    @property
    def dim(self) -> int:
        return self.m + 1


@dataclass(eq=False, frozen=True)
class Transition:
    """One chain step over an index gap: z' = A z + noise, noise ~ N(0, Q)."""

    delta: float
    A: np.ndarray
    Q: np.ndarray


def matern_to_sde(h: MaternHyper) -> MaternSsm:
    """Closed-form SDE parameters for the supported smoothness values."""
    if h.nu == 0.5:
        F = np.array([[-1.0 / h.lengthscale]])
        L = np.array([[1.0]])
        q_s = 2.0 * h.variance / h.lengthscale
        p_inf = np.array([[h.variance]])
        return MaternSsm(F=F, L=L, q_s=q_s, P_inf=p_inf, m=0, hyper=h)
    if h.nu == 1.5:
        lam = math.sqrt(3.0) / h.lengthscale
        F = np.array([[0.0, 1.0], [-lam * lam, -2.0 * lam]])
        L = np.array([[0.0], [1.0]])
        q_s = 4.0 * h.variance * lam**3
        p_inf = np.diag([h.variance, lam * lam * h.variance])
        return MaternSsm(F=F, L=L, q_s=q_s, P_inf=p_inf, m=1, hyper=h)
    raise ValueError(f"unsupported smoothness nu={h.nu}")


def _q_half(variance: float, c: float) -> float:
    # 1 - exp(-2c) without cancellation.
    return -variance * math.expm1(-2.0 * c)


def _q32_series(c: float) -> tuple[float, float]:
    # Series of 1 - exp(-2c)(1 + 2c + 2c^2) and 1 - exp(-2c)(1 - 2c + 2c^2);
    # relative truncation error O(c^4) at the switch point.
    f = c**3 * (4.0 / 3.0 - 2.0 * c + (8.0 / 5.0) * c**2 - (8.0 / 9.0) * c**3)
    g = c * (4.0 - 8.0 * c + (28.0 / 3.0) * c**2 - (22.0 / 3.0) * c**3
             + (64.0 / 15.0) * c**4 - (88.0 / 45.0) * c**5)
    return f, g


def transition(ssm: MaternSsm, delta: float) -> Transition:
    """Transition matrix A = expm(F*delta) and process noise Q over a gap.

    Q comes from the stationarity identity Q = P_inf - A P_inf A', evaluated
    in forms that stay accurate for tiny gaps.
    """
    if delta < 0:
        raise ValueError(f"negative index gap {delta}")
    h = ssm.hyper
    if ssm.m == 0:
        a = math.exp(-delta / h.lengthscale)
        A = np.array([[a]])
        Q = np.array([[_q_half(h.variance, delta / h.lengthscale)]])
        return Transition(delta=delta, A=A, Q=Q)

    # nu = 3/2: F = -lam*I + N with N nilpotent, so expm(F d) is exact.
    lam = math.sqrt(3.0) / h.lengthscale
    c = lam * delta
    e = math.exp(-c)
    A = e * np.array([[1.0 + c, delta], [-lam * lam * delta, 1.0 - c]])
    if c < _SMALL_GAP:
        f, g = _q32_series(c)
    else:
        f = 1.0 - e * e * (1.0 + 2.0 * c + 2.0 * c * c)
        g = 1.0 - e * e * (1.0 - 2.0 * c + 2.0 * c * c)
    s2 = h.variance
    q12 = 2.0 * s2 * lam * c * c * e * e
    Q = np.array([[s2 * f, q12], [q12, lam * lam * s2 * g]])
    return Transition(delta=delta, A=A, Q=Q)


def kernel_eval(h: MaternHyper, x: float, xp: float) -> float:
    """Matern covariance between two scalar indexes (oracle/testing use)."""
    d = abs(x - xp)
    if h.nu == 0.5:
        return h.variance * math.exp(-d / h.lengthscale)
    if h.nu == 1.5:
        t = math.sqrt(3.0) * d / h.lengthscale
        return h.variance * (1.0 + t) * math.exp(-t)
    raise ValueError(f"unsupported smoothness nu={h.nu}")


@dataclass(eq=False, frozen=True)
class StateModel:
    """Rank-expanded state model: r independent copies of one Matern state.

    ``proj`` picks out the function values: U = proj @ Z, shape r x r*(m+1).
    """

    ssm: MaternSsm
    rank: int
    P_inf: np.ndarray
    proj: np.ndarray

    @property
    def state_dim(self) -> int:
        return self.rank * self.ssm.dim

    def transition(self, delta: float) -> Transition:
        base = transition(self.ssm, delta)
        eye = np.eye(self.rank)
        return Transition(delta=delta, A=np.kron(eye, base.A), Q=np.kron(eye, base.Q))


def blockdiag_expand(ssm: MaternSsm, r: int) -> StateModel:
    """Stack r independent copies of a univariate state model block-diagonally."""
    if r < 1:
        raise ValueError(f"rank must be >= 1, got {r}")
    eye = np.eye(r)
    pick_value = np.zeros((1, ssm.dim))
    pick_value[0, 0] = 1.0
    return StateModel(
        ssm=ssm,
        rank=r,
        P_inf=symmetrize(np.kron(eye, ssm.P_inf)),
        proj=np.kron(eye, pick_value),
    )
