"""Per-observation message factors and posterior merges.

Each likelihood term is approximated by a product of exponential-family
factors: a Gaussian on the projected state of every mode it touches, a Gamma
factor on the noise precision, and (in Tucker mode) a Gaussian on the
vectorized core. All factors have closed forms in the moments of the current
posterior; everything here is vectorized over the observation axis.

Factor-moment bookkeeping: with independent per-mode beliefs, the second
moment of a Kronecker (or Hadamard) product of factors is the Kronecker
(Hadamard) product of the per-mode second moments, which is exact. The core
enters excluded-mode designs through its posterior mean only (plug-in).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import TuckerCore, symmetrize

TAU_MESSAGE_SHAPE = 1.5  # Gamma shape of every per-observation noise factor


@dataclass
class TauPosterior:
    """Gamma posterior over the noise precision, shape/rate convention."""

    a: float
    b: float

    def __post_init__(self):
        if self.a <= 0 or self.b <= 0:
            raise ValueError(f"Gamma parameters must be positive, got a={self.a}, b={self.b}")

    @property
    def mean(self) -> float:
        return self.a / self.b


@dataclass(eq=False)
class CorePosterior:
    """Gaussian posterior over the vectorized core tensor."""

    mu: np.ndarray
    S: np.ndarray

    @property
    def second_moment(self) -> np.ndarray:
        return self.S + np.outer(self.mu, self.mu)


def factor_moments(means: np.ndarray, covs: np.ndarray, proj: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray]:
    """First and second moments of U = proj @ Z for a batch of state beliefs.

    means: (N, d), covs: (N, d, d), proj: (r, d). Returns (N, r) and (N, r, r).
    """
    u_mean = means @ proj.T
    u_smom = np.einsum("rd,nde,se->nrs", proj, covs, proj)
    u_smom = u_smom + np.einsum("nr,ns->nrs", u_mean, u_mean)
    return u_mean, u_smom


def _kron_means(parts: list[np.ndarray], n: int) -> np.ndarray:
    out = np.ones((n, 1))
    for p in parts:
        out = np.einsum("na,nb->nab", out, p).reshape(n, -1)
    return out


def _kron_smoms(parts: list[np.ndarray], n: int) -> np.ndarray:
    out = np.ones((n, 1, 1))
    for p in parts:
        a = out.shape[1]
        b = p.shape[1]
        out = np.einsum("nab,ncd->nacbd", out, p).reshape(n, a * b, a * b)
    return out


def design_excl(k: int, u_means: list[np.ndarray], u_smoms: list[np.ndarray],
                core: TuckerCore | None, moment_mode: str = "exact"
                ) -> tuple[np.ndarray, np.ndarray]:
    """Moments of the design vector that multiplies mode k's factor.

    Tucker (``core`` given): the core folded at mode k times the reversed
    Kronecker product of the other modes' factors. CP (``core`` is None):
    the Hadamard product of the other modes' factors. Returns the mean
    (N, r_k) and second moment (N, r_k, r_k); ``moment_mode="plugin"``
    replaces the exact second moment by the outer product of the mean.
    """
    n = u_means[0].shape[0]
    others = [j for j in reversed(range(len(u_means))) if j != k]
    if core is None:
        a_mean = np.ones_like(u_means[k])
        a_smom = np.ones_like(u_smoms[k])
        for j in others:
            a_mean = a_mean * u_means[j]
            a_smom = a_smom * u_smoms[j]
    else:
        unf = core.mode_unfold(k)
        a_mean = _kron_means([u_means[j] for j in others], n) @ unf.T
        k2 = _kron_smoms([u_smoms[j] for j in others], n)
        a_smom = np.einsum("rm,nms,ts->nrt", unf, k2, unf)
    if moment_mode == "plugin":
        a_smom = np.einsum("nr,nt->nrt", a_mean, a_mean)
    elif moment_mode != "exact":
        raise ValueError(f"unknown moment_mode {moment_mode!r}")
    return a_mean, a_smom


def design_full(u_means: list[np.ndarray], u_smoms: list[np.ndarray]
                ) -> tuple[np.ndarray, np.ndarray]:
    """Forward-ordered Kronecker design over all modes: mean (N, D), smom (N, D, D)."""
    n = u_means[0].shape[0]
    return _kron_means(u_means, n), _kron_smoms(u_smoms, n)


def value_moments(u_means: list[np.ndarray], u_smoms: list[np.ndarray],
                  core: CorePosterior | None) -> tuple[np.ndarray, np.ndarray]:
    """Mean and second moment of the model value for each observation.

    Tucker: value = vec(core)' b with b the full Kronecker design; CP:
    value = sum over ranks of the all-mode Hadamard product.
    """
    if core is None:
        pm = u_means[0]
        ps = u_smoms[0]
        for m, s in zip(u_means[1:], u_smoms[1:]):
            pm = pm * m
            ps = ps * s
        return pm.sum(axis=1), ps.sum(axis=(1, 2))
    b_mean, b_smom = design_full(u_means, u_smoms)
    mean = b_mean @ core.mu
    smom = np.einsum("nij,ij->n", b_smom, core.second_moment)
    return mean, smom


def message_z(y: np.ndarray, e_tau: float, a_mean: np.ndarray, a_smom: np.ndarray
              ) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian messages on one mode's projected factor, natural form.

    lam_n = E[tau] E[a a'], eta_n = y_n E[tau] E[a]; rank-deficient
    precisions are expected and never inverted here.
    """
    lam = e_tau * a_smom
    eta = (y * e_tau)[:, None] * a_mean
    return lam, eta


def message_tau(y: np.ndarray, val_mean: np.ndarray, val_smom: np.ndarray) -> np.ndarray:
    """Gamma rate of each noise-precision message; the shape is fixed at 3/2.

    beta_n = y^2/2 - y E[a] + E[a^2]/2, i.e. half the expected squared
    residual under the current posterior.
    """
    return 0.5 * y * y - y * val_mean + 0.5 * val_smom


def message_w(y: np.ndarray, e_tau: float, b_mean: np.ndarray, b_smom: np.ndarray
              ) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian messages on the vectorized core, natural form (Tucker only)."""
    lam = e_tau * b_smom
    eta = (y * e_tau)[:, None] * b_mean
    return lam, eta


def update_q_tau(a0: float, b0: float, betas: np.ndarray) -> tuple[TauPosterior, int]:
    """Merge the prior with all noise-precision messages.

    The shape grows by exactly half the observation count; rates are clamped
    at zero before summing (the analytic rate is nonnegative, but plug-in
    moments can produce tiny negatives). Returns the posterior and the
    number of clamped messages.
    """
    betas = np.asarray(betas, dtype=float)
    n_clamped = int(np.sum(betas < 0.0))
    b = b0 + float(np.clip(betas, 0.0, None).sum())
    a = a0 + (TAU_MESSAGE_SHAPE - 1.0) * betas.size
    if b <= 0:
        raise ValueError(f"noise-precision rate collapsed to {b}; inference failed")
    return TauPosterior(a=a, b=b), n_clamped


def update_q_w(w_lam: np.ndarray, w_eta: np.ndarray) -> CorePosterior:
    """Merge the standard-normal core prior with all core messages.

    w_lam: (N, D, D), w_eta: (N, D). The identity prior precision keeps the
    merge strictly PD, so moment conversion always succeeds.
    """
    d = w_eta.shape[1]
    lam = np.eye(d) + w_lam.sum(axis=0)
    eta = w_eta.sum(axis=0)
    s = symmetrize(np.linalg.inv(symmetrize(lam)))
    return CorePosterior(mu=s @ eta, S=s)


def damp(old: np.ndarray, new: np.ndarray, gamma: float) -> np.ndarray:
    """Convex combination of natural parameters; gamma = 1 keeps the new value."""
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"damping factor must be in (0, 1], got {gamma}")
    return gamma * new + (1.0 - gamma) * old
