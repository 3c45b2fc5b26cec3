"""Sequential Gaussian inference along one mode's index chain.

A mode chain is a Gauss-Markov prior over the states at the mode's sorted
unique indexes. Observations arrive as natural-form Gaussian messages on the
projected state U = H Z ("pseudo-observations"); the forward pass is a
Kalman filter with information-form updates (message precisions may be
rank-deficient), the backward pass is RTS smoothing with lag-one
cross-covariances, and states at unseen indexes come from closed-form
conditioning on the two neighboring nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .kernels import MaternHyper, StateModel, Transition, blockdiag_expand, matern_to_sde
from .linalg import GaussianNat, inv_psd, symmetrize

# Queries closer than this to an existing node reuse the node's posterior;
# the two-sided conditioning formula needs invertible gap noise on both sides.
SNAP_TOL = 1e-9


@dataclass(eq=False)
class ModeChain:
    """Prior chain for one mode: sorted unique indexes plus per-gap transitions."""

    indexes: np.ndarray
    model: StateModel
    transitions: list[Transition]

    def __post_init__(self):
        if np.any(np.diff(self.indexes) <= 0):
            raise ValueError("chain indexes must be strictly increasing")
        if len(self.transitions) != len(self.indexes) - 1:
            raise ValueError("need exactly one transition per gap")

    @property
    def n_nodes(self) -> int:
        return len(self.indexes)

    @property
    def state_dim(self) -> int:
        return self.model.state_dim


def build_chain(indexes: Sequence[float], hyper: MaternHyper, rank: int) -> ModeChain:
    """Assemble a mode chain from sorted unique indexes and kernel settings."""
    indexes = np.asarray(indexes, dtype=float)
    model = blockdiag_expand(matern_to_sde(hyper), rank)
    gaps = np.diff(indexes)
    return ModeChain(indexes=indexes, model=model,
                     transitions=[model.transition(d) for d in gaps])


@dataclass(eq=False)
class PseudoObs:
    """Natural-form Gaussian message on the projected state at one node."""

    node: int
    nat: GaussianNat


def merge_node_messages(msgs: Sequence[PseudoObs], node: int | None = None,
                        dim: int | None = None) -> PseudoObs:
    """Sum the natural parameters of messages attached to a single node.

    An empty sequence stands for a node with no observations and yields the
    zero message; ``node`` and ``dim`` are then required.
    """
    msgs = list(msgs)
    if not msgs:
        if node is None or dim is None:
            raise ValueError("empty message set needs explicit node and dim")
        return PseudoObs(node=node, nat=GaussianNat.zero(dim))
    node = msgs[0].node
    if any(m.node != node for m in msgs):
        raise ValueError("messages belong to different nodes")
    dim = msgs[0].nat.dim
    lam = np.zeros((dim, dim))
    eta = np.zeros(dim)
    for m in msgs:
        lam += m.nat.lam
        eta += m.nat.eta
    return PseudoObs(node=node, nat=GaussianNat(symmetrize(lam), eta))


def stack_node_messages(chain: ModeChain, msgs: Sequence[PseudoObs]) -> tuple[np.ndarray, np.ndarray]:
    """Scatter-sum individual messages into dense per-node arrays."""
    r = chain.model.rank
    lam = np.zeros((chain.n_nodes, r, r))
    eta = np.zeros((chain.n_nodes, r))
    for m in msgs:
        lam[m.node] += m.nat.lam
        eta[m.node] += m.nat.eta
    return lam, eta


@dataclass(eq=False)
class FilterResult:
    means: np.ndarray       # (N, d) filtered
    covs: np.ndarray        # (N, d, d) filtered
    pred_means: np.ndarray  # (N, d) one-step predictions (node 0: prior)
    pred_covs: np.ndarray   # (N, d, d)


@dataclass(eq=False)
class ChainPosterior:
    """Smoothed marginals plus the lag-one cross-covariances Cov(Z_{s+1}, Z_s)."""

    means: np.ndarray
    covs: np.ndarray
    crosses: np.ndarray
    filtered: FilterResult | None = None

    @property
    def n_nodes(self) -> int:
        return self.means.shape[0]


def kalman_forward(chain: ModeChain, node_lam: np.ndarray, node_eta: np.ndarray) -> FilterResult:
    """Forward filtering pass with information-form node updates.

    ``node_lam``/``node_eta`` hold the merged natural parameters of each
    node's messages on U = H Z; zero entries mean "no observation here".
    """
    n, d = chain.n_nodes, chain.state_dim
    H = chain.model.proj
    means = np.zeros((n, d))
    covs = np.zeros((n, d, d))
    pred_means = np.zeros((n, d))
    pred_covs = np.zeros((n, d, d))

    m = np.zeros(d)
    v = chain.model.P_inf
    for s in range(n):
        if s > 0:
            tr = chain.transitions[s - 1]
            m = tr.A @ m
            v = symmetrize(tr.A @ v @ tr.A.T + tr.Q)
        pred_means[s] = m
        pred_covs[s] = v
        lam = node_lam[s]
        if np.any(lam) or np.any(node_eta[s]):
            try:
                v_inv = inv_psd(v)
                prec = symmetrize(v_inv + H.T @ lam @ H)
                v = inv_psd(prec)
            except np.linalg.LinAlgError as exc:
                raise ValueError(f"non-PSD covariance at node {s}: malformed messages") from exc
            m = v @ (v_inv @ m + H.T @ node_eta[s])
        means[s] = m
        covs[s] = v
    return FilterResult(means=means, covs=covs, pred_means=pred_means, pred_covs=pred_covs)


def rts_backward(chain: ModeChain, fr: FilterResult) -> ChainPosterior:
    """RTS smoothing; also returns Cov(Z_{s+1}, Z_s) for each gap."""
    n, d = chain.n_nodes, chain.state_dim
    means = fr.means.copy()
    covs = fr.covs.copy()
    crosses = np.zeros((max(n - 1, 0), d, d))
    for s in range(n - 2, -1, -1):
        A = chain.transitions[s].A
        # G = V_s A' (V^pred_{s+1})^{-1}
        gain = np.linalg.solve(fr.pred_covs[s + 1], A @ fr.covs[s]).T
        means[s] = fr.means[s] + gain @ (means[s + 1] - fr.pred_means[s + 1])
        covs[s] = symmetrize(fr.covs[s] + gain @ (covs[s + 1] - fr.pred_covs[s + 1]) @ gain.T)
        crosses[s] = covs[s + 1] @ gain.T
    return ChainPosterior(means=means, covs=covs, crosses=crosses, filtered=fr)


def run_chain(chain: ModeChain, node_lam: np.ndarray, node_eta: np.ndarray) -> ChainPosterior:
    return rts_backward(chain, kalman_forward(chain, node_lam, node_eta))


def prior_posterior(chain: ModeChain) -> ChainPosterior:
    """Posterior under zero messages: every marginal is the stationary prior."""
    n, r = chain.n_nodes, chain.model.rank
    return run_chain(chain, np.zeros((n, r, r)), np.zeros((n, r)))


def interpolate(chain: ModeChain, post: ChainPosterior, x: float,
                use_joint: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Marginal of the state at an arbitrary index under the chain posterior.

    Interior points condition on both neighbors: with gap transitions
    (A1, Q1) from the left node and (A2, Q2) to the right node, the state
    given the neighbors is Gaussian with precision Q1^-1 + A2' Q2^-1 A2 and
    mean linear in both; the returned marginal integrates the neighbors out
    under their smoothed joint (including the lag-one cross term unless
    ``use_joint`` is False, which plugs in the means only). Points outside
    the observed range propagate from the nearest endpoint through a single
    transition (backward in time via stationarity on the left).

    Returns (mean, cov) of the full state; project with ``chain.model.proj``
    for the factor value.
    """
    idx = chain.indexes
    model = chain.model

    j = int(np.searchsorted(idx, x))
    for cand in (j - 1, j):
        if 0 <= cand < len(idx) and abs(x - idx[cand]) <= SNAP_TOL:
            return post.means[cand].copy(), post.covs[cand].copy()

    if x > idx[-1]:
        tr = model.transition(x - idx[-1])
        mean = tr.A @ post.means[-1]
        cov = symmetrize(tr.A @ post.covs[-1] @ tr.A.T + tr.Q)
        return mean, cov
    if x < idx[0]:
        tr = model.transition(idx[0] - x)
        p_inf = model.P_inf
        # Reverse-time conditioning: joint prior of (z*, z_0) has
        # Cov(z*, z_0) = P_inf A', so the gain is P_inf A' P_inf^(-1).
        gain = np.linalg.solve(p_inf, tr.A @ p_inf).T
        cond = symmetrize(p_inf - gain @ tr.A @ p_inf)
        mean = gain @ post.means[0]
        cov = symmetrize(cond + gain @ post.covs[0] @ gain.T)
        return mean, cov

    # idx[j-1] < x < idx[j]
    t1 = model.transition(x - idx[j - 1])
    t2 = model.transition(idx[j] - x)
    q1_inv = inv_psd(t1.Q)
    q2_inv = inv_psd(t2.Q)
    prec = symmetrize(q1_inv + t2.A.T @ q2_inv @ t2.A)
    cond_cov = inv_psd(prec)
    g1 = cond_cov @ (q1_inv @ t1.A)
    g2 = cond_cov @ (t2.A.T @ q2_inv)
    mean = g1 @ post.means[j - 1] + g2 @ post.means[j]
    if not use_joint:
        return mean, cond_cov
    v1 = post.covs[j - 1]
    v2 = post.covs[j]
    c21 = post.crosses[j - 1]          # Cov(Z_j, Z_{j-1})
    cov = (cond_cov
           + g1 @ v1 @ g1.T + g2 @ v2 @ g2.T
           + g1 @ c21.T @ g2.T + g2 @ c21 @ g1.T)
    return mean, symmetrize(cov)
