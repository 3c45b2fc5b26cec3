"""Model fitting and prediction for functional Tucker/CP decomposition.

The fitting loop alternates over modes: compute all per-observation message
factors in parallel (vectorized) from the current posterior with damping,
merge them into the noise and core posteriors, then refresh the mode's state
chain by Kalman filtering and RTS smoothing with the merged per-node
messages as pseudo-observations. Iteration stops when the largest change in
the projected factor means, the core mean and the expected noise precision
falls below the tolerance.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .chain import ChainPosterior, ModeChain, build_chain, interpolate, prior_posterior, run_chain
from .data import Dataset
from .kernels import MaternHyper
from .linalg import TuckerCore, kron_all, symmetrize
from .messages import (CorePosterior, TauPosterior, damp, design_excl, design_full,
                       factor_moments, message_tau, message_w, message_z,
                       update_q_tau, update_q_w)

MODEL_FORMAT = "funtensor-model/1"
INIT_NOISE = 0.1  # std of the symmetry-breaking perturbation on initial means


class InferenceError(RuntimeError):
    """Raised when the variational update produces an invalid posterior."""


@dataclass(frozen=True)
class FitConfig:
    """Settings for one fit; see ``fit`` for the semantics.

    ``ranks`` may be a single int (applied to every mode) or a per-mode
    sequence; ``kernel`` likewise. CP requires a shared rank. The first
    ``warmup_iters`` sweeps use plug-in (means-only) design moments, which
    lets the factors lock onto the data before the exact second moments,
    with their large early variances, take over.
    """

    ranks: int | tuple[int, ...] = 1
    kernel: MaternHyper | tuple[MaternHyper, ...] = MaternHyper(1.5, 0.1, 1.0)
    a0: float = 1.0
    b0: float = 1.0
    max_iters: int = 50
    tol: float = 1e-4
    damping: float = 0.7
    model_kind: str = "tucker"
    moment_mode: str = "exact"
    warmup_iters: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.model_kind not in ("tucker", "cp"):
            raise ValueError(f"model_kind must be 'tucker' or 'cp', got {self.model_kind!r}")
        if self.moment_mode not in ("exact", "plugin"):
            raise ValueError(f"moment_mode must be 'exact' or 'plugin', got {self.moment_mode!r}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.warmup_iters < 0:
            raise ValueError("warmup_iters must be >= 0")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.a0 <= 0 or self.b0 <= 0:
            raise ValueError("Gamma prior hyperparameters must be positive")

    def mode_ranks(self, n_modes: int) -> tuple[int, ...]:
        ranks = (self.ranks,) * n_modes if isinstance(self.ranks, int) else tuple(self.ranks)
        if len(ranks) != n_modes:
            raise ValueError(f"{len(ranks)} ranks for {n_modes} modes")
        if any(r < 1 for r in ranks):
            raise ValueError("ranks must be >= 1")
        if self.model_kind == "cp" and len(set(ranks)) != 1:
            raise ValueError("CP needs the same rank on every mode")
        return ranks

    def mode_kernels(self, n_modes: int) -> list[MaternHyper]:
        if isinstance(self.kernel, MaternHyper):
            return [self.kernel] * n_modes
        kernels = list(self.kernel)
        if len(kernels) != n_modes:
            raise ValueError(f"{len(kernels)} kernels for {n_modes} modes")
        return kernels

    def as_dict(self, n_modes: int) -> dict:
        return {
            "ranks": list(self.mode_ranks(n_modes)),
            "kernels": [{"nu": k.nu, "lengthscale": k.lengthscale, "variance": k.variance}
                        for k in self.mode_kernels(n_modes)],
            "a0": self.a0, "b0": self.b0,
            "max_iters": self.max_iters, "tol": self.tol, "damping": self.damping,
            "model_kind": self.model_kind, "moment_mode": self.moment_mode,
            "warmup_iters": self.warmup_iters, "seed": self.seed,
        }


@dataclass(eq=False)
class FittedModel:
    """Immutable result of a fit; safe for concurrent prediction."""

    kind: str
    ranks: tuple[int, ...]
    kernels: list[MaternHyper]
    rescale: list[tuple[float, float]]
    chains: list[ModeChain]
    posteriors: list[ChainPosterior]
    tau: TauPosterior
    core: CorePosterior
    config: dict
    trace: list[dict] = field(default_factory=list)
    beta_clamped: int = 0
    converged: bool = False

    def __post_init__(self):
        self._belief_cache: list[dict] = [dict() for _ in self.chains]

    @property
    def n_modes(self) -> int:
        return len(self.chains)

    def _rescale_coord(self, k: int, value: float) -> float:
        lo, hi = self.rescale[k]
        return 0.0 if hi == lo else (value - lo) / (hi - lo)

    def mode_belief(self, k: int, value: float) -> tuple[np.ndarray, np.ndarray]:
        """Mean and covariance of mode k's factor at a raw index value."""
        cached = self._belief_cache[k].get(value)
        if cached is not None:
            return cached
        x = self._rescale_coord(k, value)
        mean, cov = interpolate(self.chains[k], self.posteriors[k], x)
        proj = self.chains[k].model.proj
        belief = (proj @ mean, symmetrize(proj @ cov @ proj.T))
        self._belief_cache[k][value] = belief
        return belief

    def predict_mean(self, point: Sequence[float]) -> float:
        """Posterior-mean prediction at one tuple of raw indexes."""
        point = np.asarray(point, dtype=float)
        if point.shape != (self.n_modes,):
            raise ValueError(f"expected {self.n_modes} indexes, got shape {point.shape}")
        factors = [self.mode_belief(k, point[k])[0] for k in range(self.n_modes)]
        return float(kron_all(factors) @ self.core.mu)

    def predict_var(self, point: Sequence[float]) -> float:
        """First-order predictive variance, including the noise floor 1/E[tau].

        Propagates each mode's factor covariance through the gradient of the
        multilinear form at the means, adds the core-posterior term and the
        expected noise variance.
        """
        point = np.asarray(point, dtype=float)
        beliefs = [self.mode_belief(k, point[k]) for k in range(self.n_modes)]
        means = [b[0] for b in beliefs]
        design = kron_all(means)
        var = float(design @ self.core.S @ design) + 1.0 / self.tau.mean
        core_mean = TuckerCore.from_vec(self.core.mu, self.ranks)
        for k in range(self.n_modes):
            rest = kron_all([means[j] for j in reversed(range(self.n_modes)) if j != k])
            grad = core_mean.mode_unfold(k) @ rest
            var += float(grad @ beliefs[k][1] @ grad)
        return var

    def predict(self, points: np.ndarray, with_var: bool = False):
        """Vectorized prediction over an (M, K) array of raw index tuples."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        means = np.array([self.predict_mean(p) for p in points])
        if not with_var:
            return means
        return means, np.array([self.predict_var(p) for p in points])

    def evaluate(self, data: Dataset) -> dict:
        """RMSE and MAE of the posterior-mean prediction on a dataset."""
        if data.n_entries == 0:
            raise ValueError("empty evaluation set")
        err = self.predict(data.raw) - data.y
        return {"rmse": float(np.sqrt(np.mean(err ** 2))),
                "mae": float(np.mean(np.abs(err)))}

    def export_trajectory(self, k: int, grid: Sequence[float]
                          ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Factor means and stds of mode k on a grid of raw index values."""
        grid = np.asarray(grid, dtype=float)
        r = self.ranks[k]
        means = np.zeros((grid.size, r))
        stds = np.zeros((grid.size, r))
        for i, g in enumerate(grid):
            u, cov = self.mode_belief(k, g)
            means[i] = u
            stds[i] = np.sqrt(np.clip(np.diag(cov), 0.0, None))
        return grid, means, stds

    def save(self, path) -> None:
        doc = {
            "format": MODEL_FORMAT,
            "kind": self.kind,
            "ranks": list(self.ranks),
            "config": self.config,
            "rescale": [[lo, hi] for lo, hi in self.rescale],
            "tau": {"a": self.tau.a, "b": self.tau.b},
            "core": {"mu": self.core.mu.tolist(), "s": self.core.S.tolist()},
            "modes": [
                {
                    "kernel": {"nu": h.nu, "lengthscale": h.lengthscale,
                               "variance": h.variance},
                    "rank": self.ranks[k],
                    "indexes": self.chains[k].indexes.tolist(),
                    "means": self.posteriors[k].means.tolist(),
                    "covs": self.posteriors[k].covs.tolist(),
                    "crosses": self.posteriors[k].crosses.tolist(),
                }
                for k, h in enumerate(self.kernels)
            ],
            "trace": self.trace,
            "beta_clamped": self.beta_clamped,
            "converged": self.converged,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "FittedModel":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError(f"{path}: not a {MODEL_FORMAT} file")
        kernels = [MaternHyper(m["kernel"]["nu"], m["kernel"]["lengthscale"],
                               m["kernel"]["variance"]) for m in doc["modes"]]
        chains = []
        posteriors = []
        for m, h in zip(doc["modes"], kernels):
            chains.append(build_chain(np.asarray(m["indexes"]), h, m["rank"]))
            posteriors.append(ChainPosterior(
                means=np.asarray(m["means"]),
                covs=np.asarray(m["covs"]),
                crosses=np.asarray(m["crosses"])))
        return cls(
            kind=doc["kind"],
            ranks=tuple(doc["ranks"]),
            kernels=kernels,
            rescale=[(lo, hi) for lo, hi in doc["rescale"]],
            chains=chains,
            posteriors=posteriors,
            tau=TauPosterior(doc["tau"]["a"], doc["tau"]["b"]),
            core=CorePosterior(mu=np.asarray(doc["core"]["mu"]),
                               S=np.asarray(doc["core"]["s"])),
            config=doc["config"],
            trace=doc.get("trace", []),
            beta_clamped=doc.get("beta_clamped", 0),
            converged=doc.get("converged", False),
        )


def _gather_moments(data: Dataset, chains: list[ModeChain],
                    posteriors: list[ChainPosterior]
                    ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-observation factor means and second moments for every mode."""
    u_means, u_smoms = [], []
    for j, (chain, post) in enumerate(zip(chains, posteriors)):
        fm, fs = factor_moments(post.means, post.covs, chain.model.proj)
        pos = data.node_pos[:, j]
        u_means.append(fm[pos])
        u_smoms.append(fs[pos])
    return u_means, u_smoms


def _train_predictions(data: Dataset, chains, posteriors, core_mu) -> np.ndarray:
    parts = []
    for j, (chain, post) in enumerate(zip(chains, posteriors)):
        fm = post.means @ chain.model.proj.T
        parts.append(fm[data.node_pos[:, j]])
    design = np.ones((data.n_entries, 1))
    for p in parts:
        design = np.einsum("na,nb->nab", design, p).reshape(data.n_entries, -1)
    return design @ core_mu


def fit(data: Dataset, config: FitConfig | None = None) -> FittedModel:
    """Fit a functional Tucker (or CP) decomposition to sparse observations.

    Parameters
    ----------
    data : Dataset
        Observed entries with per-mode chain dictionaries already built.
    config : FitConfig
        Ranks, kernels, priors and iteration controls.

    Returns
    -------
    FittedModel with per-mode state posteriors, the noise and core
    posteriors, and a per-iteration convergence trace.
    """
    if config is None:
        config = FitConfig()
    n_modes = data.n_modes
    ranks = config.mode_ranks(n_modes)
    kernels = config.mode_kernels(n_modes)
    tucker = config.model_kind == "tucker"
    rng = np.random.default_rng(config.seed)
    y = data.y
    n_obs = data.n_entries

    chains = [build_chain(data.unique_idx[k], kernels[k], ranks[k]) for k in range(n_modes)]
    posteriors = []
    for k, chain in enumerate(chains):
        post = prior_posterior(chain)
        step = chain.model.ssm.dim
        # Perturb the function-value components to break rank/sign symmetry,
        # and start the beliefs concentrated: prior-scale variances make the
        # early design second moments so large that the first core merge
        # collapses the core mean to zero, a degenerate fixed point.
        post.means[:, ::step] += rng.normal(0.0, INIT_NOISE, post.means[:, ::step].shape)
        shrink = INIT_NOISE ** 2 / kernels[k].variance
        post.covs = post.covs * shrink
        post.crosses = post.crosses * shrink
        posteriors.append(post)

    core_size = int(np.prod(ranks))
    diag_core = np.zeros(ranks)
    diag_core[tuple(np.arange(min(ranks)) for _ in ranks)] = 1.0
    core = CorePosterior(mu=TuckerCore(diag_core).vec(),
                         S=np.eye(core_size) if tucker else np.zeros((core_size, core_size)))
    # start the noise precision at the marginal data precision rather than
    # the prior mean; a gross underestimate starves the first messages
    tau = TauPosterior(config.a0, config.a0 * max(float(np.var(y)), 1e-6))

    msg_lam = [np.zeros((n_obs, r, r)) for r in ranks]
    msg_eta = [np.zeros((n_obs, r)) for r in ranks]
    msg_beta = np.zeros(n_obs)
    if tucker:
        msg_wlam = np.zeros((n_obs, core_size, core_size))
        msg_weta = np.zeros((n_obs, core_size))

    trace: list[dict] = []
    beta_clamped = 0
    converged = False
    gamma = config.damping

    for it in range(config.max_iters):
        mu_prev = core.mu.copy()
        etau_prev = tau.mean
        delta = 0.0
        warm = it < config.warmup_iters
        for k in range(n_modes):
            u_means, u_smoms = _gather_moments(data, chains, posteriors)
            if warm:
                u_smoms = [np.einsum("nr,nt->nrt", m, m) for m in u_means]
            e_tau = tau.mean
            core_mean = TuckerCore.from_vec(core.mu, ranks) if tucker else None

            a_mean, a_smom = design_excl(k, u_means, u_smoms, core_mean, config.moment_mode)
            lam_new, eta_new = message_z(y, e_tau, a_mean, a_smom)
            msg_lam[k] = damp(msg_lam[k], lam_new, gamma)
            msg_eta[k] = damp(msg_eta[k], eta_new, gamma)

            if tucker:
                b_mean, b_smom = design_full(u_means, u_smoms)
                val_mean = b_mean @ core.mu
                val_smom = np.einsum("nij,ij->n", b_smom, core.second_moment)
                wlam_new, weta_new = message_w(y, e_tau, b_mean, b_smom)
                msg_wlam = damp(msg_wlam, wlam_new, gamma)
                msg_weta = damp(msg_weta, weta_new, gamma)
            else:
                pm = u_means[0]
                ps = u_smoms[0]
                for m, s in zip(u_means[1:], u_smoms[1:]):
                    pm = pm * m
                    ps = ps * s
                val_mean = pm.sum(axis=1)
                val_smom = ps.sum(axis=(1, 2))
            msg_beta = damp(msg_beta, message_tau(y, val_mean, val_smom), gamma)

            try:
                tau, clamped = update_q_tau(config.a0, config.b0, msg_beta)
                beta_clamped += clamped
                if tucker:
                    core = update_q_w(msg_wlam, msg_weta)
                node_lam = np.zeros((chains[k].n_nodes, ranks[k], ranks[k]))
                node_eta = np.zeros((chains[k].n_nodes, ranks[k]))
                np.add.at(node_lam, data.node_pos[:, k], msg_lam[k])
                np.add.at(node_eta, data.node_pos[:, k], msg_eta[k])
                new_post = run_chain(chains[k], node_lam, node_eta)
            except (ValueError, np.linalg.LinAlgError) as exc:
                raise InferenceError(f"iteration {it}, mode {k}: {exc}") from exc

            proj = chains[k].model.proj
            delta = max(delta, float(np.abs((new_post.means - posteriors[k].means)
                                            @ proj.T).max()))
            posteriors[k] = new_post

        delta = max(delta, float(np.abs(core.mu - mu_prev).max()),
                    abs(tau.mean - etau_prev))
        resid = _train_predictions(data, chains, posteriors, core.mu) - y
        train_rmse = float(np.sqrt(np.mean(resid ** 2)))
        if not (math.isfinite(delta) and math.isfinite(train_rmse)):
            raise InferenceError(f"iteration {it}: non-finite posterior update")
        trace.append({"iter": it, "delta": delta, "e_tau": tau.mean,
                      "train_rmse": train_rmse})
        if not warm and delta < config.tol:
            converged = True
            break

    return FittedModel(
        kind=config.model_kind,
        ranks=ranks,
        kernels=kernels,
        rescale=list(data.rescale),
        chains=chains,
        posteriors=posteriors,
        tau=tau,
        core=core,
        config=config.as_dict(n_modes),
        trace=trace,
        beta_clamped=beta_clamped,
        converged=converged,
    )
