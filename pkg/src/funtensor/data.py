"""Dataset construction, CSV ingestion, splitting and the synthetic generator.

A dataset holds sparse observations of a continuous-indexed tensor: each
entry is a tuple of real indexes, one per mode, plus a value. Indexes are
min-max rescaled to [0, 1] per mode (the unit in which kernel lengthscales
are interpreted); per-mode dictionaries of sorted unique rescaled indexes
map every entry to its chain node.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

DEDUP_TOL = 1e-10
CSV_FLOAT_FMT = "%.17g"


@dataclass(eq=False)
class Dataset:
    raw: np.ndarray                      # (N, K) indexes in original units
    y: np.ndarray                        # (N,)
    rescale: list[tuple[float, float]]   # per-mode (min, max) in original units
    rescaled: np.ndarray                 # (N, K) indexes in [0, 1]
    unique_idx: list[np.ndarray]         # per-mode sorted unique rescaled indexes
    node_pos: np.ndarray                 # (N, K) int chain-node position per entry

    @property
    def n_entries(self) -> int:
        return self.raw.shape[0]

    @property
    def n_modes(self) -> int:
        return self.raw.shape[1]

    def rescale_point(self, point) -> np.ndarray:
        """Map a raw index tuple into the dataset's [0, 1] coordinates."""
        point = np.asarray(point, dtype=float)
        out = np.empty_like(point)
        for k, (lo, hi) in enumerate(self.rescale):
            out[k] = 0.0 if hi == lo else (point[k] - lo) / (hi - lo)
        return out


def _dedup_column(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Group near-identical values (tol ``DEDUP_TOL``); returns (reps, positions)."""
    n = values.shape[0]
    order = np.argsort(values, kind="stable")
    groups = np.empty(n, dtype=int)
    reps = [values[order[0]]]
    groups[order[0]] = 0
    for t in range(1, n):
        if values[order[t]] - values[order[t - 1]] > DEDUP_TOL:
            reps.append(values[order[t]])
        groups[order[t]] = len(reps) - 1
    return np.asarray(reps), groups


def build_dataset(raw: np.ndarray, y: np.ndarray,
                  rescale: list[tuple[float, float]] | None = None) -> Dataset:
    """Assemble a dataset; pass ``rescale`` to inherit another dataset's units.

    A mode whose range is degenerate (max == min) maps every index to 0.0
    and becomes a single-node chain.
    """
    raw = np.atleast_2d(np.asarray(raw, dtype=float))
    y = np.asarray(y, dtype=float)
    if raw.shape[0] != y.shape[0]:
        raise ValueError(f"{raw.shape[0]} index tuples vs {y.shape[0]} values")
    if raw.shape[0] == 0:
        raise ValueError("dataset is empty")
    if rescale is None:
        rescale = [(float(raw[:, k].min()), float(raw[:, k].max()))
                   for k in range(raw.shape[1])]
    rescaled = np.empty_like(raw)
    for k, (lo, hi) in enumerate(rescale):
        rescaled[:, k] = 0.0 if hi == lo else (raw[:, k] - lo) / (hi - lo)
    unique_idx = []
    node_pos = np.empty(raw.shape, dtype=int)
    for k in range(raw.shape[1]):
        reps, groups = _dedup_column(rescaled[:, k])
        unique_idx.append(reps)
        node_pos[:, k] = groups
    return Dataset(raw=raw, y=y, rescale=list(rescale), rescaled=rescaled,
                   unique_idx=unique_idx, node_pos=node_pos)


def load_csv(path, n_modes: int) -> Dataset:
    """Read ``i_1,...,i_K,y`` rows (header required) into a dataset."""
    raw_rows = []
    y_rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n_modes + 1:
                raise ValueError(
                    f"{path}:{lineno}: expected {n_modes + 1} columns, got {len(row)}")
            try:
                values = [float(c) for c in row]
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric field") from None
            raw_rows.append(values[:n_modes])
            y_rows.append(values[n_modes])
    if not raw_rows:
        raise ValueError(f"{path}: no data rows")
    return build_dataset(np.asarray(raw_rows), np.asarray(y_rows))


def save_csv(data: Dataset, path) -> None:
    """Write entries in original units; 17 significant digits round-trip exactly."""
    write_rows(path,
               [f"i_{k + 1}" for k in range(data.n_modes)] + ["y"],
               np.column_stack([data.raw, data.y]))


def write_rows(path, header: list[str], rows: np.ndarray) -> None:
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in np.atleast_2d(rows):
            fh.write(",".join(CSV_FLOAT_FMT % v for v in row) + "\n")


def split(data: Dataset, train_frac: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic shuffle split; both sides keep the parent's rescaling."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must be in (0, 1), got {train_frac}")
    n = data.n_entries
    n_train = int(round(train_frac * n))
    if n_train < 1 or n_train >= n:
        raise ValueError(f"split {train_frac} of {n} entries leaves one side empty")
    perm = np.random.default_rng(seed).permutation(n)
    tr, te = perm[:n_train], perm[n_train:]
    return (build_dataset(data.raw[tr], data.y[tr], rescale=data.rescale),
            build_dataset(data.raw[te], data.y[te], rescale=data.rescale))


def true_mode1(i):
    """First synthetic mode function: exp(-2 i) sin(3 pi i / 2)."""
    i = np.asarray(i, dtype=float)
    return np.exp(-2.0 * i) * np.sin(1.5 * math.pi * i)


def true_mode2(i):
    """Second synthetic mode function: sin^2(2 pi i) cos(2 pi i)."""
    i = np.asarray(i, dtype=float)
    return np.sin(2.0 * math.pi * i) ** 2 * np.cos(2.0 * math.pi * i)


def true_surface(i1, i2):
    """Noise-free rank-1 synthetic surface."""
    return true_mode1(i1) * true_mode2(i2)


def gen_synthetic(n_samples: int = 650, noise_var: float = 0.02, seed: int = 0,
                  noise_as_std: bool = False) -> Dataset:
    """Sample the two-mode synthetic benchmark.

    Index pairs are uniform on [0, 1]^2 and values are the rank-1 surface
    plus Gaussian noise of variance ``noise_var`` (set ``noise_as_std`` to
    read the number as a standard deviation instead).
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    rng = np.random.default_rng(seed)
    raw = rng.uniform(0.0, 1.0, size=(n_samples, 2))
    std = noise_var if noise_as_std else math.sqrt(noise_var)
    y = true_surface(raw[:, 0], raw[:, 1]) + rng.normal(0.0, 1.0, n_samples) * std
    return build_dataset(raw, y)
