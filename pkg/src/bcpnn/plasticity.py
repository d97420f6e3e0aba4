"""Hypercolumn-level sparse connectivity and usage-based rewiring.

Connectivity is decided between hypercolumns, not individual units: each
target hypercolumn listens to exactly `k` source hypercolumns.  Traces are
maintained for all pairs (active and silent) so that silent connections can
be scored for promotion; the mask only gates the support sum.

Rewiring scores each (source hc, target hc) pair by the mutual information
between the two modules as estimated from the current probability traces
(the log-odds weight is already a pointwise MI term, so the traces contain
everything needed) and keeps the top `k` per target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ProbabilityTraces
from .errors import ConfigError, ValidationError


@dataclass(frozen=True)
class ConnectivityMask:
    """Boolean (source hc x target hc) matrix; each column has exactly k
    active entries."""

    n_src_hc: int
    n_tgt_hc: int
    active: np.ndarray
    k: int

    def __post_init__(self):
        if self.active.shape != (self.n_src_hc, self.n_tgt_hc):
            raise ValidationError(
                f"mask shape {self.active.shape} != ({self.n_src_hc}, {self.n_tgt_hc})"
            )
        if self.active.dtype != np.bool_:
            raise ValidationError("mask must be boolean")
        counts = self.active.sum(axis=0)
        if not np.all(counts == self.k):
            raise ValidationError(
                f"every target hypercolumn must have exactly k={self.k} active "
                f"sources, got counts {np.unique(counts)}"
            )

    @classmethod
    def full(cls, n_src_hc: int, n_tgt_hc: int) -> "ConnectivityMask":
        return cls(n_src_hc, n_tgt_hc,
                   np.ones((n_src_hc, n_tgt_hc), dtype=bool), n_src_hc)

    def source_hcs(self, tgt_hc: int) -> np.ndarray:
        """Active source hypercolumn indices for one target, ascending."""
        return np.flatnonzero(self.active[:, tgt_hc])

    def source_units(self, tgt_hc: int, n_mc_src: int) -> np.ndarray:
        """Flat source-unit indices covered by the active hypercolumns."""
        hcs = self.source_hcs(tgt_hc)
        return (hcs[:, None] * n_mc_src + np.arange(n_mc_src)[None, :]).ravel()

    def unit_mask(self, n_mc_src: int, n_mc_tgt: int) -> np.ndarray:
        """Mask expanded to unit resolution, shape (n_src units, n_tgt units)."""
        return np.repeat(np.repeat(self.active, n_mc_src, axis=0), n_mc_tgt, axis=1)


@dataclass(frozen=True)
class RewireSchedule:
    """When structural plasticity fires during training.

    An event triggers after every `period` samples; once the running sample
    count exceeds `freeze_after` the mask is frozen (None = never freeze).
    """

    period: int
    freeze_after: Optional[int] = None

    def __post_init__(self):
        if self.period < 1:
            raise ValidationError(f"rewire period must be >= 1, got {self.period}")

    def fires_at(self, sample_count: int) -> bool:
        if self.freeze_after is not None and sample_count > self.freeze_after:
            return False
        return sample_count % self.period == 0


def connection_count(p_conn: float, n_src_hc: int) -> int:
    """Active source hypercolumns per target for connectivity fraction p_conn."""
    if not (0.0 < p_conn <= 1.0):
        raise ConfigError(f"connectivity fraction must be in (0, 1], got {p_conn}")
    k = int(round(p_conn * n_src_hc))
    if k == 0:
        raise ConfigError(
            f"p_conn={p_conn} with {n_src_hc} source hypercolumns rounds to "
            f"zero connections"
        )
    return k


def init_mask(n_src_hc: int, n_tgt_hc: int, p_conn: float, seed: int) -> ConnectivityMask:
    """Random initial wiring: each target hypercolumn draws k distinct source
    hypercolumns uniformly, reproducibly from `seed`."""
    k = connection_count(p_conn, n_src_hc)
    rng = np.random.default_rng(seed)
    active = np.zeros((n_src_hc, n_tgt_hc), dtype=bool)
    for t in range(n_tgt_hc):
        active[rng.choice(n_src_hc, size=k, replace=False), t] = True
    return ConnectivityMask(n_src_hc, n_tgt_hc, active, k)


def hc_mutual_information(traces: ProbabilityTraces, hc_src: int, hc_tgt: int) -> float:
    """Mutual information (nats) between one source and one target
    hypercolumn, read directly from the traces:

        MI = sum_ij p(x_i, y_j) log( p(x_i, y_j) / (p(x_i) p(y_j)) )

    Because the traces are clamped estimates rather than an exactly
    consistent joint distribution, the raw sum can come out marginally
    negative; it is clamped to zero.
    """
    rows = traces.src_geometry.hc_slice(hc_src)
    cols = traces.tgt_geometry.hc_slice(hc_tgt)
    block = traces.p_joint[rows, cols]
    ratio = block / (traces.p_src[rows, None] * traces.p_tgt[None, cols])
    mi = float(np.sum(block * np.log(ratio)))
    return max(mi, 0.0)


def score_matrix(traces: ProbabilityTraces) -> np.ndarray:
    """hc_mutual_information for every (source hc, target hc) pair."""
    n_src_hc = traces.src_geometry.n_hc
    n_tgt_hc = traces.tgt_geometry.n_hc
    scores = np.empty((n_src_hc, n_tgt_hc))
    for t in range(n_tgt_hc):
        for s in range(n_src_hc):
            scores[s, t] = hc_mutual_information(traces, s, t)
    return scores


def top_k_mask(scores: np.ndarray, k: int, current: Optional[ConnectivityMask] = None,
               max_swaps: Optional[int] = None) -> ConnectivityMask:
    """Select, per target hypercolumn, the k highest-scoring sources.

    Ties break toward the lower source index.  With `max_swaps` set, at most
    that many sources are exchanged per target per call: the lowest-scoring
    current members are dropped for the highest-scoring newcomers.
    """
    n_src_hc, n_tgt_hc = scores.shape
    active = np.zeros((n_src_hc, n_tgt_hc), dtype=bool)
    idx = np.arange(n_src_hc)
    for t in range(n_tgt_hc):
        col = scores[:, t]
        order = np.lexsort((idx, -col))  # score desc, index asc on ties
        desired = order[:k]
        if max_swaps is None or current is None:
            chosen = desired
        else:
            have = np.flatnonzero(current.active[:, t])
            desired_set = set(desired.tolist())
            have_set = set(have.tolist())
            incoming = [s for s in order if s in desired_set and s not in have_set]
            # drop worst-ranked current members first
            outgoing = [s for s in order[::-1] if s in have_set and s not in desired_set]
            n_swap = min(max_swaps, len(incoming))
            keep = have_set - set(outgoing[:n_swap])
            chosen = np.array(sorted(keep | set(incoming[:n_swap])), dtype=int)
        active[chosen, t] = True
    return ConnectivityMask(n_src_hc, n_tgt_hc, active, k)


def rewire(traces: ProbabilityTraces, mask: ConnectivityMask,
           max_swaps: Optional[int] = None) -> ConnectivityMask:
    """Full top-k reselection of each target hypercolumn's sources by trace
    mutual information.  Deterministic given the traces and k; idempotent on
    unchanged traces."""
    return top_k_mask(score_matrix(traces), mask.k, current=mask, max_swaps=max_swaps)
