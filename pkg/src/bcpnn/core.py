"""Core BCPNN kernels: modular activity vectors, probability traces, and the
inference/learning rules that tie them together.

A layer is a grid of `n_hc` hypercolumns with `n_mc` minicolumns (units) each.
Activities within one hypercolumn form a discrete probability distribution.
Learning maintains exponentially decaying estimates of unit marginals and of
source-target joint activation probabilities; weights are the log-odds ratio
of those traces and biases are the log marginals:

    b_j  = log p(y_j)
    w_ij = log( p(x_i, y_j) / (p(x_i) p(y_j)) )

Inference sums bias plus weighted source activity into a support value per
target unit, then applies a softmax within each target hypercolumn.

All trace values live in [epsilon, 1]; the floor keeps every logarithm finite.
Everything is 64-bit; all operations are deterministic functions of their
inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional, Tuple

import numpy as np

from .errors import DivergenceError, GeometryError, ParameterError, ValidationError

if TYPE_CHECKING:
    from .plasticity import ConnectivityMask


@dataclass(frozen=True)
class LayerGeometry:
    """Hypercolumn/minicolumn counts defining a layer's unit grid.

    Units are indexed flat as ``hc * n_mc + mc``.
    """

    n_hc: int
    n_mc: int

    def __post_init__(self):
        if self.n_hc < 1 or self.n_mc < 1:
            raise ValidationError(
                f"geometry needs at least one hypercolumn and one minicolumn, "
                f"got {self.n_hc}x{self.n_mc}"
            )

    @property
    def n_units(self) -> int:
        return self.n_hc * self.n_mc

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n_hc, self.n_mc)

    def hc_slice(self, hc: int) -> slice:
        """Flat-index slice covering hypercolumn `hc`."""
        return slice(hc * self.n_mc, (hc + 1) * self.n_mc)


class ActivityVector:
    """Per-unit activities, normalized to sum to 1 within each hypercolumn."""

    __slots__ = ("geometry", "values")

    def __init__(self, geometry: LayerGeometry, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (geometry.n_units,):
            raise GeometryError(
                f"activity length {values.shape} does not match geometry "
                f"{geometry.n_hc}x{geometry.n_mc}"
            )
        self.geometry = geometry
        self.values = values

    def by_hypercolumn(self) -> np.ndarray:
        """View of shape (n_hc, n_mc)."""
        return self.values.reshape(self.geometry.shape)

    def validate(self, tol: float = 1e-12):
        v = self.values
        if not np.isfinite(v).all():
            raise ValidationError("activity contains non-finite values")
        if v.min() < -tol or v.max() > 1.0 + tol:
            raise ValidationError("activity values must lie in [0, 1]")
        sums = self.by_hypercolumn().sum(axis=1)
        if np.abs(sums - 1.0).max() > tol:
            raise ValidationError("activities must sum to 1 per hypercolumn")


class SupportVector:
    """Unnormalized log-domain input per unit (one value per minicolumn)."""

    __slots__ = ("geometry", "values")

    def __init__(self, geometry: LayerGeometry, values: np.ndarray):
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (geometry.n_units,):
            raise GeometryError(
                f"support length {values.shape} does not match geometry "
                f"{geometry.n_hc}x{geometry.n_mc}"
            )
        self.geometry = geometry
        self.values = values

    def validate(self):
        if not np.isfinite(self.values).all():
            raise ValidationError("support contains non-finite values")


@dataclass(frozen=True)
class BcpnnParams:
    """Learning-rule parameters.

    `dt` and `tau_p` are in the same (dimensionless) time units; one sample
    presentation advances time by `dt`.  `kappa` gates the effective rate,
    `epsilon` is the floor applied to every trace after an update.
    """

    dt: float = 0.01
    tau_p: float = 60.0
    kappa: float = 1.0
    epsilon: float = 1e-8

    def __post_init__(self):
        ratio = self.dt / self.tau_p
        if not (0.0 < ratio < 1.0):
            raise ParameterError(f"dt/tau_p must be in (0, 1), got {ratio}")
        if not (0.0 <= self.kappa <= 1.0):
            raise ParameterError(f"kappa must be in [0, 1], got {self.kappa}")
        if not (0.0 < self.epsilon <= 1e-3):
            raise ParameterError(f"epsilon must be in (0, 1e-3], got {self.epsilon}")

    @property
    def rate(self) -> float:
        """Effective Euler step rate kappa * dt / tau_p."""
        return self.kappa * self.dt / self.tau_p

    def with_kappa(self, kappa: float) -> "BcpnnParams":
        return BcpnnParams(self.dt, self.tau_p, kappa, self.epsilon)


class ProbabilityTraces:
    """Marginal and joint activation-probability traces for one projection.

    `p_joint` is indexed [source unit, target unit] and stored target-major
    (Fortran order: the column holding all source entries for one target unit
    is contiguous), which is the streaming direction of both the support inner
    loop and the joint update.
    """

    __slots__ = ("src_geometry", "tgt_geometry", "p_src", "p_tgt", "p_joint", "epsilon")

    def __init__(self, src_geometry, tgt_geometry, p_src, p_tgt, p_joint, epsilon):
        n_src, n_tgt = src_geometry.n_units, tgt_geometry.n_units
        p_src = np.asarray(p_src, dtype=np.float64)
        p_tgt = np.asarray(p_tgt, dtype=np.float64)
        p_joint = np.asarray(p_joint, dtype=np.float64)
        if p_src.shape != (n_src,) or p_tgt.shape != (n_tgt,):
            raise GeometryError("marginal trace shapes do not match geometries")
        if p_joint.shape != (n_src, n_tgt):
            raise GeometryError(
                f"joint trace shape {p_joint.shape} != ({n_src}, {n_tgt})"
            )
        self.src_geometry = src_geometry
        self.tgt_geometry = tgt_geometry
        self.p_src = p_src
        self.p_tgt = p_tgt
        self.p_joint = np.asfortranarray(p_joint)
        self.epsilon = float(epsilon)

    @classmethod
    def uniform_init(cls, src_geometry, tgt_geometry, epsilon=1e-8, jitter=0.0, rng=None):
        """Marginals at 1/n_mc, joint at their product times (1 + u) with
        u ~ U(-jitter, jitter).  The jitter breaks the symmetry between
        minicolumns of a hypercolumn; without it they never differentiate."""
        p_src = np.full(src_geometry.n_units, 1.0 / src_geometry.n_mc)
        p_tgt = np.full(tgt_geometry.n_units, 1.0 / tgt_geometry.n_mc)
        p_joint = np.outer(p_src, p_tgt)
        if jitter > 0.0:
            if rng is None:
                raise ParameterError("jittered initialization needs an rng")
            p_joint = p_joint * (1.0 + rng.uniform(-jitter, jitter, p_joint.shape))
        p_joint = np.clip(p_joint, epsilon, 1.0)
        return cls(src_geometry, tgt_geometry, p_src, p_tgt, p_joint, epsilon)

    @classmethod
    def count_init(cls, src_geometry, tgt_geometry, epsilon=1e-8):
        """All traces at the floor.  After even one update the log-odds
        weights behave like event-count ratios, which is what makes
        classifiers trained on a handful of samples work at all."""
        p_src = np.full(src_geometry.n_units, epsilon)
        p_tgt = np.full(tgt_geometry.n_units, epsilon)
        p_joint = np.full((src_geometry.n_units, tgt_geometry.n_units), epsilon)
        return cls(src_geometry, tgt_geometry, p_src, p_tgt, p_joint, epsilon)

    def copy(self) -> "ProbabilityTraces":
        return ProbabilityTraces(
            self.src_geometry,
            self.tgt_geometry,
            self.p_src.copy(),
            self.p_tgt.copy(),
            self.p_joint.copy(order="F"),
            self.epsilon,
        )

    def validate(self):
        for name, arr in (("p_src", self.p_src), ("p_tgt", self.p_tgt),
                          ("p_joint", self.p_joint)):
            if not np.isfinite(arr).all():
                raise ValidationError(f"{name} contains non-finite values")
            if arr.min() < self.epsilon or arr.max() > 1.0:
                raise ValidationError(f"{name} values must lie in [epsilon, 1]")


class Projection:
    """A learnable connection between two layers.

    Holds the probability traces, a hypercolumn-level connectivity mask, and
    (optionally) bias/weight arrays materialized from the traces.  During
    training the weights stay virtual and support is computed straight from
    the traces; `materialize()` freezes them into arrays for fast batched
    inference and persistence.  A projection whose bias/weights were set by
    hand (tests, imported models) is served from those arrays as-is.
    """

    __slots__ = ("traces", "mask", "bias", "weights")

    def __init__(self, traces: ProbabilityTraces, mask: "ConnectivityMask",
                 bias: Optional[np.ndarray] = None,
                 weights: Optional[np.ndarray] = None):
        if mask.n_src_hc != traces.src_geometry.n_hc or mask.n_tgt_hc != traces.tgt_geometry.n_hc:
            raise GeometryError("mask hypercolumn counts do not match trace geometries")
        self.traces = traces
        self.mask = mask
        self.bias = bias
        self.weights = weights

    @property
    def src_geometry(self) -> LayerGeometry:
        return self.traces.src_geometry

    @property
    def tgt_geometry(self) -> LayerGeometry:
        return self.traces.tgt_geometry

    def materialize(self):
        """Compute and store bias/weight arrays from the current traces."""
        self.bias, self.weights = derive_weights(self.traces, self.mask)

    @property
    def is_materialized(self) -> bool:
        return self.bias is not None and self.weights is not None


def normalize(s: SupportVector) -> ActivityVector:
    """Softmax within each hypercolumn.

    The per-hypercolumn maximum is subtracted first, so supports with
    magnitude up to ~700 cannot overflow.  Outputs are strictly positive
    unless the support spread within one hypercolumn exceeds ~745, where
    exp underflows to zero.
    """
    s.validate()
    v = s.values.reshape(s.geometry.shape)
    shifted = v - v.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    pi = e / e.sum(axis=1, keepdims=True)
    return ActivityVector(s.geometry, pi.ravel())


def softmax_rows(values: np.ndarray, n_hc: int, n_mc: int) -> np.ndarray:
    """Batched softmax over (rows, n_hc * n_mc) flat arrays, normalizing
    each hypercolumn of each row independently."""
    v = values.reshape(values.shape[0], n_hc, n_mc)
    shifted = v - v.max(axis=2, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=2, keepdims=True)
    return out.reshape(values.shape[0], n_hc * n_mc)


def support(proj: Projection, act_src: ActivityVector) -> SupportVector:
    """Total input to each target unit: s_j = b_j + sum_i pi_i w_ij.

    The sum runs only over source units whose hypercolumn is connected to
    the target unit's hypercolumn in the projection mask; contributions
    from inactive pairs are exactly zero.
    """
    if act_src.geometry != proj.src_geometry:
        raise GeometryError(
            f"source activity geometry {act_src.geometry} does not match "
            f"projection source {proj.src_geometry}"
        )
    if not np.isfinite(act_src.values).all():
        raise ValidationError("source activity contains non-finite values")
    if proj.is_materialized:
        s = proj.bias + act_src.values @ proj.weights
    else:
        s = _support_from_traces(proj.traces, proj.mask, act_src.values)
    if not np.isfinite(s).all():
        bad_unit = int(np.flatnonzero(~np.isfinite(s))[0])
        raise DivergenceError(
            f"non-finite support at unit {bad_unit} "
            f"(hypercolumn {bad_unit // proj.tgt_geometry.n_mc})"
        )
    return SupportVector(proj.tgt_geometry, s)


def _support_from_traces(traces: ProbabilityTraces, mask, x: np.ndarray) -> np.ndarray:
    """Mask-gated support computed on demand from the traces, one target
    hypercolumn at a time (their masked source sets differ)."""
    tgt = traces.tgt_geometry
    n_mc_src = traces.src_geometry.n_mc
    p_src, p_tgt, joint = traces.p_src, traces.p_tgt, traces.p_joint
    s = np.log(p_tgt)
    for t in range(tgt.n_hc):
        cols = tgt.hc_slice(t)
        src_units = mask.source_units(t, n_mc_src)
        if src_units.size == 0:
            continue
        block = joint[np.ix_(src_units, np.arange(cols.start, cols.stop))]
        w = np.log(block / (p_src[src_units, None] * p_tgt[None, cols]))
        s[cols] += x[src_units] @ w
    return s


def derive_weights(traces: ProbabilityTraces, mask) -> Tuple[np.ndarray, np.ndarray]:
    """Materialize bias and weight arrays from traces.

    bias_j = log p(y_j); w_ij = log( p(x_i,y_j) / (p(x_i) p(y_j)) ) where the
    mask is active and exactly 0 elsewhere.  The epsilon floor on traces
    bounds every weight by 2*log(1/epsilon).
    """
    p_src, p_tgt = traces.p_src, traces.p_tgt
    bias = np.log(p_tgt)
    weights = np.log(traces.p_joint / (p_src[:, None] * p_tgt[None, :]))
    inactive = ~mask.unit_mask(traces.src_geometry.n_mc, traces.tgt_geometry.n_mc)
    weights[inactive] = 0.0
    return bias, np.asfortranarray(weights)


def trace_step(traces: ProbabilityTraces, act_src: ActivityVector,
               act_tgt: ActivityVector, params: BcpnnParams,
               skip_below: Optional[float] = None) -> ProbabilityTraces:
    """One forward-Euler step of the trace dynamics with rate
    lam = kappa * dt / tau_p:

        p_i  += lam * (pi_i - p_i)
        p_j  += lam * (pi_j - p_j)
        p_ij += lam * (pi_i pi_j - p_ij)

    followed by clamping every trace to >= epsilon.  Returns new traces;
    the inputs are not modified.

    `skip_below` optionally treats source activities below the threshold as
    zero in the joint update (their entries then only decay).  Off by
    default; results with the flag on may differ from the exact path.
    """
    if act_src.geometry != traces.src_geometry or act_tgt.geometry != traces.tgt_geometry:
        raise GeometryError("activity geometries do not match traces")
    lam = params.rate
    if lam >= 1.0:
        raise ParameterError(f"update rate {lam} >= 1 is unstable")
    out = traces.copy()
    _trace_step_inplace(out, act_src.values, act_tgt.values, lam, skip_below)
    return out


def _trace_step_inplace(traces: ProbabilityTraces, x: np.ndarray, y: np.ndarray,
                        lam: float, skip_below: Optional[float] = None):
    """In-place trace update; callers own the aliasing.  Bit-identical to
    evaluating `p + lam * (target - p)` densely: rows with zero source
    activity reduce to `p - lam * p` exactly."""
    if lam == 0.0:
        return
    eps = traces.epsilon
    p_src, p_tgt, joint = traces.p_src, traces.p_tgt, traces.p_joint

    p_src += lam * (x - p_src)
    np.maximum(p_src, eps, out=p_src)
    p_tgt += lam * (y - p_tgt)
    np.maximum(p_tgt, eps, out=p_tgt)

    threshold = 0.0 if skip_below is None else skip_below
    active = x > threshold if threshold > 0.0 else x != 0.0
    rows = np.flatnonzero(active)
    silent = np.flatnonzero(~active)
    if silent.size:
        joint[silent, :] -= lam * joint[silent, :]
    if rows.size:
        joint[rows, :] += lam * (x[rows, None] * y[None, :] - joint[rows, :])
    np.maximum(joint, eps, out=joint)
