"""Unsupervised learning of the input-to-hidden projection and extraction of
internal representations.

Training is online: every sample presentation drives the hidden layer from
the input through the current traces, then takes one reward-gated trace update
(kappa = 1 by default).  Structural plasticity rewires the hypercolumn mask on a sample
schedule and is frozen for the final epoch so the weights consolidate on a
fixed wiring.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    BcpnnParams,
    LayerGeometry,
    ProbabilityTraces,
    Projection,
    _support_from_traces,
    _trace_step_inplace,
    derive_weights,
    softmax_rows,
)
from .data import Dataset, EncodingMode, encode_images, input_geometry
from .errors import ConfigError, DivergenceError, GeometryError
from .plasticity import RewireSchedule, init_mask, rewire


@dataclass
class UnsupConfig:
    """Configuration for one unsupervised training run."""

    n_hc_hidden: int
    n_mc_hidden: int = 100
    epochs: int = 5
    params: BcpnnParams = field(default_factory=BcpnnParams)
    p_conn: float = 0.08
    encoding: EncodingMode = EncodingMode.BINARY
    rewire_period: Optional[int] = 2000   # None disables structural plasticity
    freeze_final_epoch: bool = True
    max_swaps_per_event: Optional[int] = None
    init_jitter: float = 0.01
    skip_below: Optional[float] = None

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.n_hc_hidden < 1 or self.n_mc_hidden < 1:
            raise ConfigError("hidden geometry must have at least one unit")


@dataclass
class UnsupModel:
    """A trained (or freshly initialized) input-to-hidden network."""

    input_geometry: LayerGeometry
    hidden_geometry: LayerGeometry
    projection: Projection
    params: BcpnnParams
    encoding: EncodingMode
    seed: int
    epochs_trained: int = 0
    sample_count: int = 0
    schedule: Optional[RewireSchedule] = None

    def fingerprint(self) -> str:
        """Stable digest of everything that determines this model's
        behaviour; used to key representation caches."""
        h = hashlib.sha256()
        h.update(np.asarray([
            self.input_geometry.n_hc, self.input_geometry.n_mc,
            self.hidden_geometry.n_hc, self.hidden_geometry.n_mc,
            self.seed, self.epochs_trained, self.sample_count,
        ], dtype=np.int64).tobytes())
        h.update(np.asarray([
            self.params.dt, self.params.tau_p, self.params.kappa,
            self.params.epsilon,
        ], dtype=np.float64).tobytes())
        h.update(self.encoding.value.encode())
        h.update(np.packbits(self.projection.mask.active).tobytes())
        t = self.projection.traces
        h.update(t.p_src.tobytes())
        h.update(t.p_tgt.tobytes())
        h.update(np.ascontiguousarray(t.p_joint).tobytes())
        return h.hexdigest()


@dataclass
class RepresentationSet:
    """Hidden activities for a sequence of samples, one row per sample."""

    values: np.ndarray          # (n samples, hidden units)
    hidden_geometry: LayerGeometry
    split: str
    fingerprint: str

    def __len__(self) -> int:
        return len(self.values)


def _derive_seeds(seed: int):
    ss = np.random.SeedSequence(seed)
    mask_ss, jitter_ss, shuffle_ss = ss.spawn(3)
    return (
        int(mask_ss.generate_state(1)[0]),
        np.random.default_rng(jitter_ss),
        np.random.default_rng(shuffle_ss),
    )


def train_unsupervised(data: Dataset, config: UnsupConfig, seed: int,
                       on_epoch=None) -> UnsupModel:
    """Run the full unsupervised protocol on one dataset.

    Per epoch the samples are visited in a fresh seeded shuffled order; each
    presentation encodes the image, drives the hidden layer, and takes one
    trace step at the configured kappa.  Rewiring fires every `rewire_period` samples and
    stops before the final epoch.  The result is deterministic given
    (data, config, seed); weights are materialized on the returned model.

    `on_epoch(epoch_index, seconds, model)` is invoked after each epoch.
    """
    src_geom = input_geometry(data.n_pixels)
    hid_geom = LayerGeometry(config.n_hc_hidden, config.n_mc_hidden)
    mask_seed, jitter_rng, shuffle_rng = _derive_seeds(seed)

    mask = init_mask(src_geom.n_hc, hid_geom.n_hc, config.p_conn, mask_seed)
    traces = ProbabilityTraces.uniform_init(
        src_geom, hid_geom, epsilon=config.params.epsilon,
        jitter=config.init_jitter, rng=jitter_rng,
    )

    n = len(data)
    schedule = None
    if config.rewire_period is not None and n > 0:
        freeze_after = (config.epochs - 1) * n if config.freeze_final_epoch else None
        schedule = RewireSchedule(config.rewire_period, freeze_after)

    model = UnsupModel(
        input_geometry=src_geom, hidden_geometry=hid_geom,
        projection=Projection(traces, mask),
        params=config.params, encoding=config.encoding, seed=seed,
        schedule=schedule,
    )

    lam = config.params.rate
    for _ in range(config.epochs):
        epoch_started = time.perf_counter()
        order = shuffle_rng.permutation(n)
        for idx in order:
            x = encode_images(data.images[idx:idx + 1], config.encoding)[0]
            s = _support_from_traces(traces, mask, x)
            if not np.isfinite(s).all():
                bad = int(np.flatnonzero(~np.isfinite(s))[0])
                raise DivergenceError(
                    f"non-finite support at sample {idx} "
                    f"(hidden hypercolumn {bad // hid_geom.n_mc})"
                )
            y = _softmax_flat(s, hid_geom)
            _trace_step_inplace(traces, x, y, lam, config.skip_below)
            model.sample_count += 1
            if schedule is not None and schedule.fires_at(model.sample_count):
                mask = rewire(traces, mask, config.max_swaps_per_event)
                model.projection.mask = mask
        model.epochs_trained += 1
        traces.validate()
        if on_epoch is not None:
            on_epoch(model.epochs_trained, time.perf_counter() - epoch_started, model)

    model.projection.materialize()
    return model


def _softmax_flat(s: np.ndarray, geometry: LayerGeometry) -> np.ndarray:
    v = s.reshape(geometry.shape)
    shifted = v - v.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return (e / e.sum(axis=1, keepdims=True)).ravel()


def extract_representations(model: UnsupModel, data: Dataset,
                            batch_size: int = 512) -> RepresentationSet:
    """Drive the hidden layer from the input for every sample, no learning.

    Row r equals normalize(support(projection, encode(image r))); rows keep
    the dataset order.
    """
    if data.n_pixels != model.input_geometry.n_hc:
        raise GeometryError(
            f"dataset has {data.n_pixels} pixels but model expects "
            f"{model.input_geometry.n_hc}"
        )
    proj = model.projection
    if proj.is_materialized:
        bias, weights = proj.bias, proj.weights
    else:
        bias, weights = derive_weights(proj.traces, proj.mask)
    hid = model.hidden_geometry
    out = np.empty((len(data), hid.n_units))
    for start in range(0, len(data), batch_size):
        stop = min(start + batch_size, len(data))
        x = encode_images(data.images[start:stop], model.encoding)
        s = x @ weights + bias
        out[start:stop] = softmax_rows(s, hid.n_hc, hid.n_mc)
    return RepresentationSet(out, hid, data.split, model.fingerprint())
