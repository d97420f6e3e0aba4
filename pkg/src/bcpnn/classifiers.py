"""Supervised heads trained on internal representations.

Three families:

* Associative: the plain trace rule with kappa = 1.  The correct label is
  clamped on the output layer and the hidden-to-output traces take one step
  per sample.
* Go/No-go: two pathways driven by an error signal.  The Go pathway clamps
  the correct label with kappa_go = 1 - pi(correct); the No-go pathway clamps
  the wrongly predicted label with kappa_nogo = pi(predicted) (zero when the
  prediction is right).  No-go support enters negated, so it demotes.
* Linear: softmax regression on the representations, cross-entropy loss,
  adaptive-moment (Adam) updates.

Classifier traces default to "count-mode" initialization: everything starts
at the epsilon floor, so the first few updates already produce meaningful
count-ratio weights.  Starting from uniform traces instead would barely move
them at dt/tau_p per step when only tens of labelled samples exist.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .core import (
    ActivityVector,
    BcpnnParams,
    LayerGeometry,
    ProbabilityTraces,
    Projection,
    SupportVector,
    _trace_step_inplace,
    normalize,
    softmax_rows,
    support,
)
from .data import LABEL_GEOMETRY, N_CLASSES
from .errors import ConfigError, DataError, DivergenceError
from .plasticity import ConnectivityMask

GONOGO_VARIANTS = ("go", "nogo", "gonogo")


@dataclass(frozen=True)
class KappaPair:
    """Error-driven learning rates for one labelled sample."""

    kappa_go: float
    kappa_nogo: float
    pred: int


def compute_kappas(pi_out: ActivityVector, corr: int) -> KappaPair:
    """Prediction-error signals from the current output activity:

        kappa_go    = 1 - pi(corr)
        kappa_nogo  = 0 if pred == corr else pi(pred)

    where pred is the argmax of pi_out (lowest index on ties)."""
    v = pi_out.values
    pred = int(np.argmax(v))
    kappa_go = 1.0 - float(v[corr])
    kappa_nogo = 0.0 if pred == corr else float(v[pred])
    return KappaPair(kappa_go, kappa_nogo, pred)


def _one_hot(label: int, n: int = N_CLASSES) -> np.ndarray:
    y = np.zeros(n)
    y[label] = 1.0
    return y


def _rep_matrix(reps) -> Tuple[np.ndarray, LayerGeometry]:
    values = np.asarray(reps.values, dtype=np.float64)
    return values, reps.hidden_geometry


def _init_traces(src_geometry: LayerGeometry, params: BcpnnParams, init: str) -> ProbabilityTraces:
    if init == "count":
        return ProbabilityTraces.count_init(src_geometry, LABEL_GEOMETRY, params.epsilon)
    if init == "uniform":
        return ProbabilityTraces.uniform_init(src_geometry, LABEL_GEOMETRY, params.epsilon)
    raise ConfigError(f"unknown trace initialization {init!r}")


def _check_aligned(values: np.ndarray, labels: np.ndarray):
    if len(values) != len(labels):
        raise DataError(f"{len(values)} representations but {len(labels)} labels")


@dataclass
class AssocClassifier:
    projection: Projection
    params: BcpnnParams

    def predict(self, rep: np.ndarray) -> Tuple[int, ActivityVector]:
        act = ActivityVector(self.projection.src_geometry, rep)
        pi_out = normalize(support(self.projection, act))
        return int(np.argmax(pi_out.values)), pi_out


@dataclass
class GoNogoClassifier:
    go: Projection
    nogo: Projection
    variant: str
    params: BcpnnParams
    # per-epoch mean error signals observed during training (diagnostics)
    kappa_go_means: List[float] = field(default_factory=list)
    kappa_nogo_means: List[float] = field(default_factory=list)

    def __post_init__(self):
        if self.variant not in GONOGO_VARIANTS:
            raise ConfigError(f"variant must be one of {GONOGO_VARIANTS}")

    def output_support(self, rep: np.ndarray) -> SupportVector:
        """Combined support: Go promotes, No-go enters with sign flipped."""
        act = ActivityVector(self.go.src_geometry, rep)
        if self.variant == "go":
            s = support(self.go, act).values
        elif self.variant == "nogo":
            s = -support(self.nogo, act).values
        else:
            s = support(self.go, act).values - support(self.nogo, act).values
        return SupportVector(LABEL_GEOMETRY, s)

    def predict(self, rep: np.ndarray) -> Tuple[int, ActivityVector]:
        pi_out = normalize(self.output_support(rep))
        return int(np.argmax(pi_out.values)), pi_out


def train_assoc(reps, labels, epochs: int = 5,
                params: Optional[BcpnnParams] = None, seed: int = 0,
                init: str = "count") -> AssocClassifier:
    """Associative classifier: clamp the correct label and run the trace rule
    with kappa = 1 over seeded shuffled epochs."""
    params = params or BcpnnParams()
    values, src_geometry = _rep_matrix(reps)
    labels = np.asarray(labels)
    _check_aligned(values, labels)
    traces = _init_traces(src_geometry, params, init)
    mask = ConnectivityMask.full(src_geometry.n_hc, 1)
    lam = params.with_kappa(1.0).rate
    rng = np.random.default_rng(seed)
    targets = np.eye(N_CLASSES)[labels]
    for _ in range(epochs):
        for idx in rng.permutation(len(values)):
            _trace_step_inplace(traces, values[idx], targets[idx], lam)
    clf = AssocClassifier(Projection(traces, mask), params)
    clf.projection.materialize()
    return clf


def train_gonogo(reps, labels, epochs: int = 20, variant: str = "gonogo",
                 params: Optional[BcpnnParams] = None, seed: int = 0,
                 init: str = "count") -> GoNogoClassifier:
    """Error-gated dual-pathway training.

    Each sample is first classified with the current weights (through the
    chosen variant), then the Go traces step toward the correct label with
    kappa_go and the No-go traces toward the predicted label with
    kappa_nogo.  The "go" variant updates only the Go pathway, "nogo" only
    the No-go pathway, "gonogo" both.
    """
    if variant not in GONOGO_VARIANTS:
        raise ConfigError(f"variant must be one of {GONOGO_VARIANTS}")
    params = params or BcpnnParams()
    values, src_geometry = _rep_matrix(reps)
    labels = np.asarray(labels)
    _check_aligned(values, labels)
    mask = ConnectivityMask.full(src_geometry.n_hc, 1)
    clf = GoNogoClassifier(
        go=Projection(_init_traces(src_geometry, params, init), mask),
        nogo=Projection(_init_traces(src_geometry, params, init), mask),
        variant=variant, params=params,
    )
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        kappa_gos, kappa_nogos = [], []
        for idx in rng.permutation(len(values)):
            x = values[idx]
            corr = int(labels[idx])
            _, pi_out = clf.predict(x)
            kp = compute_kappas(pi_out, corr)
            kappa_gos.append(kp.kappa_go)
            kappa_nogos.append(kp.kappa_nogo)
            if variant != "nogo" and kp.kappa_go > 0.0:
                _trace_step_inplace(clf.go.traces, x, _one_hot(corr),
                                    params.with_kappa(kp.kappa_go).rate)
            if variant != "go" and kp.kappa_nogo > 0.0:
                _trace_step_inplace(clf.nogo.traces, x, _one_hot(kp.pred),
                                    params.with_kappa(kp.kappa_nogo).rate)
        clf.kappa_go_means.append(float(np.mean(kappa_gos)) if kappa_gos else 0.0)
        clf.kappa_nogo_means.append(float(np.mean(kappa_nogos)) if kappa_nogos else 0.0)
    clf.go.materialize()
    clf.nogo.materialize()
    return clf


# ---------------------------------------------------------------------------
# Linear softmax-regression baseline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearHyperparams:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    delta: float = 1e-8
    batch_size: int = 256
    epochs: int = 300


@dataclass
class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: Dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray],
              state: AdamState, hp: LinearHyperparams
              ) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """One adaptive-moment update; pure function of its inputs.

        m <- b1 m + (1-b1) g        mhat = m / (1 - b1^t)
        v <- b2 v + (1-b2) g^2      vhat = v / (1 - b2^t)
        theta <- theta - lr * mhat / (sqrt(vhat) + delta)
    """
    t = state.t + 1
    new_params, new_m, new_v = {}, {}, {}
    for key, theta in params.items():
        g = grads[key]
        m = hp.beta1 * state.m[key] + (1.0 - hp.beta1) * g
        v = hp.beta2 * state.v[key] + (1.0 - hp.beta2) * g * g
        m_hat = m / (1.0 - hp.beta1 ** t)
        v_hat = v / (1.0 - hp.beta2 ** t)
        new_params[key] = theta - hp.learning_rate * m_hat / (np.sqrt(v_hat) + hp.delta)
        new_m[key], new_v[key] = m, v
    return new_params, AdamState(new_m, new_v, t)


@dataclass
class LinearClassifier:
    weights: np.ndarray            # (features, classes)
    bias: np.ndarray               # (classes,)
    state: AdamState
    hyperparams: LinearHyperparams
    hidden_geometry: Optional[LayerGeometry] = None

    def logits(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights + self.bias

    def predict(self, rep: np.ndarray) -> Tuple[int, ActivityVector]:
        pi = softmax_rows(self.logits(np.atleast_2d(rep)), 1, N_CLASSES)[0]
        return int(np.argmax(pi)), ActivityVector(LABEL_GEOMETRY, pi)


def cross_entropy_loss(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean softmax cross-entropy, computed with the log-sum-exp shift."""
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    return float(np.mean(lse - logits[np.arange(len(labels)), labels]))


def loss_and_grads(weights: np.ndarray, bias: np.ndarray, X: np.ndarray,
                   labels: np.ndarray) -> Tuple[float, Dict[str, np.ndarray]]:
    """Cross-entropy and its analytic gradients for one minibatch."""
    logits = X @ weights + bias
    loss = cross_entropy_loss(logits, labels)
    p = softmax_rows(logits, 1, logits.shape[1])
    p[np.arange(len(labels)), labels] -= 1.0
    p /= len(labels)
    return loss, {"weights": X.T @ p, "bias": p.sum(axis=0)}


def train_linear(reps, labels, hyperparams: Optional[LinearHyperparams] = None,
                 seed: int = 0) -> LinearClassifier:
    """Minibatch softmax regression with seeded per-epoch shuffling; the
    final partial minibatch is included."""
    hp = hyperparams or LinearHyperparams()
    values, geometry = _rep_matrix(reps)
    labels = np.asarray(labels)
    _check_aligned(values, labels)
    params = {"weights": np.zeros((values.shape[1], N_CLASSES)),
              "bias": np.zeros(N_CLASSES)}
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(seed)
    for epoch in range(hp.epochs):
        order = rng.permutation(len(values))
        for start in range(0, len(order), hp.batch_size):
            batch = order[start:start + hp.batch_size]
            loss, grads = loss_and_grads(params["weights"], params["bias"],
                                         values[batch], labels[batch])
            if not np.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}, step {start // hp.batch_size}"
                )
            params, state = adam_step(params, grads, state, hp)
    return LinearClassifier(params["weights"], params["bias"], state, hp, geometry)


# ---------------------------------------------------------------------------
# Shared prediction entry points
# ---------------------------------------------------------------------------

def predict(classifier, rep: np.ndarray) -> Tuple[int, ActivityVector]:
    """Classify one representation; returns (class, output activity)."""
    return classifier.predict(np.asarray(rep, dtype=np.float64))


def predict_batch(classifier, reps: np.ndarray) -> np.ndarray:
    """Vectorized argmax predictions for a matrix of representations."""
    X = np.asarray(reps, dtype=np.float64)
    if isinstance(classifier, LinearClassifier):
        s = classifier.logits(X)
    elif isinstance(classifier, AssocClassifier):
        s = _batch_support(classifier.projection, X)
    elif isinstance(classifier, GoNogoClassifier):
        if classifier.variant == "go":
            s = _batch_support(classifier.go, X)
        elif classifier.variant == "nogo":
            s = -_batch_support(classifier.nogo, X)
        else:
            s = _batch_support(classifier.go, X) - _batch_support(classifier.nogo, X)
    else:
        raise ConfigError(f"unknown classifier type {type(classifier).__name__}")
    return np.argmax(s, axis=1)


def _batch_support(proj: Projection, X: np.ndarray) -> np.ndarray:
    if not proj.is_materialized:
        proj.materialize()
    return X @ proj.weights + proj.bias
