"""Experiment orchestration: seed grids, label-count sweeps, training,
evaluation, caching, and aggregation.

The full protocol trains one unsupervised network per (hidden size, seed),
extracts and caches the hidden representations of the whole training split,
then for every (split seed, label count, classifier kind) cell draws a
stratified labelled subset, a disjoint validation set, trains the classifier
and scores it.  Every cell is a pure function of the configuration and the
data files, so identical runs reproduce identical results.

Representations always pass through the 32-bit cache file before classifier
training, whether or not the cache existed beforehand; cache hits and cold
runs therefore produce identical records.
"""

from __future__ import annotations

import csv
import hashlib
import os
import time
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .classifiers import (
    LinearHyperparams,
    predict_batch,
    train_assoc,
    train_gonogo,
    train_linear,
)
from .core import BcpnnParams
from .data import Dataset, EncodingMode, load_idx, stratified_sample
from .errors import ConfigError, DataError, FormatError, ValidationError
from .persistence import (
    load_model,
    load_representations,
    save_model,
    save_representations,
)
from .unsup import UnsupConfig, extract_representations, train_unsupervised

CLASSIFIER_KINDS = ("assoc", "go", "nogo", "gonogo", "linear")

DEFAULT_LABEL_GRID = (10, 20, 50, 100, 200, 500, 1000, 2000, 5000, 10000, 20000, 50000)

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"

RESULTS_FIELDS = ("run_id", "unsup_seed", "split_seed", "n_hc_hid", "classifier",
                  "n_labels", "epochs", "encoding", "accuracy", "wall_time_s")

# role tags for deterministic per-cell seed derivation
_ROLE_LABELS, _ROLE_VAL, _ROLE_CLS = 1, 2, 3


@dataclass
class ExperimentConfig:
    """Every knob of the evaluation protocol; defaults follow the reference
    MNIST setup."""

    mnist_dir: Optional[str] = None
    encoding: EncodingMode = EncodingMode.BINARY

    hidden_sizes: Tuple[int, ...] = (30, 100, 200)
    n_mc_hidden: int = 100
    unsup_epochs: int = 5
    dt: float = 0.01
    tau_p: float = 60.0
    epsilon: float = 1e-8
    kappa_unsup: float = 1.0
    p_conn: float = 0.08
    rewire_period: Optional[int] = 2000
    freeze_final_epoch: bool = True
    max_swaps_per_event: Optional[int] = None
    init_jitter: float = 0.01
    skip_below: Optional[float] = None

    unsup_seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    split_seeds: Tuple[int, ...] = (0, 1, 2, 3, 4)
    label_grid: Tuple[int, ...] = DEFAULT_LABEL_GRID
    classifiers: Tuple[str, ...] = CLASSIFIER_KINDS
    validation_size: int = 10000

    assoc_epochs: int = 5
    gonogo_epochs: int = 20
    classifier_init: str = "count"
    linear_epochs: int = 300
    linear_learning_rate: float = 1e-3
    linear_beta1: float = 0.9
    linear_beta2: float = 0.999
    linear_delta: float = 1e-8
    linear_batch_size: int = 256

    base_seed: int = 0
    record_timing: bool = True

    def __post_init__(self):
        for n in self.label_grid:
            if n % 10 != 0:
                raise ConfigError(f"label count {n} is not divisible by 10")
        for kind in self.classifiers:
            if kind not in CLASSIFIER_KINDS:
                raise ConfigError(
                    f"unknown classifier {kind!r}, expected one of {CLASSIFIER_KINDS}"
                )
        if self.classifier_init not in ("count", "uniform"):
            raise ConfigError("classifier_init must be 'count' or 'uniform'")

    def bcpnn_params(self) -> BcpnnParams:
        return BcpnnParams(self.dt, self.tau_p, self.kappa_unsup, self.epsilon)

    def unsup_config(self, n_hc_hidden: int) -> UnsupConfig:
        return UnsupConfig(
            n_hc_hidden=n_hc_hidden,
            n_mc_hidden=self.n_mc_hidden,
            epochs=self.unsup_epochs,
            params=self.bcpnn_params(),
            p_conn=self.p_conn,
            encoding=self.encoding,
            rewire_period=self.rewire_period,
            freeze_final_epoch=self.freeze_final_epoch,
            max_swaps_per_event=self.max_swaps_per_event,
            init_jitter=self.init_jitter,
            skip_below=self.skip_below,
        )

    def linear_hyperparams(self) -> LinearHyperparams:
        return LinearHyperparams(
            learning_rate=self.linear_learning_rate,
            beta1=self.linear_beta1,
            beta2=self.linear_beta2,
            delta=self.linear_delta,
            batch_size=self.linear_batch_size,
            epochs=self.linear_epochs,
        )

    def classifier_epochs(self, kind: str) -> int:
        if kind == "assoc":
            return self.assoc_epochs
        if kind == "linear":
            return self.linear_epochs
        return self.gonogo_epochs

    def train_paths(self) -> Tuple[str, str]:
        if self.mnist_dir is None:
            raise ConfigError("no dataset directory configured")
        return (os.path.join(self.mnist_dir, TRAIN_IMAGES),
                os.path.join(self.mnist_dir, TRAIN_LABELS))

    def unsup_fingerprint(self, n_hc_hidden: int, unsup_seed: int,
                          data_digest: str) -> str:
        """Hash of every field that influences one unsupervised model."""
        text = "|".join(str(v) for v in (
            data_digest, self.encoding.value, n_hc_hidden, self.n_mc_hidden,
            self.unsup_epochs, self.dt, self.tau_p, self.epsilon,
            self.kappa_unsup, self.p_conn, self.rewire_period,
            self.freeze_final_epoch, self.max_swaps_per_event,
            self.init_jitter, self.skip_below, unsup_seed,
        ))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class ExperimentRecord:
    """One evaluated grid cell."""

    run_id: str
    unsup_seed: int
    split_seed: int
    n_hc_hid: int
    classifier: str
    n_labels: int
    epochs: int
    encoding: str
    accuracy: float
    wall_time_s: float = 0.0


@dataclass
class CellFailure:
    run_id: str
    error: str


def accuracy(preds: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of positions where prediction equals label."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValidationError(f"shape mismatch {preds.shape} vs {labels.shape}")
    if preds.size == 0:
        raise ValidationError("cannot score an empty prediction set")
    return float(np.mean(preds == labels))


def derived_seed(*parts: int) -> int:
    """Deterministic 32-bit seed mixed from integer parts."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def classifier_seed(base_seed: int, unsup_seed: int, split_seed: int,
                    n_labels: int, kind: str) -> int:
    return derived_seed(base_seed, _ROLE_CLS, unsup_seed, split_seed, n_labels,
                        CLASSIFIER_KINDS.index(kind))


def labelled_indices(labels: np.ndarray, n_labels: int, base_seed: int,
                     split_seed: int) -> np.ndarray:
    """The stratified labelled subset for one grid cell; independent of the
    validation draw."""
    lab_seed = derived_seed(base_seed, _ROLE_LABELS, split_seed, n_labels)
    return stratified_sample(labels, n_labels, lab_seed)


def split_indices(labels: np.ndarray, n_labels: int, validation_size: int,
                  base_seed: int, unsup_seed: int, split_seed: int
                  ) -> Tuple[np.ndarray, np.ndarray]:
    """Labelled subset (stratified) plus a disjoint seeded validation set
    drawn from the remaining samples."""
    labelled = labelled_indices(labels, n_labels, base_seed, split_seed)
    remainder = np.setdiff1d(np.arange(len(labels)), labelled)
    if remainder.size < validation_size:
        raise DataError(
            f"only {remainder.size} samples left for validation, "
            f"need {validation_size}"
        )
    val_seed = derived_seed(base_seed, _ROLE_VAL, unsup_seed, split_seed)
    rng = np.random.default_rng(val_seed)
    validation = np.sort(rng.choice(remainder, size=validation_size, replace=False))
    return labelled, validation


def train_classifier(kind: str, reps, labels: np.ndarray, config: ExperimentConfig,
                     seed: int):
    if kind == "assoc":
        return train_assoc(reps, labels, epochs=config.assoc_epochs,
                           params=config.bcpnn_params(), seed=seed,
                           init=config.classifier_init)
    if kind in ("go", "nogo", "gonogo"):
        return train_gonogo(reps, labels, epochs=config.gonogo_epochs,
                            variant=kind, params=config.bcpnn_params(),
                            seed=seed, init=config.classifier_init)
    if kind == "linear":
        return train_linear(reps, labels, config.linear_hyperparams(), seed=seed)
    raise ConfigError(f"unknown classifier kind {kind!r}")


def _cell_id(n_hc: int, unsup_seed: int, split_seed: int, n_labels: int,
             kind: str) -> str:
    return f"h{n_hc}-u{unsup_seed}-s{split_seed}-n{n_labels}-{kind}"


def run_cell(config: ExperimentConfig, reps, labels: np.ndarray, n_hc: int,
             unsup_seed: int, split_seed: int, n_labels: int, kind: str
             ) -> ExperimentRecord:
    """Train and evaluate one grid cell on already-extracted representations."""
    labelled, validation = split_indices(
        labels, n_labels, config.validation_size,
        config.base_seed, unsup_seed, split_seed,
    )
    cls_seed = classifier_seed(config.base_seed, unsup_seed, split_seed,
                               n_labels, kind)
    labelled_reps = replace(reps, values=reps.values[labelled])
    started = time.perf_counter()
    clf = train_classifier(kind, labelled_reps, labels[labelled], config, cls_seed)
    preds = predict_batch(clf, reps.values[validation])
    elapsed = time.perf_counter() - started
    return ExperimentRecord(
        run_id=_cell_id(n_hc, unsup_seed, split_seed, n_labels, kind),
        unsup_seed=unsup_seed,
        split_seed=split_seed,
        n_hc_hid=n_hc,
        classifier=kind,
        n_labels=n_labels,
        epochs=config.classifier_epochs(kind),
        encoding=config.encoding.value,
        accuracy=accuracy(preds, labels[validation]),
        wall_time_s=elapsed if config.record_timing else 0.0,
    )


def prepare_model_and_reps(config: ExperimentConfig, data: Dataset, n_hc: int,
                           unsup_seed: int, cache_dir: str, resume: bool,
                           data_digest: str, log: Callable[[str], None]):
    """Train (or load) one unsupervised model and its representation cache.

    Returns the representations after a round trip through the 32-bit cache
    file, so downstream classifier training sees identical values whether the
    cache was warm or cold.
    """
    os.makedirs(cache_dir, exist_ok=True)
    fp = config.unsup_fingerprint(n_hc, unsup_seed, data_digest)
    model_path = os.path.join(cache_dir, f"model_h{n_hc}_u{unsup_seed}_{fp}.bcp1")
    reps_path = os.path.join(cache_dir, f"reps_h{n_hc}_u{unsup_seed}_{fp}.brep")

    model = None
    if resume and os.path.exists(model_path):
        model = load_model(model_path)
        log(f"cache hit: unsupervised model h{n_hc} seed {unsup_seed} ({model_path})")
    if model is None:
        started = time.perf_counter()
        model = train_unsupervised(data, config.unsup_config(n_hc), unsup_seed)
        log(f"trained unsupervised model h{n_hc} seed {unsup_seed} "
            f"in {time.perf_counter() - started:.1f}s")
        save_model(model, model_path)

    reps = None
    if resume and os.path.exists(reps_path):
        cached = load_representations(reps_path)
        if cached.fingerprint == model.fingerprint():
            reps = cached
            log(f"cache hit: representations h{n_hc} seed {unsup_seed} ({reps_path})")
    if reps is None:
        fresh = extract_representations(model, data)
        save_representations(fresh, reps_path)
        reps = load_representations(reps_path)
        log(f"extracted representations h{n_hc} seed {unsup_seed} "
            f"({reps.values.shape[0]}x{reps.values.shape[1]})")
    return model, reps, reps_path


def run_experiment(config: ExperimentConfig, out_dir: str, resume: bool = False,
                   jobs: int = 1, log: Optional[Callable[[str], None]] = None,
                   data: Optional[Dataset] = None
                   ) -> Tuple[List[ExperimentRecord], List[CellFailure]]:
    """Execute the full grid.  Records come back in deterministic order
    (hidden size, unsup seed, split seed, label count, classifier); failed
    cells are collected rather than aborting the sweep.  Completed records
    are flushed incrementally to ``results.partial.csv`` in `out_dir`.
    """
    log = log or (lambda msg: None)
    if data is None:
        images_path, labels_path = config.train_paths()
        data = load_idx(images_path, labels_path, split="train")
    data_digest = hashlib.sha256(
        data.images.tobytes() + np.ascontiguousarray(data.labels).tobytes()
    ).hexdigest()[:16]

    for n in config.label_grid:
        if n > len(data):
            raise ConfigError(f"label count {n} exceeds dataset size {len(data)}")

    os.makedirs(out_dir, exist_ok=True)
    cache_dir = os.path.join(out_dir, "cache")
    partial_path = os.path.join(out_dir, "results.partial.csv")
    records: List[ExperimentRecord] = []
    failures: List[CellFailure] = []

    with open(partial_path, "w", newline="\n") as partial:
        partial.write(",".join(RESULTS_FIELDS) + "\n")
        for n_hc in config.hidden_sizes:
            for unsup_seed in config.unsup_seeds:
                _, reps, reps_path = prepare_model_and_reps(
                    config, data, n_hc, unsup_seed, cache_dir, resume,
                    data_digest, log,
                )
                cells = [
                    (split_seed, n_labels, kind)
                    for split_seed in config.split_seeds
                    for n_labels in config.label_grid
                    for kind in config.classifiers
                ]
                block = _run_block(config, reps, reps_path, data.labels, n_hc,
                                   unsup_seed, cells, jobs, failures, log)
                for rec in block:
                    records.append(rec)
                    partial.write(_format_row(rec) + "\n")
                partial.flush()
    return records, failures


def _run_block(config, reps, reps_path, labels, n_hc, unsup_seed, cells, jobs,
               failures, log) -> List[ExperimentRecord]:
    """Evaluate one (hidden size, unsup seed) block of cells, optionally in
    parallel; output order always matches the cell list."""
    results: List[Optional[ExperimentRecord]] = [None] * len(cells)
    if jobs <= 1:
        for i, (split_seed, n_labels, kind) in enumerate(cells):
            results[i] = _guarded_cell(
                config, reps, labels, n_hc, unsup_seed, split_seed, n_labels,
                kind, failures, log,
            )
    else:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {
                pool.submit(_pool_cell, config, reps_path, labels, n_hc,
                            unsup_seed, split_seed, n_labels, kind): i
                for i, (split_seed, n_labels, kind) in enumerate(cells)
            }
            for future, i in futures.items():
                split_seed, n_labels, kind = cells[i]
                cell = _cell_id(n_hc, unsup_seed, split_seed, n_labels, kind)
                try:
                    results[i] = future.result()
                    log(f"cell {cell}: accuracy {results[i].accuracy:.4f}")
                except Exception as exc:  # noqa: BLE001 - cell isolation
                    failures.append(CellFailure(cell, f"{type(exc).__name__}: {exc}"))
                    log(f"cell {cell} FAILED: {exc}")
    return [r for r in results if r is not None]


def _guarded_cell(config, reps, labels, n_hc, unsup_seed, split_seed, n_labels,
                  kind, failures, log) -> Optional[ExperimentRecord]:
    cell = _cell_id(n_hc, unsup_seed, split_seed, n_labels, kind)
    try:
        rec = run_cell(config, reps, labels, n_hc, unsup_seed, split_seed,
                       n_labels, kind)
        log(f"cell {cell}: accuracy {rec.accuracy:.4f}")
        return rec
    except Exception as exc:  # noqa: BLE001 - cell isolation
        failures.append(CellFailure(cell, f"{type(exc).__name__}: {exc}"))
        log(f"cell {cell} FAILED: {exc}")
        return None


_WORKER_REPS: Dict[str, object] = {}


def _pool_cell(config, reps_path, labels, n_hc, unsup_seed, split_seed,
               n_labels, kind) -> ExperimentRecord:
    reps = _WORKER_REPS.get(reps_path)
    if reps is None:
        reps = load_representations(reps_path)
        _WORKER_REPS.clear()
        _WORKER_REPS[reps_path] = reps
    return run_cell(config, reps, labels, n_hc, unsup_seed, split_seed,
                    n_labels, kind)


# ---------------------------------------------------------------------------
# Results CSV
# ---------------------------------------------------------------------------

def _format_row(rec: ExperimentRecord) -> str:
    return ",".join([
        rec.run_id, str(rec.unsup_seed), str(rec.split_seed), str(rec.n_hc_hid),
        rec.classifier, str(rec.n_labels), str(rec.epochs), rec.encoding,
        f"{rec.accuracy:.6f}", f"{rec.wall_time_s:.3f}",
    ])


def write_results_csv(records: Sequence[ExperimentRecord], path):
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(RESULTS_FIELDS) + "\n")
        for rec in records:
            fh.write(_format_row(rec) + "\n")


def read_results_csv(path) -> List[ExperimentRecord]:
    records = []
    with open(path, "r", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty results file") from None
        if tuple(header) != RESULTS_FIELDS:
            raise FormatError(
                f"{path}:1: bad header {header!r}, expected {list(RESULTS_FIELDS)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(RESULTS_FIELDS):
                raise FormatError(
                    f"{path}:{lineno}: expected {len(RESULTS_FIELDS)} fields, "
                    f"got {len(row)}"
                )
            try:
                records.append(ExperimentRecord(
                    run_id=row[0], unsup_seed=int(row[1]), split_seed=int(row[2]),
                    n_hc_hid=int(row[3]), classifier=row[4], n_labels=int(row[5]),
                    epochs=int(row[6]), encoding=row[7], accuracy=float(row[8]),
                    wall_time_s=float(row[9]),
                ))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not records:
        raise ValidationError(f"{path}: no result rows")
    return records


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupSummary:
    """Mean and sample standard deviation of accuracy, in percentage points,
    for one (hidden size, classifier, label count) group."""

    n_hc_hid: int
    classifier: str
    n_labels: int
    mean_pct: float
    sd_pct: float
    count: int

    @property
    def degenerate(self) -> bool:
        return self.count < 2


def aggregate(records: Sequence[ExperimentRecord]) -> List[GroupSummary]:
    """Group records by (hidden size, classifier, label count)."""
    if not records:
        raise ValidationError("no records to aggregate")
    groups: Dict[Tuple[int, str, int], List[float]] = {}
    for rec in records:
        groups.setdefault((rec.n_hc_hid, rec.classifier, rec.n_labels), []).append(
            rec.accuracy
        )

    def order(key):
        n_hc, kind, n_labels = key
        kind_rank = CLASSIFIER_KINDS.index(kind) if kind in CLASSIFIER_KINDS else len(CLASSIFIER_KINDS)
        return (n_hc, kind_rank, kind, n_labels)

    summaries = []
    for key in sorted(groups, key=order):
        accs = np.asarray(groups[key]) * 100.0
        sd = float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0
        summaries.append(GroupSummary(
            n_hc_hid=key[0], classifier=key[1], n_labels=key[2],
            mean_pct=float(np.mean(accs)), sd_pct=sd, count=len(accs),
        ))
    return summaries
