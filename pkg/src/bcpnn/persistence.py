"""Binary persistence for models and cached representations.

Model container ("BCP1"): magic, format version, model kind tag, then a
kind-specific payload (geometries, parameters, bit-packed connectivity mask,
trace/weight arrays as little-endian 64-bit reals), and a trailing CRC32 of
everything before it.  Loading a saved model restores every array bit-exactly.

Representation cache ("BREP"): magic, version, row/column counts, the source
split tag and the model fingerprint, then the matrix as little-endian 32-bit
reals, row-major.  Loading widens back to float64.
"""

from __future__ import annotations

import struct
import zlib
from typing import Union

import numpy as np

from .core import BcpnnParams, LayerGeometry, ProbabilityTraces, Projection
from .classifiers import (
    AdamState,
    AssocClassifier,
    GoNogoClassifier,
    LinearClassifier,
    LinearHyperparams,
)
from .data import EncodingMode
from .errors import FormatError
from .plasticity import ConnectivityMask, RewireSchedule
from .unsup import RepresentationSet, UnsupModel

MODEL_MAGIC = b"BCP1"
REPS_MAGIC = b"BREP"
FORMAT_VERSION = 1

MODEL_KINDS = ("unsup", "assoc", "go", "nogo", "gonogo", "linear")

AnyModel = Union[UnsupModel, AssocClassifier, GoNogoClassifier, LinearClassifier]


class _Writer:
    def __init__(self):
        self.chunks = []

    def raw(self, b: bytes):
        self.chunks.append(b)

    def pack(self, fmt: str, *values):
        self.raw(struct.pack("<" + fmt, *values))

    def string(self, s: str):
        b = s.encode("utf-8")
        self.pack("H", len(b))
        self.raw(b)

    def array(self, arr: np.ndarray, dtype: str = "<f8"):
        a = np.ascontiguousarray(arr, dtype=dtype)
        self.pack("B", a.ndim)
        for d in a.shape:
            self.pack("Q", d)
        self.raw(a.tobytes())

    def geometry(self, g: LayerGeometry):
        self.pack("II", g.n_hc, g.n_mc)

    def params(self, p: BcpnnParams):
        self.pack("dddd", p.dt, p.tau_p, p.kappa, p.epsilon)

    def mask(self, m: ConnectivityMask):
        packed = np.packbits(m.active.astype(np.uint8), axis=None)
        self.pack("IIIQ", m.n_src_hc, m.n_tgt_hc, m.k, packed.size)
        self.raw(packed.tobytes())

    def projection(self, proj: Projection):
        t = proj.traces
        self.geometry(t.src_geometry)
        self.geometry(t.tgt_geometry)
        self.pack("d", t.epsilon)
        self.mask(proj.mask)
        self.array(t.p_src)
        self.array(t.p_tgt)
        self.array(t.p_joint)
        self.pack("B", 1 if proj.is_materialized else 0)
        if proj.is_materialized:
            self.array(proj.bias)
            self.array(proj.weights)

    def getvalue(self) -> bytes:
        return b"".join(self.chunks)


class _Reader:
    def __init__(self, data: bytes, offset: int = 0):
        self.data = data
        self.pos = offset

    def raw(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated model file: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        vals = struct.unpack(fmt, self.raw(struct.calcsize(fmt)))
        return vals if len(vals) > 1 else vals[0]

    def string(self) -> str:
        return self.raw(self.unpack("H")).decode("utf-8")

    def array(self, dtype: str = "<f8") -> np.ndarray:
        ndim = self.unpack("B")
        shape = tuple(self.unpack("Q") for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        itemsize = np.dtype(dtype).itemsize
        arr = np.frombuffer(self.raw(count * itemsize), dtype=dtype)
        return arr.reshape(shape).astype(np.float64)

    def geometry(self) -> LayerGeometry:
        n_hc, n_mc = self.unpack("II")
        return LayerGeometry(n_hc, n_mc)

    def params(self) -> BcpnnParams:
        dt, tau_p, kappa, epsilon = self.unpack("dddd")
        return BcpnnParams(dt, tau_p, kappa, epsilon)

    def mask(self) -> ConnectivityMask:
        n_src_hc, n_tgt_hc, k, nbytes = self.unpack("IIIQ")
        packed = np.frombuffer(self.raw(nbytes), dtype=np.uint8)
        bits = np.unpackbits(packed, count=n_src_hc * n_tgt_hc)
        active = bits.reshape(n_src_hc, n_tgt_hc).astype(bool)
        return ConnectivityMask(n_src_hc, n_tgt_hc, active, k)

    def projection(self) -> Projection:
        src_geom = self.geometry()
        tgt_geom = self.geometry()
        epsilon = self.unpack("d")
        mask = self.mask()
        p_src = self.array()
        p_tgt = self.array()
        p_joint = self.array()
        traces = ProbabilityTraces(src_geom, tgt_geom, p_src, p_tgt, p_joint, epsilon)
        proj = Projection(traces, mask)
        if self.unpack("B"):
            proj.bias = self.array()
            proj.weights = np.asfortranarray(self.array())
        return proj


def model_kind(model: AnyModel) -> str:
    if isinstance(model, UnsupModel):
        return "unsup"
    if isinstance(model, AssocClassifier):
        return "assoc"
    if isinstance(model, GoNogoClassifier):
        return model.variant
    if isinstance(model, LinearClassifier):
        return "linear"
    raise FormatError(f"cannot persist object of type {type(model).__name__}")


def serialize_model(model: AnyModel) -> bytes:
    w = _Writer()
    w.raw(MODEL_MAGIC)
    w.pack("I", FORMAT_VERSION)
    kind = model_kind(model)
    w.string(kind)
    if kind == "unsup":
        w.geometry(model.input_geometry)
        w.geometry(model.hidden_geometry)
        w.params(model.params)
        w.string(model.encoding.value)
        w.pack("qIQ", model.seed, model.epochs_trained, model.sample_count)
        if model.schedule is None:
            w.pack("B", 0)
        else:
            w.pack("B", 1)
            w.pack("qq", model.schedule.period,
                   -1 if model.schedule.freeze_after is None else model.schedule.freeze_after)
        w.projection(model.projection)
    elif kind == "assoc":
        w.params(model.params)
        w.projection(model.projection)
    elif kind in ("go", "nogo", "gonogo"):
        w.params(model.params)
        w.projection(model.go)
        w.projection(model.nogo)
    else:  # linear
        hp = model.hyperparams
        w.pack("ddddQQ", hp.learning_rate, hp.beta1, hp.beta2, hp.delta,
               hp.batch_size, hp.epochs)
        if model.hidden_geometry is None:
            w.pack("B", 0)
        else:
            w.pack("B", 1)
            w.geometry(model.hidden_geometry)
        w.array(model.weights)
        w.array(model.bias)
        w.array(model.state.m["weights"])
        w.array(model.state.m["bias"])
        w.array(model.state.v["weights"])
        w.array(model.state.v["bias"])
        w.pack("Q", model.state.t)
    body = w.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


def deserialize_model(blob: bytes) -> AnyModel:
    if len(blob) < 12:
        raise FormatError("file too short to be a model container")
    if blob[:4] != MODEL_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {MODEL_MAGIC!r}")
    (stored_crc,) = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise FormatError("checksum mismatch: file is corrupt or truncated")
    r = _Reader(blob, offset=4)
    version = r.unpack("I")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version} "
                          f"(this build reads version {FORMAT_VERSION})")
    kind = r.string()
    if kind == "unsup":
        input_geom = r.geometry()
        hidden_geom = r.geometry()
        params = r.params()
        encoding = EncodingMode(r.string())
        seed, epochs_trained, sample_count = r.unpack("qIQ")
        schedule = None
        if r.unpack("B"):
            period, freeze = r.unpack("qq")
            schedule = RewireSchedule(period, None if freeze < 0 else freeze)
        proj = r.projection()
        return UnsupModel(input_geom, hidden_geom, proj, params, encoding,
                          seed, epochs_trained, sample_count, schedule)
    if kind == "assoc":
        params = r.params()
        return AssocClassifier(r.projection(), params)
    if kind in ("go", "nogo", "gonogo"):
        params = r.params()
        return GoNogoClassifier(r.projection(), r.projection(), kind, params)
    if kind == "linear":
        lr, b1, b2, delta, batch, epochs = r.unpack("ddddQQ")
        hp = LinearHyperparams(lr, b1, b2, delta, int(batch), int(epochs))
        geometry = r.geometry() if r.unpack("B") else None
        weights = r.array()
        bias = r.array()
        state = AdamState(
            m={"weights": r.array(), "bias": r.array()},
            v={"weights": r.array(), "bias": r.array()},
        )
        state.t = int(r.unpack("Q"))
        return LinearClassifier(weights, bias, state, hp, geometry)
    raise FormatError(f"unknown model kind {kind!r}")


def save_model(model: AnyModel, path):
    with open(path, "wb") as fh:
        fh.write(serialize_model(model))


def load_model(path) -> AnyModel:
    with open(path, "rb") as fh:
        return deserialize_model(fh.read())


def save_representations(reps: RepresentationSet, path):
    """Write a representation matrix as 32-bit reals ("BREP")."""
    rows, cols = reps.values.shape
    w = _Writer()
    w.raw(REPS_MAGIC)
    w.pack("I", FORMAT_VERSION)
    w.pack("IIII", rows, cols, reps.hidden_geometry.n_hc, reps.hidden_geometry.n_mc)
    w.string(reps.split)
    w.string(reps.fingerprint)
    w.raw(np.ascontiguousarray(reps.values, dtype="<f4").tobytes())
    with open(path, "wb") as fh:
        fh.write(w.getvalue())


def load_representations(path) -> RepresentationSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != REPS_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {REPS_MAGIC!r}")
    r = _Reader(blob, offset=4)
    version = r.unpack("I")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported representation-cache version {version}")
    rows, cols, n_hc, n_mc = r.unpack("IIII")
    split = r.string()
    fingerprint = r.string()
    values = np.frombuffer(r.raw(rows * cols * 4), dtype="<f4")
    values = values.reshape(rows, cols).astype(np.float64)
    return RepresentationSet(values, LayerGeometry(n_hc, n_mc), split, fingerprint)
