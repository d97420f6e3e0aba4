"""Model container ("BCP1") and representation cache ("BREP") tests."""

import struct
import zlib

import numpy as np
import pytest

from bcpnn.classifiers import LinearHyperparams, train_assoc, train_gonogo, train_linear
from bcpnn.core import LayerGeometry
from bcpnn.errors import FormatError
from bcpnn.persistence import (
    load_model,
    load_representations,
    save_model,
    save_representations,
    serialize_model,
)
from bcpnn.unsup import RepresentationSet, UnsupConfig, train_unsupervised

from conftest import random_simplex_rows, structured_dataset


@pytest.fixture
def unsup_model(rng):
    data = structured_dataset(rng, n=60)
    config = UnsupConfig(n_hc_hidden=2, n_mc_hidden=3, epochs=1, p_conn=0.5,
                         rewire_period=20)
    return train_unsupervised(data, config, seed=3)


def toy_classifier_inputs(rng):
    values = random_simplex_rows(rng, 30, 2, 4)
    labels = rng.integers(0, 10, size=30)
    reps = RepresentationSet(values, LayerGeometry(2, 4), "toy", "fp")
    return reps, labels


class TestModelRoundTrip:
    def test_unsup_round_trip_is_bit_exact(self, unsup_model, tmp_path):
        path = tmp_path / "model.bcp1"
        save_model(unsup_model, path)
        loaded = load_model(path)
        t0, t1 = unsup_model.projection.traces, loaded.projection.traces
        assert np.array_equal(t0.p_src, t1.p_src)
        assert np.array_equal(t0.p_tgt, t1.p_tgt)
        assert np.array_equal(t0.p_joint, t1.p_joint)
        assert np.array_equal(unsup_model.projection.mask.active,
                              loaded.projection.mask.active)
        assert np.array_equal(unsup_model.projection.weights,
                              loaded.projection.weights)
        assert np.array_equal(unsup_model.projection.bias, loaded.projection.bias)
        assert loaded.seed == unsup_model.seed
        assert loaded.encoding == unsup_model.encoding
        assert loaded.sample_count == unsup_model.sample_count
        assert loaded.schedule == unsup_model.schedule
        assert loaded.fingerprint() == unsup_model.fingerprint()

    def test_save_is_deterministic(self, unsup_model):
        assert serialize_model(unsup_model) == serialize_model(unsup_model)

    def test_classifier_kinds_round_trip(self, rng, tmp_path):
        reps, labels = toy_classifier_inputs(rng)
        models = [
            train_assoc(reps, labels, epochs=2, seed=0),
            train_gonogo(reps, labels, epochs=2, variant="go", seed=0),
            train_gonogo(reps, labels, epochs=2, variant="nogo", seed=0),
            train_gonogo(reps, labels, epochs=2, variant="gonogo", seed=0),
            train_linear(reps, labels, LinearHyperparams(epochs=2), seed=0),
        ]
        for i, model in enumerate(models):
            path = tmp_path / f"clf{i}.bcp1"
            save_model(model, path)
            loaded = load_model(path)
            assert type(loaded) is type(model)
            if hasattr(model, "weights"):
                assert np.array_equal(loaded.weights, model.weights)
                assert np.array_equal(loaded.bias, model.bias)
                assert loaded.state.t == model.state.t
                assert np.array_equal(loaded.state.m["weights"],
                                      model.state.m["weights"])
            elif hasattr(model, "variant"):
                assert loaded.variant == model.variant
                assert np.array_equal(loaded.go.weights, model.go.weights)
                assert np.array_equal(loaded.nogo.weights, model.nogo.weights)
                assert np.array_equal(loaded.nogo.traces.p_joint,
                                      model.nogo.traces.p_joint)
            else:
                assert np.array_equal(loaded.projection.weights,
                                      model.projection.weights)

    def test_truncated_file_rejected(self, unsup_model, tmp_path):
        blob = serialize_model(unsup_model)
        path = tmp_path / "short.bcp1"
        path.write_bytes(blob[:len(blob) // 2])
        with pytest.raises(FormatError):
            load_model(path)

    def test_bad_magic_rejected(self, unsup_model, tmp_path):
        blob = serialize_model(unsup_model)
        path = tmp_path / "bad.bcp1"
        path.write_bytes(b"NOPE" + blob[4:])
        with pytest.raises(FormatError, match="magic"):
            load_model(path)

    def test_corrupted_payload_fails_checksum(self, unsup_model, tmp_path):
        blob = bytearray(serialize_model(unsup_model))
        blob[len(blob) // 2] ^= 0xFF
        path = tmp_path / "corrupt.bcp1"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="checksum"):
            load_model(path)

    def test_version_bump_is_explicit_error(self, unsup_model, tmp_path):
        blob = bytearray(serialize_model(unsup_model))
        struct.pack_into("<I", blob, 4, 99)            # bump version field
        body = bytes(blob[:-4])
        blob[-4:] = struct.pack("<I", zlib.crc32(body))  # keep checksum valid
        path = tmp_path / "future.bcp1"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="version"):
            load_model(path)


class TestRepresentationCache:
    def test_round_trip_through_float32(self, rng, tmp_path):
        values = random_simplex_rows(rng, 20, 3, 5)
        reps = RepresentationSet(values, LayerGeometry(3, 5), "train", "abc123")
        path = tmp_path / "reps.brep"
        save_representations(reps, path)
        loaded = load_representations(path)
        assert np.array_equal(loaded.values,
                              values.astype(np.float32).astype(np.float64))
        assert loaded.split == "train"
        assert loaded.fingerprint == "abc123"
        assert loaded.hidden_geometry == LayerGeometry(3, 5)

    def test_cache_is_idempotent(self, rng, tmp_path):
        values = random_simplex_rows(rng, 10, 2, 4)
        reps = RepresentationSet(values, LayerGeometry(2, 4), "train", "fp")
        first = tmp_path / "a.brep"
        save_representations(reps, first)
        second = tmp_path / "b.brep"
        save_representations(load_representations(first), second)
        assert first.read_bytes() == second.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.brep"
        path.write_bytes(b"JUNKxxxxxxxx")
        with pytest.raises(FormatError, match="magic"):
            load_representations(path)

    def test_truncated_payload(self, rng, tmp_path):
        values = random_simplex_rows(rng, 10, 2, 4)
        reps = RepresentationSet(values, LayerGeometry(2, 4), "train", "fp")
        path = tmp_path / "ok.brep"
        save_representations(reps, path)
        clipped = tmp_path / "clipped.brep"
        clipped.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(FormatError):
            load_representations(clipped)
