"""Experiment harness: splits, grid execution, caching, aggregation, CSV."""

import numpy as np
import pytest

from bcpnn.data import EncodingMode
from bcpnn.errors import ConfigError, DataError, FormatError, ValidationError
from bcpnn.harness import (
    ExperimentConfig,
    ExperimentRecord,
    accuracy,
    aggregate,
    read_results_csv,
    run_experiment,
    split_indices,
    write_results_csv,
)

from conftest import structured_dataset


def tiny_config(**overrides):
    base = dict(
        hidden_sizes=(2,),
        n_mc_hidden=4,
        unsup_epochs=1,
        p_conn=1.0,
        rewire_period=None,
        unsup_seeds=(0,),
        split_seeds=(0, 1),
        label_grid=(10, 20),
        classifiers=("assoc",),
        validation_size=30,
        record_timing=False,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


class TestAccuracy:
    def test_all_equal(self):
        assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0

    def test_none_equal(self):
        assert accuracy([1, 2, 3], [4, 5, 6]) == 0.0

    def test_half(self):
        assert accuracy([1, 2, 3, 4, 9, 9, 9, 9, 9, 9],
                        [1, 2, 3, 4, 5, 0, 1, 2, 3, 4]) == 0.4

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            accuracy([], [])


class TestSplitIndices:
    def test_disjoint_and_sized(self, rng):
        labels = structured_dataset(rng, n=300).labels
        labelled, validation = split_indices(labels, 50, 100, 0, 0, 0)
        assert len(labelled) == 50
        assert len(validation) == 100
        assert len(np.intersect1d(labelled, validation)) == 0
        counts = np.bincount(labels[labelled], minlength=10)
        assert (counts == 5).all()

    def test_deterministic(self, rng):
        labels = structured_dataset(rng, n=300).labels
        a = split_indices(labels, 50, 100, 0, 1, 2)
        b = split_indices(labels, 50, 100, 0, 1, 2)
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])

    def test_validation_seed_fixed_per_split_seed(self, rng):
        # same split seed with different label counts draws from the same
        # stream; the pools differ so the sets may differ, but stay disjoint
        labels = structured_dataset(rng, n=300).labels
        for n in (10, 50):
            labelled, validation = split_indices(labels, n, 100, 0, 0, 3)
            assert len(np.intersect1d(labelled, validation)) == 0

    def test_insufficient_remainder(self, rng):
        labels = structured_dataset(rng, n=100).labels
        with pytest.raises(DataError):
            split_indices(labels, 50, 80, 0, 0, 0)


class TestRunExperiment:
    def test_grid_cardinality(self, rng, tmp_path):
        data = structured_dataset(rng, n=200)
        records, failures = run_experiment(tiny_config(), str(tmp_path),
                                           data=data)
        assert not failures
        assert len(records) == 4  # 1 hidden x 1 unsup x 2 splits x 2 label counts
        ids = [r.run_id for r in records]
        assert ids == sorted(ids, key=ids.index)  # deterministic emission order
        assert ids == ["h2-u0-s0-n10-assoc", "h2-u0-s0-n20-assoc",
                       "h2-u0-s1-n10-assoc", "h2-u0-s1-n20-assoc"]
        for rec in records:
            assert 0.0 <= rec.accuracy <= 1.0
            assert rec.epochs == 5
            assert rec.encoding == "binary"

    def test_rerun_reproduces_accuracies(self, rng, tmp_path):
        data = structured_dataset(rng, n=200)
        r1, _ = run_experiment(tiny_config(), str(tmp_path / "a"), data=data)
        r2, _ = run_experiment(tiny_config(), str(tmp_path / "b"), data=data)
        assert [r.accuracy for r in r1] == [r.accuracy for r in r2]
        assert [r.run_id for r in r1] == [r.run_id for r in r2]

    def test_resume_hits_cache(self, rng, tmp_path):
        data = structured_dataset(rng, n=200)
        out = str(tmp_path)
        lines = []
        r1, _ = run_experiment(tiny_config(), out, data=data, log=lines.append)
        assert not any("cache hit" in line for line in lines)
        lines.clear()
        r2, _ = run_experiment(tiny_config(), out, data=data, resume=True,
                               log=lines.append)
        assert any("cache hit: unsupervised model" in line for line in lines)
        assert any("cache hit: representations" in line for line in lines)
        assert [r.accuracy for r in r1] == [r.accuracy for r in r2]

    def test_config_change_invalidates_cache(self, rng, tmp_path):
        data = structured_dataset(rng, n=200)
        out = str(tmp_path)
        run_experiment(tiny_config(), out, data=data)
        lines = []
        run_experiment(tiny_config(unsup_epochs=2), out, data=data, resume=True,
                       log=lines.append)
        assert not any("cache hit" in line for line in lines)

    def test_partial_results_flushed(self, rng, tmp_path):
        data = structured_dataset(rng, n=200)
        run_experiment(tiny_config(), str(tmp_path), data=data)
        partial = (tmp_path / "results.partial.csv").read_text()
        assert partial.count("\n") == 5  # header + 4 records

    def test_oversized_label_count_rejected(self, rng, tmp_path):
        data = structured_dataset(rng, n=100)
        with pytest.raises(ConfigError):
            run_experiment(tiny_config(label_grid=(200,)), str(tmp_path),
                           data=data)

    def test_multiple_classifiers_and_validation_disjointness(self, rng, tmp_path):
        data = structured_dataset(rng, n=200)
        config = tiny_config(classifiers=("assoc", "gonogo", "linear"),
                             gonogo_epochs=3, linear_epochs=3,
                             label_grid=(10,), split_seeds=(0,))
        records, failures = run_experiment(config, str(tmp_path), data=data)
        assert not failures
        assert [r.classifier for r in records] == ["assoc", "gonogo", "linear"]
        assert records[0].epochs == 5
        assert records[1].epochs == 3
        assert records[2].epochs == 3

    def test_parallel_workers_match_sequential(self, rng, tmp_path):
        data = structured_dataset(rng, n=200)
        seq, _ = run_experiment(tiny_config(), str(tmp_path / "seq"), data=data)
        par, failures = run_experiment(tiny_config(), str(tmp_path / "par"),
                                       data=data, jobs=2)
        assert not failures
        assert par == seq


class TestConfigValidation:
    def test_rejects_indivisible_label_grid(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(label_grid=(15,))

    def test_rejects_unknown_classifier(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(classifiers=("assoc", "svm"))

    def test_encoding_in_records(self, rng, tmp_path):
        data = structured_dataset(rng, n=200)
        config = tiny_config(encoding=EncodingMode.GRADED, label_grid=(10,),
                             split_seeds=(0,))
        records, _ = run_experiment(config, str(tmp_path), data=data)
        assert records[0].encoding == "graded"


class TestAggregate:
    def make_records(self, accs, n_labels=10, classifier="assoc", n_hc=30):
        return [
            ExperimentRecord(f"r{i}", i, 0, n_hc, classifier, n_labels, 5,
                             "binary", acc)
            for i, acc in enumerate(accs)
        ]

    def test_mean_and_sample_sd_in_percent(self):
        summaries = aggregate(self.make_records([0.9, 1.0]))
        s = summaries[0]
        assert s.mean_pct == pytest.approx(95.0, abs=1e-12)
        assert s.sd_pct == pytest.approx(10.0 / np.sqrt(2.0), abs=1e-12)
        assert s.sd_pct == pytest.approx(7.07, abs=0.005)
        assert s.count == 2
        assert not s.degenerate

    def test_single_record_group_is_degenerate(self):
        s = aggregate(self.make_records([0.5]))[0]
        assert s.sd_pct == 0.0
        assert s.degenerate

    def test_partition_property(self):
        records = (self.make_records([0.1, 0.2], n_labels=10)
                   + self.make_records([0.3], n_labels=20)
                   + self.make_records([0.4, 0.5, 0.6], classifier="linear"))
        summaries = aggregate(records)
        assert sum(s.count for s in summaries) == len(records)
        keys = [(s.n_hc_hid, s.classifier, s.n_labels) for s in summaries]
        assert len(set(keys)) == len(keys)

    def test_mean_within_group_range(self, rng):
        accs = rng.uniform(0, 1, size=25)
        s = aggregate(self.make_records(list(accs)))[0]
        assert accs.min() * 100 <= s.mean_pct <= accs.max() * 100

    def test_empty_rejected(self):
        with pytest.raises(ValidationError):
            aggregate([])


class TestResultsCsv:
    def test_round_trip(self, tmp_path):
        records = [
            ExperimentRecord("h2-u0-s0-n10-assoc", 0, 0, 2, "assoc", 10, 5,
                             "binary", 0.875, 1.25),
            ExperimentRecord("h2-u1-s0-n10-linear", 1, 0, 2, "linear", 10, 300,
                             "graded", 0.5, 0.0),
        ]
        path = tmp_path / "results.csv"
        write_results_csv(records, path)
        loaded = read_results_csv(path)
        assert loaded == records

    def test_line_endings_and_header(self, tmp_path):
        path = tmp_path / "results.csv"
        write_results_csv([ExperimentRecord("x", 0, 0, 2, "assoc", 10, 5,
                                            "binary", 1.0)], path)
        raw = path.read_bytes()
        assert b"\r" not in raw
        assert raw.startswith(b"run_id,unsup_seed,split_seed,n_hc_hid,"
                              b"classifier,n_labels,epochs,encoding,"
                              b"accuracy,wall_time_s\n")

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(FormatError, match="empty"):
            read_results_csv(path)

    def test_header_only_rejected(self, tmp_path):
        path = tmp_path / "header.csv"
        write_results_csv([], path)
        with pytest.raises(ValidationError, match="no result rows"):
            read_results_csv(path)

    def test_malformed_row_reports_line_number(self, tmp_path):
        path = tmp_path / "bad.csv"
        write_results_csv([ExperimentRecord("x", 0, 0, 2, "assoc", 10, 5,
                                            "binary", 1.0)], path)
        with open(path, "a") as fh:
            fh.write("h,not-an-int,0,2,assoc,10,5,binary,0.5,0.0\n")
        with pytest.raises(FormatError, match=":3"):
            read_results_csv(path)

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "wrong.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(FormatError, match="header"):
            read_results_csv(path)
