import csv

import numpy as np
import pytest

from app.errors import MalformedRow, NonNumericFeature
from app.services.codon import N_FEATURES, codon_workflow, load_codon_csv, split_indices
from app.services.kernel import KernelSpec
from app.services.path import PathConfig

HEADER = ["Kingdom", "DNAtype", "SpeciesID", "Ncodons", "SpeciesName"] + [f"C{j:02d}" for j in range(N_FEATURES)]
CLASSES = ["vrl", "arc", "bct"]


def _write(path, rows, header=HEADER):
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def _rows(n, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        c = i % 3
        feats = rng.normal(loc=c, scale=0.5, size=N_FEATURES)
        out.append([CLASSES[c], "0", str(1000 + i), "500", f"species {i}"] + [f"{v:.6f}" for v in feats])
    return out


@pytest.fixture
def codon_csv(tmp_path):
    return _write(tmp_path / "codon.csv", _rows(150))


class TestLoad:
    def test_standardized_features_and_labels(self, codon_csv):
        ds = load_codon_csv(codon_csv)
        assert ds.n == 150
        assert ds.q == 3
        assert ds.class_names == ["arc", "bct", "vrl"]
        assert ds.labels[:3].tolist() == [3, 1, 2]
        np.testing.assert_allclose(ds.features.mean(axis=0), 0.0, atol=1e-12)
        np.testing.assert_allclose(ds.features.std(axis=0), 1.0, rtol=1e-12)
        assert ds.meta[0] == "1000"

    def test_imputes_the_first_two_columns(self, tmp_path):
        rows = _rows(30)
        rows[4][5] = ""
        rows[7][6] = "n/a"
        ds = load_codon_csv(_write(tmp_path / "gaps.csv", rows))
        assert np.all(np.isfinite(ds.features))
        # an imputed mean standardizes to zero
        assert ds.features[4, 0] == pytest.approx(0.0, abs=1e-12)
        assert ds.features[7, 1] == pytest.approx(0.0, abs=1e-12)

    def test_other_columns_must_be_numeric(self, tmp_path):
        rows = _rows(10)
        rows[3][12] = "abc"
        with pytest.raises(NonNumericFeature) as exc:
            load_codon_csv(_write(tmp_path / "bad.csv", rows))
        assert exc.value.row_number == 5
        assert exc.value.column == HEADER[12]

    def test_ragged_row(self, tmp_path):
        rows = _rows(5)
        rows[2] = rows[2][:-1]
        with pytest.raises(MalformedRow):
            load_codon_csv(_write(tmp_path / "ragged.csv", rows))

    def test_short_header(self, tmp_path):
        with pytest.raises(MalformedRow):
            load_codon_csv(_write(tmp_path / "short.csv", [["a", "b"]], header=["x", "y"]))

    def test_no_rows(self, tmp_path):
        with pytest.raises(MalformedRow):
            load_codon_csv(_write(tmp_path / "empty.csv", []))


def test_split_indices_partition():
    train, val, test = split_indices(1000, seed=3)
    assert (train.size, val.size, test.size) == (700, 100, 200)
    assert sorted(np.concatenate([train, val, test]).tolist()) == list(range(1000))
    again = split_indices(1000, seed=3)
    np.testing.assert_array_equal(train, again[0])


def test_workflow_on_separable_classes(codon_csv):
    ds = load_codon_csv(codon_csv)
    outcome = codon_workflow(ds, KernelSpec(sigma=10.0), m=30, delta=1e-4, seed=0,
                             path_config=PathConfig(lambda_max=1.0, lambda_min=1e-2, n_lambdas=3))
    assert outcome.error is None
    assert outcome.best_lambda in [e.lam for e in outcome.path.entries]
    assert outcome.test_accuracy >= 0.9
    assert np.isfinite(outcome.test_loglik)
