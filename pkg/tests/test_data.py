import numpy as np
import pytest

from coata import data
from coata.data import DatasetError, SbmSpec, edge_homophily, generate_sbm, load_dataset, save_dataset
from coata.graph import GraphFormatError


@pytest.fixture
def small():
    return generate_sbm(SbmSpec(n=120, c=3, p_in=0.1, p_out=0.01, feature_dim=6,
                                train_per_class=5, val_per_class=5, seed=3))


def test_round_trip_is_byte_identical(small, tmp_path):
    save_dataset(small, tmp_path / "a")
    ds = load_dataset(tmp_path / "a")
    assert ds.stats == small.stats
    np.testing.assert_array_equal(ds.features, small.features)
    np.testing.assert_array_equal(ds.labels.labels, small.labels.labels)
    save_dataset(ds, tmp_path / "b")
    for f in ("edges.tsv", "features.tsv", "labels.tsv", "splits.tsv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_provenance_hashes(small, tmp_path):
    save_dataset(small, tmp_path)
    ds = load_dataset(tmp_path)
    assert len(ds.provenance) == 4
    assert all(len(h) == 64 for h in ds.provenance.values())


def test_missing_directory():
    with pytest.raises(FileNotFoundError, match="nowhere"):
        load_dataset("/nonexistent/nowhere")


def test_missing_file(small, tmp_path):
    save_dataset(small, tmp_path)
    (tmp_path / "splits.tsv").unlink()
    with pytest.raises(FileNotFoundError, match="splits"):
        load_dataset(tmp_path)


def test_malformed_edge_line_names_line(small, tmp_path):
    save_dataset(small, tmp_path)
    with open(tmp_path / "edges.tsv", "a") as fh:
        fh.write("a\tb\tc\td\n")
    n_lines = len((tmp_path / "edges.tsv").read_text().splitlines())
    with pytest.raises(GraphFormatError, match=f":{n_lines}:"):
        load_dataset(tmp_path)


def test_bad_feature_header(tmp_path):
    p = tmp_path / "features.tsv"
    p.write_text("0\t0\t1.0\n")
    with pytest.raises(DatasetError, match=":1:"):
        data.read_features(p)


def test_dense_csv_features(tmp_path):
    p = tmp_path / "f.csv"
    p.write_text("1,0\n0,2.5\n")
    np.testing.assert_array_equal(data.read_features(p), [[1, 0], [0, 2.5]])


def test_split_conflict(small, tmp_path):
    save_dataset(small, tmp_path)
    with open(tmp_path / "splits.tsv", "a") as fh:
        fh.write("0\ttest\n")
    with pytest.raises(DatasetError, match="two splits"):
        load_dataset(tmp_path)


def test_unlabeled_train_node(small, tmp_path):
    save_dataset(small, tmp_path)
    train_node = int(np.flatnonzero(small.labels.train)[0])
    lines = [l for l in (tmp_path / "labels.tsv").read_text().splitlines() if not l.startswith(f"{train_node}\t")]
    (tmp_path / "labels.tsv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError):
        load_dataset(tmp_path)


def test_known_stats_warnings():
    assert data.check_known_stats("Cora", (2708, 5429, 7, 1433)) == []
    assert data.check_known_stats("citeseer", (3327, 4732, 6, 3703)) == []
    msgs = data.check_known_stats("cora", (2708, 5278, 7, 1433))
    assert len(msgs) == 1 and "edges" in msgs[0]
    assert data.check_known_stats("unknown", (1, 2, 3, 4)) == []


def test_sbm_pure_components():
    ds = generate_sbm(SbmSpec(n=60, c=3, p_in=0.2, p_out=0.0, feature_noise=0.0, feature_dim=6,
                              train_per_class=2, val_per_class=2))
    pairs, _ = ds.graph.undirected_edges()
    y = ds.labels.labels
    assert np.all(y[pairs[:, 0]] == y[pairs[:, 1]])
    # noiseless features are exact block indicators
    assert set(np.unique(ds.features)) <= {0.0, 1.0}


def test_sbm_homophily_without_planting():
    vals = [edge_homophily(generate_sbm(SbmSpec(p_in=0.02, p_out=0.02, seed=s)).graph,
                           generate_sbm(SbmSpec(p_in=0.02, p_out=0.02, seed=s)).labels.labels) for s in range(10)]
    assert abs(np.mean(vals) - 0.5) <= 0.05


def test_sbm_deterministic(tmp_path):
    for d in ("a", "b"):
        save_dataset(generate_sbm(SbmSpec(seed=11)), tmp_path / d)
    for f in ("edges.tsv", "features.tsv", "labels.tsv", "splits.tsv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_sbm_splits_and_remainder():
    ds = generate_sbm(SbmSpec(n=101, c=2, train_per_class=20, val_per_class=30))
    lab = ds.labels
    assert data.block_sizes(101, 2) == [50, 51]
    assert lab.train.sum() == 40 and lab.val.sum() == 60 and lab.test.sum() == 1
    assert not np.any(lab.train & lab.val)
    assert ds.features.min() >= 0.0


def test_sbm_infeasible_split():
    with pytest.raises(ValueError, match="too small"):
        generate_sbm(SbmSpec(n=40, c=2))


def test_inter_fraction():
    spec = SbmSpec.with_inter_fraction(400, 2, 10.0, 0.2)
    vals = []
    for s in range(5):
        ds = generate_sbm(SbmSpec(**{**spec.__dict__, "seed": s}))
        vals.append(edge_homophily(ds.graph, ds.labels.labels))
    assert abs(np.mean(vals) - 0.8) <= 0.03


@pytest.mark.parametrize("kw", [{"p_in": 1.5}, {"c": 1}, {"feature_dim": 1}, {"feature_noise": -1.0}])
def test_sbm_spec_validation(kw):
    with pytest.raises(ValueError):
        SbmSpec(**kw)


def test_metrics_round_trip(tmp_path):
    from coata.model import EpochRecord, LossBreakdown
    hist = [EpochRecord(1, LossBreakdown(0.5, 0.4, 0.1, -1.0, 0.3, (1, 0.5, 0.1)), 0.75, 0.5)]
    data.write_metrics(hist, tmp_path / "m.csv")
    rows = data.read_metrics(tmp_path / "m.csv")
    assert rows == [{"epoch": 1.0, "ce": 0.5, "ce_aug": 0.4, "co": 0.1, "dpa": -1.0, "total": 0.3,
                     "train_acc": 0.75, "val_acc": 0.5}]
    data.write_metrics([], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == ",".join(data.METRIC_COLUMNS) + "\n"
