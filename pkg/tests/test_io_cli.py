import json
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from hfreg.cli import main
from hfreg.clustering import MergeSequence
from hfreg.data import DataError, SchemaError, load_csv, read_table, save_matrix
from hfreg.estimator import fit as hfr_fit
from hfreg.exceptions import NumericalError
from hfreg.hierarchy import build_hierarchy
from hfreg.render import dendrogram_layout, render_dendrogram
from hfreg.report import emit_report, json_to_csv, read_csv_rows, report_csv, report_json
from hfreg.selection import cross_validate
from hfreg.simulation import run_benchmark, trace_path

from conftest import ols, random_corr_data


def write_csv(path, header, data):
    save_matrix(path, header, data)
    return path


@pytest.fixture
def dataset(tmp_path, rng):
    X, y = random_corr_data(rng, 40, 4)
    path = write_csv(tmp_path / "d.csv", ["x1", "x2", "x3", "x4", "y"], np.column_stack([X, y]))
    return path, X, y


def k4():
    return build_hierarchy(MergeSequence(4, ((1, 2, 0.1), (3, 4, 0.2), (5, 6, 0.3))))


# data loading


def test_load_two_predictors(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x1,x2,y\n1,2,3\n4,5,6\n7,8,10\n")
    ds = load_csv(p, "y")
    assert ds.feature_names == ("x1", "x2")
    np.testing.assert_array_equal(ds.X, [[1, 2], [4, 5], [7, 8]])
    np.testing.assert_array_equal(ds.y, [3, 6, 10])


def test_blank_cell_is_named(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x1,x2,y\n1,2,3\n4,,6\n")
    with pytest.raises(DataError) as e:
        load_csv(p, "y")
    assert e.value.row == 3 and e.value.column == "x2"
    assert "x2" in str(e.value) and "row 3" in str(e.value)


def test_non_numeric_and_schema_errors(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x1,y\n1,abc\n")
    with pytest.raises(DataError):
        load_csv(p, "y")
    p.write_text("x1,x1,y\n1,2,3\n")
    with pytest.raises(SchemaError):
        load_csv(p, "y")
    p.write_text("x1,y\n1,2\n")
    with pytest.raises(SchemaError):
        load_csv(p, "z")


def test_full_precision_roundtrip(tmp_path, rng):
    A = rng.normal(size=(6, 3)) * 10.0 ** rng.integers(-8, 8, size=(6, 3))
    write_csv(tmp_path / "m.csv", ["a", "b", "c"], A)
    header, B = read_table(tmp_path / "m.csv")
    assert header == ("a", "b", "c")
    assert np.array_equal(A, B)


def test_rescaling_ranges(tmp_path, rng):
    X = np.column_stack([rng.normal(size=20) * 5 + 3, rng.integers(0, 2, size=20) * 7.0])
    write_csv(tmp_path / "s.csv", ["u", "d", "y"], np.column_stack([X, rng.normal(size=20)]))
    ds = load_csv(tmp_path / "s.csv", "y", rescale=True)
    assert ds.X[:, 0].min() == -1.0 and ds.X[:, 0].max() == 1.0
    assert set(np.unique(ds.X[:, 1])) == {-0.5, 0.5}
    again = load_csv(tmp_path / "s.csv", "y", scaling=ds.scaling)
    np.testing.assert_array_equal(again.X, ds.X)


# dendrogram rendering


def test_unit_weights_give_unit_bands():
    lay = dendrogram_layout(k4(), np.ones(4))
    np.testing.assert_allclose(lay.band_heights, 1.0)
    assert lay.total_height == 4.0


def test_zero_weight_band_collapses():
    lay = dendrogram_layout(k4(), [1.0, 0.5, 0.0, 0.0])
    np.testing.assert_array_equal(lay.band_heights, [1.0, 0.5, 0.0, 0.0])
    assert lay.total_height == 1.5 and lay.bands[2] == (0.0, 0.0)


def test_svg_is_well_formed(rng):
    X, y = random_corr_data(rng, 40, 5)
    f = hfr_fit(X, y, 0.6)
    doc = render_dendrogram(f, "svg")
    root = ET.fromstring(doc.split("?>", 1)[1])
    assert root.tag.endswith("svg")
    dot = render_dendrogram(f, "dot")
    assert dot.lstrip().startswith("digraph") and dot.rstrip().endswith("}")


# reports


@pytest.fixture(scope="module")
def small_benchmark():
    return run_benchmark(["a", "b", "c", "d"], runs=2, seed=3, workers=1, hfr_grid=np.linspace(0, 1, 6))


def test_benchmark_csv_row_count(small_benchmark):
    rows = read_csv_rows(report_csv(small_benchmark))
    assert len(rows) == 32
    assert {r["seed"] for r in rows} == {"3"}


def test_json_converts_to_identical_csv(small_benchmark, rng):
    assert json_to_csv(report_json(small_benchmark)) == report_csv(small_benchmark)
    X, y = random_corr_data(rng, 30, 4)
    cv = cross_validate(X, y, [0.0, 0.5, 1.0], k=3, seed=5)
    assert json_to_csv(report_json(cv)) == report_csv(cv)


def test_cv_csv_has_row_per_kappa(rng):
    X, y = random_corr_data(rng, 30, 4)
    cv = cross_validate(X, y, [0.0, 0.25, 0.5, 1.0], k=3, seed=5)
    rows = read_csv_rows(report_csv(cv))
    assert [float(r["kappa"]) for r in rows] == [0.0, 0.25, 0.5, 1.0]
    assert sum(int(r["selected"]) for r in rows) == 1
    assert json.loads(report_json(cv))["seed"] == 5


def test_emit_writes_every_format(tmp_path, rng):
    X, y = random_corr_data(rng, 30, 4)
    tp = trace_path(X, y, [1.0, 0.5, 0.0])
    paths = emit_report(tp, tmp_path / "o", ("csv", "json", "svg"), stem="t")
    assert sorted(p.name for p in paths) == ["t.csv", "t.json", "t.svg"]
    assert len(read_csv_rows((tmp_path / "o" / "t.csv").read_text())) == 3


def test_unwritable_directory_fails_before_work(tmp_path, monkeypatch):
    if os.geteuid() == 0:
        target = tmp_path / "file"
        target.write_text("")
        out = target / "sub"  # a regular file cannot hold a directory
    else:
        locked = tmp_path / "locked"
        locked.mkdir(mode=0o500)
        out = locked / "sub"
    import hfreg.cli as cli

    called = []
    monkeypatch.setattr(cli, "run_benchmark", lambda *a, **k: called.append(1))
    assert main(["simulate", "--runs", "1", "--out", str(out)]) == 2
    assert not called


def test_inputs_not_mutated(rng):
    X, y = random_corr_data(rng, 30, 4)
    X0, y0 = X.copy(), y.copy()
    hfr_fit(X, y, 0.5)
    cross_validate(X, y, [0.5, 1.0], k=3)
    trace_path(X, y, [1.0, 0.0])
    assert np.array_equal(X, X0) and np.array_equal(y, y0)


# command line


def test_fit_kappa_one_unscaled_is_ols(dataset, tmp_path, capsys):
    path, X, y = dataset
    assert main(["fit", "--data", str(path), "--response", "y", "--kappa", "1", "--no-scale",
                 "--out", str(tmp_path / "m"), "--seed", "17"]) == 0
    out = capsys.readouterr().out
    assert "seed 17" in out
    rows = read_csv_rows((tmp_path / "m" / "coefficients.csv").read_text())
    est = np.array([float(r["estimate"]) for r in rows])
    a, b = ols(X, y)
    np.testing.assert_allclose(est, np.r_[a, b], atol=1e-8)
    doc = json.loads((tmp_path / "m" / "model.json").read_text())
    assert doc["seed"] == 17 and doc["scaling"] == {}


def test_predict_roundtrip(dataset, tmp_path, capsys):
    path, X, y = dataset
    assert main(["fit", "--data", str(path), "--response", "y", "--kappa", "0.7",
                 "--out", str(tmp_path / "m")]) == 0
    out = tmp_path / "pred.csv"
    assert main(["predict", "--model", str(tmp_path / "m" / "model.json"),
                 "--data", str(path), "--out", str(out)]) == 0
    pred = np.array([float(r["prediction"]) for r in read_csv_rows(out.read_text())])
    ds = load_csv(path, "y", rescale=True)
    f = hfr_fit(ds.X, ds.y, 0.7)
    np.testing.assert_allclose(pred, f.predict(ds.X), atol=1e-10)


def test_cv_command(dataset, tmp_path, capsys):
    path, _, _ = dataset
    assert main(["cv", "--data", str(path), "--response", "y", "--grid", "0,0.5,1",
                 "--folds", "4", "--out", str(tmp_path / "cv")]) == 0
    assert "kappa_star" in capsys.readouterr().out
    rows = read_csv_rows((tmp_path / "cv" / "cv.csv").read_text())
    assert len(rows) == 3
    ET.parse(tmp_path / "cv" / "cv.svg")


def test_plot_command(dataset, tmp_path):
    path, _, _ = dataset
    main(["fit", "--data", str(path), "--response", "y", "--kappa", "0.5", "--out", str(tmp_path / "m")])
    assert main(["plot", "--model", str(tmp_path / "m" / "model.json"), "--out", str(tmp_path / "d.svg")]) == 0
    ET.parse(tmp_path / "d.svg")
    assert main(["plot", "--hierarchy", str(tmp_path / "m" / "hierarchy.json"), "--format", "dot",
                 "--out", str(tmp_path / "d.dot")]) == 0
    assert "digraph" in (tmp_path / "d.dot").read_text()


def test_trace_and_simulate_commands(tmp_path):
    assert main(["trace", "--spec", "a", "--grid", "5", "--out", str(tmp_path / "t")]) == 0
    rows = read_csv_rows((tmp_path / "t" / "trace.csv").read_text())
    assert [float(r["kappa"]) for r in rows] == [1.0, 0.75, 0.5, 0.25, 0.0]
    assert main(["simulate", "--specs", "a", "--methods", "ols,ridge", "--runs", "2",
                 "--workers", "1", "--out", str(tmp_path / "s"), "--format", "csv,json"]) == 0
    rows = read_csv_rows((tmp_path / "s" / "benchmark.csv").read_text())
    assert [r["method"] for r in rows] == ["ols", "ridge"]


def test_exit_codes(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert main(["fit", "--data", str(missing), "--response", "y"]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("x1,x2,y\n1,2,3\n4,,6\n1,1,1\n")
    assert main(["fit", "--data", str(bad), "--response", "y"]) == 3
    err = capsys.readouterr().err
    assert "x2" in err
    # two identical predictor columns cannot be clustered
    dup = tmp_path / "dup.csv"
    dup.write_text("x1,x2,y\n" + "".join(f"{v},{v},{v * v}\n" for v in range(8)))
    assert main(["fit", "--data", str(dup), "--response", "y"]) == 3
    assert main(["plot", "--format", "png", "--hierarchy", str(bad)]) == 2


def test_numerical_failure_exit_code(dataset, monkeypatch):
    import hfreg.cli as cli

    def boom(*a, **k):
        raise NumericalError("solver diverged")

    monkeypatch.setattr(cli, "hfr_fit", boom)
    assert main(["fit", "--data", str(dataset[0]), "--response", "y"]) == 4
