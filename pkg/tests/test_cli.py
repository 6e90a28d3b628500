import csv
import json

import numpy as np
import pytest

from gpal.cli import join_curves, main
from gpal.design import is_latin, read_design_csv
from gpal.errors import ConfigError


def read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestDesign:
    def test_initial_design(self, tmp_path, capsys):
        out = tmp_path / "d.csv"
        assert main(["design", "--n", "11", "--q", "10", "--seed", "7", "--sweeps", "200", "--out", str(out)]) == 0
        X = read_design_csv(out)
        assert X.shape == (11, 10) and is_latin(X, (-450, 450))
        assert "min pairwise distance" in capsys.readouterr().out

    def test_single_point(self, tmp_path):
        out = tmp_path / "d.csv"
        assert main(["design", "--n", "1", "--q", "2", "--out", str(out)]) == 0
        np.testing.assert_array_equal(read_design_csv(out), [[0.0, 0.0]])

    def test_byte_identical(self, tmp_path):
        args = ["design", "--n", "11", "--q", "3", "--seed", "4", "--sweeps", "100", "--out"]
        main(args + [str(tmp_path / "a.csv")])
        main(args + [str(tmp_path / "b.csv")])
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_invalid(self, tmp_path, capsys):
        assert main(["design", "--n", "0", "--q", "2", "--out", str(tmp_path / "x.csv")]) == 2
        assert "invalid" in capsys.readouterr().err

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["design", "--q", "2"])
        assert exc.value.code == 2


TINY = {
    "oracle": {"q": 2, "p": 2, "n_anchors": 30},
    "n_initial": 5, "n_pool": 15, "n_eval": 20, "n_iter": 5,
    "strategies": ["VWAL", "Random"], "fit_restarts": 2, "lhd_sweeps": 50,
}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    (base / "cfg.json").write_text(json.dumps(TINY))
    assert main(["run", "--config", str(base / "cfg.json"), "--out", str(base / "out")]) == 0
    return base


class TestRun:
    def test_curves(self, run_dir):
        for s in ("VWAL", "Random"):
            assert len(read(run_dir / "out" / "curves" / f"{s}.csv")) == 7
        manifest = json.loads((run_dir / "out" / "manifest.json").read_text())
        assert manifest["config"]["n_iter"] == 5

    def test_replay_from_manifest(self, run_dir, tmp_path):
        assert main(["run", "--manifest", str(run_dir / "out" / "manifest.json"), "--out", str(tmp_path)]) == 0
        for s in ("VWAL", "Random"):
            assert (tmp_path / "curves" / f"{s}.csv").read_bytes() == (run_dir / "out" / "curves" / f"{s}.csv").read_bytes()

    def test_flags_override_file(self, run_dir, tmp_path):
        code = main(["run", "--config", str(run_dir / "cfg.json"), "--out", str(tmp_path),
                     "--strategies", "MaximinDistance", "--n-iter", "1", "--seed", "5"])
        assert code == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert manifest["config"]["strategies"] == ["MaximinDistance"]
        assert manifest["config"]["master_seed"] == 5
        assert len(read(tmp_path / "curves" / "MaximinDistance.csv")) == 3

    def test_config_errors(self, tmp_path, run_dir):
        (tmp_path / "bad.json").write_text('{"n_initial": 0}')
        assert main(["run", "--config", str(tmp_path / "bad.json")]) == 2
        assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
        assert main(["run", "--manifest", str(run_dir / "out" / "manifest.json"), "--seed", "3"]) == 2


class TestCompare:
    def test_join(self, run_dir, tmp_path):
        curves = [str(run_dir / "out" / "curves" / f"{s}.csv") for s in ("VWAL", "Random")]
        assert main(["compare", *curves, "--out", str(tmp_path)]) == 0
        for metric in ("mean_mad", "max_mad", "cv_mse"):
            rows = read(tmp_path / f"{metric}.csv")
            assert rows[0] == ["n_samples", "VWAL", "Random"]
            assert len(rows) == 7
            assert [r[0] for r in rows[1:]] == [str(n) for n in range(5, 11)]
        curve = read(run_dir / "out" / "curves" / "VWAL.csv")
        mad = read(tmp_path / "mean_mad.csv")
        assert [r[1] for r in mad[1:]] == [r[4] for r in curve[1:]]

    def test_shorter_curve_leaves_blanks(self, run_dir, tmp_path):
        src = read(run_dir / "out" / "curves" / "VWAL.csv")
        short = tmp_path / "short.csv"
        with open(short, "w", newline="") as fh:
            csv.writer(fh, lineterminator="\n").writerows(src[:4])
        tables = join_curves([str(run_dir / "out" / "curves" / "Random.csv"), str(short)])
        header, rows = tables["mean_mad"]
        assert len(rows) == 6 and rows[-1][2] == ""

    def test_disjoint_grids(self, run_dir, tmp_path, capsys):
        src = read(run_dir / "out" / "curves" / "VWAL.csv")
        shifted = tmp_path / "shifted.csv"
        with open(shifted, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(src[0])
            for r in src[1:]:
                w.writerow([r[0], str(int(r[1]) + 100), *r[2:]])
        code = main(["compare", str(run_dir / "out" / "curves" / "Random.csv"), str(shifted), "--out", str(tmp_path)])
        assert code == 2
        assert "shifted.csv" in capsys.readouterr().err

    def test_needs_two(self, run_dir):
        with pytest.raises(ConfigError):
            join_curves([str(run_dir / "out" / "curves" / "VWAL.csv")])
