"""End-to-end CLI runs on a miniature dataset."""

import json
import subprocess
import sys

import pytest

import pyragraph as pg
from pyragraph.cli import main


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    spec = pg.SynthSpec(classes=2, m=8, d=6, signal_levels=((2,), (2,)),
                        snr=4.0, fraction=0.4, slides_per_class=6,
                        groups_per_class=3, seed=5)
    (out / "spec.json").write_text(spec.to_json())
    assert main(["synth", "--spec", str(out / "spec.json"), "--out", str(out)]) == 0
    return out


CV_ARGS = ["--seeds", "0,1", "--folds", "2", "--epochs", "2",
           "--gcn-widths", "8,6", "--cls-hidden", "5"]


class TestParamsCount:
    def test_prints_published_count(self, capsys):
        assert main(["params-count", "--d", "1024", "--classes", "5"]) == 0
        assert capsys.readouterr().out.strip() == "378245"

    def test_module_entry_point(self):
        res = subprocess.run(
            [sys.executable, "-m", "pyragraph.cli", "params-count",
             "--d", "1024", "--classes", "5"],
            capture_output=True, text=True,
        )
        assert res.returncode == 0
        assert res.stdout.strip() == "378245"

    def test_optional_out_writes_run_json(self, tmp_path):
        out = tmp_path / "pc"
        assert main(["params-count", "--d", "8", "--classes", "2",
                     "--out", str(out)]) == 0
        assert (out / "run.json").exists()
        assert (out / "params_count.txt").read_text().strip() == str(
            pg.count_params(8, 2))


class TestSynth:
    def test_outputs_present(self, data_dir):
        assert (data_dir / "manifest.csv").exists()
        assert (data_dir / "run.json").exists()
        assert len(list(data_dir.glob("*.gpyr"))) == 12
        run = json.loads((data_dir / "run.json").read_text())
        assert run["subcommand"] == "synth"
        assert run["seeds"] == [5]


class TestBuildGraph:
    def test_stats_csv(self, data_dir, tmp_path):
        out = tmp_path / "bg"
        assert main(["build-graph", "--manifest", str(data_dir / "manifest.csv"),
                     "--out", str(out)]) == 0
        lines = (out / "graph_stats.csv").read_text().strip().splitlines()
        assert lines[0] == "slide_id,m,nodes,edges,label,group"
        assert len(lines) == 13
        first = lines[1].split(",")
        assert first[1:4] == ["8", "24", "100"]  # m(3m+1)/2 = 100 at m=8


class TestCv:
    def test_byte_identical_reports(self, data_dir, tmp_path):
        outs = []
        for name in ("cv1", "cv2"):
            out = tmp_path / name
            rc = main(["cv", "--manifest", str(data_dir / "manifest.csv"),
                       "--out", str(out), *CV_ARGS])
            assert rc == 0
            outs.append((out / "eval_report.json").read_bytes())
        assert outs[0] == outs[1]

    def test_report_structure(self, data_dir, tmp_path):
        out = tmp_path / "cv"
        main(["cv", "--manifest", str(data_dir / "manifest.csv"),
              "--out", str(out), *CV_ARGS])
        report = json.loads((out / "eval_report.json").read_text())
        assert len(report["runs"]) == 4
        assert "balanced_accuracy_mean" in report["aggregate"]
        assert (out / "timings.csv").exists()
        assert (out / "run.json").exists()

    def test_missing_seeds_is_config_error(self, data_dir, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["cv", "--manifest", str(data_dir / "manifest.csv"),
                  "--out", str(tmp_path / "x"), "--folds", "2"])
        assert exc.value.code == 2

    def test_missing_manifest_is_config_error(self, tmp_path):
        rc = main(["cv", "--manifest", str(tmp_path / "nope.csv"),
                   "--out", str(tmp_path / "x"), *CV_ARGS])
        assert rc == 2


class TestTrainEvalConsult:
    def test_pipeline(self, data_dir, tmp_path):
        model_dir = tmp_path / "model"
        rc = main(["train", "--manifest", str(data_dir / "manifest.csv"),
                   "--out", str(model_dir), "--seed", "3", "--epochs", "5",
                   "--gcn-widths", "8,6", "--cls-hidden", "5"])
        assert rc == 0
        ckpt = model_dir / "model.grsp"
        assert ckpt.exists() and (model_dir / "loss_curve.csv").exists()

        eval_dir = tmp_path / "eval"
        rc = main(["eval", "--manifest", str(data_dir / "manifest.csv"),
                   "--checkpoint", str(ckpt), "--out", str(eval_dir)])
        assert rc == 0
        payload = json.loads((eval_dir / "eval.json").read_text())
        assert 0.0 <= payload["balanced_accuracy"] <= 1.0
        assert payload["n_slides"] == 12

        consult_dir = tmp_path / "consult"
        rc = main(["consult", "--manifest", str(data_dir / "manifest.csv"),
                   "--checkpoint", str(ckpt), "--out", str(consult_dir)])
        assert rc == 0
        hist = json.loads((consult_dir / "histogram.json").read_text())
        assert set(hist) == {"class00", "class01"}
        for dist in hist.values():
            assert sum(dist.values()) == pytest.approx(1.0)
        lines = (consult_dir / "consultations.csv").read_text().strip().splitlines()
        assert len(lines) == 13

    def test_train_requires_seed(self, data_dir, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--manifest", str(data_dir / "manifest.csv"),
                  "--out", str(tmp_path / "m")])
        assert exc.value.code == 2


class TestHarnessCommands:
    def test_monte_carlo(self, data_dir, tmp_path):
        out = tmp_path / "mc"
        rc = main(["monte-carlo", "--manifest", str(data_dir / "manifest.csv"),
                   "--out", str(out), "--counts", "2,4", "--reps", "1", *CV_ARGS])
        assert rc == 0
        lines = (out / "monte_carlo.csv").read_text().strip().splitlines()
        assert lines[0] == "nodes,mean_bacc,std_bacc"
        assert len(lines) == 3
        nodes = sorted(int(l.split(",")[0]) for l in lines[1:])
        assert nodes == [12, 18]  # 3 * (8 - {4,2})

    def test_mag_ablation(self, data_dir, tmp_path):
        out = tmp_path / "mag"
        rc = main(["mag-ablation", "--manifest", str(data_dir / "manifest.csv"),
                   "--out", str(out), "--masks", "M2,M1&M3", *CV_ARGS])
        assert rc == 0
        lines = (out / "mag_ablation.csv").read_text().strip().splitlines()
        masks = [l.split(",")[0] for l in lines[1:]]
        assert masks == ["M2", "M1&M3", "M1&M2&M3"]

    def test_convergence(self, tmp_path):
        out = tmp_path / "conv"
        rc = main(["convergence", "--out", str(out), "--m-list", "4,16",
                   "--seeds", "0,1,2", "--d", "6"])
        assert rc == 0
        trend = json.loads((out / "trend.json").read_text())
        assert trend["trend"]["M1"] == pytest.approx(-1.0)
        assert (out / "convergence.csv").exists()

    def test_bad_mask_is_config_error(self, data_dir, tmp_path):
        rc = main(["mag-ablation", "--manifest", str(data_dir / "manifest.csv"),
                   "--out", str(tmp_path / "x"), "--masks", "M9", *CV_ARGS])
        assert rc == 2
