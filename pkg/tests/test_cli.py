"""Command-line interface, run in process: pipelines, exit codes, layout."""

import json

import jsonschema
import pytest

from radaug.cli import EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC, EXIT_OK, main
from radaug.config import eval_result_schema
from radaug.dataio import dataset_hash

CFG = {
    "seed": 1,
    "tuple_len": 3,
    "test_frames": 6,
    "scene": {"trajectory_len": 8, "image_dims": [16, 16, 3], "num_landmarks": 6},
    "train": {"epochs": 1, "batch_tuples": 4, "lr": 1e-3,
              "perturber": {"method": "rada", "epsilon": 200.0}},
    "histogram": {"frames": 2},
}


def _only_run_dir(root, command):
    dirs = sorted(root.glob(f"{command}-*"))
    assert len(dirs) == 1, dirs
    return dirs[0]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data -> train -> eval -> histogram, each into its own out root."""
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "cfg.json"
    cfg_path.write_text(json.dumps(CFG))
    c = str(cfg_path)

    assert main(["gen-data", "--config", c, "--out", str(root / "gen")]) == EXIT_OK
    ds_dir = _only_run_dir(root / "gen", "gen-data") / "dataset"
    ds_hash_before = dataset_hash(ds_dir)

    assert main(["train", "--config", c, "--out", str(root / "train"),
                 "--override", f"dataset_dir={ds_dir}"]) == EXIT_OK
    train_dir = _only_run_dir(root / "train", "train")
    ckpt = train_dir / "final.ckpt"

    assert main(["eval", "--config", c, "--out", str(root / "eval"),
                 "--checkpoint", str(ckpt)]) == EXIT_OK
    eval_dir = _only_run_dir(root / "eval", "eval")

    assert main(["histogram", "--config", c, "--out", str(root / "hist"),
                 "--checkpoint", str(ckpt), "--dataset", str(ds_dir)]) == EXIT_OK
    hist_dir = _only_run_dir(root / "hist", "histogram")

    return {"root": root, "cfg": c, "ds_dir": ds_dir,
            "ds_hash_before": ds_hash_before, "train_dir": train_dir,
            "ckpt": ckpt, "eval_dir": eval_dir, "hist_dir": hist_dir}


class TestPipeline:
    def test_gen_data_layout(self, pipeline):
        ds_dir = pipeline["ds_dir"]
        manifest = json.loads((ds_dir / "manifest.json").read_text())
        assert manifest["n_frames"] == 8
        assert (ds_dir / "poses.csv").exists()
        assert sorted(p.name for p in (ds_dir / "masks").iterdir())
        run_manifest = json.loads(
            (ds_dir.parent / "run_manifest.json").read_text())
        assert run_manifest["command"] == "gen-data"
        assert run_manifest["seed"] == 1
        assert run_manifest["dataset_hash"] == pipeline["ds_hash_before"]
        assert any(k.startswith("dataset/") for k in run_manifest["outputs"])

    def test_gen_data_deterministic(self, pipeline):
        root, c = pipeline["root"], pipeline["cfg"]
        assert main(["gen-data", "--config", c,
                     "--out", str(root / "gen2")]) == EXIT_OK
        ds2 = _only_run_dir(root / "gen2", "gen-data") / "dataset"
        assert dataset_hash(ds2) == pipeline["ds_hash_before"]

    def test_train_outputs_and_input_untouched(self, pipeline):
        train_dir = pipeline["train_dir"]
        assert (train_dir / "final.ckpt").exists()
        assert (train_dir / "audit.ndjson").exists()
        report = json.loads((train_dir / "train_report.json").read_text())
        assert len(report["loss_curve"]) == 1
        assert not report["aborted"]
        run_manifest = json.loads((train_dir / "run_manifest.json").read_text())
        assert run_manifest["dataset_hash"] == pipeline["ds_hash_before"]
        assert "final.ckpt" in run_manifest["outputs"]
        # training must not modify the input dataset directory
        assert dataset_hash(pipeline["ds_dir"]) == pipeline["ds_hash_before"]

    def test_train_bitwise_deterministic(self, pipeline):
        root, c, ds_dir = pipeline["root"], pipeline["cfg"], pipeline["ds_dir"]
        blobs = []
        for name in ("t1", "t2"):
            assert main(["train", "--config", c, "--out", str(root / name),
                         "--override", f"dataset_dir={ds_dir}"]) == EXIT_OK
            d = _only_run_dir(root / name, "train")
            blobs.append(((d / "final.ckpt").read_bytes(),
                          (d / "audit.ndjson").read_bytes()))
        assert blobs[0] == blobs[1]
        assert blobs[0][0] == pipeline["ckpt"].read_bytes()

    def test_eval_outputs(self, pipeline):
        eval_dir = pipeline["eval_dir"]
        doc = json.loads((eval_dir / "eval.json").read_text())
        jsonschema.validate(doc, eval_result_schema())
        assert doc["overall"]["n_frames"] == 6
        lines = (eval_dir / "trajectory.csv").read_text().strip().splitlines()
        assert len(lines) == 1 + 6

    def test_eval_prints_table(self, pipeline, capsys):
        root, c = pipeline["root"], pipeline["cfg"]
        assert main(["eval", "--config", c, "--out", str(root / "eval2"),
                     "--checkpoint", str(pipeline["ckpt"])]) == EXIT_OK
        tail = capsys.readouterr().out
        assert "condition" in tail and "average" in tail

    def test_histogram_outputs(self, pipeline):
        hist_dir = pipeline["hist_dir"]
        for method in ("gaussian", "fgsm", "rada"):
            doc = json.loads((hist_dir / f"{method}_histogram.json").read_text())
            assert doc["method"] == method
            assert (hist_dir / f"{method}_strip_0.png").exists()
            assert (hist_dir / f"{method}_strip_1.png").exists()

    def test_histogram_prints_summary(self, pipeline, capsys):
        root, c = pipeline["root"], pipeline["cfg"]
        assert main(["histogram", "--config", c, "--out", str(root / "hist2"),
                     "--checkpoint", str(pipeline["ckpt"]),
                     "--dataset", str(pipeline["ds_dir"])]) == EXIT_OK
        out = capsys.readouterr().out
        for method in ("gaussian", "fgsm", "rada"):
            assert method in out
        assert "mean entropy" in out


class TestOutRootResolution:
    def test_env_root_honored(self, pipeline, monkeypatch, tmp_path):
        monkeypatch.setenv("RADAUG_OUT_DIR", str(tmp_path / "envroot"))
        assert main(["gen-data", "--config", pipeline["cfg"]]) == EXIT_OK
        assert _only_run_dir(tmp_path / "envroot", "gen-data").exists()


class TestExitCodes:
    def test_bad_config_file_is_2_with_no_output(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"boguskey": 1}')
        out_root = tmp_path / "out"
        assert main(["gen-data", "--config", str(bad),
                     "--out", str(out_root)]) == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err
        assert not out_root.exists()

    def test_bad_override_is_2(self, tmp_path, capsys):
        assert main(["gen-data", "--override", "train.epochs=-3",
                     "--out", str(tmp_path / "out")]) == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err
        assert not (tmp_path / "out").exists()

    def test_missing_checkpoint_file_is_4(self, tmp_path, capsys):
        assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"),
                     "--out", str(tmp_path / "out")]) == EXIT_IO
        assert "i/o error" in capsys.readouterr().err

    def test_no_checkpoint_at_all_is_2(self, tmp_path, capsys):
        assert main(["eval", "--out", str(tmp_path / "out")]) == EXIT_CONFIG
        assert "checkpoint" in capsys.readouterr().err

    def test_diverging_training_is_3_with_abort_artifacts(self, pipeline,
                                                          tmp_path, capsys):
        assert main(["train", "--config", pipeline["cfg"],
                     "--out", str(tmp_path / "out"),
                     "--override", f"dataset_dir={pipeline['ds_dir']}",
                     "--override", "train.lr=1e18",
                     "--override", "train.epochs=5",
                     "--perturber", "none"]) == EXIT_NUMERIC
        assert "numeric failure" in capsys.readouterr().err
        run_dir = _only_run_dir(tmp_path / "out", "train")
        report = json.loads((run_dir / "train_report.json").read_text())
        assert report["aborted"]
        assert (run_dir / "final.ckpt").exists()

    def test_missing_command_is_argparse_error(self):
        with pytest.raises(SystemExit):
            main([])

    def test_perturber_flag_switches_method(self, pipeline, tmp_path):
        assert main(["train", "--config", pipeline["cfg"],
                     "--out", str(tmp_path / "out"),
                     "--override", f"dataset_dir={pipeline['ds_dir']}",
                     "--perturber", "none"]) == EXIT_OK
        run_dir = _only_run_dir(tmp_path / "out", "train")
        stages = {json.loads(line)["stage"]
                  for line in (run_dir / "audit.ndjson").read_text().splitlines()}
        assert "gradient" not in stages
