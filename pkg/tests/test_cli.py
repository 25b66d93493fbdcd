"""End-to-end tests for the command-line interface.

Everything goes through ``cli.run(argv) -> int`` so exit codes and output
files can be checked without spawning subprocesses.
"""

import json

import numpy as np
import pytest

from salvit import bench, checkpoint, cli, config, saliency, signal, training
from salvit.model import full_scale_config

# shrink the model so train/eval subcommand tests run in well under a second
TINY = (
    "--override", "model.embed_dim=16",
    "--override", "model.num_heads=2",
    "--override", "model.depth=1",
    "--override", "model.mlp_dim=32",
)


def write_input_png(path, size=32, seed=0):
    rng = np.random.default_rng(seed)
    img = rng.uniform(0.1, 0.3, size=(size, size, 3))
    img[4:12, 20:28, :] = 0.9  # bright block so saliency has structure
    signal.write_rgb8_png(path, img)
    return path


class TestUsageErrors:
    def test_no_arguments(self, capsys):
        assert cli.run([]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_subcommand(self, capsys):
        assert cli.run(["polish"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag(self, capsys):
        assert cli.run(["bench", "--turbo"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_missing_required_flag(self, capsys):
        assert cli.run(["saliency"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_main_exits_with_run_code(self, monkeypatch):
        monkeypatch.setattr("sys.argv", ["salvit"])
        with pytest.raises(SystemExit) as exc:
            cli.main()
        assert exc.value.code == 1


class TestExitCodes:
    def test_user_error_is_one(self, tmp_path):
        assert cli.run(["saliency", "--input", str(tmp_path / "absent.png"),
                        "--out", str(tmp_path)]) == 1

    def test_internal_error_is_two(self, tmp_path, monkeypatch, capsys):
        def boom(*args, **kwargs):
            raise RuntimeError("synthetic failure")

        monkeypatch.setattr(cli.saliency, "saliency_map", boom)
        img = write_input_png(tmp_path / "input.png")
        assert cli.run(["saliency", "--input", str(img), "--out", str(tmp_path)]) == 2
        assert "synthetic failure" in capsys.readouterr().err

    def test_bad_override_key_is_user_error(self, tmp_path):
        img = write_input_png(tmp_path / "input.png")
        assert cli.run(["saliency", "--input", str(img), "--out", str(tmp_path),
                        "--override", "model.nonsense=1"]) == 1

    def test_malformed_override_is_user_error(self, tmp_path):
        img = write_input_png(tmp_path / "input.png")
        assert cli.run(["saliency", "--input", str(img), "--out", str(tmp_path),
                        "--override", "model.embed_dim"]) == 1

    def test_wrong_typed_override_is_user_error(self, tmp_path, capsys):
        img = write_input_png(tmp_path / "input.png")
        assert cli.run(["saliency", "--input", str(img), "--out", str(tmp_path),
                        "--override", "train.epochs=abc"]) == 1
        assert "expected an integer" in capsys.readouterr().err


class TestSaliencyCommand:
    def test_writes_png_sidecar_and_snapshot(self, tmp_path):
        img = write_input_png(tmp_path / "photo.png")
        out = tmp_path / "out"
        assert cli.run(["saliency", "--input", str(img), "--out", str(out)]) == 0
        assert (out / "photo.saliency.png").exists()
        assert (out / "photo.saliency.json").exists()
        assert (out / "config.json").exists()

    def test_sidecar_reconstructs_raw_values(self, tmp_path):
        img_path = write_input_png(tmp_path / "photo.png")
        out = tmp_path / "out"
        cli.run(["saliency", "--input", str(img_path), "--out", str(out)])
        side = json.loads((out / "photo.saliency.json").read_text())
        png = signal.read_gray16_png(out / "photo.saliency.png").astype(np.float64)
        raw = png / side["levels"] * (side["max"] - side["min"]) + side["min"]
        lum = signal.to_luminance(signal.load_image(img_path))
        expected = saliency.saliency_map(lum, saliency.RogParams(), saliency.CurvatureParams())
        quantum = (side["max"] - side["min"]) / side["levels"]
        assert np.abs(raw - expected.values).max() <= 0.5 * quantum + 1e-12

    def test_constant_image_all_zero_png(self, tmp_path):
        signal.write_rgb8_png(tmp_path / "flat.png", np.full((32, 32, 3), 0.5))
        out = tmp_path / "out"
        assert cli.run(["saliency", "--input", str(tmp_path / "flat.png"),
                        "--out", str(out)]) == 0
        assert signal.read_gray16_png(out / "flat.saliency.png").max() == 0

    def test_override_lands_in_sidecar(self, tmp_path):
        img = write_input_png(tmp_path / "photo.png")
        out = tmp_path / "out"
        cli.run(["saliency", "--input", str(img), "--out", str(out),
                 "--override", "saliency.rog.tau=0.5"])
        side = json.loads((out / "photo.saliency.json").read_text())
        assert side["rog"]["tau"] == 0.5

    def test_garbage_input_is_user_error(self, tmp_path):
        bad = tmp_path / "fake.png"
        bad.write_bytes(b"this is not a png")
        assert cli.run(["saliency", "--input", str(bad), "--out", str(tmp_path)]) == 1


class TestSelectCommand:
    def test_selection_document(self, tmp_path):
        img = write_input_png(tmp_path / "photo.png")
        out = tmp_path / "out"
        assert cli.run(["select", "--input", str(img), "--out", str(out),
                        "--patch-size", "8", "--m", "5"]) == 0
        doc = json.loads((out / "photo.selection.json").read_text())
        assert doc["patch_size"] == 8
        assert doc["m"] == 5
        assert doc["grid_rows"] == doc["grid_cols"] == 4
        assert len(doc["entries"]) == 5
        scores = [e["score"] for e in doc["entries"]]
        assert scores == sorted(scores, reverse=True)
        for e in doc["entries"]:
            assert e["index"] == e["row"] * doc["grid_cols"] + e["col"]
            assert 0 <= e["row"] < 4 and 0 <= e["col"] < 4

    def test_default_m_keeps_all_patches(self, tmp_path):
        img = write_input_png(tmp_path / "photo.png")
        out = tmp_path / "out"
        cli.run(["select", "--input", str(img), "--out", str(out)])
        doc = json.loads((out / "photo.selection.json").read_text())
        assert doc["patch_size"] == 4  # from the default model config
        assert len(doc["entries"]) == 64

    def test_raster_order_override(self, tmp_path):
        img = write_input_png(tmp_path / "photo.png")
        out = tmp_path / "out"
        cli.run(["select", "--input", str(img), "--out", str(out), "--m", "10",
                 "--override", "selection.order=raster"])
        doc = json.loads((out / "photo.selection.json").read_text())
        indices = [e["index"] for e in doc["entries"]]
        assert indices == sorted(indices)

    def test_overlay_written(self, tmp_path):
        img = write_input_png(tmp_path / "photo.png")
        out = tmp_path / "out"
        assert cli.run(["select", "--input", str(img), "--out", str(out),
                        "--m", "3", "--overlay"]) == 0
        overlay = signal.load_image(out / "photo.overlay.png")
        assert overlay.shape == (32, 32, 3)

    def test_m_beyond_grid_is_user_error(self, tmp_path):
        img = write_input_png(tmp_path / "photo.png")
        assert cli.run(["select", "--input", str(img), "--out", str(tmp_path),
                        "--m", "65"]) == 1

    def test_quarter_of_full_scale_grid(self, tmp_path):
        img = write_input_png(tmp_path / "big.png", size=224)
        out = tmp_path / "out"
        assert cli.run(["select", "--input", str(img), "--out", str(out),
                        "--m", "49", "--patch-size", "16"]) == 0
        doc = json.loads((out / "big.selection.json").read_text())
        assert doc["grid_rows"] == doc["grid_cols"] == 14
        assert len(doc["entries"]) == 49

    def test_snapshot_reproduces_run(self, tmp_path):
        # The config.json written by a run must reproduce it with no other flags.
        img = write_input_png(tmp_path / "photo.png")
        first, second = tmp_path / "a", tmp_path / "b"
        cli.run(["select", "--input", str(img), "--out", str(first),
                 "--override", "model.patch_size=8", "--override", "selection.m=5"])
        cli.run(["select", "--input", str(img), "--out", str(second),
                 "--config", str(first / "config.json")])
        assert (first / "photo.selection.json").read_bytes() == \
            (second / "photo.selection.json").read_bytes()


class TestTrainAndEvalCommands:
    def train_args(self, out):
        return ["train", "--out", str(out), "--num-per-class", "4",
                "--eval-num-per-class", "2", *TINY,
                "--override", "train.epochs=2", "--override", "train.batch_size=8",
                "--override", "selection.m=8"]

    def test_train_outputs(self, tmp_path):
        out = tmp_path / "run"
        assert cli.run(self.train_args(out)) == 0
        for name in ("checkpoint.bin", "metrics.csv", "epochs.csv", "config.json"):
            assert (out / name).exists()
        params, model_cfg, header = checkpoint.load_checkpoint(out / "checkpoint.bin")
        assert model_cfg.embed_dim == 16
        assert header["extra"]["m"] == 8
        assert 0.0 <= header["extra"]["best_eval_acc"] <= 1.0
        lines = (out / "metrics.csv").read_text().strip().splitlines()
        assert lines[0].startswith("step,")
        assert header["step"] == len(lines) - 1
        epoch_lines = (out / "epochs.csv").read_text().strip().splitlines()
        assert len(epoch_lines) == 1 + 2  # header + one row per epoch

    def test_eval_on_written_checkpoint(self, tmp_path):
        out = tmp_path / "run"
        cli.run(self.train_args(out))
        eval_out = tmp_path / "ev"
        rc = cli.run(["eval", "--checkpoint", str(out / "checkpoint.bin"),
                      "--out", str(eval_out), "--num-per-class", "2",
                      "--override", "selection.m=8"])
        assert rc == 0
        doc = json.loads((eval_out / "eval.json").read_text())
        assert doc["num_examples"] == 6
        assert doc["m"] == 8
        assert 0.0 <= doc["accuracy"] <= 1.0

    def test_train_on_folder_dataset(self, tmp_path):
        data = tmp_path / "data"
        cli.run(["make-dataset", "--num-per-class", "3", "--image-size", "32",
                 "--out", str(data)])
        out = tmp_path / "run"
        rc = cli.run(["train", "--out", str(out), "--data", str(data),
                      "--eval-data", str(data), *TINY,
                      "--override", "train.epochs=1", "--override", "train.batch_size=8",
                      "--override", "selection.m=8"])
        assert rc == 0
        assert (out / "checkpoint.bin").exists()

    def test_train_from_config_file_with_fraction(self, tmp_path):
        cfg = config.apply_overrides(config.default_config(), [
            "model.embed_dim=16", "model.num_heads=2", "model.depth=1",
            "model.mlp_dim=32", "train.epochs=1", "train.batch_size=8",
        ])
        cfg_path = tmp_path / "cfg.json"
        config.save_config(cfg, cfg_path)
        out = tmp_path / "run"
        rc = cli.run(["train", "--config", str(cfg_path),
                      "--override", "selection.fraction=0.25",
                      "--out", str(out), "--num-per-class", "4",
                      "--eval-num-per-class", "2"])
        assert rc == 0
        _, _, header = checkpoint.load_checkpoint(out / "checkpoint.bin")
        assert header["extra"]["m"] == 16  # a quarter of the 64-patch grid

    def test_divergence_is_user_error(self, tmp_path):
        args = ["train", "--out", str(tmp_path / "run"), "--num-per-class", "6",
                "--eval-num-per-class", "2", *TINY,
                "--override", "train.epochs=40", "--override", "train.batch_size=6",
                "--override", "train.base_lr=1e8", "--override", "train.warmup_steps=0",
                "--override", "selection.m=8"]
        with np.errstate(all="ignore"):
            assert cli.run(args) == 1

    def test_missing_data_folder_is_user_error(self, tmp_path):
        rc = cli.run(["train", "--out", str(tmp_path), "--data",
                      str(tmp_path / "absent"), *TINY])
        assert rc == 1


class TestBenchCommand:
    def test_reports(self, tmp_path):
        out = tmp_path / "b"
        assert cli.run(["bench", "--out", str(out), "--s", "49,98", "--batch", "4"]) == 0
        doc = json.loads((out / "bench.json").read_text())
        assert [entry["s"] for entry in doc] == [49, 98]
        for entry in doc:
            assert entry["flops"]["total"] > 0
            assert entry["memory"]["total"] > 0
            assert "runtime" not in entry
        assert doc[1]["memory"]["total"] > doc[0]["memory"]["total"]
        lines = (out / "bench.csv").read_text().strip().splitlines()
        assert lines[0] == "s,flops,memory_bytes,forward_median_ms"
        assert len(lines) == 3

    def test_base_flag_uses_reference_model(self, tmp_path):
        out = tmp_path / "b"
        cli.run(["bench", "--out", str(out), "--s", "49", "--base"])
        doc = json.loads((out / "bench.json").read_text())
        expected = bench.flops_estimate(full_scale_config(), 49, batch=1)
        assert doc[0]["flops"]["total"] == expected.total

    def test_runtime_flag(self, tmp_path):
        out = tmp_path / "b"
        rc = cli.run(["bench", "--out", str(out), "--s", "4", *TINY,
                      "--runtime", "--runtime-batch", "1"])
        assert rc == 0
        doc = json.loads((out / "bench.json").read_text())
        assert doc[0]["runtime"]["forward_median_ms"] > 0

    @pytest.mark.parametrize("bad", ["49,x", "", ","])
    def test_bad_s_list_is_user_error(self, tmp_path, bad):
        assert cli.run(["bench", "--out", str(tmp_path), "--s", bad]) == 1


class TestDescribeCommand:
    def make_checkpoint(self, tmp_path):
        out = tmp_path / "run"
        cli.run(["train", "--out", str(out), "--num-per-class", "4",
                 "--eval-num-per-class", "2", *TINY,
                 "--override", "train.epochs=1", "--override", "train.batch_size=8",
                 "--override", "selection.m=8"])
        return out / "checkpoint.bin"

    def test_prints_header_to_stdout(self, tmp_path, capsys):
        path = self.make_checkpoint(tmp_path)
        capsys.readouterr()
        assert cli.run(["describe", "--checkpoint", str(path)]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["config"]["embed_dim"] == 16
        assert doc["extra"]["m"] == 8

    def test_out_flag_writes_header_file(self, tmp_path):
        path = self.make_checkpoint(tmp_path)
        out = tmp_path / "desc"
        assert cli.run(["describe", "--checkpoint", str(path), "--out", str(out)]) == 0
        doc = json.loads((out / "header.json").read_text())
        assert doc["config"]["embed_dim"] == 16

    def test_missing_checkpoint_is_user_error(self, tmp_path):
        assert cli.run(["describe", "--checkpoint", str(tmp_path / "no.bin")]) == 1

    def test_corrupt_checkpoint_is_user_error(self, tmp_path):
        bad = tmp_path / "bad.bin"
        bad.write_bytes(b"\x00" * 64)
        assert cli.run(["describe", "--checkpoint", str(bad)]) == 1


class TestMakeDatasetCommand:
    def test_writes_balanced_tree(self, tmp_path):
        out = tmp_path / "ds"
        assert cli.run(["make-dataset", "--num-per-class", "2", "--image-size", "32",
                        "--out", str(out)]) == 0
        ds = training.load_dataset_folder(out)
        assert len(ds) == 6
        assert ds.class_names == ("disc", "rectangle", "triangle")

    def test_seed_controls_contents(self, tmp_path):
        outs = [tmp_path / name for name in ("a", "b", "c")]
        for out, seed in zip(outs, (3, 3, 4)):
            cli.run(["make-dataset", "--num-per-class", "1", "--image-size", "32",
                     "--out", str(out), "--seed", str(seed)])
        same = (outs[0] / "disc" / "00000.png").read_bytes()
        repeat = (outs[1] / "disc" / "00000.png").read_bytes()
        other = (outs[2] / "disc" / "00000.png").read_bytes()
        assert same == repeat
        assert same != other

    def test_num_per_class_required(self, capsys):
        assert cli.run(["make-dataset"]) == 1
        assert "usage" in capsys.readouterr().err


class TestDeterministicFlag:
    def test_saliency_bytes_reproduce(self, tmp_path):
        img = write_input_png(tmp_path / "photo.png")
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            rc = cli.run(["saliency", "--input", str(img), "--out", str(out),
                          "--deterministic"])
            assert rc == 0
        for name in ("photo.saliency.png", "photo.saliency.json", "config.json"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_dataset_bytes_reproduce(self, tmp_path):
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            rc = cli.run(["make-dataset", "--num-per-class", "2", "--image-size", "32",
                          "--out", str(out), "--deterministic"])
            assert rc == 0
        files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.png"))
        assert len(files) == 6
        for rel in files:
            assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()

    def test_train_checkpoint_bytes_reproduce(self, tmp_path):
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            rc = cli.run(["train", "--out", str(out), "--num-per-class", "4",
                          "--eval-num-per-class", "2", *TINY,
                          "--override", "train.epochs=1",
                          "--override", "train.batch_size=8",
                          "--override", "selection.m=8", "--deterministic"])
            assert rc == 0
        for name in ("checkpoint.bin", "metrics.csv", "epochs.csv"):
            assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()

    def test_threads_flag_smoke(self, tmp_path):
        img = write_input_png(tmp_path / "photo.png")
        assert cli.run(["saliency", "--input", str(img), "--out", str(tmp_path / "o"),
                        "--threads", "2"]) == 0


class TestConfigSnapshot:
    def test_snapshot_matches_resolved_config(self, tmp_path):
        img = write_input_png(tmp_path / "photo.png")
        out = tmp_path / "out"
        cli.run(["saliency", "--input", str(img), "--out", str(out),
                 "--override", "train.base_lr=0.01", "--seed", "9"])
        snap = config.load_config(out / "config.json")
        expected = config.apply_overrides(
            config.default_config(), ["train.base_lr=0.01", "train.seed=9"]
        )
        assert snap == expected
