import json
import struct

import numpy as np
import pytest

from glmls.cli import (
    ExperimentConfig,
    load_model,
    main,
    parse_synth_spec,
    read_config_file,
)

SYNTH = "n=200,d=6,k=3,link=softmax,noise=multinomial"


def run(*args) -> int:
    return main(list(args))


class TestConfigPlumbing:
    def test_parse_synth_spec(self):
        spec = parse_synth_spec("n=10,d=3,k=2,spectrum=1e-3:1,wstar=2", seed=0)
        assert (spec.n, spec.d, spec.k) == (10, 3, 2)
        assert spec.spectrum == (1e-3, 1.0)
        assert spec.wstar_scale == 2.0

    def test_parse_synth_scalar_spectrum(self):
        assert parse_synth_spec("spectrum=0.5", seed=0).spectrum == 0.5

    def test_parse_synth_rejects_unknown_keys(self):
        with pytest.raises(ValueError, match="unknown"):
            parse_synth_spec("n=10,bogus=3", seed=0)

    def test_read_config_file(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(
            "# comment line\n"
            "iters = 12\n"
            "early_stop = true\n"
            "ridge = 0.5  # trailing comment\n"
            "\n"
        )
        assert read_config_file(str(p)) == [
            "--iters", "12", "--early-stop", "--ridge", "0.5",
        ]

    def test_read_config_file_bad_line(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("just a dangling token\n")
        with pytest.raises(Exception, match=":1:"):
            read_config_file(str(p))

    def test_experiment_config_round_trip(self):
        cfg = ExperimentConfig(command="train", iters=3)
        d = cfg.to_dict()
        assert d["command"] == "train"
        assert d["iters"] == 3


class TestTrain:
    def test_train_writes_artifacts(self, tmp_path, capsys):
        out = tmp_path / "run"
        code = run(
            "train", "--data", "synthetic", "--synth", SYNTH,
            "--algo", "gls", "--iters", "20", "--out", str(out),
        )
        assert code == 0
        trace = json.loads((out / "trace.json").read_text())
        assert len(trace["iterations"]) == 20
        assert trace["initial"]["t"] == 0
        assert trace["config"]["iters"] == 20
        assert "content_digest" in trace
        assert "input_hash" in trace
        csv_lines = (out / "trace.csv").read_text().strip().splitlines()
        assert csv_lines[0] == "t,loss,mse,seconds"
        assert len(csv_lines) == 22  # header + initial + 20 iterations
        assert (out / "model.npz").exists()
        assert "train error" in capsys.readouterr().out

    def test_identical_configs_identical_digests(self, tmp_path):
        outs = [tmp_path / "a", tmp_path / "b"]
        for out in outs:
            assert run(
                "train", "--synth", SYNTH, "--iters", "10", "--out", str(out)
            ) == 0
        digests = [
            json.loads((o / "trace.json").read_text())["content_digest"]
            for o in outs
        ]
        assert digests[0] == digests[1]

    def test_seed_changes_digest(self, tmp_path):
        digests = []
        for seed in ("0", "1"):
            out = tmp_path / f"s{seed}"
            run("train", "--synth", SYNTH, "--iters", "5",
                "--seed", seed, "--out", str(out))
            digests.append(
                json.loads((out / "trace.json").read_text())["content_digest"]
            )
        assert digests[0] != digests[1]

    def test_config_file_with_override(self, tmp_path):
        cfg = tmp_path / "exp.cfg"
        cfg.write_text(f"synth = {SYNTH}\niters = 9\nalgo = gls\n")
        out1, out2 = tmp_path / "base", tmp_path / "override"
        assert run("train", "--config", str(cfg), "--out", str(out1)) == 0
        assert run(
            "train", "--config", str(cfg), "--iters", "4", "--out", str(out2)
        ) == 0
        n1 = len(json.loads((out1 / "trace.json").read_text())["iterations"])
        n2 = len(json.loads((out2 / "trace.json").read_text())["iterations"])
        assert (n1, n2) == (9, 4)

    @pytest.mark.parametrize("algo", ["gd", "calibrated", "stagewise"])
    def test_other_algorithms_run(self, tmp_path, algo):
        out = tmp_path / algo
        code = run(
            "train", "--synth", SYNTH, "--algo", algo, "--iters", "4",
            "--stages", "2", "--block", "8", "--out", str(out),
        )
        assert code == 0
        model = load_model(str(out / "model.npz"))
        assert model.manifest["kind"] == algo

    def test_pipeline_round_trip(self, tmp_path):
        out = tmp_path / "pipe"
        code = run(
            "train", "--synth", "n=150,d=10,k=3,noise=multinomial",
            "--algo", "gls", "--link", "identity", "--iters", "1",
            "--pca", "4", "--rff", "32", "--out", str(out),
        )
        assert code == 0
        model = load_model(str(out / "model.npz"))
        kinds = [s["kind"] for s in model.manifest["pipeline"]["steps"]]
        assert kinds == ["pca", "rff"]


class TestEval:
    def test_eval_matches_train_error(self, tmp_path, capsys):
        out = tmp_path / "run"
        run("train", "--synth", SYNTH, "--iters", "15", "--out", str(out))
        train_line = capsys.readouterr().out
        train_err = float(train_line.split("train error ")[1].split(",")[0])
        code = run(
            "eval", "--model", str(out / "model.npz"),
            "--data", "synthetic", "--synth", SYNTH,
            "--out", str(out),
        )
        assert code == 0
        metrics = json.loads((out / "metrics.json").read_text())
        assert metrics["error"] == pytest.approx(train_err, abs=1e-9)
        assert np.array(metrics["confusion"]).sum() == 200

    def test_eval_rejects_class_mismatch(self, tmp_path):
        out = tmp_path / "run"
        run("train", "--synth", SYNTH, "--iters", "2", "--out", str(out))
        code = run(
            "eval", "--model", str(out / "model.npz"),
            "--data", "synthetic", "--synth", "n=50,d=6,k=4",
        )
        assert code == 2


class TestSpectrum:
    def test_spectrum_json(self, tmp_path):
        out = tmp_path / "spec"
        code = run(
            "spectrum", "--data", "synthetic",
            "--synth", "n=100,d=8,k=2", "--top-r", "6", "--out", str(out),
        )
        assert code == 0
        payload = json.loads((out / "spectrum.json").read_text())
        assert len(payload["singular_values"]) == 6
        assert payload["condition_proxy"] > 0
        assert payload["method"] == "dense"


class TestBench:
    def test_rate_bounds_suite(self, tmp_path, capsys):
        code = run("bench", "rate-bounds", "--out", str(tmp_path))
        assert code == 0
        rows = json.loads(
            (tmp_path / "bench-rate-bounds.json").read_text()
        )["rows"]
        assert all(r["pass"] for r in rows)
        assert "check" in capsys.readouterr().out

    def test_conditioning_suite(self, tmp_path):
        code = run("bench", "conditioning", "--out", str(tmp_path))
        assert code == 0
        rows = json.loads(
            (tmp_path / "bench-conditioning.json").read_text()
        )["rows"]
        assert all(r["pass"] for r in rows)

    def test_mnist_suite_needs_data_dir(self):
        assert run("bench", "mnist-raw") == 2


class TestExitCodes:
    def test_missing_file_is_2(self):
        assert run("train", "--data", "/definitely/not/here.libsvm") == 2

    def test_bad_synth_key_is_2(self):
        assert run("train", "--synth", "n=10,nope=1") == 2

    def test_mnist_without_dir_is_2(self):
        assert run("train", "--data", "mnist") == 2

    @pytest.mark.filterwarnings("ignore:overflow")
    def test_numerical_failure_is_3(self, tmp_path):
        # an oversized fixed step on the linear link diverges geometrically
        # until the loss overflows, which must map to the numerical exit code
        code = run(
            "train", "--synth", SYNTH, "--algo", "gd", "--link", "identity",
            "--step", "1e6", "--iters", "400", "--out", str(tmp_path),
        )
        assert code == 3

    def test_idx_data_requires_labels_flag(self, tmp_path):
        img = tmp_path / "images-idx3-ubyte"
        img.write_bytes(struct.pack(">IIII", 0x803, 1, 1, 1) + b"\x00")
        assert run("train", "--data", str(img), "--data-format", "idx") == 2
