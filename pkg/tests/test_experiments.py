import json

import numpy as np
import pytest

from asymlab import cli
from asymlab.experiments import (
    ExperimentResult,
    _merge_defaults,
    config_hash,
    exp_characterization,
    exp_compgen,
    exp_gen_data,
    exp_jacobian_check,
    exp_train,
    fit_linear,
    full_poly_features,
    sample_graph_band,
    sample_graph_band_cpe,
)
from asymlab.generators import preset_generator
from asymlab.multiindex import SlotPartition
from asymlab.tensorio import load_json, load_tensor


def test_config_hash_order_independent():
    a = {"x": 1, "y": [1, 2], "z": {"k": 0.5}}
    b = {"z": {"k": 0.5}, "y": [1, 2], "x": 1}
    assert config_hash(a) == config_hash(b)
    assert len(config_hash(a)) == 16
    assert config_hash({"x": 2, "y": [1, 2], "z": {"k": 0.5}}) != config_hash(a)


def test_merge_defaults_rejects_unknown_keys():
    with pytest.raises(ValueError, match="unknown"):
        _merge_defaults({"typo": 2}, {"a": 1})
    assert _merge_defaults({"b": 3}, {"a": 1, "b": 2}) == {"a": 1, "b": 3}
    assert _merge_defaults(None, {"a": 1}) == {"a": 1}


def test_experiment_result_serialization(tmp_path):
    r = ExperimentResult(experiment_id="demo", config={"k": 1}, seed=0)
    r.add_metric(0, "mse", 0.5)
    r.add_metric(1, "mse", 0.25, excluded=2)
    r.wall_clock = 1.5
    obj = r.to_json()
    assert obj["experiment_id"] == "demo"
    assert obj["config_hash"] == config_hash({"k": 1})
    r.write(tmp_path)
    saved = load_json(tmp_path / "results.json")
    assert saved["passed"] is True
    lines = (tmp_path / "metrics.csv").read_text().splitlines()
    assert lines[0].startswith("run_id")
    assert len(lines) == 3


def test_graph_band_samplers():
    rng = np.random.default_rng(0)
    part = SlotPartition(blocks=((0,), (1,), (2,), (3,)), latent_dim=4)
    Z = sample_graph_band(rng, 50)
    assert Z.shape == (50, 4)
    np.testing.assert_allclose(Z[:, 3], Z[:, 0] * Z[:, 1] * Z[:, 2], atol=1e-15)
    Zw = sample_graph_band(rng, 50, width=0.1)
    assert np.all(np.abs(Zw[:, 3] - Zw[:, 0] * Zw[:, 1] * Zw[:, 2]) <= 0.1 + 1e-12)
    C = sample_graph_band_cpe(rng, 30, part)
    assert np.all(np.abs(C[:, 3] - C[:, 0] * C[:, 1] * C[:, 2]) > 1e-6)


def test_fit_linear_solver_switch():
    rng = np.random.default_rng(1)
    Z = rng.uniform(-1, 1, size=(200, 2))
    feats = full_poly_features(2, degree=2)
    Y = Z[:, :1] * Z[:, 1:]
    fit = fit_linear(Z, Y, feats)
    assert fit.solver == "cholesky"
    # duplicated feature makes the gram matrix exactly singular
    dup = feats + [feats[-1]]
    fit2 = fit_linear(Z, Y, dup)
    assert fit2.solver == "svd"
    assert fit2.condition > 1e12


def test_exp_compgen_single_seed(tmp_path):
    r = exp_compgen({"seeds": [0], "n_train": 200, "n_eval_cpe": 100,
                     "n_eval_support": 80}, out=tmp_path)
    assert r.passed
    names = {m["metric"] for m in r.metrics}
    assert "cpe_mse_constrained" in names
    assert "cpe_mse_baseline" in names
    assert (tmp_path / "results.json").exists()
    saved = load_json(tmp_path / "results.json")
    assert saved["config_hash"] == r.to_json()["config_hash"]


def test_exp_compgen_box_support():
    r = exp_compgen({"seeds": [0], "support_kind": "box", "n_train": 150,
                     "n_eval_cpe": 50, "n_eval_support": 50})
    flags = [m for m in r.metrics if m["metric"] == "extrapolation_region_empty"]
    assert flags and flags[0]["value"] == 1.0


def test_exp_jacobian_check_small():
    r = exp_jacobian_check({"trials": 5, "zero_trials": 2, "battery": 200})
    assert r.passed
    names = {m["metric"] for m in r.metrics}
    assert "max_rel_error" in names
    max_rel = [m["value"] for m in r.metrics if m["metric"] == "max_rel_error"][0]
    assert max_rel <= 1e-5


def test_exp_characterization_small():
    r = exp_characterization({"presets_per_n": 1, "orders": [1, 2],
                              "probes": 8, "equiv_samples": 2})
    assert r.passed
    assert any(rep["name"].startswith("order") for rep in r.reports)


def test_exp_gen_data_and_train(tmp_path):
    data_dir = tmp_path / "data"
    rd = exp_gen_data({"count": 10, "seed": 4}, out=data_dir, preview=2)
    assert rd.passed
    images = load_tensor(data_dir / "tensors" / "images.atns")
    labels = load_tensor(data_dir / "tensors" / "labels.atns")
    assert images.shape == (10, 16, 16, 3)
    assert labels.shape == (10, 16, 16)
    assert set(np.unique(labels)) <= {-1.0, 0.0, 1.0, 2.0}
    manifest = load_json(data_dir / "manifest.json")
    assert len(manifest["splits"]["train"]) == 8
    previews = sorted((data_dir / "images").glob("scene_*.ppm"))
    assert len(previews) == 2

    run_dir = tmp_path / "run"
    rt = exp_train({"data": {"count": 10, "seed": 4},
                    "train": {"iterations": 40, "batch_size": 4,
                              "warmup": 10, "lr": 2e-3},
                    "eval_images": 2}, out=run_dir)
    assert rt.passed
    log = (run_dir / "log.csv").read_text().splitlines()
    assert len(log) == 41  # header + one row per iteration
    ck = load_json(run_dir / "checkpoint.json")
    tensors = list((run_dir / "tensors").glob("param_*.atns"))
    assert tensors
    assert len(ck["parameters"]) == len(tensors)
    assert {m["metric"] for m in rt.metrics} >= {"final_rec", "j_ari", "jis"}


def test_cli_check_pass_and_fail(tmp_path):
    spec_path = tmp_path / "gen.json"
    spec = preset_generator(1, rng_seed=0)
    spec_path.write_text(json.dumps(spec.to_json()))
    out = tmp_path / "out"
    rc = cli.main(["check", "--generator", str(spec_path), "--order", "1",
                   "--out", str(out), "--probes", "8"])
    assert rc == 0
    results = load_json(out / "results.json")
    assert results["passed"] is True

    out2 = tmp_path / "out2"
    rc = cli.main(["check", "--generator", str(spec_path), "--order", "0",
                   "--out", str(out2), "--probes", "8"])
    assert rc == 1


def test_cli_refuses_nonempty_out(tmp_path):
    spec_path = tmp_path / "gen.json"
    spec_path.write_text(json.dumps(preset_generator(0, rng_seed=1).to_json()))
    out = tmp_path / "busy"
    out.mkdir()
    (out / "junk.txt").write_text("x")
    args = ["check", "--generator", str(spec_path), "--order", "0",
            "--out", str(out), "--probes", "6"]
    assert cli.main(args) == 2
    assert cli.main(args + ["--force"]) == 0


def test_cli_bad_inputs(tmp_path):
    rc = cli.main(["check", "--generator", str(tmp_path / "missing.json"),
                   "--order", "1", "--out", str(tmp_path / "o")])
    assert rc == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    rc = cli.main(["check", "--generator", str(bad), "--order", "1",
                   "--out", str(tmp_path / "o2")])
    assert rc == 2
    assert cli.main(["check"]) == 2  # missing required arguments
    assert cli.main(["no-such-command"]) == 2


def test_cli_jac_check(tmp_path):
    rc = cli.main(["jac-check", "--trials", "3", "--out", str(tmp_path / "jc")])
    assert rc == 0
    assert (tmp_path / "jc" / "results.json").exists()
