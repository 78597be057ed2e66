import json

import numpy as np
import pytest

from conftest import bundle_of, separated_matrix
from cluster_laser import cost_model
from cluster_laser.cli import main
from cluster_laser.tensor_store import MatrixRecord, load_bundle, save_bundle, write_matrix


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, (json.loads(out) if out.strip() else None), err


@pytest.fixture
def manifest(tmp_path, rng):
    pairs = {
        (layer, kind): (separated_matrix(rng, 12, 6), rng.standard_normal((12, 6)))
        for layer in range(2)
        for kind in ("mlp_in", "mlp_out")
    }
    return save_bundle(bundle_of(pairs), tmp_path / "in")


def test_score_rows_descend(capsys, manifest):
    code, report, _ = run(capsys, "score", "--manifest", str(manifest), "--top", "3")
    assert code == 0
    rows = report["payload"]["rows"]
    assert [r["rank"] for r in rows] == [1, 2, 3]
    scores = [r["score"] for r in rows]
    assert scores == sorted(scores, reverse=True)
    assert report["command"] == "score" and len(report["inputs_digest"]) == 64


def test_score_top_larger_than_candidates(capsys, manifest):
    code, report, _ = run(capsys, "score", "--manifest", str(manifest), "--top", "999")
    assert code == 0
    assert len(report["payload"]["rows"]) == 4


def test_score_missing_gradient(capsys, tmp_path, rng):
    path = save_bundle(bundle_of({(0, "mlp_in"): (rng.standard_normal((4, 3)), None)}), tmp_path)
    code, report, err = run(capsys, "score", "--manifest", str(path))
    assert code == 2 and report is None
    assert "missing gradient for layer" in err


def test_score_bad_manifest(capsys, tmp_path):
    code, _, err = run(capsys, "score", "--manifest", str(tmp_path / "nope.json"))
    assert code == 2 and "error" in err


def test_compress_rho_one_is_bit_identical(capsys, manifest, tmp_path):
    out = tmp_path / "out"
    code, report, _ = run(capsys, "compress", "--manifest", str(manifest), "--target", "1:mlp_in", "--rho", "1.0", "--out", str(out))
    assert code == 0
    before = (manifest.parent / "L1.mlp_in.matx").read_bytes()
    assert (out / "L1.mlp_in.matx").read_bytes() == before
    assert report["payload"]["frobenius_error"] == 0.0


def test_compress_per_block_ranks(capsys, tmp_path, rng):
    W = rng.standard_normal((400, 400))
    path = save_bundle(bundle_of({(0, "mlp_in"): (W, None)}), tmp_path / "in")
    code, report, _ = run(
        capsys, "compress", "--manifest", str(path), "--target", "0:mlp_in", "--rho", "0.05", "--clusters", "2",
        "--out", str(tmp_path / "out"),
    )
    assert code == 0
    p = report["payload"]
    # two 200 x 400 blocks: floor(0.05 * 200) = 10 each
    assert p["per_block_rank"] == [10, 10]
    assert np.linalg.matrix_rank(load_bundle(p["manifest"]).get("L0.mlp_in").data) == 20
    assert p["frobenius_after"] < p["frobenius_before"]


def test_compress_em_reports_trace(capsys, manifest, tmp_path):
    code, report, _ = run(
        capsys, "compress", "--manifest", str(manifest), "--target", "0:mlp_out", "--rho", "0.5", "--clusters", "2",
        "--mode", "em", "--out", str(tmp_path / "out"),
    )
    assert code == 0
    p = report["payload"]
    assert p["cost_trace_length"] == len(p["cost_trace"]) >= 1
    assert p["final_cost"] == p["cost_trace"][-1]
    assert sum(p["cluster_sizes"]) == 12


@pytest.mark.parametrize("target", ["7:mlp_in", "0:attn_v", "mlp_in", "0:attn_k"])
def test_compress_bad_target(capsys, manifest, tmp_path, target):
    code, _, err = run(capsys, "compress", "--manifest", str(manifest), "--target", target, "--rho", "0.5", "--out", str(tmp_path / "o"))
    assert code == 2 and "error" in err


def test_compress_unwritable_output(capsys, manifest, tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, err = run(capsys, "compress", "--manifest", str(manifest), "--target", "0:mlp_in", "--rho", "0.5", "--out", str(blocker / "sub"))
    assert code == 3 and "cannot write" in err


def write_rows(path, rows):
    path.write_bytes(write_matrix(MatrixRecord("m", 0, "mlp_in", "weight", rows)))
    return str(path)


def test_cluster_two_lines(capsys, tmp_path, rng):
    a = np.outer(rng.uniform(1, 2, 10), [1.0, 0, 0, 0])
    b = np.outer(rng.uniform(1, 2, 10), [0, 1.0, 0, 0])
    rows = np.empty((20, 4))
    rows[0::2], rows[1::2] = a, b
    code, report, _ = run(capsys, "cluster", "--matrix", write_rows(tmp_path / "m.matx", rows), "--k", "2", "--dim", "1")
    assert code == 0
    p = report["payload"]
    assert p["final_cost"] <= 1e-16
    assert sorted(p["histogram"]) == [10, 10]
    assign = np.array(p["assignment"])
    assert len(set(assign[0::2])) == 1 and len(set(assign[1::2])) == 1


def test_cluster_single_is_svd(capsys, tmp_path, rng):
    rows = rng.standard_normal((12, 6))
    code, report, _ = run(capsys, "cluster", "--matrix", write_rows(tmp_path / "m.matx", rows), "--k", "1", "--dim", "2")
    sigma = np.linalg.svd(rows, compute_uv=False)
    assert code == 0
    assert len(report["payload"]["cost_trace"]) == 1
    assert report["payload"]["final_cost"] == pytest.approx(np.sum(sigma[2:] ** 2), rel=1e-8)


def test_cluster_trace_monotone(capsys, tmp_path, rng):
    rows = rng.standard_normal((40, 6))
    code, report, _ = run(capsys, "cluster", "--matrix", write_rows(tmp_path / "m.matx", rows), "--k", "3", "--dim", "2")
    trace = report["payload"]["cost_trace"]
    assert code == 0
    assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:]))


def test_cluster_parse_error(capsys, tmp_path):
    bad = tmp_path / "bad.matx"
    bad.write_bytes(b"NOPE")
    code, _, err = run(capsys, "cluster", "--matrix", str(bad), "--k", "2", "--dim", "1")
    assert code == 2 and "magic" in err


@pytest.mark.parametrize(
    "method, preset, d, expected",
    [
        ("cl_100g_100e", "gptj", 65757, 93.4),
        ("laser_grads_std", "gptj", 1000, 9.7),
        ("cl_100g_100e", "roberta", 13086, 15.7),
    ],
)
def test_cost_examples(capsys, method, preset, d, expected):
    code, report, _ = run(capsys, "cost", "--method", method, "--preset", preset, "--d", str(d))
    assert code == 0
    assert round(report["payload"]["speedup"], 1) == expected


def test_cost_table(capsys):
    code, report, err = run(capsys, "cost", "--method", "cl_100g_100e", "--preset", "gptj", "--table")
    p = report["payload"]
    assert code == 0
    assert [r["dataset"] for r in p["rows"]] == list(cost_model.DATASET_SIZES)
    assert p["mean_speedup"] == pytest.approx(np.mean([r["speedup"] for r in p["rows"]]))
    assert "mean" in err


@pytest.mark.parametrize("argv", [["--method", "bogus", "--preset", "gptj", "--d", "10"], ["--method", "laser_full", "--preset", "llama", "--d", "10"]])
def test_cost_unknown_method_or_preset(capsys, argv):
    code, report, _ = run(capsys, "cost", *argv)
    assert code == 2 and report is None


def replay_config(tmp_path, manifest, **extra):
    cfg = {
        "method": "cl_100g_std",
        "space": {"layers": [0, 1], "rhos": [0.9, 0.5, 0.1], "cluster_levels": [1, 2]},
        "evaluator": "replay",
        "q": 4,
        "replay": {
            "manifest": str(manifest),
            "d": 1000,
            "table": [[[None, None, 1.0, 1], 0.6], [["mlp_out", 1, 0.1, 2], 0.75]],
            "default": 0.5,
        },
        **extra,
    }
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_sweep_replay(capsys, tmp_path, manifest):
    code, report, _ = run(capsys, "sweep", "--config", replay_config(tmp_path, manifest))
    p = report["payload"]
    assert code == 0
    assert p["best_plan"] == ["mlp_out", 1, 0.1, 2]
    assert p["validation_accuracy"] == 0.75 and p["test_accuracy"] == 0.75
    assert p["candidates_evaluated"] == 4 * 3 * 2 + 1


def test_sweep_replay_baseline(capsys, tmp_path, manifest):
    path = replay_config(tmp_path, manifest)
    cfg = json.loads(open(path).read())
    cfg["replay"]["table"] = [[[None, None, 1.0, 1], 0.9]]
    open(path, "w").write(json.dumps(cfg))
    code, report, _ = run(capsys, "sweep", "--config", path)
    assert code == 0
    assert report["payload"]["best_plan"] == [None, None, 1.0, 1]


def test_sweep_capability_error(capsys, tmp_path, rng):
    path = save_bundle(bundle_of({(0, "mlp_in"): (rng.standard_normal((4, 3)), None)}), tmp_path / "b")
    code, report, err = run(capsys, "sweep", "--config", replay_config(tmp_path, path, space={"layers": [0], "rhos": [0.5]}))
    assert code == 4 and report is None
    assert "gradients" in err


def test_sweep_config_errors(capsys, tmp_path, manifest):
    path = tmp_path / "c.json"
    path.write_text("{not json")
    assert run(capsys, "sweep", "--config", str(path))[0] == 2
    path.write_text(json.dumps({"method": "laser_full", "evaluator": "gpu", "space": {"layers": [0]}}))
    assert run(capsys, "sweep", "--config", str(path))[0] == 2
    assert run(capsys, "sweep", "--config", replay_config(tmp_path, manifest, method="nope"))[0] == 2


@pytest.mark.slow
def test_sweep_toy(capsys, tmp_path):
    cfg = {
        "method": "cl_100g_100e",
        "space": {"layers": [0, 1, 2], "cluster_levels": [1, 2, 4]},
        "evaluator": "toy",
        "q": 2,
        "toy": {"seed": 0},
    }
    path = tmp_path / "toy.json"
    path.write_text(json.dumps(cfg))
    code, report, _ = run(capsys, "sweep", "--config", str(path))
    p = report["payload"]
    assert code == 0
    assert p["ranked_matrices"][0][0] == p["planted_id"]


@pytest.mark.slow
def test_demo_default_seed(capsys):
    code, report, _ = run(capsys, "demo")
    p = report["payload"]
    assert code == 0
    assert p["adapted_test_accuracy"] > p["baseline_test_accuracy"]
    assert p["planted_ranked_first"]


@pytest.mark.slow
def test_demo_without_noise(capsys):
    code, report, _ = run(capsys, "demo", "--scale", "0")
    assert code == 0
    assert report["payload"]["adapted_test_accuracy"] >= report["payload"]["baseline_test_accuracy"]


def test_reports_are_deterministic(capsys, manifest, monkeypatch):
    monkeypatch.setenv("NO_COLOR", "1")
    first = run(capsys, "score", "--manifest", str(manifest))
    second = run(capsys, "score", "--manifest", str(manifest))
    assert first == second
    assert "\033[" not in first[2]


def test_digest_tracks_inputs(capsys, manifest):
    a = run(capsys, "score", "--manifest", str(manifest))[1]["inputs_digest"]
    b = run(capsys, "score", "--manifest", str(manifest), "--top", "2")[1]["inputs_digest"]
    (manifest.parent / "L0.mlp_in.grad.matx").write_bytes(
        write_matrix(MatrixRecord("g", 0, "mlp_in", "gradient", np.ones((12, 6))))
    )
    c = run(capsys, "score", "--manifest", str(manifest))[1]["inputs_digest"]
    assert len({a, b, c}) == 3
