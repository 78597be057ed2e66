"""Command-line entry point.

Every command prints one JSON report on stdout (``command``,
``inputs_digest``, ``payload``, ``tool_version``) and a short human summary on
stderr. Exit codes: 0 success, 2 input error, 3 I/O error, 4 capability
error, 5 property failure.
"""

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, cost_model
from .errors import CapabilityError, LaserError
from .linalg_core import split_rows, thin_svd
from .rank_reduction import CompressionPlan, apply_plan, em_assignment, rank_from_rho
from .search import (
    EvaluatorBinding,
    ReplayEvaluator,
    SearchConfig,
    SearchSpace,
    preset_space,
    run_search,
)
from .subspace_partition import k_subspaces_em
from .sv_gradient import DEFAULT_WINDOW, matrix_score, rank_matrices
from .tensor_store import KINDS, load_bundle, read_matrix, save_bundle
from .toy_network import planted_noise_scenario

EXIT_OK, EXIT_INPUT, EXIT_IO, EXIT_CAPABILITY, EXIT_PROPERTY = 0, 2, 3, 4, 5


class InputError(LaserError, ValueError):
    pass


class PropertyError(LaserError, AssertionError):
    pass


class _Digest:
    """Running sha256 over the flags and every input file read."""

    def __init__(self, args):
        flags = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
        self._h = hashlib.sha256(json.dumps(flags, sort_keys=True, default=str).encode())

    def add_file(self, path):
        try:
            data = Path(path).read_bytes()
        except OSError as exc:
            raise InputError(f"cannot read input {path}: {exc.strerror}") from exc
        self._h.update(data)
        return data

    def add_tree(self, manifest):
        """Hash a manifest and the record files it names (missing ones are
        reported later by the loader)."""
        manifest = Path(manifest)
        text = self.add_file(manifest)
        try:
            entries = json.loads(text).get("records", [])
        except (ValueError, AttributeError):
            return
        for entry in entries if isinstance(entries, list) else []:
            p = manifest.parent / str(entry.get("path", "")) if isinstance(entry, dict) else None
            if p is not None and p.is_file():
                self.add_file(p)

    def hexdigest(self):
        return self._h.hexdigest()


def _say(msg):
    if sys.stderr.isatty() and "NO_COLOR" not in os.environ:
        msg = f"\033[1m{msg}\033[0m"
    print(msg, file=sys.stderr)


def _plain(value):
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    return value


def _emit(command, digest, payload):
    report = {
        "command": command,
        "inputs_digest": digest.hexdigest(),
        "payload": _plain(payload),
        "tool_version": __version__,
    }
    try:
        text = json.dumps(report, indent=2, allow_nan=False)
    except ValueError as exc:
        raise PropertyError(f"report payload has a non-finite number: {exc}") from exc
    print(text)


def _kinds(text):
    kinds = tuple(k.strip() for k in text.split(",") if k.strip())
    bad = [k for k in kinds if k not in KINDS]
    if bad or not kinds:
        raise InputError(f"unknown kinds {bad}; expected a comma list from {list(KINDS)}")
    return kinds


def cmd_score(args, digest):
    digest.add_tree(args.manifest)
    bundle = load_bundle(args.manifest)
    ranked = rank_matrices(bundle, K=args.clusters, window=args.window, q=args.top, kinds=_kinds(args.kinds))
    rows = []
    for rank, (mid, score) in enumerate(ranked, 1):
        w = bundle.get(mid)
        report = matrix_score(w.data, bundle.gradient_for(w).data, args.clusters, args.window, matrix_id=mid)
        rows.append({"rank": rank, "layer": w.layer, "kind": w.kind, **report.as_dict(), "score": score})
    for r in rows:
        _say(f"{r['rank']:>3}  {r['matrix_id']:<24} {r['score']:.6g}")
    return {"clusters": args.clusters, "window": args.window, "rows": rows}


def _parse_target(text):
    layer, sep, kind = text.partition(":")
    if not sep or not layer.strip().isdigit() or kind not in KINDS:
        raise InputError(f"--target must look like LAYER:KIND with KIND in {list(KINDS)}, got {text!r}")
    return int(layer), kind


def cmd_compress(args, digest):
    digest.add_tree(args.manifest)
    bundle = load_bundle(args.manifest)
    layer, kind = _parse_target(args.target)
    rec = bundle.find(layer, kind)
    if rec is None:
        raise InputError(f"no weight record for layer {layer} {kind}")
    mode = {"block": "block", "em": "em_cluster"}[args.mode]
    plan = CompressionPlan(matrix_id=rec.id, rho=args.rho, K=args.clusters, mode=mode, layer=layer, kind=kind)
    if plan.K > rec.shape[0]:
        raise InputError(f"--clusters {plan.K} exceeds the {rec.shape[0]} rows of {rec.id}")
    payload = {"target": rec.id, "plan": plan.as_tuple(), "mode": args.mode, "shape": list(rec.shape)}
    cols = rec.shape[1]
    if mode == "block" or plan.is_baseline:
        sizes = [end - start for start, end in split_rows(rec.shape[0], plan.K)]
    else:
        assignment, subspaces, trace = em_assignment(rec.data, plan.K, plan.rho)
        sizes = assignment.sizes().tolist()
        payload.update(cost_trace_length=len(trace), cost_trace=trace, final_cost=trace[-1], cluster_sizes=sizes)
    if plan.is_baseline:
        payload["per_block_rank"] = [thin_svd(rec.data[s:e]).r for s, e in split_rows(rec.shape[0], plan.K)]
    else:
        payload["per_block_rank"] = [rank_from_rho(n, cols, plan.rho) if n else 0 for n in sizes]
    out = apply_plan(bundle, plan)
    new = out.get(rec.id).data
    payload["frobenius_before"] = float(np.linalg.norm(rec.data))
    payload["frobenius_after"] = float(np.linalg.norm(new))
    payload["frobenius_error"] = float(np.linalg.norm(rec.data - new))
    try:
        manifest = save_bundle(out, args.out)
    except OSError as exc:
        raise OSError(f"cannot write to {args.out}: {exc}") from exc
    payload["manifest"] = str(manifest)
    _say(f"{rec.id}: rho={plan.rho} K={plan.K} ranks={payload['per_block_rank']} -> {manifest}")
    return payload


def cmd_cluster(args, digest):
    buf = digest.add_file(args.matrix)
    rec = read_matrix(buf, id=Path(args.matrix).stem)
    assignment, _, trace = k_subspaces_em(rec.data, args.k, args.dim, max_iter=args.max_iter, tol=args.tol)
    sizes = assignment.sizes().tolist()
    _say(f"K={args.k} j={args.dim}: sizes={sizes} cost={trace[-1]:.6g} after {len(trace)} refits")
    return {
        "shape": list(rec.shape),
        "histogram": sizes,
        "assignment": assignment.assign.tolist(),
        "cost_trace": trace,
        "final_cost": trace[-1],
    }


def cmd_cost(args, digest):
    f = cost_model.formula(args.method, args.preset)
    payload = {"method": args.method, "preset": args.preset, "formula": str(f), "slope": f.slope, "intercept": f.intercept}
    if args.table:
        rows, mean = cost_model.speedup_table(args.method, args.preset)
        payload["rows"] = [
            {"dataset": name, "d": cost_model.DATASET_SIZES[name], "cost": f(cost_model.DATASET_SIZES[name]),
             "speedup": s, "speedup_rounded": round(s, 1)}
            for name, s in rows
        ]
        payload["mean_speedup"] = mean
        payload["mean_speedup_rounded"] = round(mean, 1)
        for r in payload["rows"]:
            _say(f"{r['dataset']:<30} {r['speedup']:8.2f}x")
        _say(f"{'mean':<30} {mean:8.2f}x")
    else:
        payload.update(d=args.d, cost=cost_model.cost(args.method, args.preset, args.d),
                       speedup=cost_model.speedup(args.method, args.preset, args.d))
        _say(f"{args.method}/{args.preset} d={args.d}: {payload['cost']:g} FPE, {payload['speedup']:.2f}x")
    return payload


def _space_from(cfg):
    try:
        s = cfg["space"]
        return SearchSpace(
            layers=tuple(s["layers"]),
            kinds=tuple(s.get("kinds", ("mlp_in", "mlp_out"))),
            rhos=tuple(s.get("rhos", cost_model.RHO_GRID)),
            cluster_levels=tuple(s.get("cluster_levels", (1,))),
            include_baseline=bool(s.get("include_baseline", True)),
            mode=s.get("mode", "block"),
        )
    except (KeyError, TypeError) as exc:
        raise InputError(f"config space is malformed: missing {exc}") from exc


def _load_sweep(args, digest):
    path = Path(args.config)
    text = digest.add_file(path).decode()
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict) or "method" not in cfg or "evaluator" not in cfg:
        raise InputError("config needs at least 'method' and 'evaluator'")
    method = cfg["method"]
    if "preset" in cfg:
        space, defaults = preset_space(cfg["preset"], method)
        q = defaults.q
    elif "space" in cfg:
        space, q = _space_from(cfg), 5
    else:
        raise InputError("config needs either 'preset' or 'space'")
    config = SearchConfig(
        method=method,
        q=int(cfg.get("q", q)),
        w=int(cfg.get("w", DEFAULT_WINDOW)),
        calib_n=int(cfg.get("calib_n", cost_model.CALIB_N)),
        seed=int(cfg.get("seed", 0)),
    )
    kind = cfg["evaluator"]
    if kind == "toy":
        params = dict(cfg.get("toy", {}))
        scenario = planted_noise_scenario(int(params.pop("seed", config.seed)), **params)
        bundle = scenario.bundle()
        binding = EvaluatorBinding(scenario.evaluator(), scenario.d)
        extra = {"planted_id": scenario.planted_id}
    elif kind == "replay":
        r = cfg.get("replay", {})
        try:
            manifest = path.parent / r["manifest"]
            table = {tuple(k): v for k, v in r["table"]}
            d = int(r["d"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"replay section is malformed: {exc}") from exc
        digest.add_tree(manifest)
        bundle = load_bundle(manifest)
        binding = EvaluatorBinding(ReplayEvaluator(table, r.get("default", 0.0)), d)
        extra = {}
    else:
        raise InputError(f"unknown evaluator {kind!r}; expected 'toy' or 'replay'")
    return bundle, space, config, binding, extra


def cmd_sweep(args, digest):
    bundle, space, config, binding, extra = _load_sweep(args, digest)
    outcome = run_search(bundle, space, config, binding)
    payload = {"method": config.method, "d": binding.d, **extra, **outcome.as_dict()}
    _say(
        f"best {payload['best_plan']} val={outcome.validation_accuracy:.4f} test={outcome.test_accuracy:.4f} "
        f"arms={outcome.candidates_evaluated} FPE={outcome.forward_pass_equivalents:g}"
    )
    return payload


def cmd_demo(args, digest):
    scenario = planted_noise_scenario(args.seed, members=args.members, scale=args.scale)
    bundle = scenario.bundle()
    binding = EvaluatorBinding(scenario.evaluator(), scenario.d)
    space = SearchSpace(
        layers=tuple(range(args.members)),
        kinds=("mlp_in", "mlp_out"),
        rhos=cost_model.RHO_GRID,
        cluster_levels=(1, 2, 4),
    )
    config = SearchConfig(method=args.method, q=args.q, seed=args.seed)
    outcome = run_search(bundle, space, config, binding)
    correct, total = binding.evaluator.evaluate(bundle, binding.test_ids())
    baseline = correct / total
    improved = outcome.test_accuracy > baseline
    payload = {
        "seed": args.seed,
        "scale": args.scale,
        "planted_id": scenario.planted_id,
        "planted_ranked_first": bool(outcome.ranked_matrices and outcome.ranked_matrices[0][0] == scenario.planted_id),
        "baseline_test_accuracy": baseline,
        "adapted_test_accuracy": outcome.test_accuracy,
        "improved": improved,
        **outcome.as_dict(),
    }
    _say(f"planted {scenario.planted_id}; ranked {[m for m, _ in outcome.ranked_matrices]}")
    _say(f"test accuracy {baseline:.4f} -> {outcome.test_accuracy:.4f} with {payload['best_plan']}")
    return payload


def _check_demo(payload):
    return payload["adapted_test_accuracy"] >= payload["baseline_test_accuracy"]


def build_parser():
    p = argparse.ArgumentParser(prog="cluster-laser", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("score", help="rank matrices by singular-value-gradient score")
    s.add_argument("--manifest", required=True)
    s.add_argument("--clusters", type=int, default=1)
    s.add_argument("--window", type=int, default=DEFAULT_WINDOW)
    s.add_argument("--top", type=int, default=5)
    s.add_argument("--kinds", default="mlp_in,mlp_out")
    s.set_defaults(func=cmd_score)

    s = sub.add_parser("compress", help="apply one compression plan and write a new bundle")
    s.add_argument("--manifest", required=True)
    s.add_argument("--target", required=True, help="LAYER:KIND, e.g. 11:mlp_in")
    s.add_argument("--rho", type=float, required=True)
    s.add_argument("--clusters", type=int, default=1)
    s.add_argument("--mode", choices=("block", "em"), default="block")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compress)

    s = sub.add_parser("cluster", help="K-subspaces EM on the rows of one matrix")
    s.add_argument("--matrix", required=True)
    s.add_argument("--k", type=int, required=True)
    s.add_argument("--dim", type=int, required=True)
    s.add_argument("--max-iter", type=int, default=50)
    s.add_argument("--tol", type=float, default=1e-9)
    s.set_defaults(func=cmd_cluster)

    s = sub.add_parser("cost", help="search cost and speedup in forward-pass-equivalents")
    s.add_argument("--method", required=True, choices=sorted(cost_model.METHODS))
    s.add_argument("--preset", required=True, choices=cost_model.PRESETS)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--d", type=int)
    g.add_argument("--table", action="store_true")
    s.set_defaults(func=cmd_cost)

    s = sub.add_parser("sweep", help="run a search described by a JSON config")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("demo", help="train, plant noise, search and report on the toy network")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--scale", type=float, default=1.0)
    s.add_argument("--members", type=int, default=3)
    s.add_argument("--method", default="cl_100g_100e", choices=sorted(cost_model.METHODS))
    s.add_argument("--q", type=int, default=2)
    s.set_defaults(func=cmd_demo)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_INPUT
    digest = _Digest(args)
    try:
        payload = args.func(args, digest)
        _emit(args.command, digest, payload)
    except CapabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except PropertyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROPERTY
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (LaserError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.command == "demo" and not _check_demo(payload):
        print("error: adapted test accuracy fell below the noisy baseline", file=sys.stderr)
        return EXIT_PROPERTY
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
