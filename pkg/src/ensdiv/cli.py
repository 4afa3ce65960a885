"""Command-line interface: ``ensdiv {estimate,weights,experiment,oracle}``.

Data goes to stdout (or ``--out``); the resolved configuration and every
diagnostic go to stderr. Exit status is 0 only when nothing failed.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .distributions import STREAM_KERNEL, STREAM_ORACLE, STREAM_SPLIT, GaussianSpec, Seed, true_divergence
from .divergence import default_k, plugin_estimate, plugin_estimate_kernel, split_f2
from .ensemble import EnsembleSpec, default_l_bar, ensemble_estimate, solve_exact_weights, solve_relaxed_weights
from .exceptions import EnsdivError
from .functionals import parse_g
from .harness import ExperimentConfig, load_config, run_experiment, summary_csv, records_csv

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


def _threads(text: str) -> int:
    if text == "auto":
        return os.cpu_count() or 1
    n = int(text)
    if n < 1:
        raise argparse.ArgumentTypeError("--threads must be >= 1 or 'auto'")
    return n


def _u64(text: str) -> int:
    n = int(text)
    if not 0 <= n < 2**64:
        raise argparse.ArgumentTypeError("--seed must be a 64-bit unsigned integer")
    return n


def _floats(text: str) -> list:
    return [float(v) for v in text.split(",") if v.strip()]


def _shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML file with defaults for this command")
    p.add_argument("--seed", type=_u64, default=None, help="master seed (64-bit unsigned)")
    p.add_argument("--out", type=Path, default=None, help="output file or directory")
    p.add_argument("--threads", type=_threads, default="auto", help="worker threads, or 'auto'")


def _read_config(path):
    if path is None:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def _resolved(cfg: dict) -> None:
    print("resolved config: " + json.dumps(cfg, sort_keys=True, default=str), file=sys.stderr)


def _emit(args, text: str) -> None:
    if args.out is None:
        sys.stdout.write(text)
    else:
        args.out.write_text(text)


def _load_points(path: Path) -> np.ndarray:
    pts = np.loadtxt(path, delimiter=",", ndmin=2, comments="#")
    if pts.size == 0:
        raise ValueError(f"{path} holds no points")
    return pts


def _ensemble_spec(l_bar, L, l_min, l_max, d) -> EnsembleSpec:
    lb = l_bar if l_bar else default_l_bar(L, l_min, l_max)
    return EnsembleSpec(np.asarray(lb, dtype=float), d)


def cmd_estimate(args) -> int:
    file_cfg = _read_config(args.config)
    cfg = {
        "f1": str(args.f1),
        "f2": str(args.f2),
        "g": args.g or file_cfg.get("g", "renyi:0.8"),
        "estimator": args.estimator,
        "alpha_frac": args.alpha_frac if args.alpha_frac is not None else file_cfg.get("alpha_frac", 0.5),
        "k": args.k,
        "l_bar": args.l_bar,
        "L": args.L,
        "l_min": args.l_min,
        "l_max": args.l_max,
        "eta": None if args.eta in (None, "inf") and args.estimator != "ensemble-relaxed" else args.eta,
        "box": args.box,
        "seed": args.seed if args.seed is not None else int(file_cfg.get("seed", 0)),
    }
    if cfg["estimator"] == "ensemble-relaxed":
        cfg["eta"] = None if args.eta == "inf" else float(args.eta or 2.0)
    _resolved(cfg)
    y = _load_points(args.f1)
    x = _load_points(args.f2)
    if y.shape[1] != x.shape[1]:
        raise ValueError(f"f1 points have dimension {y.shape[1]} but f2 points have {x.shape[1]}")
    d = x.shape[1]
    g = parse_g(cfg["g"])
    seed = Seed(cfg["seed"])
    ev, ref = split_f2(x, cfg["alpha_frac"], seed.with_stream(STREAM_SPLIT))
    M1, M2 = y.shape[0], ref.n
    out = {"estimator": cfg["estimator"],
           "n_points": {"f1": M1, "f2": x.shape[0], "eval": ev.n, "ref": M2}}
    if cfg["estimator"] in ("knn", "kernel"):
        k = cfg["k"] or default_k(M2)
        if cfg["estimator"] == "knn":
            est = plugin_estimate(ev, ref, y, min(k, M1), k, g)
        else:
            box = None if cfg["box"] is None else (cfg["box"][0], cfg["box"][1])
            est = plugin_estimate_kernel(ev, ref, y, min(k, M1), k, g, box,
                                         seed=seed.with_stream(STREAM_KERNEL))
        out["k_or_weights"] = {"k1": min(k, M1), "k2": k}
    else:
        spec = _ensemble_spec(cfg["l_bar"], cfg["L"], cfg["l_min"], cfg["l_max"], d)
        if cfg["estimator"] == "ensemble-exact":
            wv = solve_exact_weights(spec)
        else:
            wv = solve_relaxed_weights(spec, x.shape[0], cfg["eta"])
        est = ensemble_estimate(ev, ref, y, spec, wv, g)
        out["k_or_weights"] = {"k": spec.k_map(M1, M2).tolist(), "weights": wv.weights.tolist()}
    out["functional"] = est.functional
    out["divergence"] = est.divergence
    _emit(args, json.dumps(out, sort_keys=True) + "\n")
    return 0


def cmd_weights(args) -> int:
    cfg = {"d": args.d, "mode": args.mode, "T": args.T, "l_bar": args.l_bar, "L": args.L,
           "l_min": args.l_min, "l_max": args.l_max,
           "eta": None if args.eta == "inf" else float(args.eta)}
    _resolved(cfg)
    spec = _ensemble_spec(args.l_bar, args.L, args.l_min, args.l_max, args.d)
    if args.mode == "exact":
        wv = solve_exact_weights(spec)
    else:
        if args.T is None:
            raise ValueError("--T is required for relaxed weights")
        wv = solve_relaxed_weights(spec, args.T, cfg["eta"])
    _emit(args, json.dumps({"d": args.d, **wv.to_dict()}, sort_keys=True) + "\n")
    return 0


def cmd_experiment(args) -> int:
    if args.config is None:
        raise ValueError("experiment needs --config")
    config = load_config(args.config)
    if args.seed is not None:
        config = ExperimentConfig(**{**config.__dict__, "seed": args.seed})
    _resolved(config.to_dict())
    result = run_experiment(config, threads=args.threads)
    outdir = args.out or Path(".")
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / "records.csv").write_text(records_csv(result.records))
    (outdir / "summary.csv").write_text(summary_csv(result.summary()))
    diag = result.diagnostics()
    (outdir / "weights.json").write_text(json.dumps(diag["weights"], indent=1, sort_keys=True) + "\n")
    (outdir / "diagnostics.json").write_text(json.dumps(diag, indent=1, sort_keys=True, default=str) + "\n")
    failed = sum(r.failed for r in result.records)
    if failed:
        print(f"{failed} of {len(result.records)} trial records failed; see records.csv", file=sys.stderr)
    for d, msg in result.truth_errors.items():
        print(f"oracle failed for d={d}: {msg}", file=sys.stderr)
    for (T, d, mode), msg in sorted(result.weight_errors.items()):
        print(f"{mode} weights failed for T={T}, d={d}: {msg}", file=sys.stderr)
    return 1 if failed or result.truth_errors or result.weight_errors else 0


def cmd_oracle(args) -> int:
    file_cfg = _read_config(args.config)
    f1_raw = json.loads(args.f1) if args.f1 else file_cfg.get("f1")
    f2_raw = json.loads(args.f2) if args.f2 else file_cfg.get("f2")
    if f1_raw is None or f2_raw is None:
        raise ValueError("oracle needs f1 and f2 specs (--f1/--f2 JSON or --config)")
    dims = [args.d] if args.d else list(file_cfg.get("d_grid", [])) or [None]
    budget = args.budget or int(file_cfg.get("oracle", {}).get("budget", 100_000))
    g_text = args.g or file_cfg.get("g", "renyi:0.8")
    seed = args.seed if args.seed is not None else int(file_cfg.get("seed", 0))
    cfg = {"f1": f1_raw, "f2": f2_raw, "d": dims, "g": g_text, "budget": budget, "seed": seed}
    _resolved(cfg)
    g = parse_g(g_text)
    rows = []
    for d in dims:
        f1 = GaussianSpec.from_dict(f1_raw, d)
        f2 = GaussianSpec.from_dict(f2_raw, d)
        res = true_divergence(f1, f2, g, budget, Seed(seed, STREAM_ORACLE, (f1.d,)))
        rows.append({"d": f1.d, "truth": res.value, "std_error": res.std_error,
                     "closed_form": res.closed_form, "n": res.n,
                     "divergence": g.post_transform(res.value) if res.value > 0 or g.kind != "renyi" else None})
    _emit(args, json.dumps(rows[0] if len(rows) == 1 else rows, sort_keys=True) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ensdiv", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"ensdiv {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def ens_opts(p):
        p.add_argument("--l-bar", type=_floats, default=None, help="comma-separated ensemble indices")
        p.add_argument("--L", type=int, default=30)
        p.add_argument("--l-min", type=float, default=1.0)
        p.add_argument("--l-max", type=float, default=3.0)

    p = sub.add_parser("estimate", help="estimate a divergence from two CSV samples")
    _shared(p)
    p.add_argument("--f1", type=Path, required=True, help="CSV of f1 points, one per row")
    p.add_argument("--f2", type=Path, required=True, help="CSV of f2 points, one per row")
    p.add_argument("--g", default=None, help="renyi:<alpha>, kl or custom:<name>")
    p.add_argument("--estimator", default="ensemble-relaxed",
                   choices=["knn", "kernel", "ensemble-exact", "ensemble-relaxed"])
    p.add_argument("--alpha-frac", type=float, default=None)
    p.add_argument("--k", type=int, default=None, help="neighbour count for knn/kernel")
    p.add_argument("--eta", default=None, help="norm bound for relaxed weights, or 'inf'")
    p.add_argument("--box", type=_floats, default=None, help="support box 'lo,hi' for the kernel")
    ens_opts(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("weights", help="solve for ensemble weights")
    _shared(p)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--mode", choices=["exact", "relaxed"], default="exact")
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--eta", default="2.0")
    ens_opts(p)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("experiment", help="run a Monte Carlo sweep from a TOML config")
    _shared(p)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("oracle", help="Monte Carlo ground truth for two Gaussian specs")
    _shared(p)
    p.add_argument("--f1", default=None, help="JSON Gaussian spec, e.g. '{\"mean\": 0.7, \"covariance\": 0.1}'")
    p.add_argument("--f2", default=None)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--g", default=None)
    p.add_argument("--budget", type=int, default=None)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if isinstance(args.threads, str):
        args.threads = _threads(args.threads)
    try:
        return args.func(args)
    except (EnsdivError, ValueError, OSError) as exc:
        print(f"ensdiv {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
