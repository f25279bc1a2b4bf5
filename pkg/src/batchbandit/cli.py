"""Command-line front end.

Subcommands wrap the library's campaign runners and write schema-stable CSV
files plus a JSON manifest that records everything needed to reproduce the
invocation (the manifest is the only place a timestamp appears, so repeated
runs produce byte-identical data files).

Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .allocation import DecisionRule, threshold_for_fpr
from .datasets import (
    builtin_dataset,
    dataset_names,
    dataset_to_dict,
    load_dataset,
)
from .engine import ExperimentConfig, SAMPLING_RULES, run_monte_carlo, substream_seed
from .environment import BatchSchedule, load_replay_log
from .errors import BanditError, InvalidConfigError, InvalidInputError
from .evaluation import (
    METRICS_HEADER,
    CampaignResult,
    bias_demo,
    calibrate_neutral_eta,
    convergence_study,
    experiment_config,
    run_campaign,
)
from .posterior import SCHEME_NB, SCHEME_WB

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_RUNTIME = 4

WORKERS_ENV_VAR = "BATCHBANDIT_WORKERS"

_DEFAULTS = {
    "dataset": "A",
    "dataset_file": None,
    "policies": ["WB-TTTS"],
    "hypothesis": None,
    "experiments": None,
    "eta": 1.0,
    "gamma": 0.01,
    "beta": 0.5,
    "rho": 0.10,
    "k_prime": 2,
    "delta": None,
    "runs": 1000,
    "seed": 0,
    "workers": None,
    "batches": 20,
    "batch_size": 500,
    "schedule": "fixed_size",
    "alpha_draws": 10_000,
    "variance_mode": "known",
    "weight_scheme": "phi_one",
    "noise_sd": 1.0,
}


def _default_workers() -> int:
    value = os.environ.get(WORKERS_ENV_VAR, "")
    try:
        return max(int(value), 1)
    except ValueError:
        return 1


def _progress(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise InvalidConfigError(f"{path}: config must be a JSON object")
    unknown = set(data) - set(_DEFAULTS)
    if unknown:
        raise InvalidConfigError(f"{path}: unknown config keys {sorted(unknown)}")
    return data


def _resolve(args: argparse.Namespace) -> dict:
    """defaults <- config file <- command-line flags (flags win)."""
    resolved = dict(_DEFAULTS)
    resolved.update(_load_config_file(getattr(args, "config", None)))
    for key in _DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    if isinstance(resolved["policies"], str):
        resolved["policies"] = [resolved["policies"]]
    for policy in resolved["policies"]:
        if policy not in SAMPLING_RULES:
            raise InvalidConfigError(
                f"unknown policy {policy!r}; known: {', '.join(SAMPLING_RULES)}"
            )
    if resolved["workers"] is None:
        resolved["workers"] = _default_workers()
    if resolved["delta"] is None:
        resolved["delta"] = threshold_for_fpr(resolved["rho"], resolved["k_prime"])
        resolved["delta_from_rho"] = True
    else:
        resolved["delta_from_rho"] = False
    return resolved


def _decision_rule(resolved: dict) -> DecisionRule:
    if resolved["delta_from_rho"]:
        return DecisionRule.from_fpr(resolved["rho"], resolved["k_prime"])
    return DecisionRule.from_threshold(resolved["delta"], resolved["k_prime"])


def _schedule(resolved: dict) -> BatchSchedule:
    return BatchSchedule(
        kind=resolved["schedule"],
        batch_size=int(resolved["batch_size"]),
        num_batches=int(resolved["batches"]),
    )


def _write_csv(path: str, header, rows) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(header))
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def _write_manifest(path: str | None, command: str, resolved: dict, outputs: dict) -> None:
    if not path:
        return
    payload = {k: v for k, v in sorted(resolved.items())}
    manifest = {
        "tool": "batchbandit",
        "version": __version__,
        "command": command,
        "config": payload,
        "config_sha256": hashlib.sha256(
            json.dumps(payload, sort_keys=True).encode()
        ).hexdigest(),
        "outputs": outputs,
        "timestamp_utc": datetime.now(timezone.utc).isoformat(),
    }
    Path(path).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def _campaign_kwargs(resolved: dict) -> dict:
    return {
        "schedule": _schedule(resolved),
        "decision": _decision_rule(resolved),
        "runs": int(resolved["runs"]),
        "master_seed": int(resolved["seed"]),
        "eta": float(resolved["eta"]),
        "gamma": float(resolved["gamma"]),
        "beta": float(resolved["beta"]),
        "noise_sd": float(resolved["noise_sd"]),
        "alpha_draws": int(resolved["alpha_draws"]),
        "variance_mode": resolved["variance_mode"],
        "weight_scheme": resolved["weight_scheme"],
        "workers": int(resolved["workers"]),
    }


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------

def cmd_simulate(args: argparse.Namespace) -> int:
    resolved = _resolve(args)
    if resolved["dataset_file"]:
        dataset = load_dataset(resolved["dataset_file"])
    else:
        dataset = builtin_dataset(resolved["dataset"])
    experiments = dataset.filtered(resolved["hypothesis"])
    if resolved["experiments"]:
        wanted = {int(i) for i in resolved["experiments"]}
        experiments = tuple(
            e for i, e in enumerate(dataset.experiments, start=1) if i in wanted
        )
        if resolved["hypothesis"]:
            experiments = tuple(e for e in experiments if e.hypothesis == resolved["hypothesis"])
    if not experiments:
        raise InvalidConfigError("no experiments selected")

    kwargs = _campaign_kwargs(resolved)
    rows: list[dict] = []
    trajectory_payload = []
    for policy in resolved["policies"]:
        _progress(f"simulate: policy {policy} on {dataset.name} "
                  f"({len(experiments)} experiments x {kwargs['runs']} runs)")
        result = run_campaign(experiments, policy, **kwargs)
        rows.extend(result.metric_rows(dataset.name))
        if args.keep_trajectories:
            for j, experiment in enumerate(experiments, start=1):
                config = experiment_config(
                    experiment, policy,
                    schedule=kwargs["schedule"], decision=kwargs["decision"],
                    eta=kwargs["eta"], gamma=kwargs["gamma"], beta=kwargs["beta"],
                    noise_sd=kwargs["noise_sd"], alpha_draws=kwargs["alpha_draws"],
                    variance_mode=kwargs["variance_mode"],
                    weight_scheme=kwargs["weight_scheme"],
                    master_seed=substream_seed(kwargs["master_seed"], j),
                )
                _, trajectories = run_monte_carlo(
                    config, kwargs["runs"], workers=kwargs["workers"],
                    keep_trajectories=True,
                )
                trajectory_payload.append({
                    "policy": policy,
                    "experiment": experiment.name,
                    "trajectories": [t.to_dict() for t in trajectories],
                })
    _write_csv(args.out, METRICS_HEADER, rows)
    outputs = {"metrics_csv": args.out}
    if args.keep_trajectories:
        Path(args.trajectories).write_text(
            json.dumps(trajectory_payload, indent=2) + "\n", encoding="utf-8"
        )
        outputs["trajectories_json"] = args.trajectories
    _write_manifest(args.manifest, "simulate", resolved, outputs)
    _progress(f"simulate: wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def cmd_replay(args: argparse.Namespace) -> int:
    resolved = _resolve(args)
    log = load_replay_log(args.log)
    batches = int(resolved["batches"])
    if args.batches is None and not _has_config_key(args, "batches"):
        batches = log.num_batches
    schedule = BatchSchedule(
        kind="fixed_size", batch_size=int(resolved["batch_size"]), num_batches=batches
    )
    decision = _decision_rule(resolved)
    rows: list[dict] = []
    for j, policy in enumerate(resolved["policies"], start=1):
        _progress(f"replay: policy {policy} over {batches} batches x {resolved['runs']} runs")
        config = ExperimentConfig(
            schedule=schedule,
            sampling_rule=policy,
            decision=decision,
            replay_log=log,
            gamma=float(resolved["gamma"]),
            eta=float(resolved["eta"]),
            beta=float(resolved["beta"]),
            weight_scheme=resolved["weight_scheme"],
            variance_mode=resolved["variance_mode"],
            alpha_draws=int(resolved["alpha_draws"]),
            master_seed=substream_seed(int(resolved["seed"]), j),
            experiment_id=f"replay:{Path(args.log).name}",
            hypothesis=args.hypothesis_tag or "",
            true_best=args.true_best,
        )
        records = run_monte_carlo(config, int(resolved["runs"]),
                                  workers=int(resolved["workers"]))
        result = CampaignResult(
            policy=policy, eta=float(resolved["eta"]), decision=decision,
            master_seed=int(resolved["seed"]), runs_per_experiment=int(resolved["runs"]),
            experiments=(), records=tuple(records),
        )
        rows.extend(_replay_rows(result, f"replay:{Path(args.log).name}"))
    _write_csv(args.out, METRICS_HEADER, rows)
    _write_manifest(args.manifest, "replay", resolved, {"metrics_csv": args.out})
    _progress(f"replay: wrote {args.out}")
    return EXIT_OK


def _replay_rows(result: CampaignResult, label: str) -> list[dict]:
    rows = result.metric_rows(label, per_experiment=False)
    if not any(r.hypothesis for r in result.records):
        claims = sum(
            1 for r in result.records
            if r.final_alpha is not None and max(r.final_alpha) > result.decision.delta
        )
        rows.append({
            "metric": "claim_rate", "policy": result.policy, "dataset": label,
            "eta": repr(result.eta), "value": repr(claims / len(result.records)),
            "ci_lo": "", "ci_hi": "", "runs": len(result.records),
            "seed": result.master_seed,
        })
    return rows


def _has_config_key(args: argparse.Namespace, key: str) -> bool:
    config = getattr(args, "config", None)
    if not config:
        return False
    try:
        return key in json.loads(Path(config).read_text(encoding="utf-8"))
    except Exception:
        return False


# ---------------------------------------------------------------------------
# calibrate-eta / bias-demo / convergence-study / export-dataset
# ---------------------------------------------------------------------------

def _parse_grid(text: str) -> list[float]:
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise InvalidConfigError(f"grid must be start:stop:step, got {text!r}")
        start, stop, step = (float(p) for p in parts)
        if step <= 0:
            raise InvalidConfigError("grid step must be > 0")
        out = []
        value = start
        while value <= stop + 1e-12:
            out.append(round(value, 10))
            value += step
        return out
    return [float(p) for p in text.split(",") if p.strip()]


def cmd_calibrate_eta(args: argparse.Namespace) -> int:
    grid = _parse_grid(args.grid) if args.grid else None
    workers = args.workers if args.workers is not None else _default_workers()
    _progress(f"calibrate-eta: K'={args.k_prime}, runs={args.runs}")
    result = calibrate_neutral_eta(
        args.k_prime,
        eta_grid=grid,
        runs=args.runs,
        samples_per_arm=args.samples_per_arm,
        batches=args.batches,
        alpha_draws=args.alpha_draws,
        master_seed=args.seed,
        workers=workers,
    )
    header = ("eta", "mean", "variance", "distance", "is_argmin", "k_prime", "runs", "seed")
    rows = [
        {
            "eta": repr(p.eta), "mean": repr(p.mean), "variance": repr(p.variance),
            "distance": repr(p.distance),
            "is_argmin": int(p.eta == result.eta_star),
            "k_prime": args.k_prime, "runs": args.runs, "seed": args.seed,
        }
        for p in result.curve
    ]
    _write_csv(args.out, header, rows)
    print(f"eta_star={result.eta_star}")
    _write_manifest(args.manifest, "calibrate-eta",
                    {"k_prime": args.k_prime, "runs": args.runs, "seed": args.seed,
                     "samples_per_arm": args.samples_per_arm, "batches": args.batches,
                     "alpha_draws": args.alpha_draws, "grid": [p.eta for p in result.curve],
                     "eta_star": result.eta_star},
                    {"curve_csv": args.out})
    return EXIT_OK


def cmd_bias_demo(args: argparse.Namespace) -> int:
    workers = args.workers if args.workers is not None else _default_workers()
    _progress(f"bias-demo: rule {args.rule}, runs={args.runs}")
    result = bias_demo(
        args.rule,
        runs=args.runs,
        batch_size=args.batch_size,
        alpha_draws=args.alpha_draws,
        master_seed=args.seed,
        workers=workers,
    )
    header = ("rule", "statistic", "bin_lo", "bin_hi", "count", "mean", "sd", "se", "runs")
    rows = []
    for scheme in (SCHEME_NB, SCHEME_WB):
        summary = result.summary(scheme)
        counts, edges = result.histogram(scheme, bins=args.bins)
        for i, count in enumerate(counts):
            rows.append({
                "rule": args.rule, "statistic": scheme,
                "bin_lo": repr(float(edges[i])), "bin_hi": repr(float(edges[i + 1])),
                "count": int(count),
                "mean": repr(summary["mean"]), "sd": repr(summary["sd"]),
                "se": repr(summary["se"]), "runs": summary["runs"],
            })
        print(f"{scheme}: mean={summary['mean']:+.5f} sd={summary['sd']:.4f} "
              f"ci99=[{summary['ci99_lo']:+.5f}, {summary['ci99_hi']:+.5f}]")
    _write_csv(args.out, header, rows)
    _write_manifest(args.manifest, "bias-demo",
                    {"rule": args.rule, "runs": args.runs, "batch_size": args.batch_size,
                     "alpha_draws": args.alpha_draws, "seed": args.seed, "bins": args.bins},
                    {"z_csv": args.out})
    return EXIT_OK


def cmd_convergence_study(args: argparse.Namespace) -> int:
    workers = args.workers if args.workers is not None else _default_workers()
    _progress(f"convergence-study: K={args.k}, K'={args.k_prime}, rule {args.rule}")
    result = convergence_study(
        args.k,
        args.k_prime,
        args.rule,
        args.eta,
        runs=args.runs,
        batches=args.batches,
        samples_per_arm_per_batch=args.samples_per_arm_per_batch,
        alpha_draws=args.alpha_draws,
        master_seed=args.seed,
        workers=workers,
    )
    header = ["run"] + [f"alpha_{i}" for i in range(1, args.k + 1)]
    rows = []
    for run, alpha in enumerate(result.alphas, start=1):
        row = {"run": run}
        row.update({f"alpha_{i + 1}": repr(float(a)) for i, a in enumerate(alpha)})
        rows.append(row)
    _write_csv(args.out, header, rows)
    target_mean, target_var = result.beta_target()
    print(f"marginal_mean={result.marginal_mean:.6f} (flat-Dirichlet target {target_mean:.6f})")
    print(f"marginal_variance={result.marginal_variance:.6f} (target {target_var:.6f})")
    print(f"exceedance={result.exceedance:.6f} at delta={result.delta:.6f}")
    _write_manifest(args.manifest, "convergence-study",
                    {"k": args.k, "k_prime": args.k_prime, "rule": args.rule,
                     "eta": args.eta, "runs": args.runs, "batches": args.batches,
                     "samples_per_arm_per_batch": args.samples_per_arm_per_batch,
                     "alpha_draws": args.alpha_draws, "seed": args.seed},
                    {"alpha_csv": args.out})
    return EXIT_OK


def cmd_export_dataset(args: argparse.Namespace) -> int:
    dataset = builtin_dataset(args.name)
    text = json.dumps(dataset_to_dict(dataset), indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
        _progress(f"export-dataset: wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser.
# ---------------------------------------------------------------------------

def _add_campaign_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--policy", dest="policies", action="append",
                   choices=SAMPLING_RULES, help="sampling rule (repeatable)")
    p.add_argument("--eta", type=float, help="posterior reshaping factor")
    p.add_argument("--gamma", type=float, help="minimum traffic share per arm")
    p.add_argument("--beta", type=float, help="top-two leader share")
    p.add_argument("--rho", type=float, help="target false-positive rate")
    p.add_argument("--k-prime", dest="k_prime", type=int,
                   help="assumed number of equivalent best arms")
    p.add_argument("--delta", type=float, help="decision threshold (overrides rho/k-prime)")
    p.add_argument("--runs", type=int, help="Monte-Carlo runs per experiment")
    p.add_argument("--seed", type=int, help="campaign master seed")
    p.add_argument("--workers", type=int,
                   help=f"process count (default ${WORKERS_ENV_VAR} or 1)")
    p.add_argument("--batches", type=int, help="batches per run")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="samples per batch")
    p.add_argument("--schedule", choices=("fixed_size", "poisson_duration"))
    p.add_argument("--alpha-draws", dest="alpha_draws", type=int,
                   help="Monte-Carlo draws per optimal-probability estimate")
    p.add_argument("--variance-mode", dest="variance_mode", choices=("known", "estimated"))
    p.add_argument("--weight-scheme", dest="weight_scheme", choices=("phi_one", "phi_sqrt_T"))
    p.add_argument("--noise-sd", dest="noise_sd", type=float, help="reward noise sd")
    p.add_argument("--manifest", help="write a reproducibility manifest JSON here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="batchbandit",
        description="Bayesian batch bandit simulation and evaluation",
    )
    parser.add_argument("--version", action="version", version=f"batchbandit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run policies over a synthetic dataset")
    _add_campaign_flags(p)
    p.add_argument("--dataset", help=f"built-in dataset name ({', '.join(dataset_names())})")
    p.add_argument("--dataset-file", dest="dataset_file", help="dataset JSON file")
    p.add_argument("--hypothesis", choices=("H0", "H1"), help="restrict to one hypothesis")
    p.add_argument("--experiments", type=int, nargs="+",
                   help="1-based experiment indices to include")
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.add_argument("--keep-trajectories", action="store_true",
                   help="also write full per-run trajectories")
    p.add_argument("--trajectories", default="trajectories.json",
                   help="trajectory JSON path (with --keep-trajectories)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("replay", help="replay a logged experiment")
    _add_campaign_flags(p)
    p.add_argument("--log", required=True, help="replay log CSV")
    p.add_argument("--hypothesis-tag", choices=("H0", "H1"),
                   help="ground-truth label for metric computation")
    p.add_argument("--true-best", dest="true_best", type=int,
                   help="1-based true best arm (H1 logs)")
    p.add_argument("--out", required=True, help="metrics CSV path")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("calibrate-eta", help="grid-search the neutral reshaping factor")
    p.add_argument("--k-prime", dest="k_prime", type=int, required=True)
    p.add_argument("--grid", help="start:stop:step or comma list (default 0.4:1.2:0.05)")
    p.add_argument("--runs", type=int, default=2000)
    p.add_argument("--samples-per-arm", dest="samples_per_arm", type=int, default=10_000)
    p.add_argument("--batches", type=int, default=20)
    p.add_argument("--alpha-draws", dest="alpha_draws", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True, help="curve CSV path")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_calibrate_eta)

    p = sub.add_parser("bias-demo", help="two-batch estimator bias study")
    p.add_argument("--rule", required=True,
                   choices=[r for r in SAMPLING_RULES if r != "uniform"])
    p.add_argument("--runs", type=int, default=100_000)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=1000)
    p.add_argument("--alpha-draws", dest="alpha_draws", type=int, default=2000)
    p.add_argument("--bins", type=int, default=80)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True, help="z histogram CSV path")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_bias_demo)

    p = sub.add_parser("convergence-study",
                       help="final optimal-probability distribution for equivalent bests")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--k-prime", dest="k_prime", type=int, required=True)
    p.add_argument("--rule", default="uniform", choices=SAMPLING_RULES)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--runs", type=int, default=2000)
    p.add_argument("--batches", type=int, default=20)
    p.add_argument("--samples-per-arm-per-batch", dest="samples_per_arm_per_batch",
                   type=int, default=500)
    p.add_argument("--alpha-draws", dest="alpha_draws", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", required=True, help="alpha CSV path")
    p.add_argument("--manifest")
    p.set_defaults(func=cmd_convergence_study)

    p = sub.add_parser("export-dataset", help="print a built-in dataset as JSON")
    p.add_argument("name", help=f"one of {', '.join(dataset_names())}")
    p.add_argument("--out", help="write to file instead of stdout")
    p.set_defaults(func=cmd_export_dataset)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InvalidConfigError, InvalidInputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except BanditError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
