"""Command-line interface.

Exit codes: 0 on success, 1 when a protection guarantee is violated, 2 on
bad input. All outputs are deterministic for a fixed ``--seed``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import accountant as acct
from . import attack
from . import lp as lpmod
from . import pipeline, trainer
from .divergence import bern_kl, budget_from_targets, invert_posterior
from .domain import DatasetError, RunConfig, load_config, load_dataset, write_dataset

EXIT_OK, EXIT_VIOLATION, EXIT_INPUT = 0, 1, 2
SWEEP_HEADER = ["c", "fraction_retained", "sigma", "noiseless_loss", "noisy_loss"]
DEFAULT_C_VALUES = [2.0**k for k in range(-6, 5)]

logger = logging.getLogger("secretprot")


class InputError(Exception):
    pass


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _emit(text: str, out):
    if out is None or str(out) == "-":
        sys.stdout.write(text)
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)


def _out_dir(out) -> Path:
    if out is None:
        raise InputError("--out directory is required")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _floats(text: str) -> list:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise InputError(f"expected a comma-separated list of numbers, got {text!r}") from exc


def _load_inputs(args):
    if not args.dataset or not args.secrets:
        raise InputError("--dataset and --secrets are required")
    smap = load_dataset(args.dataset, args.secrets)
    config = _config(args)
    return smap, config


def _config(args) -> RunConfig:
    if not args.config:
        raise InputError("--config is required")
    config = load_config(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config


def _read_json(path, what):
    if not path:
        raise InputError(f"--{what} is required")
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"cannot parse {what} file {path}: {exc}") from exc


def cmd_synth(args) -> int:
    smap = trainer.make_synthetic(args.n, args.m, args.skew, args.dim, args.seed or 0,
                                  overlap=args.overlap)
    out = _out_dir(args.out)
    write_dataset(smap, out / "examples.jsonl", out / "secrets.json")
    print(f"wrote {smap.n} examples and {smap.m} secrets to {out}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    smap, config = _load_inputs(args)
    plan, report = pipeline.calibrate(smap, config)
    out = _out_dir(args.out)
    (out / "plan.json").write_text(_dumps(plan.to_dict()))
    (out / "report.json").write_text(_dumps(report.to_dict()))
    print(f"sigma={plan.sigma:.6g} fraction_retained={report.fraction_retained:.6g}")
    return _report_violations(report)


def cmd_solve_lp(args) -> int:
    smap, config = _load_inputs(args)
    if args.c is not None:
        config = config.replace(lp_constant=args.c)
    smap = pipeline.working_map(smap, config)
    budgets = {s.id: budget_from_targets(s) for s in smap.secrets}
    lp = lpmod.build_lp(smap, budgets, config.lp_constant, config.cap_scale)
    sol = lpmod.solve(lp)
    _emit(_dumps({
        "example_ids": [ex.id for ex in smap.examples],
        "weights": sol.w.tolist(),
        "objective": sol.objective,
        "fraction_retained": sol.objective / smap.n if smap.n else 0.0,
        "max_violation": lpmod.max_violation(lp, sol.w),
        "iterations": sol.iterations,
    }), args.out)
    return EXIT_OK


def cmd_account(args) -> int:
    group = _floats(args.group)
    if not group:
        raise InputError("--group needs at least one probability")
    mech = acct.RoundMechanism(acct.poisson_binomial(group), args.sigma)
    one = acct.round_kl(mech)
    lower, upper = acct.kl_bounds(mech.shift_pmf, args.sigma)
    result = {
        "group": group,
        "sigma": args.sigma,
        "rounds": args.rounds,
        "round_kl": one,
        "composed_kl": args.rounds * one,
        "round_kl_bounds": [lower, upper],
    }
    if args.p is not None:
        result["posterior"] = invert_posterior(args.p, args.rounds * one)
    if args.pld_step is not None:
        diag = acct.pld_blowup_diagnostic(mech, args.pld_step)
        result["pld"] = {
            "grid_step": diag.grid_step,
            "total_blowup_mass": diag.total_blowup_mass,
            "inverse_mass": diag.inverse_mass,
            "support_size": int(diag.loss_values.size),
        }
    _emit(_dumps(result), args.out)
    return EXIT_OK


def _model_for(smap, kind):
    dim = smap.payload_matrix().shape[1] - 1
    if dim < 1:
        raise InputError("payloads need at least one feature and a target")
    return trainer.MODELS[kind](dim)


def cmd_train(args) -> int:
    smap, config = _load_inputs(args)
    plan = pipeline.SamplingPlan.from_dict(_read_json(args.plan, "plan"))
    smap = pipeline.working_map(smap, config)
    model = _model_for(smap, args.model)
    trace = trainer.train(smap, plan, model, config, config.seed, lr=args.lr)
    out = _out_dir(args.out)
    (out / "trace.json").write_text(_dumps(trace.to_dict()))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["round", "batch_size", "loss"])
    for t, (b, loss) in enumerate(zip(trace.batch_sizes, trace.losses), 1):
        writer.writerow([t, b, repr(loss)])
    (out / "losses.csv").write_text(buf.getvalue())
    print(f"eval_loss={trace.eval_loss:.6g}")
    return EXIT_OK


def cmd_attack(args) -> int:
    group = _floats(args.group)
    k = args.k if args.k is not None else math.ceil(1.0 / args.p)
    if 1.0 / k > args.p * (1 + 1e-12):
        raise InputError(f"a uniform prior over k={k} candidates exceeds p={args.p}")
    if args.sigma is not None:
        sigma = args.sigma
    elif args.r is not None:
        sigma = pipeline.calibrate_secret_sigma(group, args.rounds, bern_kl(args.r, args.p))
    else:
        raise InputError("give either --sigma or --r")
    game = attack.ReconstructionGame.uniform(k, group, sigma, args.rounds, args.trials)
    result = attack.simulate_game(game, args.seed or 0)
    data = result.to_dict()
    data.update({"sigma": sigma, "k": k, "p": args.p, "group": group, "rounds": args.rounds})
    _emit(_dumps(data), args.out)
    if result.empirical_success > result.certified_bound + 3 * result.stderr:
        print("empirical success exceeds the certified bound", file=sys.stderr)
        return EXIT_VIOLATION
    return EXIT_OK


def sweep_rows(smap, config, c_values, train_model=None, lr=0.05):
    """One row per c, in the order given."""
    rows = []
    for c in c_values:
        cfg = config.replace(lp_constant=c)
        plan, report = pipeline.calibrate(smap, cfg)
        row = {"c": c, "fraction_retained": report.fraction_retained, "sigma": plan.sigma,
               "noiseless_loss": None, "noisy_loss": None}
        if train_model is not None:
            work = pipeline.working_map(smap, cfg)
            quiet = dataclasses.replace(plan, sigma=0.0)
            for key, p in (("noiseless_loss", quiet), ("noisy_loss", plan)):
                model = _model_for(work, train_model)
                row[key] = trainer.train(work, p, model, cfg, cfg.seed, lr=lr,
                                         record_losses=False).eval_loss
        rows.append(row)
    return rows


def format_sweep(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for row in rows:
        writer.writerow(["" if row[h] is None else repr(float(row[h])) for h in SWEEP_HEADER])
    return buf.getvalue()


def cmd_sweep(args) -> int:
    smap, config = _load_inputs(args)
    c_values = _floats(args.c_values) if args.c_values else DEFAULT_C_VALUES
    rows = sweep_rows(smap, config, c_values, args.model if args.train else None, args.lr)
    _emit(format_sweep(rows), args.out)
    return EXIT_OK


def format_report(plan: dict, report: pipeline.CalibrationReport) -> str:
    lines = [f"global sigma: {report.sigma:.6g}   plan sigma: {plan.get('sigma', float('nan')):.6g}   "
             f"fraction retained: {report.fraction_retained:.6g}"]
    header = f"{'secret':<16}{'mu':>14}{'sigma_j':>14}{'achieved_r':>14}{'target_r':>14}{'slack':>14}"
    lines.append(header)
    for r in report.records:
        lines.append(f"{r.secret_id:<16}{r.mu:>14.6g}{r.sigma:>14.6g}{r.achieved_posterior:>14.6g}"
                     f"{r.target:>14.6g}{r.slack:>14.6g}")
    return "\n".join(lines) + "\n"


def _report_violations(report) -> int:
    bad = report.violations()
    for r in bad:
        print(f"VIOLATION {r.secret_id}: achieved {r.achieved_posterior!r} > target {r.target!r}",
              file=sys.stderr)
    return EXIT_VIOLATION if bad else EXIT_OK


def cmd_report(args) -> int:
    plan = _read_json(args.plan, "plan")
    try:
        report = pipeline.CalibrationReport.from_dict(_read_json(args.report, "report"))
    except (KeyError, TypeError) as exc:
        raise InputError(f"malformed report: {exc}") from exc
    sys.stdout.write(format_report(plan, report))
    if args.out:
        _emit(_dumps(report.to_dict()), args.out)
    return _report_violations(report)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="secretprot", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--dataset", help="JSON-lines example manifest")
        p.add_argument("--secrets", help="JSON array of secret targets")
        p.add_argument("--config", help="JSON run config")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.set_defaults(func=func)
        return p

    p = command("synth", cmd_synth, "generate a synthetic skewed dataset")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--m", type=int, default=60)
    p.add_argument("--skew", type=float, default=1.5)
    p.add_argument("--dim", type=int, default=10)
    p.add_argument("--overlap", type=float, default=0.1)

    command("calibrate", cmd_calibrate, "write plan.json and report.json")

    p = command("solve-lp", cmd_solve_lp, "solve the example-weighting LP")
    p.add_argument("--c", type=float, default=None, help="override lp_constant")

    p = command("account", cmd_account, "KL of a group mechanism")
    p.add_argument("--group", required=True, help="comma-separated sampling probabilities")
    p.add_argument("--sigma", type=float, required=True)
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--p", type=float, default=None, help="prior, to report the posterior bound")
    p.add_argument("--pld-step", type=float, default=None)

    p = command("train", cmd_train, "run DP-SGD under a plan")
    p.add_argument("--plan", required=True)
    p.add_argument("--model", choices=sorted(trainer.MODELS), default="linear")
    p.add_argument("--lr", type=float, default=0.05)

    p = command("attack", cmd_attack, "simulate the reconstruction game")
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--r", type=float, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--group", default="1.0")
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--trials", type=int, default=100_000)

    p = command("sweep", cmd_sweep, "calibrate over a list of LP constants")
    p.add_argument("--c-values", default=None, help="comma-separated c values")
    p.add_argument("--train", action="store_true", help="also fill the loss columns")
    p.add_argument("--model", choices=sorted(trainer.MODELS), default="linear")
    p.add_argument("--lr", type=float, default=0.05)

    p = command("report", cmd_report, "print and check a calibration report")
    p.add_argument("--plan", required=True)
    p.add_argument("--report", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, DatasetError, pipeline.SamplingError, FileNotFoundError,
            IsADirectoryError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
