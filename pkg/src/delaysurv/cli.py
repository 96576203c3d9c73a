"""Command-line entry point ``delaysurv``.

Every subcommand takes ``--config <json>``, ``--seed``, ``--out <dir>`` and
``--jobs``. The seed is resolved as: ``--seed`` flag, then a ``seed`` key in
the config file, then the ``DELAYSURV_SEED`` environment variable, then 0.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .em import EmConfig, naive_init, run_em
from .exceptions import DelaySurvError
from .experiments import ExperimentConfig, run_risk, run_toy, validate, write_text
from .hazards import (
    ConstantHazard,
    LogLinearEffect,
    PiecewiseConstantHazard,
    ProportionalHazard,
    model_from_dict,
)
from .joint import ModelPair
from .numeric import RngStream
from .simulate import SimulationConfig, read_accident_csv, read_dataset_csv, simulate, write_dataset_csv
from .two_stage import estimate_gamma, fit_source

logger = logging.getLogger("delaysurv")

TOY_BASELINE = {"family": "piecewise_ph", "knots": [0.0, 0.5, 1.0], "rates": [0.1, 0.2, 0.3]}


def _load_config(path) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise DelaySurvError(f"{path}: config must be a JSON object")
    return data


def resolve_seed(flag, config: dict) -> int:
    if flag is not None:
        return int(flag)
    if "seed" in config:
        return int(config["seed"])
    env = os.environ.get("DELAYSURV_SEED")
    if env not in (None, ""):
        return int(env)
    return 0


def _em_config(cfg: dict, seed: int) -> EmConfig:
    em = cfg.get("em", {})
    return EmConfig(iterations=int(em.get("iterations", 30)), replicates=int(em.get("replicates", 10)),
                    seed=RngStream(seed), gtol=float(em.get("gtol", 1e-8)))


def _families(cfg: dict, d: int) -> ModelPair:
    fam = cfg.get("families")
    if fam is not None:
        return ModelPair.from_dict(fam)
    base = PiecewiseConstantHazard((0.0, 0.5, 1.0), (1.0, 1.0, 1.0))
    return ModelPair(ProportionalHazard(base, LogLinearEffect([0.0] * d)), ConstantHazard(1.0))


def _dump(path: Path, obj) -> None:
    write_text(path, json.dumps(obj, indent=2) + "\n")


# -- subcommands ------------------------------------------------------------------

def cmd_simulate(args, cfg: dict, seed: int, out: Path) -> None:
    """Config keys: n, accident, delay, censor (model JSON), tau, covariate_dim, with_truth."""
    d = int(cfg.get("covariate_dim", 1))
    default_acc = dict(TOY_BASELINE, effect={"type": "loglinear", "values": [1.0] * d})
    sim = SimulationConfig(
        n=int(cfg.get("n", 1000)),
        accident=model_from_dict(cfg.get("accident", default_acc)),
        delay=model_from_dict(cfg.get("delay", {"family": "constant", "rates": [5.0]})),
        censor=model_from_dict(cfg.get("censor", {"family": "constant", "rates": [1.0]})),
        tau=cfg.get("tau"),
        covariate_dim=d,
        seed=RngStream(seed),
    )
    ds, truth = simulate(sim, cfg.get("label", "simulated"))
    write_dataset_csv(ds, out / "dataset.csv")
    if cfg.get("with_truth", False):
        write_dataset_csv(ds, out / "dataset_truth.csv", truth=truth)
    _dump(out / "simulate.json", {"n": ds.n, "unreported": ds.m, "tau": ds.tau, "seed": seed})


def cmd_fit(args, cfg: dict, seed: int, out: Path) -> None:
    """Config keys: data (dataset CSV), families (model-pair JSON), method (em|naive), em."""
    data = args.data or cfg.get("data")
    if data is None:
        raise DelaySurvError("fit needs a dataset CSV (--data or config key 'data')")
    ds = read_dataset_csv(data, tau=cfg.get("tau"))
    families = _families(cfg, ds.dim)
    method = cfg.get("method", "em")
    if method == "naive":
        pair = naive_init(ds, families)
        _dump(out / "model.json", pair.to_dict())
        return
    result = run_em(ds, families, _em_config(cfg, seed))
    _dump(out / "model.json", result.fitted.to_dict())
    write_text(out / "result.json", result.to_json() + "\n")
    write_text(out / "trace.csv", result.trace_csv())


def cmd_two_stage(args, cfg: dict, seed: int, out: Path) -> None:
    """Config keys: source, target (dataset CSVs), tau, families, em, exact, diagnostics,
    or stage_one (model-pair JSON) to skip the source fit."""
    if "stage_one" in cfg:
        pair = ModelPair.from_dict(cfg["stage_one"])
        base = pair.accident.baseline if isinstance(pair.accident, ProportionalHazard) else pair.accident
        delay = pair.delay
    else:
        source = read_dataset_csv(args.source or cfg["source"])
        stage_one = fit_source(source, _families(cfg, source.dim), _em_config(cfg, seed))
        base, delay = stage_one.baseline, stage_one.delay
        _dump(out / "stage_one.json", stage_one.to_dict())
    tau = cfg.get("tau", 0.75)
    target = read_dataset_csv(args.target or cfg["target"], tau=tau)
    if target.dim:
        target = type(target)(target.x[:, :0], target.y, target.v, target.z, tau, target.label)
    est = estimate_gamma(target, base, delay, exact=bool(cfg.get("exact", False)),
                         diagnostics=bool(cfg.get("diagnostics", False)))
    summary = est.to_dict()
    summary["mode"] = "exact" if cfg.get("exact") or cfg.get("diagnostics") else "closed_form"
    summary["estimate"] = est.gamma_hat if cfg.get("exact") else est.gamma_check
    _dump(out / "gamma.json", summary)
    write_text(out / "gamma.csv", est.CSV_HEADER + "\n" + est.csv_row() + "\n")


def _experiment_config(args, cfg: dict, seed: int) -> ExperimentConfig:
    base = ExperimentConfig.from_dict({k: v for k, v in cfg.items() if k != "seed"})
    return base.replace(seed=seed, trials=getattr(args, "trials", None))


def cmd_toy_bench(args, cfg: dict, seed: int, out: Path) -> None:
    exp = _experiment_config(args, cfg, seed)
    summary = run_toy(exp, args.jobs)
    write_text(out / "toy_summary.csv", summary.to_csv())
    write_text(out / "toy_table.txt", summary.render())
    _dump(out / "toy_summary.json", {"config": exp.to_dict(), **summary.metadata()})
    sys.stdout.write(summary.render())


def cmd_risk_bench(args, cfg: dict, seed: int, out: Path) -> None:
    exp = _experiment_config(args, cfg, seed)
    records = read_accident_csv(args.data) if args.data else None
    name = args.dataset_name or (Path(args.data).stem if args.data else "synthetic")
    report = run_risk(exp, records, name, args.jobs)
    write_text(out / "risk.csv", report.to_csv())
    _dump(out / "risk.json", {"config": exp.to_dict(), **report.metadata()})
    sys.stdout.write(report.to_csv())


def cmd_validate(args, cfg: dict, seed: int, out: Path) -> None:
    verdict = validate(args.level, fault=args.fault, seed=seed, jobs=args.jobs)
    _dump(out / "validate.json", verdict)
    sys.stdout.write(json.dumps(verdict, indent=2) + "\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="delaysurv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (fallback: config, $DELAYSURV_SEED, 0)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.set_defaults(func=fn)
        return p

    add("simulate", cmd_simulate, "simulate a dataset")
    p = add("fit", cmd_fit, "fit accident and delay models by EM")
    p.add_argument("--data", help="dataset CSV (x_*,y,v,z,w)")
    p = add("two-stage", cmd_two_stage, "transfer estimation of the cohort effect")
    p.add_argument("--source", help="source dataset CSV")
    p.add_argument("--target", help="target dataset CSV")
    p = add("toy-bench", cmd_toy_bench, "toy parameter-recovery benchmark")
    p.add_argument("--trials", type=int)
    p = add("risk-bench", cmd_risk_bench, "insurance risk-metric benchmark")
    p.add_argument("--trials", type=int)
    p.add_argument("--data", help="accident CSV (x_1..x_d,time,event); synthetic if omitted")
    p.add_argument("--dataset-name")
    p = add("validate", cmd_validate, "run the self-validation suites")
    p.add_argument("--level", choices=("quick", "full"), default="quick")
    p.add_argument("--fault", choices=("s_circ",), help="inject a fault to self-test the suite")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _load_config(args.config)
        seed = resolve_seed(args.seed, cfg)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        args.func(args, cfg, seed, out)
    except (DelaySurvError, ValueError, KeyError, OSError) as exc:
        print(f"delaysurv {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
