"""Command-line pipelines.

Every command writes fixed-name outputs into ``--out-dir`` together with a
``<command>.manifest.json`` that records the resolved configuration and the
input digests. ``replay`` re-executes a manifest and checks that the outputs
are byte-identical.

Exit codes: 0 success, 1 replay mismatch, 2 usage, 3 I/O, 4 validation,
5 non-convergence.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .contagion import DefaultOne, ProportionalAll, RunConfig, aggregate_loss_H, apply_shock, default_cascades, run
from .ensemble import AggregateScenario, RelevanceScenario, observed_vs_expected
from .equity import RegressionFit
from .io import IngestError, ingest, read_manifest, read_rows, sha256, write_edges, write_manifest, write_rows
from .network import NetworkError
from .sdecm import Sampler, SdecmError, SdecmParams, fit_network
from .synth import SyntheticSpec, synth
from .valuation import ValuationSpec

log = logging.getLogger("interbank_stress")

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE, EXIT_IO, EXIT_INVALID, EXIT_NONCONVERGED = 0, 1, 2, 3, 4, 5
OUTPUT_ENV = "INTERBANK_STRESS_OUTPUT_DIR"
THREADS_ENV = "INTERBANK_STRESS_THREADS"
PATH_KEYS = ("edges", "banks", "regression", "params", "stats", "deciles")
# required keys may come from the command line or from --config
REQUIRED = {
    "fit-null": ("edges",),
    "sample": ("params",),
    "stress": ("edges",),
    "relevance": ("edges",),
    "ensemble": ("edges",),
    "report": ("stats",),
}


def _floats(text) -> list[float]:
    if isinstance(text, (int, float)):
        return [float(text)]
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    return [float(x) for x in str(text).split(",") if x.strip()]


def _ints(text) -> list[int]:
    return [int(x) for x in _floats(text)]


def _valuations(cfg: dict) -> list[ValuationSpec]:
    kind = cfg["valuation"]
    if kind == "furfine":
        return [ValuationSpec.furfine(r) for r in _floats(cfg["recovery"])]
    if kind == "nldr":
        return [ValuationSpec(kind="nldr", alpha=a, verbatim_exponent=cfg.get("verbatim_exponent", False)) for a in _floats(cfg["alpha"])]
    return [ValuationSpec.linear()]


def _run_config(cfg: dict) -> RunConfig:
    return RunConfig(tolerance=float(cfg["tolerance"]), max_rounds=int(cfg["max_rounds"]), record_steps=_ints(cfg["record_steps"]))


def _load(cfg: dict):
    reg = cfg.get("regression")
    if reg is None and cfg.get("slope") is not None:
        reg = RegressionFit(float(cfg["intercept"]), float(cfg["slope"]))
    return ingest(cfg["edges"], cfg.get("banks"), reg)


# Commands. Each takes the resolved config and the output directory and
# returns (input paths, output paths, nonconverged run count).


def cmd_synth(cfg, out):
    spec = SyntheticSpec(
        n=int(cfg["n"]),
        strength_median=float(cfg["strength_median"]),
        strength_sigma=float(cfg["strength_sigma"]),
        coupling=float(cfg["coupling"]),
        density=float(cfg["density"]),
        equity_slope=float(cfg["equity_slope"]),
        equity_ratio=float(cfg["equity_ratio"]),
        seed=int(cfg["seed"]),
    )
    edges, banks = synth(spec, out)
    return [], [edges, banks], 0


def cmd_fit_null(cfg, out):
    snap = _load(cfg)
    params = fit_network(snap.net)
    path = out / "params.json"
    path.write_text(params.to_json() + "\n", encoding="utf-8")
    return [cfg["edges"], cfg.get("banks"), cfg.get("regression")], [path], 0


def cmd_sample(cfg, out):
    params = SdecmParams.from_json(Path(cfg["params"]).read_text(encoding="utf-8"))
    sampler = Sampler(params)
    width = max(5, len(str(int(cfg["count"]) - 1)))
    outputs = []
    for m in range(int(cfg["count"])):
        path = out / f"sample_{m:0{width}d}.csv"
        write_edges(sampler.network(int(cfg["seed"]), m), path)
        outputs.append(path)
    return [cfg["params"]], outputs, 0


def _scenario_shocks(cfg, net):
    if cfg.get("default"):
        names = net.banks if cfg["default"] == "all" else [b.strip() for b in str(cfg["default"]).split(",")]
        return [DefaultOne(b) for b in names]
    return [ProportionalAll(lam) for lam in _floats(cfg["lam"])]


def cmd_stress(cfg, out):
    snap = _load(cfg)
    rc = _run_config(cfg)
    shocks = _scenario_shocks(cfg, snap.net)
    h_rows, eq_rows, stuck = [], [], 0
    for val in _valuations(cfg):
        for shock in shocks:
            try:
                state = apply_shock(snap.sheets, shock)
            except KeyError as err:
                raise IngestError(str(err)) from None
            traj = run(snap.net, state, val, rc)
            stuck += not traj.converged
            rounds = range(traj.rounds + 1) if cfg["all_rounds"] else rc.record_steps
            for r in rounds:
                h_rows.append((val.label, shock.label, r, aggregate_loss_H(traj, round=r), traj.rounds, traj.converged))
            h_rows.append((val.label, shock.label, "final", aggregate_loss_H(traj), traj.rounds, traj.converged))
            for b, e0, e1, et in zip(snap.net.banks, traj.equity0, traj.equity1, traj.terminal):
                eq_rows.append((val.label, shock.label, b, e0, e1, et))
    h_path, e_path = out / "h_trajectory.csv", out / "terminal_equity.csv"
    write_rows(h_path, ("valuation", "scenario", "round", "H", "rounds", "converged"), h_rows)
    write_rows(e_path, ("valuation", "scenario", "bank", "equity0", "equity1", "terminal"), eq_rows)
    return [cfg["edges"], cfg.get("banks"), cfg.get("regression")], [h_path, e_path], stuck


def cmd_relevance(cfg, out):
    snap = _load(cfg)
    rc = _run_config(cfg)
    rows, stuck = [], 0
    for val in _valuations(cfg):
        casc = default_cascades(snap.net, snap.sheets, val, rc)
        stuck += int((~casc.converged).sum())
        for b, e, i, v in zip(snap.net.banks, snap.equity, casc.impact(), casc.vulnerability()):
            rows.append((val.label, b, e, i, v))
    path = out / "relevance.csv"
    write_rows(path, ("valuation", "bank", "equity", "impact", "vulnerability"), rows)
    return [cfg["edges"], cfg.get("banks"), cfg.get("regression")], [path], stuck


def cmd_ensemble(cfg, out):
    snap = _load(cfg)
    rc = _run_config(cfg)
    if cfg.get("params"):
        params = SdecmParams.from_json(Path(cfg["params"]).read_text(encoding="utf-8"))
    else:
        params = fit_network(snap.net)
    if cfg["scenario"] == "default":
        scenario = RelevanceScenario()
    else:
        scenario = AggregateScenario(tuple(_floats(cfg["lam"])), rc.record_steps)
    workers = cfg.get("workers") or int(os.environ.get(THREADS_ENV, "1"))
    rep = observed_vs_expected(
        snap.net, snap.equity, params, scenario, _valuations(cfg), rc,
        size=int(cfg["samples"]), seed=int(cfg["seed"]), workers=int(workers),
    )
    m, seed = int(cfg["samples"]), int(cfg["seed"])
    stats_path = out / "stats.csv"
    write_rows(
        stats_path,
        ("metric", "valuation", "scenario", "bank_or_aggregate", "round", "observed", "mean", "std", "z", "rel_dev", "M", "seed"),
        (
            (s.key.metric, s.key.valuation, s.key.scenario, s.key.bank, s.key.round,
             s.observed, s.mean, s.std, s.z, s.rel_dev, m, seed)
            for s in rep.stats
        ),
    )
    outputs = [stats_path]
    if rep.deciles:
        dec_path = out / "deciles.csv"
        rows = []
        for (metric, val), prof in rep.deciles.items():
            for g, members in enumerate(prof.groups):
                rows.append((metric, val, g + 1, len(members), prof.equity_min[g], prof.equity_max[g],
                             prof.means["observed"][g], prof.means["expected"][g]))
        write_rows(dec_path, ("metric", "valuation", "decile", "n_banks", "equity_min", "equity_max", "observed", "expected"), rows)
        outputs.append(dec_path)
    stuck = rep.observed_nonconverged + int(rep.samples.nonconverged.sum())
    return [cfg["edges"], cfg.get("banks"), cfg.get("regression"), cfg.get("params")], outputs, stuck


def _num(x):
    return float(x) if x not in ("", None) else None


def cmd_report(cfg, out):
    rows = read_rows(cfg["stats"])
    agg, per_bank = [], []
    for r in rows:
        obs, mean, std = _num(r["observed"]), _num(r["mean"]), _num(r["std"])
        if r["bank_or_aggregate"] == "aggregate":
            lo = mean - std if std is not None and np.isfinite(std) else None
            hi = mean + std if std is not None and np.isfinite(std) else None
            agg.append((r["metric"], r["valuation"], r["scenario"], r["round"], obs, mean, lo, hi, _num(r["z"]), _num(r["rel_dev"])))
        else:
            per_bank.append((r["metric"], r["valuation"], r["bank_or_aggregate"], obs, mean, std, _num(r["z"])))
    outputs = []
    if agg:
        p = out / "aggregate_table.csv"
        write_rows(p, ("metric", "valuation", "scenario", "round", "observed", "expected", "lower", "upper", "z", "rel_dev"), agg)
        outputs.append(p)
    if per_bank:
        p = out / "relevance_table.csv"
        write_rows(p, ("metric", "valuation", "bank", "observed", "expected", "std", "z"), per_bank)
        outputs.append(p)
        groups = sorted({(m, v) for m, v, *_ in per_bank})
        summary = []
        for metric, val in groups:
            dev = [abs(o - e) for m, v, _, o, e, *_ in per_bank if (m, v) == (metric, val)]
            summary.append((metric, val, "bank", float(np.mean(dev))))
        if cfg.get("deciles"):
            for metric, val in groups:
                dev = [abs(float(d["observed"]) - float(d["expected"])) for d in read_rows(cfg["deciles"])
                       if d["metric"] == metric and d["valuation"] == val]
                if dev:
                    summary.append((metric, val, "decile", float(np.mean(dev))))
        p = out / "deviation_summary.csv"
        write_rows(p, ("metric", "valuation", "level", "mean_abs_deviation"), summary)
        outputs.append(p)
    return [cfg["stats"], cfg.get("deciles")], outputs, 0


COMMANDS = {
    "synth": cmd_synth,
    "fit-null": cmd_fit_null,
    "sample": cmd_sample,
    "stress": cmd_stress,
    "relevance": cmd_relevance,
    "ensemble": cmd_ensemble,
    "report": cmd_report,
}


def _add_input(p, regression=True):
    p.add_argument("--edges", help="edge list CSV (lender,borrower,amount)")
    p.add_argument("--banks", help="balance sheet CSV (bank,equity)")
    if regression:
        p.add_argument("--regression", help="regression config (.json intercept/slope or position,equity CSV)")
        p.add_argument("--intercept", type=float, default=0.0, help="log-equity intercept used with --slope")
        p.add_argument("--slope", type=float, help="log-equity slope, e.g. 0.83")


def _add_dynamics(p):
    p.add_argument("--valuation", choices=("furfine", "dr", "nldr"), default="dr")
    p.add_argument("--recovery", default="0.4", help="Furfine recovery rate(s), comma separated")
    p.add_argument("--alpha", default="2.0", help="non-linear DebtRank alpha(s), comma separated")
    p.add_argument("--verbatim-exponent", action="store_true", help="use exp(-alpha (v - 1)) in nldr")
    p.add_argument("--tolerance", type=float, default=1e-10)
    p.add_argument("--max-rounds", type=int, default=5000)
    p.add_argument("--record-steps", default="3,5,10")


def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    parser = argparse.ArgumentParser(prog="interbank-stress", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, help):
        p = sub.add_parser(name, help=help)
        p.add_argument("--config", help="JSON file whose keys mirror the flags")
        p.add_argument("--out-dir", default=None, help=f"output directory (default ${OUTPUT_ENV} or .)")
        subs[name] = p
        return p

    p = add("synth", "write a synthetic snapshot")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--strength-median", type=float, default=100.0)
    p.add_argument("--strength-sigma", type=float, default=1.0)
    p.add_argument("--coupling", type=float, default=1.0)
    p.add_argument("--density", type=float, default=0.05)
    p.add_argument("--equity-slope", type=float, default=0.83)
    p.add_argument("--equity-ratio", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0)

    p = add("fit-null", "fit the null model to a snapshot")
    _add_input(p)

    p = add("sample", "draw networks from fitted null-model parameters")
    p.add_argument("--params")
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)

    p = add("stress", "H trajectories for proportional shocks or single defaults")
    _add_input(p)
    _add_dynamics(p)
    p.add_argument("--lam", default="0.005,0.01,0.05", help="shock sizes, comma separated")
    p.add_argument("--default", help="comma separated banks to default one at a time, or 'all'")
    p.add_argument("--all-rounds", action="store_true", help="emit H after every round")

    p = add("relevance", "impact and vulnerability of every bank")
    _add_input(p)
    _add_dynamics(p)

    p = add("ensemble", "observed versus expected systemic risk")
    _add_input(p)
    _add_dynamics(p)
    p.add_argument("--params", help="fitted parameters; fitted on the fly if omitted")
    p.add_argument("--scenario", choices=("shock", "default"), default="shock")
    p.add_argument("--lam", default="0.005,0.01,0.05")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None, help=f"worker processes (default ${THREADS_ENV} or 1)")

    p = add("report", "plot-ready tables from ensemble outputs")
    p.add_argument("--stats")
    p.add_argument("--deciles")

    p = sub.add_parser("replay", help="re-run a manifest and compare outputs")
    p.add_argument("manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--workers", type=int, default=None)
    subs["replay"] = p
    return parser, subs


def _resolve(cfg: dict) -> dict:
    for k in PATH_KEYS:
        if cfg.get(k):
            cfg[k] = str(Path(cfg[k]).resolve())
    return cfg


def execute(command: str, cfg: dict, out_dir) -> tuple[dict, int]:
    """Run ``command`` with a resolved config; returns the manifest and exit code."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    inputs, outputs, stuck = COMMANDS[command](cfg, out)
    manifest = write_manifest(out / f"{command}.manifest.json", command, cfg, inputs, outputs)
    if stuck:
        log.warning("%d runs did not converge within max_rounds", stuck)
        return manifest, EXIT_NONCONVERGED
    return manifest, EXIT_OK


def replay(manifest_path, out_dir, workers=None) -> int:
    doc = read_manifest(manifest_path)
    cfg = dict(doc["config"])
    if workers is not None:
        cfg["workers"] = workers
    for path, digest in doc["inputs"].items():
        if sha256(path) != digest:
            log.error("input %s changed since the manifest was written", path)
            return EXIT_MISMATCH
    new, code = execute(doc["command"], cfg, out_dir)
    if new["outputs"] != doc["outputs"]:
        log.error("outputs differ from the manifest")
        return EXIT_MISMATCH
    return code


def main(argv=None) -> int:
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "replay":
            return replay(args.manifest, args.out_dir, args.workers)
        if args.config:
            cfg_doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
            subs[args.command].set_defaults(**{k.replace("-", "_"): v for k, v in cfg_doc.items()})
            args = parser.parse_args(argv)
        cfg = {k: v for k, v in vars(args).items() if k not in ("config", "out_dir", "verbose", "command")}
        missing = [k for k in REQUIRED.get(args.command, ()) if not cfg.get(k)]
        if missing:
            subs[args.command].error("missing required option(s): " + ", ".join("--" + k for k in missing))
        if "workers" in cfg and cfg["workers"] is None:
            cfg["workers"] = int(os.environ.get(THREADS_ENV, "1"))
        out_dir = args.out_dir or os.environ.get(OUTPUT_ENV, ".")
        _, code = execute(args.command, _resolve(cfg), out_dir)
        return code
    except (OSError, json.JSONDecodeError) as err:
        log.error("%s", err)
        return EXIT_IO
    except (IngestError, NetworkError, SdecmError, ValueError) as err:
        log.error("%s", err)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
