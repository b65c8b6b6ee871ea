"""spdc-herald command line.

    spdc-herald index    --config run.json
    spdc-herald rates    --config run.json [--xi-p 0.0243]
    spdc-herald sweep    --config run.json --out sweep.csv
    spdc-herald tradeoff --config run.json
    spdc-herald simulate --config run.json --seed 7 --out sim.csv
    spdc-herald invert   --config run.json --measurements sim.csv
    spdc-herald fit-deff --config run.json --measurements rates.csv

Exit codes: 0 ok (warnings allowed), 2 config/domain error, 3 I/O error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import (
    ConfigError,
    build_crystal,
    build_detection,
    build_focus,
    build_waves,
    load_config,
    require,
    resolve_delta_k,
    with_overrides,
    xi_a_grid,
)
from .coupling import FocusConfig, emission_rates, validity_check
from .detection import (
    MeasuredRatesDual,
    MeasuredRatesSingle,
    invert_dual,
    invert_single,
    outcome_probs_pair,
    outcome_probs_single,
)
from .dispersion import group_index, refractive_index
from .montecarlo import SimConfig, estimate_rates, eta_c_standard_error, simulate
from .sweep import (
    CSV_FIELDS,
    DegenerateFitError,
    OptimizationError,
    RateObservation,
    SweepContext,
    evaluate_point,
    find_peak,
    fit_deff,
    normalization_baseline,
    sweep_xi_a,
    tradeoff_curve,
)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4

SINGLE_FIELDS = ["label", "R_t", "R_c", "D", "D_c", "dt_s"]
DUAL_FIELDS = ["label", "R_a", "R_b", "R_c", "D_a", "D_b", "D_c", "dt_s"]


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(float(v))
    if isinstance(v, (list, tuple)):
        return "; ".join(str(x) for x in v)
    return str(v)


def render(rows: list[dict], fields: list[str], fmt: str) -> str:
    if fmt == "json":
        return json.dumps([{k: r.get(k) for k in fields} for r in rows], indent=2, allow_nan=True) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in rows:
        w.writerow([_cell(r.get(k)) for k in fields])
    return buf.getvalue()


def emit(text: str, cfg: dict) -> None:
    path = cfg.get("output", {}).get("path", "-")
    if path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def fmt_of(cfg: dict) -> str:
    return cfg.get("output", {}).get("format", "csv")


_NOTED: set[str] = set()


def note(msg: str) -> None:
    if msg not in _NOTED:
        _NOTED.add(msg)
        print(f"warning: {msg}", file=sys.stderr)


def context(cfg: dict, xi_b=None) -> SweepContext:
    crystal = build_crystal(cfg)
    waves = build_waves(cfg, crystal)
    return SweepContext(crystal, waves, resolve_delta_k(cfg, crystal, waves), xi_b)


def baseline_or_nan(ctx: SweepContext) -> float:
    # with d_eff = 0 every rate vanishes and normalization is undefined
    if ctx.crystal.d_eff == 0:
        return math.nan
    return normalization_baseline(ctx)


def resolve_focus(cfg: dict, ctx: SweepContext) -> FocusConfig:
    require(cfg, "focus")
    focus = build_focus(cfg, ctx.crystal, ctx.waves)
    if focus is not None:
        return focus
    f = cfg["focus"]
    objective = "pair-rate" if f["xi_a"] == "peak-pair-rate" else "eta-c"
    search = replace(ctx, xi_b=f.get("xi_b"))
    if objective == "pair-rate" and ctx.crystal.d_eff == 0:
        raise ConfigError("peak-pair-rate focus is undefined with d_eff = 0")
    peak = find_peak(f["xi_p"], objective, search)
    for w in peak.warnings:
        note(w)
    return search.focus(f["xi_p"], peak.xi_a)


def cmd_index(cfg: dict, args) -> int:
    ctx_crystal = build_crystal(cfg)
    waves = build_waves(cfg, ctx_crystal)
    roles = {"pump": (ctx_crystal.pump, waves.lam_p), "a": (ctx_crystal.a, waves.lam_a), "b": (ctx_crystal.b, waves.lam_b)}
    extra = cfg.get("index", {}).get("wavelengths")
    rows = []
    for role, (model, lam0) in roles.items():
        for lam in extra or [lam0]:
            rows.append({
                "role": role,
                "model": model.name or model.form,
                "axis": model.axis.value,
                "wavelength_m": float(lam),
                "n": refractive_index(model, lam),
                "n_group": group_index(model, lam),
            })
    emit(render(rows, ["role", "model", "axis", "wavelength_m", "n", "n_group"], fmt_of(cfg)), cfg)
    return EXIT_OK


def cmd_rates(cfg: dict, args) -> int:
    ctx = context(cfg)
    focus = resolve_focus(cfg, ctx)
    base = baseline_or_nan(ctx)
    ctx = replace(ctx, xi_b=focus.xi_b)
    rec = evaluate_point(ctx, focus.xi_p, focus.xi_a, base)
    for w in rec.warnings:
        note(w)
    row = vars(rec) | {"delta_k": ctx.dk}
    emit(render([row], CSV_FIELDS + ["delta_k"], fmt_of(cfg)), cfg)
    return EXIT_OK


def cmd_sweep(cfg: dict, args) -> int:
    require(cfg, "sweep")
    s = cfg["sweep"]
    ctx = context(cfg, s.get("xi_b"))
    base = baseline_or_nan(ctx)
    grid = xi_a_grid(cfg)
    rows = []
    for xi_p in s.get("xi_p", [2.84]):
        rows += [vars(r) for r in sweep_xi_a(xi_p, grid, ctx, base, cfg.get("workers", 1))]
    for r in rows:
        for w in r["warnings"]:
            note(w)
    emit(render(rows, CSV_FIELDS, fmt_of(cfg)), cfg)
    return EXIT_OK


def cmd_tradeoff(cfg: dict, args) -> int:
    require(cfg, "sweep")
    targets = cfg["sweep"].get("targets")
    if not targets:
        raise ConfigError("sweep.targets is required for tradeoff")
    ctx = context(cfg, cfg["sweep"].get("xi_b"))
    pts = tradeoff_curve(targets, ctx)
    fields = ["target", "reachable", "xi_p", "xi_a", "eta_c", "pair_rate", "norm_pair_rate"]
    for p in pts:
        if not p.reachable:
            note(f"eta_c target {p.target} unreachable on the search domain")
    emit(render([vars(p) for p in pts], fields, fmt_of(cfg)), cfg)
    return EXIT_OK


def read_table(path: str) -> list[dict]:
    text = Path(path).read_text()
    if path.endswith(".json"):
        data = json.loads(text)
        if not isinstance(data, list):
            raise ConfigError(f"{path}: expected a JSON list of records")
        return data
    return list(csv.DictReader(io.StringIO(text)))


def _num(row: dict, key: str, default=None):
    v = row.get(key, default)
    if v is None or v == "":
        if default is None and key != "D_c":
            raise ValueError(f"missing value for {key}")
        return default
    return float(v)


def parse_measurement(row: dict, dual: bool) -> MeasuredRatesSingle | MeasuredRatesDual:
    common = dict(
        D_c=_num(row, "D_c"),
        integration_time=_num(row, "integration_s", 1.0),
        window=_num(row, "dt_s"),
        label=str(row.get("label", "")),
    )
    if dual:
        return MeasuredRatesDual(
            _num(row, "R_a"), _num(row, "R_b"), _num(row, "R_c"), _num(row, "D_a"), _num(row, "D_b"), **common
        )
    return MeasuredRatesSingle(_num(row, "R_t"), _num(row, "R_c"), _num(row, "D"), **common)


def cmd_invert(cfg: dict, args) -> int:
    if not args.measurements:
        raise ConfigError("invert needs --measurements")
    setup, _, arm_a, arm_b = build_detection(cfg)
    rows = read_table(args.measurements)
    if not rows:
        raise ConfigError(f"{args.measurements}: no measurement records")
    dual = "R_a" in rows[0]
    required = DUAL_FIELDS if dual else SINGLE_FIELDS
    missing = [f for f in required if f not in rows[0]]
    if missing:
        raise ConfigError(f"{args.measurements}: missing columns {missing}")
    if dual != (setup == "dual"):
        note(f"measurement schema is {'dual' if dual else 'single'} but detection.setup is {setup}")

    out, failures = [], 0
    for i, row in enumerate(rows):
        label = row.get("label", str(i))
        try:
            m = parse_measurement(row, dual)
            if dual:
                inv = invert_dual(m, arm_a.path, arm_a.detector, arm_b.path, arm_b.detector)
                rec = {"R_a": inv.R_a, "R_b": inv.R_b}
            else:
                inv = invert_single(m, arm_a.path.transmission, arm_a.detector.efficiency, arm_a.detector.wires)
                rec = {}
            rec |= {"label": label, "R_c": inv.R_c, "R_t": inv.R_t, "eta_c": inv.eta_c, "warnings": inv.warnings}
        except (ValueError, ZeroDivisionError) as exc:
            failures += 1
            rec = {"label": label, "warnings": [f"error: {exc}"]}
            note(f"record {label!r}: {exc}")
        for w in rec["warnings"]:
            if not w.startswith("error"):
                note(f"record {label!r}: {w}")
        out.append(rec)
    fields = ["label"] + (["R_a", "R_b"] if dual else []) + ["R_c", "R_t", "eta_c", "warnings"]
    emit(render(out, fields, fmt_of(cfg)), cfg)
    if failures == len(rows):
        print("error: every measurement record failed", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


def _sim_rates(cfg: dict) -> dict:
    s = cfg["simulation"]
    if "rates" in s:
        return dict(s["rates"])
    ctx = context(cfg)
    r = emission_rates(ctx.crystal, ctx.waves, resolve_focus(cfg, ctx), ctx.dk)
    return {"R_a": r.R_a, "R_b": r.R_b, "R_c": r.R_c}


def _seeds(seed: int, n: int) -> list[int]:
    if n == 1:
        return [seed]
    return [int(c.generate_state(1, np.uint64)[0]) for c in np.random.SeedSequence(seed).spawn(n)]


def cmd_simulate(cfg: dict, args) -> int:
    require(cfg, "simulation", "seed")
    s = cfg["simulation"]
    setup, window, arm_a, arm_b = build_detection(cfg)
    mode = s.get("mode", f"timestream-{setup}-config")
    rates = _sim_rates(cfg)
    base = SimConfig(
        seed=cfg["seed"],
        mode=mode,
        trials=s.get("trials", 1_000_000),
        duration=s.get("duration", 1.0),
        pump_power=s.get("pump_power", 1.0),
        arm_a=arm_a.sim,
        arm_b=arm_b.sim,
        window=window,
        dead_time=s.get("dead_time", 0.0),
        block_trials=s.get("block_trials", 1 << 16),
        segment=s.get("segment", 0.1),
        **rates,
    )
    workers = cfg.get("workers", 1)
    repeats = s.get("repeats", 1)
    rows, truth = [], []
    for i, seed in enumerate(_seeds(base.seed, repeats)):
        sim_cfg = replace(base, seed=seed)
        out = simulate(sim_cfg, workers)
        for w in out.warnings:
            note(w)
        label = f"sim-{i}"
        entry = {"label": label, "seed": seed, "counts": out.counts, "estimates": out.estimates}
        if mode.startswith("timestream"):
            m = estimate_rates(out, sim_cfg, s.get("dark_coincidences", "estimate"))
            row = {k: getattr(m, k) for k in ("R_a", "R_b", "R_c", "R_t", "D", "D_a", "D_b", "D_c") if hasattr(m, k)}
            row |= {
                "label": label,
                "dt_s": m.window,
                "integration_s": m.integration_time,
                "accidental_cps": out.counts["accidental_dark"] / out.duration,
            }
            rows.append(row)
            entry["eta_c_stderr"] = eta_c_standard_error(out, sim_cfg)
        else:
            for outcome, n in out.counts.items():
                rows.append({
                    "label": label,
                    "outcome": outcome,
                    "count": n,
                    "probability": out.estimates[outcome],
                    "stderr": out.stderr[outcome],
                })
        truth.append(entry)

    if mode.startswith("timestream"):
        fields = (DUAL_FIELDS if base.dual else SINGLE_FIELDS) + ["integration_s", "accidental_cps"]
    else:
        fields = ["label", "outcome", "count", "probability", "stderr"]
    emit(render(rows, fields, fmt_of(cfg)), cfg)

    path = cfg.get("output", {}).get("path", "-")
    eta = rates["R_c"] / math.sqrt(rates["R_a"] * rates["R_b"]) if rates["R_a"] * rates["R_b"] > 0 else 0.0
    sidecar = {"config": base.to_dict(), "eta_c": eta, "records": truth}
    if mode == "pair-trials":
        sidecar["analytic"] = outcome_probs_pair(arm_a.sim.eta, arm_a.sim.wires)._asdict()
    elif mode == "single-trials":
        sidecar["analytic"] = outcome_probs_single(arm_a.sim.eta)._asdict()
    if path == "-":
        note("output is stdout; ground-truth sidecar not written")
    else:
        Path(path + ".truth.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_fit_deff(cfg: dict, args) -> int:
    if not args.measurements:
        raise ConfigError("fit-deff needs --measurements")
    rows = read_table(args.measurements)
    if not rows:
        raise ConfigError(f"{args.measurements}: no rate records")
    ctx = context(cfg)
    obs = []
    for row in rows:
        xi_p, xi_a = _num(row, "xi_p"), _num(row, "xi_a")
        xi_b = row.get("xi_b")
        focus = (
            FocusConfig(xi_p, xi_a, float(xi_b)) if xi_b not in (None, "") else FocusConfig.tied(xi_p, xi_a, ctx.waves)
        )
        kind = row.get("kind") or "R_c"
        if kind not in ("R_a", "R_b", "R_c", "R_t"):
            raise ConfigError(f"unknown rate kind {kind!r}")
        obs.append(RateObservation(focus, _num(row, "rate"), kind))
    d = fit_deff(obs, ctx)
    row = {"d_eff_m_per_V": d, "d_eff_pm_per_V": d * 1e12, "records": len(obs)}
    emit(render([row], list(row), fmt_of(cfg)), cfg)
    return EXIT_OK


COMMANDS = {
    "index": (cmd_index, "refractive and group indices"),
    "rates": (cmd_rates, "emission rates and eta_c at one focus"),
    "sweep": (cmd_sweep, "rates and eta_c over a xi_a grid"),
    "tradeoff": (cmd_tradeoff, "best pair rate for eta_c targets"),
    "invert": (cmd_invert, "intrinsic rates from measured rates"),
    "simulate": (cmd_simulate, "Monte Carlo measurement records"),
    "fit-deff": (cmd_fit_deff, "fit d_eff to measured intrinsic rates"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spdc-herald", description="SPDC pair-source coupling and heralding calculator")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", "-c", help="JSON run configuration")
        sp.add_argument("--xi-p", type=float, nargs="+", help="pump focal parameter(s)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", "-o", help="output path ('-' for stdout)")
        sp.add_argument("--format", choices=["csv", "json"])
        sp.add_argument("--measurements", "-m", help="measurement CSV or JSON")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _NOTED.clear()
    func = COMMANDS[args.command][0]
    try:
        cfg = load_config(args.config)
        cfg = with_overrides(cfg, args.xi_p, args.seed, args.out, args.format)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            code = func(cfg, args)
        for w in caught:
            note(str(w.message))
        return code
    except (DegenerateFitError, OptimizationError, ArithmeticError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
