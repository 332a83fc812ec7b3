"""``ppnsim`` command-line entry point.

Every command writes its artifacts under ``--out`` together with a
``manifest.json`` (config hash, library versions, produced files). Exit
codes: 0 success or all checks passed, 1 a check failed, 2 usage or config
error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .continuation import ContinuationError, continue_equilibria, branch_filename
from .gspt import Partition, crossings_to_json, detect_crossings, manifold_slice
from .integrate import IntegrationError, IntegratorConfig
from .model import VARIANTS, ModelError, load_model, rest_state
from .nondim import CONTEXTS, classify
from .protocols import PROTOCOL_NAMES, Protocol, ProtocolError, make_protocol, run
from .scenarios import SCENARIOS, calibrate_pif, run_scenario

MANIFEST_SCHEMA = 1
FIGURE_PACK = ("fig3", "fig5", "fig6", "fig8", "fig10", "fig11")

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration


def parse_value(s: str):
    """JSON scalar if it parses (numbers, true/false, null), else the raw string."""
    try:
        return json.loads(s)
    except json.JSONDecodeError:
        return s


def parse_overrides(items) -> tuple[dict, dict]:
    """Split ``k=v`` strings into (model overrides, protocol overrides)."""
    model, proto = {}, {}
    for item in items or ():
        if "=" not in item:
            raise UsageError(f"override {item!r} is not of the form key=value")
        k, v = item.split("=", 1)
        k = k.strip()
        if not k:
            raise UsageError(f"override {item!r} has an empty key")
        if k.startswith("protocol."):
            proto[k[len("protocol.") :]] = parse_value(v)
        else:
            model[k] = parse_value(v)
    return model, proto


def load_config(args) -> dict:
    """Merge ``--config`` JSON with command-line flags (flags win)."""
    cfg: dict = {}
    if args.config:
        p = Path(args.config)
        if not p.exists():
            raise UsageError(f"config file {p} does not exist")
        try:
            cfg = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {p} is not valid JSON: {exc}") from None
        if not isinstance(cfg, dict):
            raise UsageError("config must be a JSON object")
    model_o, proto_o = parse_overrides(args.override)
    cfg.setdefault("overrides", {}).update(model_o)
    cfg.setdefault("protocol_overrides", {}).update(proto_o)
    for k, v in vars(args).items():
        if k in ("config", "override", "func") or v is None:
            continue
        cfg[k] = v
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def integrator_config(cfg: dict) -> IntegratorConfig:
    return IntegratorConfig(**cfg.get("integrator", {}))


def protocol_from(cfg: dict) -> Protocol:
    src = cfg.get("protocol")
    if src is None:
        raise UsageError("a protocol is required (--protocol NAME or a JSON file)")
    if src in PROTOCOL_NAMES:
        return make_protocol(src, cfg.get("variant"), cfg.get("preset"), **cfg.get("protocol_overrides", {}))
    p = Path(src)
    if not p.exists():
        raise UsageError(f"protocol {src!r} is neither a known name nor an existing file")
    return Protocol.from_json(p)


def model_for(cfg: dict, protocol: Protocol | None = None):
    ref = cfg.get("model")
    base = None
    if ref is not None:
        if ref not in VARIANTS and not Path(ref).exists():
            raise UsageError(f"model {ref!r} is neither a variant nor an existing file")
        base = load_model(ref)
    if protocol is not None:
        return protocol.model(base, cfg.get("overrides"))
    m = base if base is not None else load_model(cfg.get("variant") or "NC")
    return m.with_overrides(cfg.get("overrides") or {})


# ---------------------------------------------------------------------------
# commands; each returns (exit status, summary dict) and writes into out


def cmd_simulate(cfg, out: Path):
    p = protocol_from(cfg)
    r = run(p, cfg.get("overrides"), integrator_config(cfg), model=model_for(cfg) if cfg.get("model") else None)
    r.trace.to_csv(out / "trace.csv")
    metrics = {"spikes": r.spikes, "isis": r.isis, "spike_V": r.spike_V, **r.metrics}
    _write_json(out / "metrics.json", metrics)
    p.to_json(out / "protocol.json")
    return EXIT_OK, {"n_spikes": len(r.spikes)}


def _sweep_one(args):
    p_dict, overrides, icfg, val = args
    p = Protocol.from_dict(p_dict)
    r = run(p, overrides, IntegratorConfig(**icfg))
    return val, r.metrics


def cmd_sweep(cfg, out: Path):
    name = cfg.get("param")
    values = cfg.get("values")
    if not name or not values:
        raise UsageError("sweep needs --param and --values")
    vals = [parse_value(v) for v in str(values).split(",")]
    jobs = []
    for v in vals:
        c = json.loads(json.dumps(cfg))
        if name.startswith("protocol."):
            c.setdefault("protocol_overrides", {})[name[len("protocol.") :]] = v
        else:
            c.setdefault("overrides", {})[name] = v
        jobs.append((protocol_from(c).to_dict(), c.get("overrides"), cfg.get("integrator", {}), v))
    n = int(cfg.get("jobs") or 1)
    if n > 1:
        with ProcessPoolExecutor(n) as ex:
            rows = list(ex.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    keys = sorted({k for _, m in rows for k in m})
    with open(out / "sweep.csv", "w") as fh:
        fh.write(",".join([name] + keys) + "\n")
        for v, m in rows:
            fh.write(",".join([str(v)] + [_cell(m.get(k)) for k in keys]) + "\n")
    return EXIT_OK, {"points": len(rows)}


def _cell(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def cmd_continue(cfg, out: Path):
    m = model_for(cfg)
    if cfg.get("block"):
        m = m.block(cfg["block"].split(","))
    lo, hi = cfg.get("range") or (0.0, 2.0)
    br = continue_equilibria(m, (lo, hi), rest_state(m, lo), ds_max=float(cfg.get("ds_max", 0.05)))
    stem = branch_filename(m.variant, "full", "I_app").rsplit(".", 1)[0]
    br.to_csv(out / f"{stem}.csv")
    br.to_json(out / f"{stem}.json")
    return EXIT_OK, {"points": len(br), "special": [(s["kind"], s["param"]) for s in br.special]}


def cmd_nondim(cfg, out: Path):
    variant = cfg.get("variant") or "CT"
    context = cfg.get("context") or "PIR"
    ctx = CONTEXTS.get(f"{variant}:{context}")
    if ctx is None:
        raise UsageError(f"no nondimensionalization context {variant}:{context}; known: {sorted(CONTEXTS)}")
    m = model_for(dict(cfg, variant=variant))
    rep = classify(m, context=context, preset=cfg.get("preset") or ctx.default)
    rep.to_json(out / f"nondim_{variant}_{context}.json")
    text = rep.render()
    (out / f"nondim_{variant}_{context}.txt").write_text(text + "\n")
    print(text)
    return EXIT_OK, {"partition": rep.partition}


def _analysis_inputs(cfg):
    p = protocol_from(cfg)
    r = run(p, cfg.get("overrides"), integrator_config(cfg))
    context = cfg.get("context") or p.name
    part = Partition.for_context(p.model_variant, context, cfg.get("preset"))
    return p, r, part


def cmd_manifold(cfg, out: Path):
    p, r, part = _analysis_inputs(cfg)
    t = float(cfg.get("time", p.total_duration / 2))
    sweep = cfg.get("sweep")
    if not sweep:
        raise UsageError("manifold needs --sweep VARIABLE")
    lo, hi = cfg.get("range") or (0.0, 1.0)
    sl = manifold_slice(r.model, part, sweep, (lo, hi), r.trace, t, kind=cfg.get("kind") or "M1")
    stem = f"{sl.kind}_{t:g}_{sweep}"
    sl.to_csv(out / f"{stem}.csv")
    sl.to_json(out / f"{stem}.json")
    r.trace.to_csv(out / "trace.csv")
    return EXIT_OK, {"count": sl.count(), "residual": sl.residual}


def cmd_crossings(cfg, out: Path):
    p, r, part = _analysis_inputs(cfg)
    kinds = tuple((cfg.get("kinds") or "AH,fold,SNIC").split(","))
    window = tuple(cfg["window"]) if cfg.get("window") else None
    ev = detect_crossings(r.trace, r.model, part, kinds, cfg.get("subsystem") or "fast", window)
    crossings_to_json(ev, out / "crossings.json")
    r.trace.to_csv(out / "trace.csv")
    return EXIT_OK, {"crossings": [(e.kind, e.time) for e in ev]}


def _scenario_ids(ids) -> list[str]:
    ids = list(ids or [])
    if not ids:
        raise UsageError("reproduce needs scenario ids or 'all'")
    if "all" in ids:
        return list(SCENARIOS)
    bad = [i for i in ids if i not in SCENARIOS]
    if bad:
        raise UsageError(f"unknown scenario(s) {bad}; expected {list(SCENARIOS)} or 'all'")
    return ids


def _run_scenarios(ids, out: Path, cfg, jobs: int):
    icfg = integrator_config(cfg)
    if jobs > 1 and len(ids) > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(run_scenario, ids, [out] * len(ids), [icfg] * len(ids)))
    else:
        results = [run_scenario(i, out, icfg) for i in ids]
    lines = []
    for res in results:
        for c in res.checks:
            lines.append(c.line())
        if res.error:
            lines.append(f"[FAIL] {res.scenario}: {res.error}")
    n_pass = sum(c.passed for r in results for c in r.checks)
    n_all = sum(len(r.checks) for r in results)
    lines.append(f"{n_pass}/{n_all} checks passed")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    _write_json(out / "summary.json", [r.to_dict() for r in results])
    print("\n".join(lines))
    status = EXIT_OK if all(r.passed for r in results) else EXIT_CHECK
    return status, {"passed": n_pass, "checks": n_all}


def cmd_reproduce(cfg, out: Path):
    return _run_scenarios(_scenario_ids(cfg.get("ids")), out, cfg, int(cfg.get("jobs") or 1))


def cmd_figure_pack(cfg, out: Path):
    status, summary = _run_scenarios(list(FIGURE_PACK), out, cfg, int(cfg.get("jobs") or 1))
    return EXIT_OK, summary


def cmd_calibrate(cfg, out: Path):
    target = cfg.get("target") or "fig9nc"
    grid = [float(v) for v in str(cfg.get("durations") or "5,10,20,35,50").split(",")]
    rep = calibrate_pif(target, grid, integrator_config(cfg))
    _write_json(out / f"calibrate_{target}.json", rep)
    print(json.dumps({k: rep[k] for k in ("target", "best", "achieved", "passed")}, default=str))
    return (EXIT_OK if rep["passed"] else EXIT_CHECK), {"best": rep["best"], "passed": rep["passed"]}


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "continue": cmd_continue,
    "nondim-report": cmd_nondim,
    "manifold": cmd_manifold,
    "crossings": cmd_crossings,
    "reproduce": cmd_reproduce,
    "calibrate": cmd_calibrate,
    "figure-pack": cmd_figure_pack,
}


# ---------------------------------------------------------------------------
# plumbing


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (tuple, set)):
        return list(o)
    return str(o)


def write_manifest(out: Path, command: str, cfg: dict, status: int, summary: dict, started: float):
    files = sorted(str(p.relative_to(out)) for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    man = {
        "schema_version": MANIFEST_SCHEMA,
        "command": command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "versions": {"ppnsim": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()},
        "files": files,
        "exit_status": status,
        "summary": summary,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "elapsed_s": round(time.time() - started, 3),
    }
    _write_json(out / "manifest.json", man)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--out", default="ppnsim_out", help="output directory")
    common.add_argument("--override", action="append", metavar="K=V", help="parameter override; protocol.* keys go to the protocol")
    common.add_argument("--jobs", type=int, help="worker processes")

    ap = argparse.ArgumentParser(prog="ppnsim", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help):
        return sub.add_parser(name, parents=[common], help=help)

    s = add("simulate", "run one protocol")
    s.add_argument("--protocol")
    s.add_argument("--variant", choices=VARIANTS)
    s.add_argument("--model", help="variant name or model JSON")
    s.add_argument("--preset")

    s = add("sweep", "run a protocol over values of one parameter")
    s.add_argument("--protocol")
    s.add_argument("--variant", choices=VARIANTS)
    s.add_argument("--param", required=True)
    s.add_argument("--values", required=True, help="comma-separated; write --values=-1,0 for negative values")

    s = add("continue", "equilibrium continuation in I_app")
    s.add_argument("--variant", choices=VARIANTS)
    s.add_argument("--model")
    s.add_argument("--range", type=float, nargs=2)
    s.add_argument("--block", help="comma-separated channels set to zero conductance")
    s.add_argument("--ds-max", dest="ds_max", type=float)

    s = add("nondim-report", "rate constants and timescale classes")
    s.add_argument("--variant", choices=VARIANTS)
    s.add_argument("--context", help=f"one of {sorted({k.split(':')[1] for k in CONTEXTS})}")
    s.add_argument("--preset")

    for name, help in (("manifold", "critical or superslow manifold slice"), ("crossings", "bifurcation-set crossings of a trajectory")):
        s = add(name, help)
        s.add_argument("--protocol")
        s.add_argument("--variant", choices=VARIANTS)
        s.add_argument("--context")
        s.add_argument("--preset")
        if name == "manifold":
            s.add_argument("--time", type=float)
            s.add_argument("--sweep")
            s.add_argument("--range", type=float, nargs=2)
            s.add_argument("--kind", choices=("M1", "M2"))
        else:
            s.add_argument("--kinds", help="comma-separated subset of AH,fold,SNIC,SNPO")
            s.add_argument("--subsystem", choices=("fast", "fast-slow"))
            s.add_argument("--window", type=float, nargs=2)

    s = add("reproduce", "run named scenarios and their acceptance checks")
    s.add_argument("ids", nargs="*", help=f"{', '.join(SCENARIOS)} or all")

    s = add("calibrate", "search PIF pulse durations for a target")
    s.add_argument("--target", choices=("fig9nc", "fig9ct", "fig9c"))
    s.add_argument("--durations", help="comma-separated grid in [5, 50] ms")

    add("figure-pack", "plot-ready artifacts for " + ", ".join(FIGURE_PACK))
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    command = args.command
    out = Path(args.out)
    started = time.time()
    cfg = {}
    try:
        cfg = load_config(args)
        cfg.pop("command", None)
        if command == "reproduce":
            cfg["ids"] = args.ids
        out.mkdir(parents=True, exist_ok=True)
        status, summary = COMMANDS[command](cfg, out)
    except (UsageError, ProtocolError, ModelError, KeyError, TypeError, ValueError) as exc:
        return _fail(out, command, cfg, EXIT_USAGE, exc, started)
    except (IntegrationError, ContinuationError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return _fail(out, command, cfg, EXIT_NUMERIC, exc, started)
    write_manifest(out, command, cfg, status, summary, started)
    return status


def _fail(out: Path, command, cfg, status, exc, started) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "command": command, "exit_status": status}
    print(json.dumps(err), file=sys.stderr)
    try:
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "error.json", err)
        write_manifest(out, command, cfg, status, {"error": err}, started)
    except OSError:
        pass
    return status


if __name__ == "__main__":
    sys.exit(main())
