"""Command line interface.

``rfcw [--config PATH] [--seed U64] [--out DIR] [--threads K] COMMAND``

Commands write ``COMMAND.json`` (and CSV tables where relevant) into the
output directory.  Every JSON record embeds the full configuration, the
package version and, for each number in the payload, a method tag
(``exact``, ``formula``, ``bound_lower``, ``bound_upper``,
``monte_carlo``).  Wall time goes to a separate ``COMMAND.timing.json`` so
that the main record is byte-identical across repeated runs.

Exit codes: 0 on success, 2 for domain or model errors, 1 otherwise.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .errors import DomainError
from .model import FieldDistribution, SystemParams, load_field, sample_field

log = logging.getLogger("rfcw")

COMMANDS = ("landscape", "predict", "exact", "bounds", "simulate", "validate", "report")


# setup ------------------------------------------------------------------------

def _field_and_params(cfg: RunConfig):
    path = cfg.get("model", "field_file").strip()
    if path:
        field, beta = load_field(path)
        params = SystemParams(field.N, beta)
        return field, params
    N = cfg.get_int("model", "N")
    params = SystemParams(N, cfg.get_float("model", "beta"))
    dist = FieldDistribution.parse(cfg.get("model", "dist"))
    return sample_field(dist, N, cfg.get_int("model", "seed")), params


def _wells(cfg, field, params):
    from .landscape import Landscape1D
    from .meso import build_partition, grid_total, layer_states, lumped_chain

    land = Landscape1D.from_field(params, field)
    bar = land.transition_barrier()
    part = build_partition(field, cfg.get_int("partition", "n"))
    chain = lumped_chain(part, params)
    A = layer_states(chain, grid_total(params.N, bar.start.m_star))
    B = layer_states(chain, grid_total(params.N, bar.target.m_star))
    return land, bar, part, chain, A, B


def _solve_kw(cfg):
    return {"method": cfg.get("solver", "method"), "window": cfg.get_window(),
            "tol": cfg.get_float("solver", "tol")}


def _clean(x):
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def _write(out: Path, command: str, cfg: RunConfig, payload: dict, methods: dict, wall: float) -> dict:
    rec = {"command": command, "version": __version__, "config": cfg.as_dict(),
           "payload": payload, "methods": methods}
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{command}.json").write_text(json.dumps(_clean(rec), indent=2, sort_keys=True) + "\n")
    (out / f"{command}.timing.json").write_text(json.dumps({"wall_time_s": wall}) + "\n")
    return rec


# commands ---------------------------------------------------------------------

def cmd_landscape(cfg, out, threads):
    from .landscape import Landscape1D, critical_point_dict

    field, params = _field_and_params(cfg)
    land = Landscape1D.from_field(params, field)
    pts = cfg.get_int("landscape", "grid_points")
    out.mkdir(parents=True, exist_ok=True)
    land.write_csv(out / "landscape.csv", np.linspace(-1.0, 1.0, pts))
    cps = land.critical_points()
    payload = {"critical_points": [critical_point_dict(c) for c in cps]}
    methods = {"critical_points": "formula"}
    error = None
    try:
        bar = land.transition_barrier()
        payload["barrier"] = {"start": bar.start.m_star, "saddle": bar.saddle.m_star,
                              "target": bar.target.m_star, "deltaF": bar.delta_F}
        methods["barrier"] = "formula"
    except DomainError as exc:
        payload["barrier"] = None
        payload["barrier_error"] = str(exc)
        error = exc
    return payload, methods, error


def cmd_predict(cfg, out, threads):
    from .kramers import predict

    field, params = _field_and_params(cfg)
    pred = predict(field, params, cfg.get("predict", "mode"), cfg.get("predict", "convention"))
    payload = pred.to_dict()
    payload["dist"] = field.dist.to_string()
    payload["seed"] = field.seed
    methods = {k: "formula" for k, v in payload.items() if isinstance(v, float)}
    return payload, methods, None


def _exact(cfg, field, params):
    from .potential import mean_hitting_time, solve_potential

    land, bar, part, chain, A, B = _wells(cfg, field, params)
    sol = solve_potential(chain, A, B, **_solve_kw(cfg))
    ht = mean_hitting_time(chain, A, B, solution=sol)
    return land, bar, part, chain, A, B, sol, ht


def cmd_exact(cfg, out, threads):
    from .kramers import predict

    field, params = _field_and_params(cfg)
    land, bar, part, chain, A, B, sol, ht = _exact(cfg, field, params)
    pred = predict(field, params, cfg.get("predict", "mode"), cfg.get("predict", "convention"), barrier=bar)
    payload = {"n": part.n, "n_states": chain.n_states, "log_Zcap": sol.log_cap,
               "log_mean_time": ht.log_mean, "solver": sol.method, "windowed": sol.windowed,
               "cap_discrepancy": sol.cap_discrepancy,
               "log_Zcap_formula": pred.log_Zcap, "log_mean_time_formula": pred.log_mean_time,
               "kappa_cap": math.exp(sol.log_cap - pred.log_Zcap),
               "kappa_time": math.exp(pred.log_mean_time - ht.log_mean)}
    methods = {"log_Zcap": "exact", "log_mean_time": "exact", "cap_discrepancy": "exact",
               "log_Zcap_formula": "formula", "log_mean_time_formula": "formula",
               "kappa_cap": "exact", "kappa_time": "exact"}
    return payload, methods, None


def _bounds(cfg, chain, part, params, bar, sol):
    from .potential import bk_lower_bound
    from .saddleflow import build_saddle_flow, make_neighborhood, upper_bound_via_g

    nb = make_neighborhood(chain, part, params, bar, convention=cfg.get("predict", "convention"))
    ub = upper_bound_via_g(nb)
    flow = build_saddle_flow(nb)
    bk = bk_lower_bound(chain, flow, mode=cfg.get("bounds", "bk_mode"),
                        paths=cfg.get_int("bounds", "paths"), seed=cfg.get_int("model", "seed"))
    payload = {"log_Zcap_exact": sol.log_cap, "log_Zcap_upper": ub["log_phi"],
               "log_Zcap_upper_closed_form": ub["log_closed_form"],
               "log_Zcap_lower": bk.log_value, "lower_rel_stderr": bk.rel_stderr,
               "upper_over_exact": math.exp(ub["log_phi"] - sol.log_cap),
               "lower_over_exact": math.exp(bk.log_value - sol.log_cap),
               "sandwich_ok": bool(bk.log_value <= sol.log_cap + 3 * bk.rel_stderr
                                   and sol.log_cap <= ub["log_phi"] + 1e-9),
               "flow_diagnostics": {k: v for k, v in flow.diagnostics.items()}}
    methods = {"log_Zcap_exact": "exact", "log_Zcap_upper": "bound_upper",
               "log_Zcap_upper_closed_form": "formula", "log_Zcap_lower": "bound_lower",
               "lower_rel_stderr": "monte_carlo" if bk.mode == "monte_carlo" else "exact",
               "upper_over_exact": "exact", "lower_over_exact": "exact"}
    return payload, methods


def cmd_bounds(cfg, out, threads):
    field, params = _field_and_params(cfg)
    land, bar, part, chain, A, B, sol, ht = _exact(cfg, field, params)
    payload, methods = _bounds(cfg, chain, part, params, bar, sol)
    return payload, methods, None


def _simulate(cfg, field, params, chain, part, A, B, ht, threads):
    from .glauber import SimSpec, estimate_mean_time

    start_kind = cfg.get("simulate", "start")
    if start_kind == "nu":
        start = np.zeros(chain.n_states)
        start[ht.A] = ht.nu
    elif start_kind == "gibbs":
        start = np.zeros(chain.n_states)
        w = np.exp(chain.log_mu[A] - chain.log_mu[A].max())
        start[A] = w / w.sum()
    else:
        raise DomainError(f"[simulate] start must be nu or gibbs, got {start_kind!r}")
    common = {"R": cfg.get_int("simulate", "R"), "seed": cfg.get_int("model", "seed"),
              "max_steps": cfg.get_int("simulate", "max_steps")}
    kind = cfg.get("simulate", "chain")
    if kind == "lumped":
        spec = SimSpec(start, B, chain=chain, **common)
    elif kind == "microscopic":
        burn = 0 if part.block_constant else cfg.get_int("simulate", "burn_in_sweeps")
        spec = SimSpec(start, B, field=field, params=params, partition=part,
                       burn_in_sweeps=burn, **common)
    else:
        raise DomainError(f"[simulate] chain must be lumped or microscopic, got {kind!r}")
    return spec, estimate_mean_time(spec, threads=threads)


def cmd_simulate(cfg, out, threads):
    from .glauber import write_replica_csv

    field, params = _field_and_params(cfg)
    land, bar, part, chain, A, B, sol, ht = _exact(cfg, field, params)
    spec, est = _simulate(cfg, field, params, chain, part, A, B, ht, threads)
    out.mkdir(parents=True, exist_ok=True)
    write_replica_csv(out / "replicas.csv", est)
    payload = est.to_dict()
    payload["log_mean_time_exact"] = ht.log_mean
    payload["z_score"] = (est.mean - math.exp(ht.log_mean)) / est.stderr if est.stderr > 0 else 0.0
    payload["spec"] = spec.to_dict()
    methods = {"mean": "monte_carlo", "stderr": "monte_carlo", "log_mean_time_exact": "exact",
               "z_score": "monte_carlo"}
    return payload, methods, None


def cmd_validate(cfg, out, threads):
    from .kramers import predict

    field, params = _field_and_params(cfg)
    land, bar, part, chain, A, B, sol, ht = _exact(cfg, field, params)
    pred = predict(field, params, cfg.get("predict", "mode"), cfg.get("predict", "convention"), barrier=bar)
    cap_payload, methods = _bounds(cfg, chain, part, params, bar, sol)
    cap_payload["log_Zcap_formula"] = pred.log_Zcap
    methods["log_Zcap_formula"] = "formula"
    time_payload = {"log_mean_time_exact": ht.log_mean, "log_mean_time_formula": pred.log_mean_time,
                    "log_mean_time_naive": pred.log_naive_mean_time,
                    "exact_over_formula": math.exp(ht.log_mean - pred.log_mean_time),
                    "naive_over_formula": math.exp(pred.log_naive_mean_time - pred.log_mean_time)}
    methods.update({"log_mean_time_exact": "exact", "log_mean_time_formula": "formula",
                    "log_mean_time_naive": "formula", "exact_over_formula": "exact",
                    "naive_over_formula": "formula"})
    R = cfg.get_int("simulate", "R")
    cost = R * math.exp(ht.log_mean)
    if R > 0 and cost <= cfg.get_float("simulate", "budget_steps"):
        spec, est = _simulate(cfg, field, params, chain, part, A, B, ht, threads)
        time_payload["monte_carlo"] = est.to_dict()
        methods["monte_carlo"] = "monte_carlo"
    elif R > 0:
        time_payload["monte_carlo"] = None
        time_payload["monte_carlo_skipped"] = f"expected cost {cost:.3g} steps exceeds [simulate] budget_steps"
    return {"capacity": cap_payload, "mean_time": time_payload}, methods, None


def cmd_report(cfg, out, threads):
    recs = {}
    for p in sorted(out.glob("*.json")):
        if p.name.endswith(".timing.json") or p.name == "report.json":
            continue
        try:
            recs[p.stem] = json.loads(p.read_text())
        except json.JSONDecodeError:
            log.warning("skipping unreadable %s", p)
    if not recs:
        raise DomainError(f"no result records in {out}")
    lines = ["# rfcw results", ""]
    for name, rec in recs.items():
        lines += [f"## {name}", "", "| key | value | method |", "|---|---|---|"]
        methods = rec.get("methods", {})
        for key, val in _flatten(rec.get("payload", {})):
            top = key.split(".")[0]
            lines.append(f"| {key} | {val} | {methods.get(key, methods.get(top, ''))} |")
        lines.append("")
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.md").write_text("\n".join(lines))
    return {"records": sorted(recs)}, {}, None


def _flatten(d, prefix=""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        elif isinstance(v, (int, float, str, bool)) or v is None:
            yield key, v


# entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rfcw", description="Metastability quantities for the random-field Curie-Weiss model.")
    ap.add_argument("--config", type=Path, help="configuration file (key = value with [sections])")
    ap.add_argument("--seed", type=int, help="master seed, overrides [model] seed")
    ap.add_argument("--out", type=Path, help="output directory, overrides [output] dir")
    ap.add_argument("--threads", type=int, default=1, help="worker cap for Monte Carlo")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("command", choices=COMMANDS)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig.default()
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise DomainError("seed must be an unsigned 64-bit integer")
            cfg.set("model", "seed", args.seed)
        if args.out is not None:
            cfg.set("output", "dir", args.out)
        if args.threads < 1:
            raise DomainError("--threads must be at least 1")
        out = Path(cfg.get("output", "dir"))
        t0 = time.perf_counter()
        handler = globals()[f"cmd_{args.command}"]
        payload, methods, error = handler(cfg, out, args.threads)
        if args.command != "report":
            _write(out, args.command, cfg, payload, methods, time.perf_counter() - t0)
        if error is not None:
            print(f"rfcw {args.command}: {error}", file=sys.stderr)
            return 2
        return 0
    except DomainError as exc:
        print(f"rfcw {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - any other failure is internal
        log.debug("internal failure", exc_info=True)
        print(f"rfcw {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
