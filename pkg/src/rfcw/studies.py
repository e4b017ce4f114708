"""Numerical studies behind the acceptance suite.

Each ``study_*`` function runs one check end to end and returns a
:class:`StudyResult` holding a pass flag, a one-line summary and the raw
numbers.  The functions are deterministic given their seeds.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import rng
from .glauber import SimSpec, estimate_mean_time
from .kramers import predict, project_naive_chain
from .landscape import Landscape1D
from .meso import (build_partition, grid_total, layer_states, lumped_chain, meso_saddle,
                   secular_roots)
from .model import FieldDistribution, SystemParams, microscopic_chain, sample_field
from .potential import (ReversibleChain, UnitFlow, bk_lower_bound, dirichlet_upper_bound,
                        expected_hitting_times, harmonic_flow, mean_hitting_time, solve_potential)
from .saddleflow import (build_saddle_flow, harmonic_residual, make_neighborhood,
                         upper_bound_via_g)

__all__ = [
    "StudyResult",
    "random_chain",
    "study_identities",
    "study_lumping",
    "study_simulator",
    "kappa_series",
    "richardson_limit",
    "kappa_all",
    "study_kappa",
    "naive_ratio_series",
    "study_naive_ratio",
    "study_sandwich",
    "residual_halving",
    "study_residual",
    "study_secular",
    "WINDOW",
]

WINDOW = (40, 25)


@dataclass
class StudyResult:
    name: str
    passed: bool
    summary: str
    data: dict = dc_field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.summary} ({self.seconds:.1f}s)"


def _timed(fn):
    def wrapper(*args, **kw):
        t0 = time.perf_counter()
        res = fn(*args, **kw)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


# 1. potential-theory identities -----------------------------------------------

def random_chain(gen: np.random.Generator, n_states: int) -> ReversibleChain:
    """Connected reversible chain: random tree plus extra edges, random weights.

    Conductances are ``min(mu_x, mu_y) u / deg_max`` with ``u`` uniform on
    ``(0.05, 1)``, so every row of ``p`` sums to at most one.
    """
    parent = [int(gen.integers(0, i)) for i in range(1, n_states)]
    edges = {(min(i + 1, p), max(i + 1, p)) for i, p in enumerate(parent)}
    for _ in range(int(gen.integers(0, 2 * n_states))):
        a, b = (int(x) for x in gen.integers(0, n_states, size=2))
        if a != b:
            edges.add((min(a, b), max(a, b)))
    e = np.array(sorted(edges), dtype=np.int64)
    log_mu = gen.normal(0.0, 2.0, size=n_states)
    deg = np.bincount(e.ravel(), minlength=n_states)
    u = gen.uniform(0.05, 1.0, size=len(e))
    log_c = np.minimum(log_mu[e[:, 0]], log_mu[e[:, 1]]) + np.log(u) - math.log(deg.max())
    return ReversibleChain(log_mu, e, log_c)


def _perturbed(chain: ReversibleChain, gen) -> ReversibleChain:
    jitter = gen.normal(0.0, 0.7, size=chain.n_edges)
    return ReversibleChain(chain.log_mu, chain.edges, chain.log_c + jitter - 0.7 * 4)


@_timed
def study_identities(n_chains: int = 200, seed: int = 2024, max_states: int = 200) -> StudyResult:
    """Capacity/Dirichlet, harmonic-flow BK sharpness, mean-time identity, variational ordering."""
    worst = {"cap": 0.0, "bk": 0.0, "time": 0.0}
    order_ok = True
    for k in range(n_chains):
        gen = rng.generator(seed, rng.CHAIN, k)
        n = int(gen.integers(4, max_states + 1))
        ch = random_chain(gen, n)
        perm = gen.permutation(n)
        na = int(gen.integers(1, max(2, n // 5)))
        nb = int(gen.integers(1, max(2, n // 5)))
        A, B = np.sort(perm[:na]), np.sort(perm[na:na + nb])
        sol = solve_potential(ch, A, B, method="dense")
        worst["cap"] = max(worst["cap"], sol.cap_discrepancy)
        bk = bk_lower_bound(ch, harmonic_flow(ch, sol), mode="exact", paths=200, seed=k)
        worst["bk"] = max(worst["bk"], abs(math.expm1(bk.log_value - sol.log_cap)))
        ht = mean_hitting_time(ch, A, B, solution=sol)
        t = expected_hitting_times(ch, B)
        direct = float(np.dot(ht.nu, t[ht.A]))
        worst["time"] = max(worst["time"], abs(math.exp(ht.log_mean) / direct - 1.0))
        # (d): a flow and a test function taken from a perturbed chain
        other = _perturbed(ch, gen)
        osol = solve_potential(other, A, B, method="dense")
        f = harmonic_flow(other, osol)
        flow = UnitFlow(f.src, f.dst, f.value, A, B)
        lo = bk_lower_bound(ch, flow, mode="exact", paths=400, seed=k)
        up = dirichlet_upper_bound(ch, osol.h, A, B)
        slack = 3.0 * lo.rel_stderr + 1e-12
        if not (lo.log_value <= sol.log_cap + slack and sol.log_cap <= up + 1e-12):
            order_ok = False
    ok = worst["cap"] <= 1e-10 and worst["bk"] <= 1e-9 and worst["time"] <= 1e-8 and order_ok
    summary = (f"{n_chains} chains: max cap rel dev {worst['cap']:.1e} (<=1e-10), "
               f"BK(harmonic) {worst['bk']:.1e} (<=1e-9), mean time {worst['time']:.1e} (<=1e-8), "
               f"BK<=cap<=Phi {'holds' if order_ok else 'VIOLATED'}")
    return StudyResult("1 potential-theory identities", ok, summary, dict(worst, order_ok=order_ok))


# 2. lumping exactness ----------------------------------------------------------

def _two_wells(field, params):
    land = Landscape1D.from_field(params, field)
    return land, land.transition_barrier()


@_timed
def study_lumping(N: int = 12, beta: float = 1.5, eps: float = 0.2, seed: int = 3) -> StudyResult:
    """Microscopic (2^N states) versus lumped capacity and mean hitting time."""
    params = SystemParams(N, beta)
    field = sample_field(FieldDistribution.two_valued(eps), N, seed)
    _, bar = _two_wells(field, params)
    m0, M = grid_total(N, bar.start.m_star), grid_total(N, bar.target.m_star)
    micro = microscopic_chain(field, params)
    Am, Bm = layer_states(micro, m0), layer_states(micro, M)
    part = build_partition(field, 2)
    lump = lumped_chain(part, params)
    Al, Bl = layer_states(lump, m0), layer_states(lump, M)
    sm = solve_potential(micro, Am, Bm, method="direct")
    sl = solve_potential(lump, Al, Bl, method="dense")
    tm = mean_hitting_time(micro, Am, Bm, solution=sm)
    tl = mean_hitting_time(lump, Al, Bl, solution=sl)
    dc = abs(math.expm1(sm.log_cap - sl.log_cap))
    dt = abs(math.expm1(tm.log_mean - tl.log_mean))
    ok = dc <= 1e-10 and dt <= 1e-10
    summary = f"N={N}: cap rel dev {dc:.1e}, mean time rel dev {dt:.1e} (both <=1e-10)"
    return StudyResult("2 lumping exactness", ok, summary, {"cap": dc, "time": dt})


# 3. simulator ------------------------------------------------------------------

@_timed
def study_simulator(R: int = 10_000, seed: int = 11, threads: int = 1) -> StudyResult:
    """Lumped n=1 chain at N=100 and microscopic N=12 chain against exact values."""
    out = {}
    # lumped, h = 0, beta = 1.25
    N = 100
    params = SystemParams(N, 1.25)
    field = sample_field(FieldDistribution.constant(0.0), N, 0)
    _, bar = _two_wells(field, params)
    ch = lumped_chain(build_partition(field, 1), params)
    A = layer_states(ch, grid_total(N, bar.start.m_star))
    B = layer_states(ch, grid_total(N, bar.target.m_star))
    ht = mean_hitting_time(ch, A, B)
    start = np.zeros(ch.n_states)
    start[ht.A] = ht.nu
    est = estimate_mean_time(SimSpec(start, B, R=R, seed=seed, chain=ch), threads=threads)
    exact = math.exp(ht.log_mean)
    out["lumped"] = {"exact": exact, "mean": est.mean, "stderr": est.stderr,
                     "z": (est.mean - exact) / est.stderr, "truncated": est.truncated}
    # microscopic, block-constant field
    N = 12
    params = SystemParams(N, 1.5)
    field = sample_field(FieldDistribution.two_valued(0.2), N, 5)
    _, bar = _two_wells(field, params)
    part = build_partition(field, 2)
    ch = lumped_chain(part, params)
    A = layer_states(ch, grid_total(N, bar.start.m_star))
    B = layer_states(ch, grid_total(N, bar.target.m_star))
    ht = mean_hitting_time(ch, A, B)
    start = np.zeros(ch.n_states)
    start[ht.A] = ht.nu
    est = estimate_mean_time(SimSpec(start, B, R=R, seed=seed, field=field, params=params,
                                     partition=part), threads=threads)
    exact = math.exp(ht.log_mean)
    out["microscopic"] = {"exact": exact, "mean": est.mean, "stderr": est.stderr,
                          "z": (est.mean - exact) / est.stderr, "truncated": est.truncated}
    ok = all(abs(v["z"]) <= 3.0 and v["truncated"] == 0 for v in out.values())
    summary = (f"lumped N=100 z={out['lumped']['z']:+.2f}, microscopic N=12 z={out['microscopic']['z']:+.2f} "
               f"(|z|<=3, R={R})")
    return StudyResult("3 simulator correctness", ok, summary, out)


# 4. kappa convergence ----------------------------------------------------------

def _case(n: int, beta: float, N: int, seed: int):
    dist = FieldDistribution.constant(0.0) if n == 1 else FieldDistribution.two_valued(0.2)
    params = SystemParams(N, beta)
    field = sample_field(dist, N, seed)
    _, bar = _two_wells(field, params)
    pred = predict(field, params, barrier=bar)
    part = build_partition(field, n)
    ch = lumped_chain(part, params)
    A = layer_states(ch, grid_total(N, bar.start.m_star))
    B = layer_states(ch, grid_total(N, bar.target.m_star))
    sol = solve_potential(ch, A, B, window=WINDOW)
    ht = mean_hitting_time(ch, A, B, solution=sol)
    return field, bar, pred, ch, sol, ht


def kappa_series(n: int, beta: float, Ns=(100, 200, 400, 800, 1600), seed: int = 7) -> dict:
    """``kappa_cap(N) = exact Z cap / formula`` and ``kappa_T(N) = formula time / exact time``."""
    cap, tim = [], []
    for N in Ns:
        _, _, pred, _, sol, ht = _case(n, beta, N, seed)
        cap.append(math.exp(sol.log_cap - pred.log_Zcap))
        tim.append(math.exp(pred.log_mean_time - ht.log_mean))
    return {"N": list(Ns), "kappa_cap": cap, "kappa_time": tim}


def richardson_limit(values) -> float:
    """Limit of a sequence on doubling ``N`` assuming geometric decay of its increments.

    With increments ``d1, d2`` of the last three terms and ratio ``q = d2/d1``
    in ``(0, 1)``, returns ``x_last + d2 q / (1 - q)``; otherwise the last
    term.
    """
    x = list(values)
    if len(x) < 3:
        return x[-1]
    d1, d2 = x[-2] - x[-3], x[-1] - x[-2]
    if d1 == 0 or not 0 < d2 / d1 < 1:
        return x[-1]
    q = d2 / d1
    return x[-1] + d2 * q / (1 - q)


def _convergence(series, skip: int = 0) -> tuple[bool, float, float]:
    """(converges, last relative increment, extrapolated limit).

    Increments must decrease from the ``skip``-th doubling on; the Cauchy
    test uses the last increment relative to the last value.
    """
    x = np.asarray(series)
    inc = np.abs(np.diff(x))
    decreasing = bool(np.all(np.diff(inc[skip:]) < 0))
    cauchy = float(inc[-1] / abs(x[-1]))
    return decreasing and cauchy <= 0.05, cauchy, richardson_limit(x)


def kappa_all(Ns=(100, 200, 400, 800, 1600), seed: int = 7) -> dict:
    """:func:`kappa_series` for ``n in {1, 2}`` and ``beta in {1.5, 2.0}``."""
    return {f"n={n},beta={beta}": kappa_series(n, beta, Ns, seed) for n in (1, 2) for beta in (1.5, 2.0)}


@_timed
def study_kappa(series: dict | None = None, skip: int = 0) -> StudyResult:
    """Convergence of kappa and its agreement across beta and n.

    Monotone decrease of the increments is required from the ``skip``-th
    doubling on (``skip = 0``: all increments); all increments are reported.
    ``series`` is the output of :func:`kappa_all` (computed if omitted).
    """
    raw = kappa_all() if series is None else series
    data = {}
    ok = True
    for name, s0 in raw.items():
        s = dict(s0)
        for key in ("kappa_cap", "kappa_time"):
            conv, cauchy, lim = _convergence(s[key], skip)
            s[key + "_increments"] = np.abs(np.diff(s[key])).tolist()
            s[key + "_converges"] = conv
            s[key + "_cauchy"] = cauchy
            s[key + "_limit"] = lim
            ok &= conv
        data[name] = s
    spreads = {}
    for key in ("kappa_cap", "kappa_time"):
        lims = [v[key + "_limit"] for v in data.values()]
        spreads[key] = max(lims) / min(lims) - 1.0
        ok &= spreads[key] <= 0.05
    fitted = float(np.mean([v["kappa_cap_limit"] for v in data.values()]))
    Ns = next(iter(data.values()))["N"]
    bad = [f"{k} {key[6:]}" for k, v in data.items() for key in ("kappa_cap", "kappa_time")
           if not v[key + "_converges"]]
    data["spread"] = spreads
    data["fitted_kappa"] = fitted
    limits = ", ".join(f"{k}:{v['kappa_cap_limit']:.3f}" for k, v in data.items() if k.startswith("n="))
    summary = (f"increments decrease from N={Ns[skip]} and Cauchy <=5% at N={Ns[-1]}: "
               f"{'yes' if not bad else 'NO (' + ', '.join(bad) + ')'}; limits {limits}; "
               f"spread cap {spreads['kappa_cap']:.1%}, time {spreads['kappa_time']:.1%} (<=5%); "
               f"fitted kappa {fitted:.3f}")
    name = "4 prefactor-structure convergence" + ("" if skip == 0 else f" [increments from N={Ns[skip]}]")
    return StudyResult(name, ok, summary, data)


# 5. naive ratio ----------------------------------------------------------------

def naive_ratio_series(Ns=(200, 400, 800, 1600), beta: float = 1.5, seed: int = 7) -> dict:
    """Exact lumped over exact projected-naive mean time, with both candidate limits."""
    ratio, lit, corr = [], [], []
    for N in Ns:
        _, bar, pred, ch, sol, ht = _case(2, beta, N, seed)
        nv = project_naive_chain(ch)
        An = layer_states(nv, grid_total(N, bar.start.m_star))
        Bn = layer_states(nv, grid_total(N, bar.target.m_star))
        hn = mean_hitting_time(nv, An, Bn, window=WINDOW)
        ratio.append(math.exp(ht.log_mean - hn.log_mean))
        lit.append(abs(pred.a_zstar) / abs(pred.gamma_bar1))
        corr.append(pred.rate_sum * abs(pred.a_zstar) / abs(pred.gamma_bar1))
    return {"N": list(Ns), "ratio": ratio, "literal_target": lit, "rate_weighted_target": corr}


@_timed
def study_naive_ratio(series: dict | None = None, target: str = "literal_target") -> StudyResult:
    """Ratio versus ``|a(z*)|/|gamma_bar_1|`` (``literal_target``) or its rate-weighted form."""
    s = naive_ratio_series() if series is None else series
    r, t = s["ratio"][-1], s[target][-1]
    dev = abs(r / t - 1.0)
    inc = np.abs(np.diff(s["ratio"]))
    ok = dev <= 0.05 and bool(np.all(np.diff(inc) <= 0))
    label = "|a|/|gamma_bar|" if target == "literal_target" else "R |a|/|gamma_bar| (R = sum of saddle rates)"
    summary = f"ratio at N={s['N'][-1]}: {r:.4f} vs {label} = {t:.4f}, deviation {dev:.1%} (<=5%)"
    name = "5 gamma_bar isolation" + ("" if target == "literal_target" else " [rate-weighted target]")
    return StudyResult(name, ok, summary, dict(s, deviation=dev))


# 6. sandwich -------------------------------------------------------------------

@_timed
def study_sandwich(Ns=(100, 200, 400), beta: float = 1.5, seed: int = 11, paths: int = 20_000) -> StudyResult:
    """BK(flow) <= exact cap <= Phi(g) and the upper/lower ratio."""
    rows = []
    for N in Ns:
        params = SystemParams(N, beta)
        field = sample_field(FieldDistribution.two_valued(0.2), N, seed)
        _, bar = _two_wells(field, params)
        part = build_partition(field, 2)
        ch = lumped_chain(part, params)
        nb = make_neighborhood(ch, part, params, bar)
        sol = solve_potential(ch, nb.A, nb.B, window=WINDOW)
        ub = upper_bound_via_g(nb)
        flow = build_saddle_flow(nb)
        bk = bk_lower_bound(ch, flow, mode="monte_carlo", paths=paths, seed=seed)
        rows.append({"N": N, "lower": math.exp(bk.log_value - sol.log_cap),
                     "lower_rel_stderr": bk.rel_stderr, "upper": math.exp(ub["log_phi"] - sol.log_cap),
                     "ratio": math.exp(ub["log_phi"] - bk.log_value),
                     "clipped_mass": flow.diagnostics["clipped_mass"]})
    ordered = all(r["lower"] <= 1.0 + 3 * r["lower_rel_stderr"] and r["upper"] >= 1.0 - 1e-12 for r in rows)
    ratios = [r["ratio"] for r in rows]
    mono = all(b < a for a, b in zip(ratios, ratios[1:]))
    ok = ordered and mono and ratios[-1] <= 1.5
    summary = (f"upper/lower {', '.join(f'{r:.3f}' for r in ratios)} for N={list(Ns)} "
               f"(<=1.5 at N={Ns[-1]}, decreasing); ordering {'holds' if ordered else 'VIOLATED'}")
    return StudyResult("6 variational sandwich", ok, summary, {"rows": rows})


# 7. residual scaling -----------------------------------------------------------

def residual_halving(n: int, N: int = 400, beta: float | None = None, rho: float | None = None,
                     seed: int = 11) -> dict:
    """Max normalized residual at ``rho`` and ``rho/2``.

    ``rho`` defaults to ``N^(-0.35)``; ``n = 1`` uses ``h = 0`` at
    ``beta = 2``, ``n >= 2`` a two-valued field at ``beta = 1.5``.
    """
    if beta is None:
        beta = 2.0 if n == 1 else 1.5
    dist = FieldDistribution.constant(0.0) if n == 1 else FieldDistribution.two_valued(0.2)
    params = SystemParams(N, beta)
    field = sample_field(dist, N, seed)
    _, bar = _two_wells(field, params)
    part = build_partition(field, n)
    sd = meso_saddle(bar.saddle, part, beta)
    rho = N ** -0.35 if rho is None else rho
    r1 = harmonic_residual(sd, part, params, rho)
    r2 = harmonic_residual(sd, part, params, rho / 2)
    return {"n": n, "N": N, "beta": beta, "rho": rho, "residual": r1, "residual_half": r2,
            "factor": r1 / r2}


@_timed
def study_residual(ns=(1, 2), N: int = 400) -> StudyResult:
    rows = [residual_halving(n, N) for n in ns]
    ok = all(3.2 <= r["factor"] <= 4.8 for r in rows)
    summary = ", ".join(f"n={r['n']}: factor {r['factor']:.2f}" for r in rows) + " (in [3.2, 4.8])"
    return StudyResult("7 residual scaling", ok, summary, {"rows": rows})


# 8. secular algebra ------------------------------------------------------------

@_timed
def study_secular(instances: int = 100, seed: int = 5) -> StudyResult:
    """Secular roots against dense eigenvalues, determinant identity, negative-root count."""
    worst_root, worst_det, count_ok = 0.0, 0.0, True
    for k in range(instances):
        gen = rng.generator(seed, rng.CHAIN, k)
        n = int(gen.integers(1, 9))
        lam = gen.uniform(0.3, 3.0 * n, size=n)
        r = gen.uniform(0.05, 1.0, size=n)
        A = np.diag(lam) - np.ones((n, n))
        sr = np.sqrt(r)
        B = sr[:, None] * A * sr[None, :]
        dense = np.linalg.eigvalsh(B)
        roots = secular_roots(r * lam, r)
        scale = max(1.0, float(np.abs(dense).max()))
        worst_root = max(worst_root, float(np.abs(roots - dense).max()) / scale)
        det_formula = (1.0 - np.sum(1.0 / lam)) * np.prod(lam)
        det_dense = np.linalg.det(A)
        worst_det = max(worst_det, abs(det_formula - det_dense) / max(abs(det_dense), 1e-300))
        cond = np.sum(1.0 / lam) > 1.0
        count_ok &= (int(np.sum(roots < 0)) == 1) == cond
    ok = worst_root <= 1e-10 and worst_det <= 1e-10 and count_ok
    summary = (f"{instances} instances: root dev {worst_root:.1e}, det dev {worst_det:.1e} (<=1e-10), "
               f"negative-root iff condition {'holds' if count_ok else 'VIOLATED'}")
    return StudyResult("8 secular/Hessian algebra", ok, summary,
                       {"root": worst_root, "det": worst_det, "count_ok": count_ok})
