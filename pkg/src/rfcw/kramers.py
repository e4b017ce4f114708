"""Sharp asymptotics: the prefactor ``gamma_bar_1``, capacities and mean times.

All predictions are returned as natural logarithms.  Expectations over the
field are either empirical (the ``N`` sampled values, the finite-``N``
random quantities) or analytic (the field law).
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DomainError, NotASaddleError
from .landscape import BarrierSpec, Landscape1D
from .meso import Partition, log_q_continuous, meso_saddle
from .model import FieldDistribution, RandomField, SystemParams
from .potential import ReversibleChain

__all__ = [
    "PrefactorSolution",
    "SharpPrediction",
    "gamma_bar",
    "gamma_equation",
    "sharp_capacity",
    "sharp_mean_time",
    "naive_mean_time",
    "finite_n_capacity_bound",
    "predict",
    "project_naive_chain",
]

GAMMA_TOL = 1e-14


@dataclass(frozen=True)
class PrefactorSolution:
    """Negative root ``gamma_bar_1`` and its side data.

    Attributes
    ----------
    gamma_bar1 : float
    condition : float
        ``beta E(1 - tanh^2(beta (z* + h)))``; must exceed one.
    residual : float
        Defining equation evaluated at the root, minus one.
    rate_sum : float
        ``E[r(h)]``, the saddle rate summed over blocks, i.e. the
        conductance per unit mass of the projected one-dimensional chain at
        ``z*``.
    gamma_hat1_finite_n : float or None
        Negative eigenvalue of ``B`` for a given partition, if requested.
    """

    gamma_bar1: float
    condition: float
    residual: float
    rate_sum: float
    mode: str
    convention: str
    gamma_hat1_finite_n: float | None = None


def _law(source, beta):
    """Field values and weights for an expectation."""
    if isinstance(source, Landscape1D):
        return source.values, source.weights, "landscape"
    if isinstance(source, FieldDistribution):
        L = Landscape1D.from_distribution(SystemParams(2, beta), source)
        return L.values, L.weights, "analytic"
    h = source.h if isinstance(source, RandomField) else np.asarray(source, dtype=float)
    vals, cnt = np.unique(h, return_counts=True)
    return vals, cnt / cnt.sum(), "empirical"


def _terms(z, vals, beta, convention):
    """Numerator and denominator of the prefactor equation at every field value."""
    u = z + vals
    t = np.tanh(beta * u)
    e = np.exp(-2.0 * beta * np.maximum(u, 0.0))
    if convention == "metropolis":
        return (1.0 + t) * e, e / (beta * (1.0 - t))
    if convention == "printed":
        return (1.0 - t) * e, e / (beta * (1.0 + t))
    raise DomainError(f"unknown rate convention {convention!r}")


def gamma_equation(gamma, z, source, beta, convention: str = "metropolis") -> float:
    """Left side of ``E[num / (den - 2 gamma)] = 1``."""
    vals, w, _ = _law(source, beta)
    num, den = _terms(z, vals, beta, convention)
    return float(np.dot(w, num / (den - 2.0 * gamma)))


def gamma_bar(z_star, source, beta: float, convention: str = "metropolis",
              partition: Partition | None = None) -> PrefactorSolution:
    """Solve for the unique negative root ``gamma_bar_1``.

    Parameters
    ----------
    z_star : CriticalPoint or float
    source : RandomField, array_like, FieldDistribution or Landscape1D
        Empirical values, or a law for the analytic mode.
    beta : float
    convention : {"metropolis", "printed"}
        Saddle rates (see :func:`rfcw.meso.saddle_rates`).  ``metropolis``
        numerators are ``(1 + tanh) exp(-2 beta [z + h]_+)`` with
        denominators ``exp(-2 beta [z + h]_+) / (beta (1 - tanh))``.
    partition : Partition, optional
        Also report the finite-``n`` eigenvalue of ``B``.
    """
    z = float(getattr(z_star, "m_star", z_star))
    vals, w, mode = _law(source, beta)
    num, den = _terms(z, vals, beta, convention)
    cond = float(beta * np.dot(w, 1.0 - np.tanh(beta * (z + vals)) ** 2))
    if not cond > 1.0:
        raise NotASaddleError(f"no negative solution: beta E(1 - tanh^2) = {cond:.6g} <= 1")

    def G(g):
        return float(np.dot(w, num / (den - 2.0 * g))) - 1.0

    # G increases in gamma on (-inf, 0); G(0) = cond - 1 > 0 and G(-inf) = -1
    lo = -(1.0 + float(den.max())) / 2.0 * 1e3
    while G(lo) >= 0:
        lo *= 2.0
    hi = 0.0
    while hi - lo > GAMMA_TOL:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if G(mid) < 0:
            lo = mid
        else:
            hi = mid
    root = 0.5 * (lo + hi)
    rate_sum = 0.5 * float(np.dot(w, num))
    g_hat = None
    if partition is not None:
        g_hat = meso_saddle(z, partition, beta, convention).gamma1
    return PrefactorSolution(root, cond, G(root), rate_sum, mode, convention, g_hat)


def _condition(land: Landscape1D, m: float, source=None) -> float:
    vals, w = (land.values, land.weights) if source is None else _law(source, land.beta)[:2]
    return float(land.beta * np.dot(w, 1.0 - np.tanh(land.beta * (m + vals)) ** 2))


def sharp_capacity(barrier: BarrierSpec, land: Landscape1D, pref: PrefactorSolution) -> float:
    """``log Z cap`` from ``beta |gamma| / (2 pi N) exp(-beta N F(z*)) / sqrt(cond - 1)``."""
    N, beta = land.N, land.beta
    z = barrier.saddle
    return (math.log(beta * abs(pref.gamma_bar1) / (2 * math.pi * N))
            - beta * N * z.F_value - 0.5 * math.log(pref.condition - 1.0))


def _mean_time(barrier, land, pref, slope):
    N, beta = land.N, land.beta
    chi_m = _condition(land, barrier.start.m_star)
    if not chi_m < 1.0:
        raise DomainError("start point is not a strict minimum")
    return (beta * N * barrier.delta_F + math.log(2 * math.pi * N / (beta * slope))
            + 0.5 * math.log((pref.condition - 1.0) / (1.0 - chi_m)))


def sharp_mean_time(barrier: BarrierSpec, land: Landscape1D, pref: PrefactorSolution) -> float:
    """``log E tau`` = ``beta N dF + ln(2 pi N / (beta |gamma|)) + (1/2) ln((cond_z - 1)/(1 - cond_m))``."""
    return _mean_time(barrier, land, pref, abs(pref.gamma_bar1))


def naive_mean_time(barrier: BarrierSpec, land: Landscape1D, pref: PrefactorSolution) -> float:
    """Mean-time formula of the projected one-dimensional chain, ``|a(z*)|`` in place of ``|gamma|``."""
    return _mean_time(barrier, land, pref, abs(barrier.saddle.curvature_a))


def finite_n_capacity_bound(saddle_z: float, partition: Partition, params: SystemParams,
                            convention: str = "metropolis") -> float:
    """Log of the mesoscopic upper bound on ``Z cap`` for a given partition.

    ``Z Q(z*) beta |g_1| / (2 pi N) (pi N / (2 beta))^(n/2) prod_l sqrt(r_l / |g_l|)``
    with ``Q`` continued off the grid and the product taken over all
    eigenvalues ``g_l`` of ``B``.
    """
    sd = meso_saddle(saddle_z, partition, params.beta, convention)
    N, beta, n = params.N, params.beta, partition.n
    logq = log_q_continuous(sd.z_star_meso, partition, params)
    return (logq + math.log(beta * abs(sd.gamma1) / (2 * math.pi * N))
            + 0.5 * n * math.log(math.pi * N / (2 * beta))
            + 0.5 * float(np.sum(np.log(sd.r) - np.log(np.abs(sd.gamma_hat)))))


@dataclass(frozen=True)
class SharpPrediction:
    N: int
    beta: float
    m0: float
    zstar: float
    M: float
    deltaF: float
    a_m0: float
    a_zstar: float
    gamma_bar1: float
    log_ZQ_saddle: float
    log_Zcap: float
    log_mean_time: float
    log_naive_mean_time: float
    mode: str
    convention: str
    rate_sum: float

    def to_dict(self) -> dict:
        return asdict(self)


def predict(field, params: SystemParams, mode: str = "empirical", convention: str = "metropolis",
            barrier: BarrierSpec | None = None) -> SharpPrediction:
    """All closed-form predictions for a realization.

    ``mode="empirical"`` uses the sampled field everywhere;
    ``"analytic"`` uses the field law for ``gamma_bar_1`` and the
    curvature conditions while keeping the realization's ``F``.
    """
    land = Landscape1D.from_field(params, field)
    bar = barrier if barrier is not None else land.transition_barrier()
    if mode == "empirical":
        src = field
    elif mode == "analytic":
        if not isinstance(field, RandomField):
            raise DomainError("analytic mode needs a RandomField carrying its law")
        src = field.dist
    else:
        raise DomainError(f"unknown mode {mode!r}")
    pref = gamma_bar(bar.saddle, src, params.beta, convention)
    if mode == "analytic":
        limit = Landscape1D.from_distribution(params, field.dist)
        land_pref = limit
    else:
        land_pref = land
    log_cap = sharp_capacity(bar, land, pref)
    chi_m = _condition(land_pref, bar.start.m_star)
    N, beta = params.N, params.beta

    def mean(slope):
        return (beta * N * bar.delta_F + math.log(2 * math.pi * N / (beta * slope))
                + 0.5 * math.log((pref.condition - 1.0) / (1.0 - chi_m)))

    a_z = -1.0 + 1.0 / pref.condition
    return SharpPrediction(
        N=N, beta=beta, m0=bar.start.m_star, zstar=bar.saddle.m_star, M=bar.target.m_star,
        deltaF=bar.delta_F, a_m0=-1.0 + 1.0 / chi_m, a_zstar=a_z, gamma_bar1=pref.gamma_bar1,
        log_ZQ_saddle=land.log_gibbs_point_asymptotic(bar.saddle),
        log_Zcap=log_cap, log_mean_time=mean(abs(pref.gamma_bar1)),
        log_naive_mean_time=mean(abs(a_z)), mode=mode, convention=convention,
        rate_sum=pref.rate_sum)


def project_naive_chain(lumped: ReversibleChain) -> ReversibleChain:
    """Birth-death chain on the total magnetization induced by a lumped chain.

    ``Q(m)`` is the marginal of the lumped weights and the conductance
    between ``m`` and ``m + 2/N`` is the sum of the lumped conductances
    crossing between the two layers, so that the projected rate is
    ``Q(m)^-1 sum_{x in m} Q(x) sum_{y in m + 2/N} p(x, y)``.
    """
    coords = lumped.coords
    if coords is None:
        raise DomainError("lumped chain carries no coordinates")
    m = coords.sum(axis=1) if coords.ndim == 2 else coords
    N = int(lumped.meta.get("N", 0)) or None
    key = np.rint((m + 1.0) * N / 2.0).astype(np.int64) if N else None
    if key is None:
        raise DomainError("lumped chain meta must carry N")
    levels = np.unique(key)
    pos = np.searchsorted(levels, key)
    L = levels.size
    log_mu = np.full(L, -np.inf)
    for j in range(L):
        log_mu[j] = logsumexp(lumped.log_mu[pos == j])
    a, b = pos[lumped.edges[:, 0]], pos[lumped.edges[:, 1]]
    lo = np.minimum(a, b)
    if np.any(np.abs(a - b) != 1):
        raise DomainError("lumped edges must change the total magnetization by one step")
    log_c = np.full(L - 1, -np.inf)
    order = np.argsort(lo, kind="stable")
    lo_s, lc_s = lo[order], lumped.log_c[order]
    bounds = np.searchsorted(lo_s, np.arange(L))
    for j in range(L - 1):
        seg = lc_s[bounds[j]:bounds[j + 1]]
        log_c[j] = logsumexp(seg)
    edges = np.column_stack([np.arange(L - 1), np.arange(1, L)])
    meta = {"kind": "naive", "N": N, "beta": lumped.meta.get("beta"), "n": 1}
    return ReversibleChain(log_mu, edges, log_c, coords=(2.0 * levels - N) / N, meta=meta)
