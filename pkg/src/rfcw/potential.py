"""Potential theory on finite reversible chains.

A :class:`ReversibleChain` stores stationary log-weights ``log mu`` and, for
each undirected edge ``{x, y}``, the log-conductance ``log c = log mu(x) +
log p(x, y)``.  Weights are never normalized; capacities and Dirichlet forms
are returned in log form so that barriers of several hundred ``kT`` do not
overflow.

Conventions: discrete time, ``h_{A,B} = 1`` on ``A`` and ``0`` on ``B``,
``cap(A, B) = sum_{x in A} mu(x) e_{A,B}(x)`` with the escape probability
``e_{A,B}(x) = sum_y p(x, y) (h(x) - h(y))``.
"""
from __future__ import annotations

import graphlib
import math
import warnings
from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.csgraph as csgraph
import scipy.sparse.linalg as spla
from scipy.special import logsumexp

from . import rng
from .errors import DisconnectedError, DomainError, FlowValidationError, SolverFailure

__all__ = [
    "ReversibleChain",
    "PotentialSolution",
    "HittingTimeResult",
    "UnitFlow",
    "FlowCheck",
    "BKResult",
    "solve_potential",
    "mean_hitting_time",
    "expected_hitting_times",
    "harmonic_flow",
    "validate_flow",
    "bk_lower_bound",
    "thomson_lower_bound",
    "dirichlet_upper_bound",
    "green_identity_check",
    "bounds_record",
]

DENSE_MAX = 3000
DIRECT_MAX = 20000
PATH_CAP = 10**6


@dataclass(frozen=True, eq=False)
class ReversibleChain:
    """Finite reversible chain as a weighted graph.

    Parameters
    ----------
    log_mu : ndarray, shape (n,)
        Unnormalized stationary log-weights.
    edges : ndarray, shape (m, 2)
        Undirected edges, each listed once.
    log_c : ndarray, shape (m,)
        Log-conductances ``log(mu(x) p(x, y))``.
    coords : ndarray, optional
        Per-state coordinates (e.g. block magnetizations).
    meta : dict, optional
        Free-form metadata carried into exports.
    """

    log_mu: np.ndarray
    edges: np.ndarray
    log_c: np.ndarray
    coords: np.ndarray | None = None
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        log_mu = np.asarray(self.log_mu, dtype=float)
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        log_c = np.asarray(self.log_c, dtype=float)
        if log_c.shape[0] != edges.shape[0]:
            raise DomainError("one log-conductance per edge required")
        if edges.size and (edges.min() < 0 or edges.max() >= log_mu.size):
            raise DomainError("edge endpoint out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise DomainError("self-loops are implicit (holding) and must not be listed")
        for arr in (log_mu, edges, log_c):
            arr.setflags(write=False)
        object.__setattr__(self, "log_mu", log_mu)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "log_c", log_c)

    @property
    def n_states(self) -> int:
        return int(self.log_mu.size)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    def conductance_matrix(self, shift: float | None = None, mask=None) -> tuple[sp.csr_matrix, float]:
        """Symmetric sparse matrix of ``exp(log c - shift)``.

        Returns the matrix and the shift used (default: the largest log-conductance).
        """
        lc = self.log_c if mask is None else np.where(mask, self.log_c, -np.inf)
        if shift is None:
            finite = lc[np.isfinite(lc)]
            shift = float(finite.max()) if finite.size else 0.0
        w = np.exp(lc - shift)
        n = self.n_states
        i, j = self.edges[:, 0], self.edges[:, 1]
        C = sp.coo_matrix((np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                          shape=(n, n)).tocsr()
        C.sum_duplicates()
        return C, shift

    def transition_matrix(self) -> sp.csr_matrix:
        """Row-stochastic ``P`` with holding on the diagonal."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        pij = np.exp(self.log_c - self.log_mu[i])
        pji = np.exp(self.log_c - self.log_mu[j])
        n = self.n_states
        P = sp.coo_matrix((np.concatenate([pij, pji]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                          shape=(n, n)).tocsr()
        hold = 1.0 - np.asarray(P.sum(axis=1)).ravel()
        return (P + sp.diags(np.maximum(hold, 0.0))).tocsr()

    def check_substochastic(self, tol: float = 1e-12) -> float:
        """Largest ``sum_y p(x, y) - 1``; must be <= ``tol`` for a valid chain."""
        i, j = self.edges[:, 0], self.edges[:, 1]
        out = np.zeros(self.n_states)
        np.add.at(out, i, np.exp(self.log_c - self.log_mu[i]))
        np.add.at(out, j, np.exp(self.log_c - self.log_mu[j]))
        excess = float(out.max() - 1.0) if out.size else -1.0
        if excess > tol:
            raise DomainError(f"row sums of p exceed one by {excess:.3e}")
        return excess


@dataclass
class PotentialSolution:
    """Equilibrium potential and capacity.

    Attributes
    ----------
    h : ndarray
        ``h_{A,B}``; ``nan`` on states removed by the window (see :func:`solve_potential`).
    log_cap : float
        Log-capacity from the Dirichlet form of ``h``.
    log_cap_equilibrium : float
        Log-capacity from the equilibrium measure on the source side.
    e : ndarray
        Escape probabilities ``e_{A,B}`` on the source set (zero elsewhere).
    residual : float
        Max relative harmonicity defect off the boundary.
    method, iterations : str, int
        Linear solver used and its iteration count (0 for direct solves).
    A, B : ndarray
        Effective boundary sets actually used (they grow under a window).
    """

    h: np.ndarray
    log_cap: float
    log_cap_equilibrium: float
    e: np.ndarray
    residual: float
    method: str
    iterations: int
    A: np.ndarray
    B: np.ndarray
    windowed: bool = False

    @property
    def cap(self) -> float:
        return math.exp(self.log_cap)

    @property
    def cap_discrepancy(self) -> float:
        """Relative gap between the two capacity evaluations."""
        return abs(math.expm1(self.log_cap_equilibrium - self.log_cap))


@dataclass
class HittingTimeResult:
    """Mean hitting time of ``B`` from the start measure ``nu`` on ``A``."""

    log_mean: float
    nu: np.ndarray
    method: str
    A: np.ndarray
    stderr: float | None = None

    @property
    def mean(self) -> float:
        return math.exp(self.log_mean) if self.log_mean < 709 else math.inf


@dataclass
class UnitFlow:
    """Nonnegative flow on oriented edges ``src -> dst`` from ``A`` to ``B``."""

    src: np.ndarray
    dst: np.ndarray
    value: np.ndarray
    A: np.ndarray
    B: np.ndarray
    diagnostics: dict = dc_field(default_factory=dict)

    def scaled(self, factor: float) -> "UnitFlow":
        return UnitFlow(self.src, self.dst, self.value * factor, self.A, self.B, dict(self.diagnostics))


@dataclass
class FlowCheck:
    ok: bool
    clause: str | None = None
    detail: str = ""

    def __bool__(self):
        return self.ok


@dataclass
class BKResult:
    """Berman-Konsowa lower bound ``E[(sum_e f/c)^-1]`` in log form."""

    log_value: float
    rel_stderr: float
    n_paths: int
    mode: str

    @property
    def value(self) -> float:
        return math.exp(self.log_value)


def _index_set(x, n: int) -> np.ndarray:
    arr = np.unique(np.atleast_1d(np.asarray(x, dtype=np.int64)))
    if arr.size == 0:
        raise DomainError("boundary sets must be nonempty")
    if arr.min() < 0 or arr.max() >= n:
        raise DomainError("boundary state out of range")
    return arr


def _connected_at(chain, keep_edges, A, B) -> bool:
    n = chain.n_states
    e = chain.edges[keep_edges]
    # glue A into one node and B into another
    label = np.arange(n)
    label[A] = A[0]
    label[B] = B[0]
    G = sp.coo_matrix((np.ones(len(e)), (label[e[:, 0]], label[e[:, 1]])), shape=(n, n))
    _, comp = csgraph.connected_components(G, directed=False)
    return comp[A[0]] == comp[B[0]]


def communication_height(chain: ReversibleChain, A, B) -> float:
    """Largest ``t`` such that ``A`` and ``B`` are joined by edges with ``log c >= t``."""
    A = _index_set(A, chain.n_states)
    B = _index_set(B, chain.n_states)
    levels = np.unique(chain.log_c[np.isfinite(chain.log_c)])
    if levels.size == 0 or not _connected_at(chain, np.isfinite(chain.log_c), A, B):
        raise DisconnectedError("A and B are not connected")
    lo, hi = 0, levels.size - 1  # connected at levels[lo]
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if _connected_at(chain, chain.log_c >= levels[mid], A, B):
            lo = mid
        else:
            hi = mid - 1
    return float(levels[lo])


def _window_sets(chain, A, B, window):
    """Prune edges far below the bottleneck and absorb deep wells into A and B."""
    below, above = window
    L = communication_height(chain, A, B)
    keep = chain.log_c >= L - below
    strong = chain.log_c > L + above
    n = chain.n_states
    e = chain.edges[strong]
    G = sp.coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    _, comp = csgraph.connected_components(G, directed=False)
    A2 = np.flatnonzero(np.isin(comp, comp[A]))
    B2 = np.flatnonzero(np.isin(comp, comp[B]))
    if np.intersect1d(A2, B2).size:
        raise SolverFailure("window too narrow: source and target wells merged")
    return keep, A2, B2


def _pcg(K, b, diag, tol, maxiter, x0=None, energy=None, check_every=10):
    """Jacobi-preconditioned CG with an energy-norm stopping rule.

    Stops when ``r^T D^-1 r <= tol^2 * energy(x)``, i.e. when the estimated
    squared energy error is a ``tol^2`` fraction of the current capacity
    estimate.
    """
    x = np.zeros_like(b) if x0 is None else x0.copy()
    r = b - K @ x
    dinv = 1.0 / diag
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    scale = energy(x) if energy else float(b @ (dinv * b))
    for it in range(1, maxiter + 1):
        Kp = K @ p
        alpha = rz / float(p @ Kp)
        x += alpha * p
        r -= alpha * Kp
        z = dinv * r
        rz_new = float(r @ z)
        if it % check_every == 0 and energy:
            scale = energy(x)
        if rz_new <= tol * tol * max(scale, 1e-300):
            return x, it, math.sqrt(rz_new / max(scale, 1e-300))
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, maxiter, math.sqrt(rz / max(scale, 1e-300))


def solve_potential(chain: ReversibleChain, A, B, method: str = "auto", window=None,
                    tol: float = 1e-10) -> PotentialSolution:
    """Solve for the equilibrium potential ``h_{A,B}`` and the capacity.

    Parameters
    ----------
    chain : ReversibleChain
    A, B : array_like of int
        Disjoint nonempty state sets.
    method : {"auto", "dense", "direct", "cg"}
        ``auto`` uses a dense solve up to 3000 unknowns, a sparse LU up to
        ``2e4`` and Jacobi-preconditioned CG above, falling back to sparse LU
        if CG stalls.  ``cg`` raises :class:`SolverFailure` instead.
    window : tuple(float, float), optional
        ``(below, above)`` in units of log-conductance relative to the
        bottleneck level between ``A`` and ``B``.  Edges weaker than
        ``bottleneck - below`` are dropped and connected regions of edges
        stronger than ``bottleneck + above`` touching ``A`` (``B``) are
        merged into ``A`` (``B``).  This changes the capacity by a relative
        amount of order ``exp(-min(below, above))`` and keeps the linear
        system well conditioned for high barriers.  ``None`` solves exactly.
    tol : float
        CG energy-norm tolerance.
    """
    n = chain.n_states
    A = _index_set(A, n)
    B = _index_set(B, n)
    if np.intersect1d(A, B).size:
        raise DomainError("A and B must be disjoint")
    keep = np.isfinite(chain.log_c)
    windowed = window is not None
    if windowed:
        keep, A, B = _window_sets(chain, A, B, window)
    C, shift = chain.conductance_matrix(mask=keep)
    C.eliminate_zeros()
    ncomp, comp = csgraph.connected_components(C, directed=False)
    reach_A = np.isin(comp, np.unique(comp[A]))
    reach_B = np.isin(comp, np.unique(comp[B]))
    if not np.any(reach_A & reach_B):
        raise DisconnectedError("A and B are not connected (infinite resistance)")
    boundary = np.zeros(n, dtype=bool)
    boundary[A] = True
    boundary[B] = True
    interior = np.flatnonzero(~boundary & reach_A & reach_B)
    h = np.full(n, np.nan)
    h[B] = 0.0
    h[A] = 1.0
    # states whose component touches only A (or only B) are constant
    h[~boundary & reach_A & ~reach_B] = 1.0
    h[~boundary & reach_B & ~reach_A] = 0.0
    deg = np.asarray(C.sum(axis=1)).ravel()
    iters = 0
    used = "none"
    if interior.size:
        K = (sp.diags(deg[interior]) - C[interior][:, interior]).tocsr()
        b = np.asarray(C[interior][:, A].sum(axis=1)).ravel()
        ni = interior.size
        choice = method
        if method == "auto":
            choice = "dense" if ni <= DENSE_MAX else ("direct" if ni <= DIRECT_MAX else "cg")
        if choice == "dense":
            # conductances spanning many orders of magnitude trigger condition
            # warnings; accuracy is checked through the reported residual instead
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
                hi = scipy.linalg.solve(K.toarray(), b, assume_a="pos")
            used = "dense"
        elif choice == "direct":
            hi = spla.splu(K.tocsc()).solve(b)
            used = "direct"
        elif choice == "cg":
            edges_i = chain.edges[keep]
            w_i = np.exp(chain.log_c[keep] - shift)
            hfull = h.copy()

            def energy(x):
                hfull[interior] = x
                d = hfull[edges_i[:, 0]] - hfull[edges_i[:, 1]]
                ok = np.isfinite(d)
                return float(np.dot(w_i[ok], d[ok] ** 2))

            maxiter = int(50 * math.sqrt(ni)) + 1
            hi, iters, res = _pcg(K, b, deg[interior], tol, maxiter, energy=energy)
            used = "cg"
            if iters >= maxiter:
                if method == "cg":
                    raise SolverFailure(f"CG stopped at residual {res:.3e} after {iters} iterations",
                                        residual=res, iterations=iters)
                hi = spla.splu(K.tocsc()).solve(b)
                used = "cg->direct"
        else:
            raise DomainError(f"unknown method {method!r}")
        h[interior] = np.clip(hi, 0.0, 1.0)
    # capacity by the Dirichlet form over retained edges
    e_ij = chain.edges[keep]
    w = np.exp(chain.log_c[keep] - shift)
    d = h[e_ij[:, 0]] - h[e_ij[:, 1]]
    ok = np.isfinite(d)
    phi = math.fsum(w[ok] * d[ok] ** 2)
    # capacity by the equilibrium measure on A
    inA = np.zeros(n, dtype=bool)
    inA[A] = True
    flux = np.zeros(n)
    src = e_ij[:, 0]
    dst = e_ij[:, 1]
    hs, hd = np.nan_to_num(h[src]), np.nan_to_num(h[dst])
    np.add.at(flux, src, w * (hs - hd))
    np.add.at(flux, dst, w * (hd - hs))
    eq = math.fsum(flux[A])
    if phi <= 0 or eq <= 0:
        raise DisconnectedError("zero capacity between A and B")
    log_cap = shift + math.log(phi)
    log_cap_eq = shift + math.log(eq)
    e = np.zeros(n)
    e[A] = flux[A] * np.exp(shift - chain.log_mu[A])
    resid = 0.0
    if interior.size:
        resid = float(np.max(np.abs(flux[interior]) / np.maximum(deg[interior], 1e-300)))
    return PotentialSolution(h, log_cap, log_cap_eq, e, resid, used, iters, A, B, windowed)


def mean_hitting_time(chain: ReversibleChain, A, B, solution: PotentialSolution | None = None,
                      **solve_kw) -> HittingTimeResult:
    """``E_nu tau_B`` with ``nu = nu_{A,B}``, via ``sum_x mu(x) h(x) / cap``.

    ``nu`` is proportional to ``mu(a) e_{A,B}(a)`` on ``A``.
    """
    sol = solution if solution is not None else solve_potential(chain, A, B, **solve_kw)
    h = sol.h
    pos = np.isfinite(h) & (h > 0)
    log_num = float(logsumexp(chain.log_mu[pos] + np.log(h[pos])))
    Aset = sol.A
    with np.errstate(divide="ignore"):
        lw = chain.log_mu[Aset] + np.log(np.maximum(sol.e[Aset], 0.0))
    nu = np.exp(lw - logsumexp(lw))
    return HittingTimeResult(log_num - sol.log_cap, nu, "exact", Aset)


def expected_hitting_times(chain: ReversibleChain, B) -> np.ndarray:
    """First-step analysis: ``w(x) = E_x tau_B`` (``tau_B`` the first time >= 0 in ``B``).

    Solves ``w = 1 + P w`` off ``B``, ``w = 0`` on ``B``.  Independent of
    :func:`solve_potential`; used as an oracle.
    """
    n = chain.n_states
    B = _index_set(B, n)
    P = chain.transition_matrix()
    off = np.setdiff1d(np.arange(n), B)
    M = sp.identity(off.size, format="csc") - P[off][:, off].tocsc()
    w = np.zeros(n)
    if off.size <= DENSE_MAX:
        w[off] = np.linalg.solve(M.toarray(), np.ones(off.size))
    else:
        w[off] = spla.spsolve(M, np.ones(off.size))
    return w


def harmonic_flow(chain: ReversibleChain, solution: PotentialSolution) -> UnitFlow:
    """Flow ``f(x, y) = c(x, y) (h(x) - h(y))_+ / cap``."""
    h = solution.h
    i, j = chain.edges[:, 0], chain.edges[:, 1]
    d = h[i] - h[j]
    ok = np.isfinite(d) & (d != 0)
    with np.errstate(divide="ignore"):
        val = np.exp(chain.log_c[ok] - solution.log_cap + np.log(np.abs(d[ok])))
    fwd = d[ok] > 0
    src = np.where(fwd, i[ok], j[ok])
    dst = np.where(fwd, j[ok], i[ok])
    keep = val > 0
    return UnitFlow(src[keep], dst[keep], val[keep], solution.A, solution.B,
                    {"kind": "harmonic"})


def _flow_balance(flow: UnitFlow, n: int):
    out = np.zeros(n)
    inn = np.zeros(n)
    np.add.at(out, flow.src, flow.value)
    np.add.at(inn, flow.dst, flow.value)
    return out, inn


def validate_flow(chain: ReversibleChain, flow: UnitFlow, A=None, B=None, tol: float = 1e-12,
                  raise_on_fail: bool = False) -> FlowCheck:
    """Check the four unit-flow clauses; return the first violated one.

    Clauses: (i) nonnegative values on chain edges with antisymmetric
    support, (ii) Kirchhoff at states outside ``A`` and ``B``, (iii) unit net
    outflow from ``A`` and unit net inflow into ``B``, (iv) acyclic support.
    """
    n = chain.n_states
    A = _index_set(flow.A if A is None else A, n)
    B = _index_set(flow.B if B is None else B, n)
    res = _validate(chain, flow, A, B, tol)
    if raise_on_fail and not res.ok:
        raise FlowValidationError(f"clause {res.clause}: {res.detail}")
    return res


def _validate(chain, flow, A, B, tol):
    n = chain.n_states
    src, dst, val = flow.src, flow.dst, flow.value
    if np.any(val < 0) or not np.all(np.isfinite(val)):
        return FlowCheck(False, "i", "negative or non-finite flow value")
    pos = val > 0
    src, dst, val = src[pos], dst[pos], val[pos]
    key = np.minimum(src, dst) * n + np.maximum(src, dst)
    ekey = np.minimum(chain.edges[:, 0], chain.edges[:, 1]) * n + np.maximum(chain.edges[:, 0], chain.edges[:, 1])
    missing = ~np.isin(key, ekey)
    if np.any(missing):
        k = int(np.flatnonzero(missing)[0])
        return FlowCheck(False, "i", f"edge ({src[k]},{dst[k]}) is not a chain edge")
    okey = src * n + dst
    rkey = dst * n + src
    both = np.isin(okey, rkey)
    if np.any(both):
        k = int(np.flatnonzero(both)[0])
        return FlowCheck(False, "i", f"edge ({src[k]},{dst[k]}) carries flow in both directions")
    if np.unique(okey).size != okey.size:
        return FlowCheck(False, "i", "duplicate oriented edge")
    out, inn = _flow_balance(UnitFlow(src, dst, val, A, B), n)
    mask = np.ones(n, dtype=bool)
    mask[A] = False
    mask[B] = False
    defect = np.abs(out - inn) * mask
    if defect.size and defect.max() > tol:
        x = int(np.argmax(defect))
        return FlowCheck(False, "ii", f"Kirchhoff defect {defect[x]:.3e} at state {x}")
    net_a = math.fsum(out[A]) - math.fsum(inn[A])
    net_b = math.fsum(inn[B]) - math.fsum(out[B])
    if abs(net_a - 1.0) > tol or abs(net_b - 1.0) > tol:
        return FlowCheck(False, "iii", f"net outflow from A {net_a:.15g}, net inflow into B {net_b:.15g}")
    ts = graphlib.TopologicalSorter()
    for a, b in zip(src.tolist(), dst.tolist()):
        ts.add(b, a)
    try:
        ts.prepare()
    except graphlib.CycleError as exc:
        cyc = exc.args[1] if len(exc.args) > 1 else []
        return FlowCheck(False, "iv", f"cycle through states {list(cyc)[:6]}")
    return FlowCheck(True)


def _flow_chain(chain, flow):
    """Out-edge tables of the flow-induced Markov chain and ``w = f/c`` (scaled)."""
    n = chain.n_states
    ekey = {}
    lo = np.minimum(chain.edges[:, 0], chain.edges[:, 1])
    hi = np.maximum(chain.edges[:, 0], chain.edges[:, 1])
    order = np.argsort(lo * n + hi)
    skeys = (lo * n + hi)[order]
    pos = flow.value > 0
    src, dst, val = flow.src[pos], flow.dst[pos], flow.value[pos]
    fk = np.minimum(src, dst) * n + np.maximum(src, dst)
    idx = order[np.searchsorted(skeys, fk)]
    with np.errstate(divide="ignore"):
        logw = np.log(val) - chain.log_c[idx]
    M = float(logw.max())
    w = np.exp(logw - M)
    srt = np.argsort(src, kind="stable")
    src, dst, val, w = src[srt], dst[srt], val[srt], w[srt]
    out = np.zeros(n)
    np.add.at(out, src, val)
    start = np.searchsorted(src, np.arange(n + 1))
    q = val / out[src]
    del ekey
    return src, dst, q, w, M, out, start


def bk_lower_bound(chain: ReversibleChain, flow: UnitFlow, mode: str = "exact", paths: int = 10000,
                   seed: int = 0, path_cap: int = PATH_CAP) -> BKResult:
    """Berman-Konsowa lower bound for ``cap(A, B)`` from a unit flow.

    The flow chain starts at ``a`` in ``A`` with probability equal to the
    net outflow of ``a`` and moves along ``(x, y)`` with probability
    ``f(x, y) / F(x)``.  The bound is ``E[(sum_{e in path} f(e)/c(e))^-1]``.

    Parameters
    ----------
    mode : {"exact", "monte_carlo"}
        ``exact`` enumerates all support paths; it switches to Monte Carlo
        when there are more than ``path_cap`` paths.
    paths, seed : int
        Monte Carlo sample size and master seed (path ``k`` uses its own
        Philox stream).
    """
    n = chain.n_states
    A = _index_set(flow.A, n)
    Bmask = np.zeros(n, dtype=bool)
    Bmask[_index_set(flow.B, n)] = True
    src, dst, q, w, M, out, start = _flow_chain(chain, flow)
    inn = np.zeros(n)
    np.add.at(inn, dst, q * out[src])
    init = np.maximum(out[A] - inn[A], 0.0)
    init = init / init.sum()
    if mode == "exact":
        count = _count_paths(n, src, dst, start, A[init > 0], Bmask, path_cap)
        if count <= path_cap:
            val = _enumerate_bk(src, dst, q, w, start, A, init, Bmask)
            return BKResult(-M + math.log(val), 0.0, int(count), "exact")
        mode = "monte_carlo"
    if mode != "monte_carlo":
        raise DomainError(f"unknown mode {mode!r}")
    inv = _sample_bk(src, dst, q, w, start, A, init, Bmask, paths, seed)
    mean = float(inv.mean())
    se = float(inv.std(ddof=1) / math.sqrt(inv.size)) if inv.size > 1 else 0.0
    return BKResult(-M + math.log(mean), se / mean, int(inv.size), "monte_carlo")


def _count_paths(n, src, dst, start, sources, Bmask, cap):
    # number of support paths from each state to B, in reverse topological order
    ts = graphlib.TopologicalSorter()
    for a, b in zip(src.tolist(), dst.tolist()):
        ts.add(b, a)
    order = list(ts.static_order())
    cnt = {}
    for x in reversed(order):
        if Bmask[x]:
            cnt[x] = 1
            continue
        c = 0
        for k in range(start[x], start[x + 1]):
            c += cnt.get(int(dst[k]), 0)
            if c > cap:
                c = cap + 1
                break
        cnt[x] = c
    total = sum(cnt.get(int(a), 0) for a in sources)
    return min(total, cap + 1)


def _enumerate_bk(src, dst, q, w, start, A, init, Bmask):
    terms = []
    stack = [(int(a), float(p), 0.0) for a, p in zip(A, init) if p > 0]
    while stack:
        x, prob, s = stack.pop()
        if Bmask[x]:
            terms.append(prob / s)
            continue
        for k in range(start[x], start[x + 1]):
            stack.append((int(dst[k]), prob * q[k], s + w[k]))
    return math.fsum(terms)


def _sample_bk(src, dst, q, w, start, A, init, Bmask, R, seed, chunk=256):
    n = Bmask.size
    deg = np.diff(start)
    # cumulative within-row probabilities offset by row number
    row = np.repeat(np.arange(n), deg)
    cq = np.zeros_like(q)
    if q.size:
        cs = np.cumsum(q)
        row_start_cs = np.concatenate([[0.0], cs])[start[:-1]]
        cq = cs - row_start_cs[row]
        cq = np.minimum(cq, 1.0)
        last = start[1:] - 1
        has = deg > 0
        cq[last[has]] = 1.0
    key = row + cq
    gens = [rng.generator(seed, rng.PATHS, k) for k in range(R)]
    buf = np.stack([g.random(chunk) for g in gens])
    pos = 0
    u0 = buf[:, pos]
    pos += 1
    cinit = np.cumsum(init)
    cinit[-1] = 1.0
    x = A[np.minimum(np.searchsorted(cinit, u0, side="right"), A.size - 1)]
    s = np.zeros(R)
    active = ~Bmask[x]
    steps = 0
    while np.any(active):
        if pos == chunk:
            buf = np.stack([g.random(chunk) for g in gens])
            pos = 0
        u = buf[:, pos]
        pos += 1
        ia = np.flatnonzero(active)
        xa = x[ia]
        if np.any(deg[xa] == 0):
            raise FlowValidationError("flow chain stuck at a state with no outflow")
        k = np.searchsorted(key, xa + u[ia], side="right")
        k = np.clip(k, start[xa], start[xa + 1] - 1)
        s[ia] += w[k]
        x[ia] = dst[k]
        active[ia] = ~Bmask[x[ia]]
        steps += 1
        if steps > 50 * n + 10:
            raise FlowValidationError("flow chain failed to reach B")
    return 1.0 / s


def thomson_lower_bound(chain: ReversibleChain, flow: UnitFlow) -> float:
    """Log of ``(sum_e f(e)^2 / c(e))^-1``, a deterministic lower bound on ``cap``."""
    n = chain.n_states
    lo = np.minimum(chain.edges[:, 0], chain.edges[:, 1])
    hi = np.maximum(chain.edges[:, 0], chain.edges[:, 1])
    order = np.argsort(lo * n + hi)
    skeys = (lo * n + hi)[order]
    pos = flow.value > 0
    s, d, v = flow.src[pos], flow.dst[pos], flow.value[pos]
    idx = order[np.searchsorted(skeys, np.minimum(s, d) * n + np.maximum(s, d))]
    t = 2 * np.log(v) - chain.log_c[idx]
    M = float(t.max())
    return -(M + math.log(math.fsum(np.exp(t - M))))


def dirichlet_upper_bound(chain: ReversibleChain, u, A, B, tol: float = 1e-12) -> float:
    """Log of the Dirichlet form ``Phi(u) = sum_edges c (u(x) - u(y))^2`` (an upper bound on cap).

    ``u`` must equal 1 on ``A``, 0 on ``B`` and take values in ``[0, 1]``.
    """
    n = chain.n_states
    u = np.asarray(u, dtype=float)
    A = _index_set(A, n)
    B = _index_set(B, n)
    if u.shape != (n,):
        raise DomainError("test function must have one value per state")
    if np.any(np.abs(u[A] - 1.0) > tol) or np.any(np.abs(u[B]) > tol):
        raise DomainError("test function violates the boundary values")
    if np.any(u < -tol) or np.any(u > 1 + tol) or not np.all(np.isfinite(u)):
        raise DomainError("test function must take values in [0, 1]")
    d = u[chain.edges[:, 0]] - u[chain.edges[:, 1]]
    nz = d != 0
    if not np.any(nz):
        return -math.inf
    t = chain.log_c[nz] + 2 * np.log(np.abs(d[nz]))
    M = float(t.max())
    return M + math.log(math.fsum(np.exp(t - M)))


def green_identity_check(chain: ReversibleChain, a: int, B) -> float:
    """Max relative deviation between a direct Green-function solve and its potential-theoretic form.

    Checks ``G(a, y) = mu(y) h_{a,B}(y) / (mu(a) e_{a,B}(a))`` for all
    ``y`` outside ``B`` and the symmetry ``mu(x) G(x, y) = mu(y) G(y, x)``.
    ``G(x, y)`` counts expected visits to ``y`` before ``tau_B``, including
    time zero.
    """
    n = chain.n_states
    if n > 2000:
        raise DomainError("green_identity_check is limited to 2000 states")
    B = _index_set(B, n)
    if a in set(B.tolist()):
        raise DomainError("a must lie outside B")
    P = chain.transition_matrix().toarray()
    off = np.setdiff1d(np.arange(n), B)
    G = np.linalg.inv(np.eye(off.size) - P[np.ix_(off, off)])
    sol = solve_potential(chain, [a], B, method="dense")
    ia = int(np.searchsorted(off, a))
    pred = np.exp(chain.log_mu[off] - chain.log_mu[a]) * sol.h[off] / sol.e[a]
    dev = np.max(np.abs(G[ia] - pred) / np.abs(G[ia]))
    mu = np.exp(chain.log_mu[off] - chain.log_mu[off].max())
    S = mu[:, None] * G
    sym = np.max(np.abs(S - S.T) / np.maximum(np.abs(S), 1e-300))
    return float(max(dev, sym))


def bounds_record(solution: PotentialSolution | None = None, lower: float | None = None,
                  upper: float | None = None, method: str = "", **extra) -> dict:
    """JSON-ready record ``{cap_log, lower_log, upper_log, residual, method, iterations}``."""
    rec = {
        "cap_log": None if solution is None else solution.log_cap,
        "lower_log": lower,
        "upper_log": upper,
        "residual": None if solution is None else solution.residual,
        "method": method or (solution.method if solution else ""),
        "iterations": None if solution is None else solution.iterations,
    }
    rec.update(extra)
    return rec
