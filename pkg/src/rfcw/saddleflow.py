"""Near-saddle test function, its residual, and a unit flow through the saddle.

The test function is ``g(x) = Phi(sqrt(beta N |g_1|) (v, x - z*))`` with
``Phi`` the standard normal CDF and ``(g_1, v)`` the negative eigenvalue and
the matching vector of the rate-weighted Hessian.  Its Dirichlet form on the
lumped chain is an upper bound for the capacity.  The unit flow built here
follows ``c grad g`` through a slab around the saddle, is corrected layer by
layer so that Kirchhoff's law holds exactly, and is continued by monotone
staircase paths into both wells; its Berman-Konsowa value is a lower bound.

All flow edges increase the total magnetization in the direction from the
start well to the target well, so the support is acyclic by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import ndtr

from .errors import DomainError, FlowValidationError
from .kramers import finite_n_capacity_bound
from .landscape import BarrierSpec
from .meso import Partition, SaddleData, grid_total, layer_states, meso_saddle, min_energy_curve
from .model import SystemParams
from .potential import ReversibleChain, UnitFlow, dirichlet_upper_bound, validate_flow

__all__ = [
    "SaddleNeighborhood",
    "make_neighborhood",
    "test_function",
    "extended_test_function",
    "harmonic_residual",
    "upper_bound_via_g",
    "build_saddle_flow",
]

SLAB_WIDTH = 4.5
TUBE_WIDTH = 5.0
SLAB_MAX_FRACTION = 0.6


def test_function(saddle: SaddleData, x, N: int, beta: float, orientation: int = 1):
    """``Phi(o sqrt(beta N |g_1|) (v, x - z*))`` for one point or an array of points."""
    s = np.asarray(x, dtype=float) - saddle.z_star_meso
    a = orientation * math.sqrt(beta * N * abs(saddle.gamma1)) * (s @ saddle.v)
    return ndtr(a)


@dataclass(eq=False)
class SaddleNeighborhood:
    """Geometry around the saddle on a lumped chain.

    Attributes
    ----------
    chain, partition, params, barrier, saddle
        The lumped chain and the data it was built from.
    A, B : ndarray
        Start and target layers (state indices).
    direction : int
        ``+1`` if the target layer has larger total magnetization.
    sigma_g : float
        ``1 / sqrt(beta N |g_1|)``, the width of ``g`` in ``(v, x)`` units.
    slab_width, tube_width : float
        Half-widths of the flow slab (along ``v``) and of the tube around
        the minimal-energy curve, in units of the respective Gaussian widths.
    rho_up : float
        Half-width of the strip where the upper-bound test function is not
        constant.
    """

    chain: ReversibleChain
    partition: Partition
    params: SystemParams
    barrier: BarrierSpec
    saddle: SaddleData
    A: np.ndarray
    B: np.ndarray
    direction: int
    sigma_g: float
    slab_width: float
    tube_width: float
    rho_up: float
    diagnostics: dict = dc_field(default_factory=dict)

    @property
    def N(self) -> int:
        return self.params.N

    def projection(self, x=None) -> np.ndarray:
        """``(v, x - z*)`` for all chain states (or given points)."""
        x = self.chain.coords if x is None else np.asarray(x)
        return (x - self.saddle.z_star_meso) @ self.saddle.v


def make_neighborhood(chain: ReversibleChain, partition: Partition, params: SystemParams,
                      barrier: BarrierSpec, slab_width: float = SLAB_WIDTH,
                      tube_width: float = TUBE_WIDTH, rho_up: float | None = None,
                      convention: str = "metropolis") -> SaddleNeighborhood:
    """Saddle data and neighborhood parameters for a lumped chain.

    ``rho_up`` defaults to ``2 sqrt(ln N / (beta |g_1| N))``, i.e. a strip
    of ``2 sqrt(ln N)`` Gaussian widths on each side of the saddle.
    """
    if chain.coords is None or chain.coords.ndim != 2:
        raise DomainError("a lumped chain with block coordinates is required")
    sd = meso_saddle(barrier.saddle, partition, params.beta, convention)
    N = params.N
    m0 = grid_total(N, barrier.start.m_star)
    M = grid_total(N, barrier.target.m_star)
    A = layer_states(chain, m0)
    B = layer_states(chain, M)
    direction = 1 if M > m0 else -1
    sigma = 1.0 / math.sqrt(params.beta * N * abs(sd.gamma1))
    if rho_up is None:
        rho_up = 2.0 * sigma * math.sqrt(math.log(N))
    return SaddleNeighborhood(chain, partition, params, barrier, sd, A, B, direction, sigma,
                              slab_width, tube_width, rho_up)


def extended_test_function(nb: SaddleNeighborhood) -> np.ndarray:
    """Test function equal to 1 on the start side and 0 on the target side.

    Inside the strip ``|(v, x - z*)| < rho_up`` it is ``1 - g`` (oriented so
    that ``g`` grows towards the target); outside it is constant, and it is
    pinned to the boundary values on the two layers.
    """
    p = nb.direction * nb.projection()
    u = 1.0 - ndtr(p / nb.sigma_g)
    u[p <= -nb.rho_up] = 1.0
    u[p >= nb.rho_up] = 0.0
    u[nb.A] = 1.0
    u[nb.B] = 0.0
    return u


def upper_bound_via_g(nb: SaddleNeighborhood) -> dict:
    """Dirichlet form of the extended test function and the closed-form bound.

    Returns ``{"log_phi": ..., "log_closed_form": ...}``; both are logs of
    ``Z cap`` upper estimates.  Only ``log_phi`` is a rigorous bound for the
    chain at hand.
    """
    u = extended_test_function(nb)
    log_phi = dirichlet_upper_bound(nb.chain, u, nb.A, nb.B)
    closed = finite_n_capacity_bound(nb.barrier.saddle.m_star, nb.partition, nb.params,
                                     nb.saddle.convention)
    return {"log_phi": log_phi, "log_closed_form": closed}


def harmonic_residual(saddle: SaddleData, partition: Partition, params: SystemParams, rho: float,
                      return_field: bool = False):
    """Max over the box ``|x_l - z*_l| <= rho`` of ``|L g| / envelope``.

    ``L`` is the generator of the chain with constant up-rates ``r_l`` that
    is reversible for the Gaussian surrogate
    ``Q(x) ~ exp(-(beta N / 2) (x - z*, A (x - z*)))``; the envelope is
    ``sqrt(beta |g_1| / (2 pi N)) exp(-beta N |g_1| (v, x - z*)^2 / 2) sum_l r_l v_l``.
    """
    N, beta = params.N, params.beta
    n = partition.n
    z = saddle.z_star_meso
    sizes = partition.sizes
    ranges = []
    for l in range(n):
        k = np.arange(sizes[l] + 1)
        x = (2 * k - sizes[l]) / N
        keep = np.abs(x - z[l]) <= rho
        # both neighbors must exist on the grid
        keep &= (k > 0) & (k < sizes[l])
        ranges.append(x[keep])
    if any(r.size == 0 for r in ranges):
        raise DomainError("box contains no interior grid points")
    X = np.stack(np.meshgrid(*ranges, indexing="ij"), axis=-1).reshape(-1, n)
    G1 = abs(saddle.gamma1)
    b = math.sqrt(beta * N * G1)

    def quad(y):
        d = y - z
        return np.einsum("ij,jk,ik->i", d, saddle.A, d)

    g0 = ndtr(b * ((X - z) @ saddle.v))
    q0 = quad(X)
    Lg = np.zeros(X.shape[0])
    for l in range(n):
        e = np.zeros(n)
        e[l] = 2.0 / N
        gp = ndtr(b * ((X + e - z) @ saddle.v))
        gm = ndtr(b * ((X - e - z) @ saddle.v))
        ratio = np.exp(-0.5 * beta * N * (quad(X - e) - q0))
        Lg += saddle.r[l] * ((gp - g0) - ratio * (g0 - gm))
    s = (X - z) @ saddle.v
    env = math.sqrt(beta * G1 / (2 * math.pi * N)) * np.exp(-0.5 * beta * N * G1 * s * s) \
        * float(np.dot(saddle.r, saddle.v))
    ratio = np.abs(Lg) / env
    if return_field:
        return float(ratio.max()), X, ratio
    return float(ratio.max())


# flow construction ------------------------------------------------------------

class _Grid:
    """Index arithmetic on the row-major lumped grid."""

    def __init__(self, chain: ReversibleChain, partition: Partition):
        self.sizes = partition.sizes
        self.n = partition.n
        self.N = partition.N
        self.shape = tuple(int(s) + 1 for s in self.sizes)
        self.strides = np.array([int(np.prod(self.shape[l + 1:])) for l in range(self.n)], dtype=np.int64)
        k = np.rint((chain.coords * self.N + self.sizes) / 2.0).astype(np.int64)
        self.k = k
        self.level = k.sum(axis=1)
        # log conductance of the edge from state i in direction +e_l (nan if absent)
        self.up_logc = np.full((chain.n_states, self.n), np.nan)
        e = chain.edges
        diff = e[:, 1] - e[:, 0]
        for l in range(self.n):
            sel = diff == self.strides[l]
            self.up_logc[e[sel, 0], l] = chain.log_c[sel]

    def step(self, i: int, l: int, s: int) -> int | None:
        k = self.k[i, l] + s
        if k < 0 or k > self.sizes[l]:
            return None
        return int(i + s * self.strides[l])

    def logc(self, i: int, l: int, s: int) -> float:
        """Log-conductance of the edge from ``i`` one step in direction ``s e_l``."""
        if s > 0:
            return float(self.up_logc[i, l])
        j = self.step(i, l, -1)
        return float(self.up_logc[j, l])

    def index(self, k) -> int:
        return int(np.dot(k, self.strides))


def _curve_point(nb, level):
    m = (2.0 * level - nb.N) / nb.N
    m = min(max(m, -1 + 1e-9), 1 - 1e-9)
    return min_energy_curve(m, nb.partition, nb.params.beta)


def _curve_path(grid, nb, start: int, stop_level: int, s: int) -> list[int]:
    """Monotone path from ``start`` moving by ``s`` per step until ``stop_level``, hugging the curve."""
    path = [start]
    cur = start
    while grid.level[cur] != stop_level:
        nxt_level = grid.level[cur] + s
        target = _curve_point(nb, nxt_level)
        best, best_d = None, math.inf
        for l in range(grid.n):
            j = grid.step(cur, l, s)
            if j is None or not np.isfinite(grid.logc(cur, l, s)):
                continue
            d = float(np.sum((nb.chain.coords[j] - target) ** 2))
            if d < best_d:
                best, best_d = j, d
        if best is None:
            raise FlowValidationError("monotone path blocked at the grid boundary")
        path.append(best)
        cur = best
    return path


def _staircase(grid, src: int, dst: int, s: int) -> list[int]:
    """Monotone staircase from ``src`` to ``dst`` keeping the remaining steps balanced."""
    need = s * (grid.k[dst] - grid.k[src])
    if np.any(need < 0):
        raise FlowValidationError("staircase target not reachable monotonically")
    total = need.astype(float)
    rem = need.copy()
    path = [src]
    cur = src
    while rem.sum() > 0:
        frac = np.where(total > 0, rem / np.maximum(total, 1), -1.0)
        l = int(np.argmax(frac))
        cur = grid.step(cur, l, s)
        rem[l] -= 1
        path.append(cur)
    return path


def _layer_split(rows, cols, phi, legs, fins, q, correction: str, iters: int = 500):
    """Split the inflow ``fins`` of one layer over the forward edges.

    Every rule returns nonnegative values whose row sums equal ``fins``
    exactly, so Kirchhoff's law holds at every state.

    ``sinkhorn`` rescales ``phi`` as ``a_i phi_ij b_j`` so that the row sums
    are ``fins`` and the column sums follow the inflow profile of ``phi`` on
    the next layer.  ``proportional`` splits ``fins`` in the ratio of
    ``phi``.  ``additive`` is ``phi + q (fin - sum phi)``, clipped at zero.

    Returns the edge values and the total clipped mass.
    """
    n_rows = fins.size
    rowsum = np.bincount(rows, weights=phi, minlength=n_rows)
    clipped = 0.0
    if correction == "sinkhorn":
        uc, cidx = np.unique(cols, return_inverse=True)
        target = np.bincount(cidx, weights=phi, minlength=uc.size)
        target = target / target.sum() * fins.sum()
        a = np.ones(n_rows)
        b = np.ones(uc.size)
        k = np.maximum(phi, 1e-300)
        for _ in range(iters):
            a = fins / np.maximum(np.bincount(rows, weights=k * b[cidx], minlength=n_rows), 1e-300)
            colsum = np.bincount(cidx, weights=k * a[rows], minlength=uc.size)
            b_new = target / np.maximum(colsum, 1e-300)
            if np.max(np.abs(b_new / b - 1.0)) < 1e-12:
                b = b_new
                break
            b = b_new
        f = a[rows] * k * b[cidx]
    elif correction == "proportional":
        f = phi.copy()
        zero = rowsum[rows] <= 0
        f[zero] = 1.0
    elif correction == "additive":
        qq = q[legs]
        qsum = np.bincount(rows, weights=qq, minlength=n_rows)
        f = phi + qq / qsum[rows] * (fins - rowsum)[rows]
        neg = f < 0
        clipped = float(-f[neg].sum())
        f[neg] = 0.0
        dead = np.bincount(rows, weights=f, minlength=n_rows) <= 0
        f[dead[rows]] = (qq / qsum[rows])[dead[rows]]
    else:
        raise DomainError(f"unknown correction {correction!r}")
    tot = np.bincount(rows, weights=f, minlength=n_rows)
    return f * (fins / tot)[rows], clipped


class _TooWide(Exception):
    pass


def build_saddle_flow(nb: SaddleNeighborhood, correction: str = "sinkhorn",
                      max_shrink: int = 20) -> UnitFlow:
    """Unit flow from the start layer to the target layer through the saddle.

    Inside the slab ``|(v, x - z*)| <= slab_width * sigma_g`` (restricted to
    a tube around the minimal-energy curve) the flow starts from
    ``phi_l(x) = c(x, x + s e_l) (g(x + s e_l) - g(x))`` and each state
    passes on exactly what it receives.  ``correction`` picks how a layer's
    inflow is split over its forward edges (see :func:`_layer_split`):
    ``sinkhorn`` (default) rescales ``phi`` to match both the inflow and the
    profile of ``phi`` on the next layer, ``proportional`` follows the ratio
    of ``phi`` and ``additive`` distributes ``in(x) - sum_l phi_l(x)`` with
    weights ``q_l = v_check_l / sum v_check`` and clips negative values (the
    clipped mass is reported in ``diagnostics``).  Outside the slab a single path along the curve joins
    the start layer to a corner point, from which staircase paths fan out to
    the slab's entry states; the exit side mirrors this.  If the tube is
    too wide for the corner points to fit between the boundary layers it is
    narrowed by 20% and the construction repeated.
    """
    tube = nb.tube_width
    for _ in range(max_shrink):
        try:
            return _build(nb, tube, correction)
        except _TooWide:
            tube *= 0.8
    raise FlowValidationError("tube could not be fitted between the boundary layers")


def _build(nb: SaddleNeighborhood, tube_width: float, correction: str) -> UnitFlow:
    chain = nb.chain
    grid = _Grid(chain, nb.partition)
    s = nb.direction
    n = grid.n
    N = nb.N
    beta = nb.params.beta
    sd = nb.saddle
    proj = nb.projection()
    b = 1.0 / nb.sigma_g
    gval = ndtr(s * b * proj)
    JA = int(grid.level[nb.A[0]])
    JB = int(grid.level[nb.B[0]])

    # slab levels along the curve
    levels = np.arange(JA, JB + s, s)
    curve = {int(J): _curve_point(nb, J) for J in levels}
    cproj = np.array([s * float((curve[int(J)] - sd.z_star_meso) @ sd.v) for J in levels])
    # keep the slab well inside the interval between the two boundary layers
    w_lo = min(nb.slab_width * nb.sigma_g, SLAB_MAX_FRACTION * abs(cproj[0]))
    w_hi = min(nb.slab_width * nb.sigma_g, SLAB_MAX_FRACTION * abs(cproj[-1]))
    inside = (cproj >= -w_lo) & (cproj <= w_hi)
    if not np.any(inside):
        raise DomainError("slab contains no layer")
    slab_levels = levels[inside]
    j_in, j_out = int(slab_levels[0]), int(slab_levels[-1])
    if (j_in - JA) * s <= 0 or (JB - j_out) * s <= 0:
        raise DomainError("slab reaches the boundary layers; wells too close to the saddle")

    lam = sd.lambda_hat
    tube_r2 = tube_width ** 2 / (beta * N)

    def in_tube(i: int) -> bool:
        J = int(grid.level[i])
        d = chain.coords[i] - curve[J]
        return float(np.sum(lam * d * d)) <= tube_r2

    q = sd.v_check / sd.v_check.sum()
    scale = [1.0]

    def phi_out(i: int):
        out = {}
        for l in range(n):
            j = grid.step(i, l, s)
            if j is None:
                continue
            lc = grid.logc(i, l, s)
            if not np.isfinite(lc):
                continue
            out[l] = (j, math.exp(lc) * max(gval[j] - gval[i], 0.0) / scale[0])
        return out

    # entry distribution: normalized phi flux from the previous layer into the tube at j_in
    prev = layer_states(chain, (2.0 * (j_in - s) - N) / N)
    inflow: dict[int, float] = {}
    for i in prev.tolist():
        for l, (j, val) in phi_out(i).items():
            if val > 0 and in_tube(j):
                inflow[j] = inflow.get(j, 0.0) + val
    tot = math.fsum(inflow.values())
    if not tot > 0:
        raise FlowValidationError("no phi flux enters the slab")
    inflow = {k: v / tot for k, v in inflow.items()}
    scale[0] = tot
    entry = dict(inflow)

    flows: dict[tuple[int, int], float] = {}
    clipped = 0.0
    rerouted = 0
    cur = inflow
    for J in range(j_in, j_out, s):
        rows, cols, phi, legs = [], [], [], []
        fins = []
        for i, fin in cur.items():
            if fin <= 0:
                continue
            po = {l: (j, val) for l, (j, val) in phi_out(i).items() if in_tube(j)}
            if not po:
                # leave the tube along any available forward edge
                po = phi_out(i)
                rerouted += 1
                if not po:
                    raise FlowValidationError(f"state {i} has no forward edge")
            r = len(fins)
            fins.append(fin)
            for l, (j, val) in po.items():
                rows.append(r)
                cols.append(j)
                phi.append(val)
                legs.append(l)
        rows = np.array(rows)
        phi = np.array(phi)
        fins = np.array(fins)
        src_states = np.array([i for i, fin in cur.items() if fin > 0])
        # normalize phi to unit flux through the layer
        if phi.sum() > 0:
            phi = phi / phi.sum()
        f, clip = _layer_split(rows, np.array(cols), phi, np.array(legs), fins, q, correction)
        clipped += clip
        nxt: dict[int, float] = {}
        for r, j, val in zip(rows.tolist(), cols, f.tolist()):
            if val <= 0:
                continue
            i = int(src_states[r])
            flows[(i, j)] = flows.get((i, j), 0.0) + val
            nxt[j] = nxt.get(j, 0.0) + val
        cur = nxt
    exit_mass = cur

    # start side: single path along the curve to a corner, then staircases
    ent = np.array(list(entry))
    kent = grid.k[ent]
    corner_k = kent.min(axis=0) if s > 0 else kent.max(axis=0)
    xa = grid.index(corner_k)
    if (grid.level[xa] - JA) * s <= 0:
        raise _TooWide("entry corner lies behind the start layer")
    head = _curve_path(grid, nb, xa, JA, -s)[::-1]
    for a, c in zip(head[:-1], head[1:]):
        flows[(a, c)] = flows.get((a, c), 0.0) + 1.0
    for y, w in entry.items():
        path = _staircase(grid, xa, y, s)
        for a, c in zip(path[:-1], path[1:]):
            flows[(a, c)] = flows.get((a, c), 0.0) + w

    # target side: staircases into a corner, then a single path to the target layer
    ex = np.array([k for k, v in exit_mass.items() if v > 0])
    kex = grid.k[ex]
    corner_k = kex.max(axis=0) if s > 0 else kex.min(axis=0)
    xb = grid.index(corner_k)
    if (grid.level[xb] - JB) * s >= 0:
        raise _TooWide("exit corner lies beyond the target layer")
    for y in ex.tolist():
        w = exit_mass[y]
        path = _staircase(grid, y, xb, s)
        for a, c in zip(path[:-1], path[1:]):
            flows[(a, c)] = flows.get((a, c), 0.0) + w
    tail = _curve_path(grid, nb, xb, JB, s)
    for a, c in zip(tail[:-1], tail[1:]):
        flows[(a, c)] = flows.get((a, c), 0.0) + 1.0

    keys = np.array(list(flows), dtype=np.int64).reshape(-1, 2)
    vals = np.array(list(flows.values()))
    diag = {"kind": "saddle", "clipped_mass": clipped, "rerouted": rerouted,
            "slab_levels": (j_in, j_out), "slab_widths": (w_lo / nb.sigma_g, w_hi / nb.sigma_g),
            "entry_states": len(entry),
            "exit_states": int(ex.size), "tube_width": tube_width, "corner_start": xa, "corner_end": xb}
    flow = UnitFlow(keys[:, 0], keys[:, 1], vals, nb.A, nb.B, diag)
    check = validate_flow(chain, flow, tol=1e-10)
    diag["valid"] = bool(check.ok)
    if not check.ok:
        raise FlowValidationError(f"constructed flow violates clause {check.clause}: {check.detail}")
    return flow
