"""Coarse graining into field blocks and the mesoscopic landscape.

The field support is cut into ``n`` equal intervals; block ``l`` collects the
sites whose field lies in interval ``l``.  The block magnetizations
``x_l = (1/N) sum_{i in block l} sigma_i`` live on the grid
``{-rho_l, -rho_l + 2/N, ..., rho_l}``.  For block-constant fields the
dynamics of ``x`` is again a Markov chain (the lumped chain); otherwise the
lumped chain built here uses the block mean fields and is flagged as
approximate.

Grid states are enumerated in row-major order of the up-spin counts
``k_l = (x_l + rho_l) N / 2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import gammaln

from .errors import DomainError, NotASaddleError
from .landscape import Landscape1D
from .model import RandomField, SystemParams
from .potential import ReversibleChain

__all__ = [
    "Partition",
    "MesoLandscape",
    "SaddleData",
    "build_partition",
    "lumped_chain",
    "meso_saddle",
    "secular_roots",
    "min_energy_curve",
    "saddle_rates",
    "export_edge_list",
    "MesoGrid",
    "layer_states",
    "grid_total",
    "lumped_log_weights",
    "log_q_continuous",
    "gaussian_surrogate_log_weights",
    "secular_lhs",
]

BLOCK_TOL = 1e-12
POLE_MERGE = 1e-12


@dataclass(frozen=True, eq=False)
class Partition:
    """Sites grouped by field interval.

    Attributes
    ----------
    N : int
    edges_h : ndarray
        Interval boundaries (``n + 1`` values).
    blocks : tuple of ndarray
        Site indices of the nonempty blocks, in increasing field order.
    rho, hbar : ndarray
        Block fractions ``|block|/N`` and block mean fields.
    htilde : ndarray
        Per-site residual ``h_i - hbar(block of i)``.
    label : ndarray
        Block number of every site.
    h : ndarray
        The field values.
    """

    N: int
    edges_h: np.ndarray
    blocks: tuple
    rho: np.ndarray
    hbar: np.ndarray
    htilde: np.ndarray
    label: np.ndarray
    h: np.ndarray
    n_requested: int

    @property
    def n(self) -> int:
        """Effective dimension (number of nonempty blocks)."""
        return len(self.blocks)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([b.size for b in self.blocks], dtype=np.int64)

    @property
    def block_constant(self) -> bool:
        return bool(np.max(np.abs(self.htilde)) <= BLOCK_TOL)

    def lump(self, sigma) -> np.ndarray:
        """Block magnetizations of a configuration (or of each row of an array)."""
        s = np.asarray(sigma, dtype=float)
        return np.stack([s[..., b].sum(axis=-1) for b in self.blocks], axis=-1) / self.N

    def up_counts(self, sigma) -> np.ndarray:
        s = np.asarray(sigma)
        return np.stack([(s[..., b] > 0).sum(axis=-1) for b in self.blocks], axis=-1)


def build_partition(field, n: int, support: tuple[float, float] | None = None) -> Partition:
    """Partition the sites by cutting the field support into ``n`` equal intervals.

    Parameters
    ----------
    field : RandomField or array_like
    n : int
        Requested number of intervals; empty ones are dropped.
    support : (lo, hi), optional
        Defaults to the support of the field law (or the sample range).
    """
    if int(n) != n or n < 1:
        raise DomainError("n must be a positive integer")
    h = field.h if isinstance(field, RandomField) else np.asarray(field, dtype=float)
    if support is None:
        support = field.dist.support if isinstance(field, RandomField) else (h.min(), h.max())
    lo, hi = float(support[0]), float(support[1])
    if h.min() < lo - 1e-15 or h.max() > hi + 1e-15:
        raise DomainError("field values outside the given support")
    edges = np.linspace(lo, hi, n + 1)
    if hi > lo:
        lab = np.clip(np.floor((h - lo) / (hi - lo) * n).astype(np.int64), 0, n - 1)
    else:
        lab = np.zeros(h.size, dtype=np.int64)
    N = h.size
    blocks, rho, hbar = [], [], []
    label = np.empty(N, dtype=np.int64)
    for k in range(n):
        idx = np.flatnonzero(lab == k)
        if idx.size == 0:
            continue
        label[idx] = len(blocks)
        blocks.append(idx)
        rho.append(idx.size / N)
        hbar.append(float(np.mean(h[idx])))
    hbar = np.array(hbar)
    htilde = h - hbar[label]
    htilde[np.abs(htilde) <= BLOCK_TOL * max(1.0, np.abs(h).max())] = 0.0
    for a in (edges, hbar, htilde, label):
        a.setflags(write=False)
    return Partition(N, edges, tuple(blocks), np.array(rho), hbar, htilde, label, h.copy(), int(n))


@dataclass(frozen=True, eq=False)
class MesoLandscape:
    """Mesoscopic free energy ``F(x)`` for a partition."""

    partition: Partition
    params: SystemParams
    block_landscapes: tuple = ()

    def __post_init__(self):
        if self.partition.N != self.params.N:
            raise DomainError("partition and params disagree on N")
        p = self.partition
        lands = []
        for b in p.blocks:
            vals, cnt = np.unique(p.htilde[b], return_counts=True)
            lands.append(Landscape1D(SystemParams(max(b.size, 2), self.params.beta), vals, cnt / cnt.sum()))
        object.__setattr__(self, "block_landscapes", tuple(lands))

    def energy(self, x) -> float:
        """``E(x) = (sum x)^2 / 2 + sum hbar_l x_l``."""
        x = np.asarray(x, dtype=float)
        m = x.sum(axis=-1)
        return 0.5 * m * m + x @ self.partition.hbar

    def free_energy(self, x) -> float:
        """``-(sum x)^2/2 - sum x hbar + (1/beta) sum rho_l I_l(x_l / rho_l)``."""
        x = np.asarray(x, dtype=float)
        p = self.partition
        y = x / p.rho
        if np.any(np.abs(y) >= 1):
            raise DomainError("block magnetization ratio must lie in (-1, 1)")
        total = -0.5 * x.sum() ** 2 - float(x @ p.hbar)
        for l, L in enumerate(self.block_landscapes):
            total += p.rho[l] * L.legendre(float(y[l]))[0] / self.params.beta
        return float(total)


# lumped chain ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MesoGrid:
    """Row-major enumeration of the up-spin counts ``k_l in 0..|block l|``."""

    sizes: np.ndarray
    N: int

    @property
    def shape(self) -> tuple:
        return tuple(int(s) + 1 for s in self.sizes)

    @property
    def n_states(self) -> int:
        return int(np.prod(self.shape))

    def counts(self) -> np.ndarray:
        """Array ``(n_states, n)`` of up-spin counts."""
        grids = np.indices(self.shape).reshape(len(self.shape), -1).T
        return grids.astype(np.int64)

    def index(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=np.int64)
        return np.ravel_multi_index(tuple(k.T) if k.ndim == 2 else tuple(k), self.shape)

    def coords(self, k=None) -> np.ndarray:
        k = self.counts() if k is None else np.asarray(k)
        return (2 * k - self.sizes) / self.N


def lumped_log_weights(partition: Partition, params: SystemParams, k=None) -> np.ndarray:
    """Unnormalized ``log(Z Q(x))`` on the grid.

    ``Q`` includes the ``2^-N`` reference measure, so these are the lumped
    stationary weights of the chain whose microscopic weights are
    ``2^-N exp(-beta H)``.
    """
    grid = MesoGrid(partition.sizes, partition.N)
    k = grid.counts() if k is None else np.asarray(k)
    n_l = partition.sizes
    N = partition.N
    x = (2 * k - n_l) / N
    m = x.sum(axis=1)
    logb = (gammaln(n_l + 1) - gammaln(k + 1) - gammaln(n_l - k + 1)).sum(axis=1)
    return logb - N * math.log(2.0) + params.beta * N * (0.5 * m * m + x @ partition.hbar)


def lumped_chain(partition: Partition, params: SystemParams) -> ReversibleChain:
    """Lumped Metropolis chain on the block-magnetization grid.

    Exact for block-constant fields (``meta["exact"]`` is ``True``);
    otherwise the block mean fields replace the site fields.
    """
    if partition.N != params.N:
        raise DomainError("partition and params disagree on N")
    grid = MesoGrid(partition.sizes, partition.N)
    k = grid.counts()
    log_mu = lumped_log_weights(partition, params, k)
    N, beta = partition.N, params.beta
    x = grid.coords(k)
    m = x.sum(axis=1)
    src, dst, lc = [], [], []
    strides = np.array([int(np.prod(grid.shape[l + 1:])) for l in range(partition.n)])
    for l in range(partition.n):
        ok = k[:, l] < partition.sizes[l]
        i = np.flatnonzero(ok)
        down = partition.sizes[l] - k[i, l]
        dH = -2.0 * (m[i] + 1.0 / N + partition.hbar[l])
        src.append(i)
        dst.append(i + strides[l])
        lc.append(log_mu[i] + np.log(down / N) - beta * np.maximum(dH, 0.0))
    edges = np.column_stack([np.concatenate(src), np.concatenate(dst)])
    meta = {"kind": "lumped", "N": N, "beta": beta, "n": partition.n,
            "exact": partition.block_constant, "shape": grid.shape}
    return ReversibleChain(log_mu, edges, np.concatenate(lc), coords=x, meta=meta)


def layer_states(chain: ReversibleChain, m_value: float, tol: float = 1e-9) -> np.ndarray:
    """States of a lumped chain whose total magnetization equals ``m_value``."""
    m = chain.coords.sum(axis=1) if chain.coords.ndim == 2 else chain.coords
    return np.flatnonzero(np.abs(m - m_value) < tol)


def grid_total(N: int, m: float) -> float:
    """Nearest attainable total magnetization ``-1 + 2j/N`` to ``m``."""
    j = round((m + 1.0) * N / 2.0)
    return -1.0 + 2.0 * min(max(j, 0), N) / N


def export_edge_list(chain: ReversibleChain, path, legend_path=None) -> None:
    """Write ``state_i state_j log_conductance`` lines plus a coordinate legend."""
    path = Path(path)
    with path.open("w") as fh:
        for (a, b), c in zip(chain.edges.tolist(), chain.log_c.tolist()):
            fh.write(f"{a} {b} {c:.17g}\n")
    legend_path = Path(legend_path) if legend_path else path.with_suffix(".legend")
    coords = np.atleast_2d(chain.coords.T).T if chain.coords is not None else np.zeros((chain.n_states, 0))
    with legend_path.open("w") as fh:
        fh.write("state log_mu " + " ".join(f"x{l}" for l in range(coords.shape[1])) + "\n")
        for s in range(chain.n_states):
            fh.write(f"{s} {chain.log_mu[s]:.17g} " + " ".join(f"{v:.17g}" for v in coords[s]) + "\n")


# saddle data ----------------------------------------------------------------

def secular_roots(d, w, max_iter: int = 200) -> np.ndarray:
    """All roots of ``sum_k w_k / (d_k - gamma) = 1`` for ``w_k > 0``, ascending.

    These are the eigenvalues of ``diag(d) - sqrt(w) sqrt(w)^T``.  Equal
    poles are merged (their weights add) and each merged pole of
    multiplicity ``p`` contributes the eigenvalue ``d_k`` with multiplicity
    ``p - 1``.  Roots are found by bisection inside each pole interval.
    """
    d = np.asarray(d, dtype=float)
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise DomainError("secular weights must be positive")
    order = np.argsort(d)
    d, w = d[order], w[order]
    poles, weights, extra = [], [], []
    for dk, wk in zip(d, w):
        if poles and abs(dk - poles[-1]) <= POLE_MERGE * max(1.0, abs(dk)):
            weights[-1] += wk
            extra.append(poles[-1])
        else:
            poles.append(dk)
            weights.append(wk)
    P = np.array(poles)
    W = np.array(weights)

    def g(gam):
        return float(np.sum(W / (P - gam))) - 1.0

    roots = []
    brackets = [(P[0] - W.sum() - 1.0, P[0])] + [(P[j], P[j + 1]) for j in range(P.size - 1)]
    for lo, hi in brackets:
        # g increases from -inf (or below 0) at lo to +inf at hi
        for _ in range(max_iter):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if g(mid) < 0:
                lo = mid
            else:
                hi = mid
        roots.append(0.5 * (lo + hi))
    return np.sort(np.concatenate([roots, extra]))


def secular_lhs(d, w, gamma) -> float:
    return float(np.sum(np.asarray(w) / (np.asarray(d) - gamma)))


def saddle_rates(z_total: float, partition: Partition, beta: float, convention: str = "metropolis"):
    """Per-block conductance rates ``r_l`` at the saddle.

    ``metropolis`` (default) uses the exact Metropolis rates of the lumped
    chain evaluated at the critical point, where up and down rates coincide:
    ``r_l = (1/2) (rho_l + z_l) exp(-2 beta [z + hbar_l]_+)``.  ``printed``
    pairs the down-spin fraction with that exponent,
    ``(1/2) (rho_l - z_l) exp(-2 beta [z + hbar_l]_+)``, which breaks the
    ``h -> -h`` symmetry; it is kept for comparison only.
    """
    p = partition
    zl = np.array([np.tanh(beta * (z_total + p.h[b])).sum() / p.N for b in p.blocks])
    ex = np.exp(-2.0 * beta * np.maximum(z_total + p.hbar, 0.0))
    if convention == "metropolis":
        return 0.5 * (p.rho + zl) * ex
    if convention == "printed":
        return 0.5 * (p.rho - zl) * ex
    raise DomainError(f"unknown rate convention {convention!r}")


@dataclass(frozen=True, eq=False)
class SaddleData:
    """Hessian and rate data at the mesoscopic saddle."""

    z_total: float
    z_star_meso: np.ndarray
    lambda_hat: np.ndarray
    A: np.ndarray
    r: np.ndarray
    B: np.ndarray
    gamma_hat: np.ndarray
    v: np.ndarray
    v_check: np.ndarray
    convention: str = "metropolis"

    @property
    def gamma1(self) -> float:
        return float(self.gamma_hat[0])

    @property
    def det_A(self) -> float:
        """``(1 - sum 1/lambda_hat) prod lambda_hat``."""
        lam = self.lambda_hat
        return float((1.0 - np.sum(1.0 / lam)) * np.prod(lam))


def meso_saddle(z_star, partition: Partition, beta: float, convention: str = "metropolis") -> SaddleData:
    """Saddle coordinates, Hessian ``A``, rates ``r`` and the spectrum of ``B``.

    Parameters
    ----------
    z_star : CriticalPoint or float
        One-dimensional maximum ``z*``.
    partition : Partition
    beta : float
    convention : {"metropolis", "printed"}
        See :func:`saddle_rates`.
    """
    z = float(getattr(z_star, "m_star", z_star))
    p = partition
    N = p.N
    th = np.tanh(beta * (z + p.h))
    chi = beta * np.mean(1.0 - th * th)
    if not chi > 1.0:
        raise NotASaddleError(f"beta E(1 - tanh^2) = {chi:.6g} <= 1 at z = {z:.6g}")
    zl = np.array([th[b].sum() / N for b in p.blocks])
    lam = np.array([1.0 / (beta * (1.0 - th[b] ** 2).sum() / N) for b in p.blocks])
    A = -np.ones((p.n, p.n)) + np.diag(lam)
    r = saddle_rates(z, p, beta, convention)
    sr = np.sqrt(r)
    B = sr[:, None] * A * sr[None, :]
    gam = secular_roots(r * lam, r)
    g1 = gam[0]
    if not g1 < 0 or (gam.size > 1 and gam[1] <= 0):
        raise NotASaddleError("B does not have exactly one negative eigenvalue")
    phi = r * lam - g1
    v = (1.0 / phi) / math.sqrt(float(np.sum(r / phi ** 2)))
    for a in (zl, lam, A, r, B, gam, v):
        a.setflags(write=False)
    vc = r * v
    vc.setflags(write=False)
    return SaddleData(z, zl, lam, A, r, B, gam, v, vc, convention)


# minimal energy curve ---------------------------------------------------------

def min_energy_curve(m: float, partition: Partition, beta: float) -> np.ndarray:
    """Minimizer ``x_hat(m)`` of the mesoscopic free energy on ``{sum x = m}``.

    Solves ``m = (1/N) sum tanh(beta (m + a + h_i))`` for ``a`` by
    bisection and returns ``x_hat_l = (1/N) sum_{block l} tanh(beta (m + a + h_i))``.
    """
    if not abs(m) < 1:
        raise DomainError("m must lie in (-1, 1)")
    h = partition.h
    N = partition.N
    hmax = float(np.max(np.abs(h)))
    c = math.atanh(m) / beta - m
    lo, hi = c - hmax - 1e-12, c + hmax + 1e-12
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.mean(np.tanh(beta * (m + mid + h))) < m:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, abs(mid)):
            break
    a = 0.5 * (lo + hi)
    t = np.tanh(beta * (m + a + h))
    x = np.array([t[b].sum() / N for b in partition.blocks])
    # remove the last rounding residue so that the coordinates sum to m
    x += (m - x.sum()) * partition.rho
    return x


def gaussian_surrogate_log_weights(coords, saddle: SaddleData, log_q_saddle: float, N: int, beta: float):
    """``log Q(z*) - (beta N / 2) (x - z*, A (x - z*))``."""
    d = np.asarray(coords) - saddle.z_star_meso
    quad = np.einsum("ij,jk,ik->i", d, saddle.A, d)
    return log_q_saddle - 0.5 * beta * N * quad


def log_q_continuous(x, partition: Partition, params: SystemParams) -> float:
    """``log(Z Q)`` at an off-grid point, with log-binomials continued by ``gammaln``."""
    n_l = partition.sizes.astype(float)
    k = (np.asarray(x, dtype=float) * params.N + n_l) / 2.0
    m = float(np.sum(x))
    logb = float(np.sum(gammaln(n_l + 1) - gammaln(k + 1) - gammaln(n_l - k + 1)))
    return logb - params.N * math.log(2.0) + params.beta * params.N * (0.5 * m * m + float(np.dot(x, partition.hbar)))

