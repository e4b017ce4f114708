"""One-dimensional free-energy landscape of the magnetization.

For a field realization ``h`` the log-moment generating function is

    U(t) = (1/N) sum_i ln cosh(t + beta h_i),

``I`` is its Legendre transform and the free energy of the magnetization is
``F(m) = -m^2/2 + I(m)/beta``.  Critical points solve ``m = U'(beta m)``.

The same machinery serves the distributional limit: a landscape may be built
from weighted field values (``E_h`` replaces the empirical mean).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .errors import DomainError, NoDeeperMinimumError, SecondOrderTransitionError
from .model import FieldDistribution, RandomField, SystemParams

__all__ = [
    "Landscape1D",
    "CriticalPoint",
    "BarrierSpec",
    "logcosh",
]

SCAN_POINTS = 4000
SCAN_EDGE = 1e-6
ROOT_TOL = 1e-13
SECOND_ORDER_TOL = 1e-8
TIE_TOL = 1e-9
QUAD_NODES = 400


def logcosh(x):
    """Overflow-free ``ln cosh x``."""
    a = np.abs(x)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


@dataclass(frozen=True)
class CriticalPoint:
    """Root of ``m = U'(beta m)`` with its classification and curvature."""

    m_star: float
    kind: str
    F_value: float
    curvature_a: float
    susceptibility: float


@dataclass(frozen=True)
class BarrierSpec:
    """Start minimum, deeper minima, the saddle ``z*`` and the barrier height."""

    start: CriticalPoint
    deeper_set: tuple
    saddle: CriticalPoint
    delta_F: float

    @property
    def target(self) -> CriticalPoint:
        """Deeper minimum on the saddle side, nearest to the start."""
        side = np.sign(self.saddle.m_star - self.start.m_star)
        cands = [c for c in self.deeper_set if np.sign(c.m_star - self.start.m_star) == side]
        return min(cands, key=lambda c: abs(c.m_star - self.start.m_star))


@dataclass(frozen=True, eq=False)
class Landscape1D:
    """Free-energy landscape for given ``(N, beta)`` and field values.

    Parameters
    ----------
    params : SystemParams
    values : ndarray
        Distinct field values.
    weights : ndarray
        Their frequencies (summing to one).
    field : RandomField, optional
        The realization the landscape came from, if any.
    """

    params: SystemParams
    values: np.ndarray
    weights: np.ndarray
    field: RandomField | None = None
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if v.shape != w.shape or v.ndim != 1 or v.size == 0:
            raise DomainError("values and weights must be matching nonempty vectors")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise DomainError("weights must be a probability vector")
        for a in (v, w):
            a.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "_bh", self.params.beta * v)

    @classmethod
    def from_field(cls, params: SystemParams, field) -> "Landscape1D":
        """Empirical landscape of a realization (``N`` is taken from ``params``)."""
        h = field.h if isinstance(field, RandomField) else np.asarray(field, dtype=float)
        vals, counts = np.unique(h, return_counts=True)
        rf = field if isinstance(field, RandomField) else None
        return cls(params, vals, counts / counts.sum(), rf)

    @classmethod
    def from_distribution(cls, params: SystemParams, dist: FieldDistribution) -> "Landscape1D":
        """Limit landscape with ``E_h`` over ``dist`` (Gauss-Legendre nodes for uniform laws)."""
        p = dist.params
        if dist.kind == "constant":
            return cls(params, np.array([p[0]]), np.array([1.0]))
        if dist.kind == "two_valued":
            eps, prob = p
            return cls(params, np.array([-eps, eps]), np.array([1.0 - prob, prob]))
        if dist.kind == "discrete":
            return cls(params, np.asarray(p[0], float), np.asarray(p[1], float))
        x, w = np.polynomial.legendre.leggauss(QUAD_NODES)
        lo, hi = p
        return cls(params, lo + (hi - lo) * (x + 1) / 2, w / 2)

    @property
    def beta(self) -> float:
        return self.params.beta

    @property
    def N(self) -> int:
        return self.params.N

    @property
    def support_bound(self) -> float:
        return float(np.max(np.abs(self.values)))

    def mean(self, func) -> float:
        """Weighted mean ``E_h func(h)`` over the landscape's field values."""
        return float(np.dot(self.weights, func(self.values)))

    # generating function ------------------------------------------------
    def log_mgf(self, t):
        """``(U, U', U'')`` at ``t`` (scalar or array)."""
        t = np.asarray(t, dtype=float)
        x = t[..., None] + self._bh
        th = np.tanh(x)
        U = logcosh(x) @ self.weights
        U1 = th @ self.weights
        U2 = (1.0 - th * th) @ self.weights
        if t.ndim == 0:
            return float(U), float(U1), float(U2)
        return U, U1, U2

    def _solve_t(self, m):
        """Vectorized bisection for ``U'(t) = m``."""
        m = np.asarray(m, dtype=float)
        if np.any(np.abs(m) >= 1):
            raise DomainError("magnetization must lie in (-1, 1)")
        c = np.arctanh(m)
        # bracket widened slightly so that rounding never excludes the root
        span = self.beta * self.support_bound + 1e-12
        lo = c - span
        hi = c + span
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            _, u1, _ = self.log_mgf(mid)
            below = u1 < m
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 4e-16 * np.maximum(1.0, np.abs(mid))):
                break
        return 0.5 * (lo + hi)

    def legendre(self, m):
        """``(I(m), t*, I''(m))`` with ``U'(t*) = m``."""
        t = self._solve_t(m)
        U, _, U2 = self.log_mgf(t)
        I = t * np.asarray(m) - U
        if np.ndim(t) == 0:
            return float(I), float(t), float(1.0 / U2)
        return I, t, 1.0 / U2

    def free_energy(self, m):
        """``F(m) = -m^2/2 + I(m)/beta`` for ``|m| < 1``."""
        I, _, _ = self.legendre(m)
        F = -0.5 * np.asarray(m, dtype=float) ** 2 + np.asarray(I) / self.beta
        return float(F) if np.ndim(F) == 0 else F

    def free_energy_critical_form(self, m):
        """``m^2/2 - U(beta m)/beta``; equals ``F`` at critical points."""
        U, _, _ = self.log_mgf(self.beta * np.asarray(m, dtype=float))
        return 0.5 * np.asarray(m) ** 2 - U / self.beta

    def clamp(self, m):
        """Clamp to ``[-(1 - 2/N), 1 - 2/N]``, the range used for grid queries."""
        b = 1.0 - 2.0 / self.N
        return np.clip(m, -b, b)

    def susceptibility(self, m) -> float:
        """``beta U''(beta m)``."""
        return self.beta * self.log_mgf(self.beta * float(m))[2]

    def curvature(self, m) -> float:
        """``a(m) = -1 + 1/(beta U''(beta m))``; equals ``F''`` at critical points."""
        return -1.0 + 1.0 / self.susceptibility(m)

    def phi(self, m):
        """Critical-point function ``m - U'(beta m)``."""
        return np.asarray(m) - self.log_mgf(self.beta * np.asarray(m, dtype=float))[1]

    # critical points ------------------------------------------------------
    def critical_points(self) -> list[CriticalPoint]:
        """All critical points in ``(-1, 1)`` in increasing order."""
        grid = np.linspace(-1 + SCAN_EDGE, 1 - SCAN_EDGE, SCAN_POINTS)
        ph = self.phi(grid)
        roots = []
        for k in range(grid.size - 1):
            a, b = grid[k], grid[k + 1]
            fa, fb = ph[k], ph[k + 1]
            if fa == 0.0:
                roots.append(float(a))
                continue
            if fa * fb < 0:
                roots.append(self._bisect_phi(a, b, fa))
        if ph[-1] == 0.0:
            roots.append(float(grid[-1]))
        out = []
        for r in roots:
            chi = self.susceptibility(r)
            if abs(chi - 1.0) < SECOND_ORDER_TOL:
                raise SecondOrderTransitionError(
                    f"degenerate critical point at m={r:.12g} (susceptibility {chi:.12g})")
            kind = "minimum" if chi < 1 else "maximum"
            out.append(CriticalPoint(float(r), kind, float(self.free_energy_critical_form(r)),
                                     -1.0 + 1.0 / chi, chi))
        return out

    def _bisect_phi(self, a, b, fa):
        for _ in range(200):
            if b - a <= ROOT_TOL:
                break
            mid = 0.5 * (a + b)
            fm = float(self.phi(mid))
            if fm == 0.0:
                return mid
            if (fm < 0) == (fa < 0):
                a, fa = mid, fm
            else:
                b = mid
        return 0.5 * (a + b)

    def minima(self) -> list[CriticalPoint]:
        return [c for c in self.critical_points() if c.kind == "minimum"]

    def barrier(self, from_min: CriticalPoint | None = None, tie_tolerance: float = TIE_TOL,
                cps: list[CriticalPoint] | None = None, to_min: CriticalPoint | None = None) -> BarrierSpec:
        """Saddle and barrier height from a local minimum to the set of deeper minima.

        If ``from_min`` is omitted the shallowest minimum that has a deeper
        one is used.  Passing ``to_min`` fixes the target set to that single
        minimum regardless of depth (used for symmetric double wells, where
        the capacity asymptotics still apply).
        """
        cps = self.critical_points() if cps is None else cps
        mins = [c for c in cps if c.kind == "minimum"]
        if to_min is not None:
            if from_min is None or to_min.kind != "minimum" or from_min.kind != "minimum":
                raise DomainError("to_min requires from_min and both must be minima")
            lo, hi = sorted((from_min.m_star, to_min.m_star))
            maxima = [c for c in cps if c.kind == "maximum" and lo < c.m_star < hi]
            if not maxima:
                raise DomainError("no maximum between the two minima")
            top = max(maxima, key=lambda c: c.F_value)
            return BarrierSpec(from_min, (to_min,), top, self.delta_F(top.m_star, from_min.m_star))
        if from_min is None:
            cand = [c for c in mins if any(d.F_value < c.F_value - tie_tolerance for d in mins)]
            if not cand:
                raise NoDeeperMinimumError("no local minimum has a strictly deeper one")
            from_min = max(cand, key=lambda c: c.F_value)
        if from_min.kind != "minimum":
            raise DomainError("barrier start must be a local minimum")
        deeper = [c for c in mins if c.F_value < from_min.F_value - tie_tolerance]
        if not deeper:
            raise NoDeeperMinimumError(f"no minimum deeper than m={from_min.m_star:.6g}")
        m0 = from_min.m_star
        best = None
        for side in (-1, 1):
            tgt = [c for c in deeper if side * (c.m_star - m0) > 0]
            if not tgt:
                continue
            near = min(tgt, key=lambda c: abs(c.m_star - m0))
            lo, hi = sorted((m0, near.m_star))
            maxima = [c for c in cps if c.kind == "maximum" and lo < c.m_star < hi]
            top = max(maxima, key=lambda c: c.F_value)
            if best is None or top.F_value < best.F_value:
                best = top
        dF = self.delta_F(best.m_star, m0)
        return BarrierSpec(from_min, tuple(deeper), best, dF)

    def transition_barrier(self, tie_tolerance: float = TIE_TOL) -> BarrierSpec:
        """:meth:`barrier` if some minimum has a deeper one, else the left-to-right
        barrier of a double well whose two minima are tied."""
        cps = self.critical_points()
        try:
            return self.barrier(tie_tolerance=tie_tolerance, cps=cps)
        except NoDeeperMinimumError:
            mins = sorted((c for c in cps if c.kind == "minimum"), key=lambda c: c.m_star)
            if len(mins) != 2:
                raise
            return self.barrier(from_min=mins[0], to_min=mins[1], cps=cps)

    def delta_F(self, z: float, m: float) -> float:
        """``F(z) - F(m)`` in the critical-point form, summed pairwise."""
        b = self.beta
        d = logcosh(b * (z + self.values)) - logcosh(b * (m + self.values))
        return 0.5 * (z * z - m * m) - float(np.dot(self.weights, d)) / b

    # asymptotics ----------------------------------------------------------
    def log_gibbs_point_asymptotic(self, cp: CriticalPoint, limit: "Landscape1D | None" = None) -> float:
        """Log of the predicted ``Z Q(m*)``.

        ``-beta N F(m*) - 0.5 ln((N pi / 2) |E(1 - tanh^2(beta(m* + h)))|)``.
        The expectation is the empirical mean unless ``limit`` (a landscape
        built with :meth:`from_distribution`) is given.
        """
        src = limit if limit is not None else self
        e = src.mean(lambda h: 1.0 - np.tanh(self.beta * (cp.m_star + h)) ** 2)
        N = self.N
        return -self.beta * N * cp.F_value - 0.5 * math.log(N * math.pi / 2 * abs(e))

    def gibbs_point_asymptotic(self, cp: CriticalPoint, limit: "Landscape1D | None" = None) -> float:
        return math.exp(self.log_gibbs_point_asymptotic(cp, limit))

    # export ---------------------------------------------------------------
    def table(self, grid) -> np.ndarray:
        """Rows ``(m, F, I, F'')`` on ``grid`` (clamped to the interior).

        The last column is ``-1 + I''(m)/beta``, which reduces to ``a(m*)`` at
        critical points.
        """
        m = np.atleast_1d(self.clamp(np.asarray(grid, dtype=float)))
        I, _, I2 = self.legendre(m)
        F = -0.5 * m ** 2 + I / self.beta
        return np.column_stack([m, F, I, -1.0 + I2 / self.beta])

    def write_csv(self, path, grid) -> None:
        rows = self.table(grid)
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "F", "I", "a"])
            for r in rows:
                w.writerow([repr(float(x)) for x in r])


def critical_point_dict(cp: CriticalPoint) -> dict:
    return {"m_star": cp.m_star, "kind": cp.kind, "F": cp.F_value, "a": cp.curvature_a,
            "susceptibility": cp.susceptibility}
