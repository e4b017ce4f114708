"""Microscopic random-field Curie-Weiss model.

Spins live on ``{-1, +1}^N``; the Hamiltonian is

    H(sigma) = -(N/2) m(sigma)^2 - sum_i h_i sigma_i,   m = mean(sigma),

and the dynamics is discrete-time Metropolis: pick a site uniformly and flip
it with probability ``exp(-beta [dH]_+)``.  Sites are indexed from 0.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import integrate

from . import rng
from .errors import DomainError

__all__ = [
    "SystemParams",
    "FieldDistribution",
    "RandomField",
    "sample_field",
    "hamiltonian",
    "magnetization",
    "flip_delta",
    "metropolis_profile",
    "all_configurations",
    "microscopic_chain",
    "save_field",
    "load_field",
]


@dataclass(frozen=True)
class SystemParams:
    """Number of spins and inverse temperature."""

    N: int
    beta: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise DomainError(f"N must be an integer >= 2, got {self.N}")
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise DomainError(f"beta must be positive and finite, got {self.beta}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "beta", float(self.beta))


@dataclass(frozen=True)
class FieldDistribution:
    """Law of a single field value ``h_i``.

    Use the constructors :meth:`constant`, :meth:`two_valued`, :meth:`uniform`
    and :meth:`discrete`.  All supported laws have bounded support.

    Attributes
    ----------
    kind : str
        One of ``constant``, ``two_valued``, ``uniform``, ``discrete``.
    params : tuple
        Kind-specific parameters.
    """

    kind: str
    params: tuple

    KINDS = ("constant", "two_valued", "uniform", "discrete")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise DomainError(f"unsupported distribution kind {self.kind!r}")
        p = self.params
        if self.kind == "constant":
            _finite(p[0])
        elif self.kind == "two_valued":
            eps, prob = p
            _finite(eps)
            if not 0.0 <= prob <= 1.0:
                raise DomainError("two_valued probability must lie in [0, 1]")
        elif self.kind == "uniform":
            lo, hi = p
            _finite(lo), _finite(hi)
            if not lo <= hi:
                raise DomainError("uniform requires lo <= hi")
        else:
            values, probs = p
            if len(values) != len(probs) or len(values) == 0:
                raise DomainError("discrete needs matching non-empty values and probs")
            for v in values:
                _finite(v)
            if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12:
                raise DomainError("discrete probabilities must be >= 0 and sum to 1")

    @classmethod
    def constant(cls, c: float = 0.0) -> "FieldDistribution":
        return cls("constant", (float(c),))

    @classmethod
    def two_valued(cls, eps: float, p: float = 0.5) -> "FieldDistribution":
        """``+eps`` with probability ``p``, ``-eps`` otherwise."""
        return cls("two_valued", (float(eps), float(p)))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "FieldDistribution":
        return cls("uniform", (float(lo), float(hi)))

    @classmethod
    def discrete(cls, values: Sequence[float], probs: Sequence[float]) -> "FieldDistribution":
        return cls("discrete", (tuple(float(v) for v in values), tuple(float(q) for q in probs)))

    @property
    def support(self) -> tuple[float, float]:
        """Closed interval containing every possible value."""
        p = self.params
        if self.kind == "constant":
            return (p[0], p[0])
        if self.kind == "two_valued":
            e = abs(p[0])
            return (-e, e)
        if self.kind == "uniform":
            return (p[0], p[1])
        return (min(p[0]), max(p[0]))

    @property
    def support_bound(self) -> float:
        """``max |h|`` over the support."""
        lo, hi = self.support
        return max(abs(lo), abs(hi))

    def expect(self, func) -> float:
        """Expectation of ``func(h)`` under the distribution.

        ``func`` must accept numpy arrays.
        """
        p = self.params
        if self.kind == "constant":
            return float(func(np.array([p[0]]))[0])
        if self.kind == "two_valued":
            eps, prob = p
            vals = func(np.array([eps, -eps]))
            return float(prob * vals[0] + (1.0 - prob) * vals[1])
        if self.kind == "discrete":
            vals = func(np.asarray(p[0]))
            return float(np.dot(np.asarray(p[1]), vals))
        lo, hi = p
        if hi == lo:
            return float(func(np.array([lo]))[0])
        val, _ = integrate.quad(lambda x: float(func(np.array([x]))[0]), lo, hi,
                                epsabs=1e-14, epsrel=1e-13, limit=200)
        return val / (hi - lo)

    def to_string(self) -> str:
        """Compact text form, e.g. ``two_valued:0.2:0.5``; inverse of :meth:`parse`."""
        p = self.params
        if self.kind == "discrete":
            return "discrete:" + ",".join(repr(v) for v in p[0]) + ":" + ",".join(repr(q) for q in p[1])
        return ":".join([self.kind] + [repr(x) for x in p])

    @classmethod
    def parse(cls, text: str) -> "FieldDistribution":
        """Parse the form produced by :meth:`to_string`."""
        parts = text.strip().split(":")
        kind, args = parts[0], parts[1:]
        try:
            if kind == "constant":
                return cls.constant(float(args[0]) if args else 0.0)
            if kind == "two_valued":
                return cls.two_valued(float(args[0]), float(args[1]) if len(args) > 1 else 0.5)
            if kind == "uniform":
                return cls.uniform(float(args[0]), float(args[1]))
            if kind == "discrete":
                return cls.discrete([float(v) for v in args[0].split(",")],
                                    [float(q) for q in args[1].split(",")])
        except (IndexError, ValueError) as exc:
            raise DomainError(f"cannot parse distribution {text!r}: {exc}") from exc
        raise DomainError(f"unsupported distribution kind {kind!r}")


def _finite(x):
    if not math.isfinite(float(x)):
        raise DomainError("distribution parameters must be finite (bounded support)")


@dataclass(frozen=True, eq=False)
class RandomField:
    """A disorder realization ``h_1..h_N`` with its law and seed."""

    h: np.ndarray
    dist: FieldDistribution
    seed: int = 0
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        h = np.array(self.h, dtype=float)
        if h.ndim != 1:
            raise DomainError("field must be one-dimensional")
        lo, hi = self.dist.support
        if h.size and (h.min() < lo - 1e-15 or h.max() > hi + 1e-15):
            raise DomainError("field value outside the declared support")
        h.setflags(write=False)
        object.__setattr__(self, "h", h)

    @property
    def N(self) -> int:
        return int(self.h.size)

    @classmethod
    def from_values(cls, h, dist: FieldDistribution | None = None, seed: int = 0) -> "RandomField":
        """Wrap explicit values; the law defaults to the empirical discrete law."""
        h = np.asarray(h, dtype=float)
        if dist is None:
            vals, counts = np.unique(h, return_counts=True)
            dist = FieldDistribution.discrete(vals, counts / counts.sum())
        return cls(h, dist, seed)


def sample_field(dist: FieldDistribution, N: int, seed: int) -> RandomField:
    """Draw ``N`` i.i.d. field values from ``dist``.

    The draw uses the Philox stream ``(seed, FIELD)`` so it is bit-identical
    for identical ``(dist, N, seed)``.
    """
    if N < 2:
        raise DomainError("N must be >= 2")
    g = rng.generator(seed, rng.FIELD)
    p = dist.params
    if dist.kind == "constant":
        h = np.full(N, p[0])
    elif dist.kind == "two_valued":
        eps, prob = p
        h = np.where(g.random(N) < prob, eps, -eps)
    elif dist.kind == "uniform":
        h = g.uniform(p[0], p[1], N)
    else:
        idx = g.choice(len(p[0]), size=N, p=np.asarray(p[1]))
        h = np.asarray(p[0])[idx]
    return RandomField(h, dist, int(seed))


def _as_field(field) -> np.ndarray:
    return field.h if isinstance(field, RandomField) else np.asarray(field, dtype=float)


def magnetization(sigma) -> float:
    """Mean spin ``(1/N) sum_i sigma_i``."""
    s = np.asarray(sigma)
    return float(s.sum()) / s.size


def hamiltonian(sigma, field) -> float:
    """Energy ``-(N/2) m^2 - sum_i h_i sigma_i``."""
    s = np.asarray(sigma, dtype=float)
    h = _as_field(field)
    if s.shape != h.shape:
        raise DomainError("spin and field lengths differ")
    N = s.size
    m = s.sum() / N
    return float(-0.5 * N * m * m - np.dot(h, s))


def flip_delta(sigma, i: int, field) -> float:
    """Energy change ``H(sigma^i) - H(sigma)`` for flipping site ``i`` (0-based).

    Uses the closed form ``2 sigma_i (m + h_i) - 2/N``.
    """
    s = np.asarray(sigma)
    h = _as_field(field)
    N = s.size
    if not 0 <= i < N:
        raise IndexError(f"site {i} out of range for N={N}")
    m = float(s.sum()) / N
    return 2.0 * s[i] * (m + h[i]) - 2.0 / N


def metropolis_profile(sigma, field, params: SystemParams):
    """Per-site flip probabilities and the holding probability.

    Returns
    -------
    probs : ndarray, shape (N,)
        ``(1/N) exp(-beta [dH_i]_+)``.
    hold : float
        ``1 - sum(probs)``.
    """
    s = np.asarray(sigma, dtype=float)
    h = _as_field(field)
    N = s.size
    m = s.sum() / N
    dH = 2.0 * s * (m + h) - 2.0 / N
    probs = np.exp(-params.beta * np.maximum(dH, 0.0)) / N
    hold = 1.0 - math.fsum(probs)
    return probs, max(hold, 0.0)


def all_configurations(N: int) -> np.ndarray:
    """All ``2^N`` spin vectors; row ``s`` has ``sigma_i = +1`` iff bit ``i`` of ``s`` is set."""
    s = np.arange(1 << N, dtype=np.int64)
    bits = (s[:, None] >> np.arange(N)) & 1
    return (2 * bits - 1).astype(np.int8)


def microscopic_chain(field, params: SystemParams):
    """Full Metropolis chain on ``{-1,1}^N`` as a :class:`~rfcw.potential.ReversibleChain`.

    Stationary log-weights are ``-N ln 2 - beta H`` (so sums over states give
    ``Z`` in the normalization with the uniform prior).  Intended for N <= 16.
    """
    from .potential import ReversibleChain

    h = _as_field(field)
    N = h.size
    if N != params.N:
        raise DomainError("field length differs from params.N")
    if N > 20:
        raise DomainError("microscopic chain enumeration limited to N <= 20")
    conf = all_configurations(N).astype(float)
    m = conf.mean(axis=1)
    energy = -0.5 * N * m * m - conf @ h
    log_mu = -N * math.log(2.0) - params.beta * energy
    states = np.arange(1 << N, dtype=np.int64)
    src, dst, logc = [], [], []
    for i in range(N):
        down = (states >> i) & 1 == 0
        a = states[down]
        b = a | (1 << i)
        dH = 2.0 * conf[a, i] * (m[a] + h[i]) - 2.0 / N
        src.append(a)
        dst.append(b)
        logc.append(log_mu[a] - math.log(N) - params.beta * np.maximum(dH, 0.0))
    edges = np.stack([np.concatenate(src), np.concatenate(dst)], axis=1)
    return ReversibleChain(log_mu, edges, np.concatenate(logc),
                           coords=m[:, None], meta={"kind": "microscopic", "N": N, "beta": params.beta})


def save_field(path, field: RandomField, beta: float) -> None:
    """Write ``N beta dist seed`` then one ``h_i`` per line with 17 significant digits."""
    lines = [f"{field.N} {beta!r} {field.dist.to_string()} {field.seed}"]
    lines += [f"{x:.17g}" for x in field.h]
    Path(path).write_text("\n".join(lines) + "\n")


def load_field(path) -> tuple[RandomField, float]:
    """Inverse of :func:`save_field`; returns ``(field, beta)``."""
    text = Path(path).read_text().split("\n")
    head = text[0].split()
    if len(head) != 4:
        raise DomainError(f"malformed field header in {path}")
    N, beta, dist, seed = int(head[0]), float(head[1]), FieldDistribution.parse(head[2]), int(head[3])
    h = np.array([float(x) for x in text[1:] if x.strip()])
    if h.size != N:
        raise DomainError(f"field file declares N={N} but holds {h.size} values")
    return RandomField(h, dist, seed), beta
