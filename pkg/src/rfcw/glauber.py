"""Monte Carlo hitting times for lumped and microscopic Metropolis chains.

Replicas are simulated together as numpy vectors, but each replica draws
its uniforms from its own Philox stream ``(seed, REPLICA, index)`` in fixed
order.  A replica's trajectory is therefore a function of the master seed
and its index only, independent of how many replicas run alongside it or
how they are split over threads.

Time is discrete and counts proposed single flips.  A lumped step uses one
uniform (inverse CDF over the row of ``P``).  A microscopic step uses two:
one picks the site, one decides acceptance with probability
``exp(-beta [dH]_+)``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import rng
from .errors import DomainError
from .meso import MesoGrid, Partition, build_partition
from .model import RandomField, SystemParams
from .potential import ReversibleChain

__all__ = [
    "SimSpec",
    "McEstimate",
    "simulate_hitting",
    "simulate_batch",
    "estimate_mean_time",
    "sample_start",
    "occupation_histogram",
    "stationary_lumped",
    "write_replica_csv",
    "write_summary_json",
]

MAX_STEPS = 10 ** 10
CHUNK = 4096
TRUNCATION_LIMIT = 0.01


@dataclass(eq=False)
class SimSpec:
    """What to simulate.

    Exactly one chain source is set: ``chain`` (a lumped or any other
    reversible chain) or ``field`` with ``params`` (the microscopic
    dynamics).  States of a microscopic run are reported through the lumped
    grid of ``partition`` (one block by default, i.e. the up-spin count).

    Attributes
    ----------
    start : int or ndarray
        A fixed (lumped) state, or a probability vector over lumped states.
        For microscopic runs a lumped start is completed to a configuration
        by exact sampling of ``mu`` conditioned on the block up-counts.
    target : ndarray
        Lumped state indices whose entry stops the run.
    R : int
        Number of replicas.
    seed : int
        Master seed.
    max_steps : int
        Per-replica cap; replicas reaching it are reported as truncated.
    burn_in_sweeps : int
        Microscopic runs only: Metropolis sweeps (``N`` steps each) applied
        to the start configuration, with moves leaving ``well`` rejected.
    well : ndarray, optional
        Lumped states allowed during burn-in (default: all but the target).
    """

    start: object
    target: np.ndarray
    R: int = 1
    seed: int = 0
    max_steps: int = MAX_STEPS
    chain: ReversibleChain | None = None
    field: np.ndarray | None = None
    params: SystemParams | None = None
    partition: Partition | None = None
    burn_in_sweeps: int = 0
    well: np.ndarray | None = None
    meta: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if self.R < 1:
            raise DomainError("R must be at least 1")
        if not 0 < self.max_steps <= MAX_STEPS:
            raise DomainError("max_steps must be positive and finite")
        if (self.chain is None) == (self.field is None):
            raise DomainError("set exactly one of chain or field")
        self.target = np.unique(np.asarray(self.target, dtype=np.int64).ravel())
        if self.target.size == 0:
            raise DomainError("target set is empty")
        if self.field is not None:
            if isinstance(self.field, RandomField):
                self.field = self.field.h
            self.field = np.asarray(self.field, dtype=float)
            if self.params is None or self.params.N != self.field.size:
                raise DomainError("microscopic runs need params with N equal to the field length")
            if self.partition is None:
                self.partition = build_partition(self.field, 1)
        if np.ndim(self.start) == 0:
            self.start = int(self.start)
        else:
            p = np.asarray(self.start, dtype=float)
            if np.any(p < 0) or not p.sum() > 0:
                raise DomainError("start distribution must be nonnegative with positive mass")
            self.start = p / p.sum()

    @property
    def kind(self) -> str:
        return "lumped" if self.chain is not None else "microscopic"

    @property
    def n_states(self) -> int:
        if self.chain is not None:
            return self.chain.n_states
        return MesoGrid(self.partition.sizes, self.params.N).n_states

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "R": self.R, "seed": self.seed, "max_steps": self.max_steps,
               "target_size": int(self.target.size), "burn_in_sweeps": self.burn_in_sweeps}
        out["start"] = self.start if isinstance(self.start, int) else "distribution"
        if self.params is not None:
            out.update(N=self.params.N, beta=self.params.beta)
        out.update(self.meta)
        return out


@dataclass
class McEstimate:
    """Monte Carlo mean hitting time.

    ``stderr`` is the sample standard deviation over ``sqrt(R)``.  The
    estimate is ``usable`` only if at most 1% of replicas were truncated;
    truncated replicas enter ``steps`` at the cap.
    """

    mean: float
    stderr: float
    R: int
    truncated: int
    steps: np.ndarray
    truncated_mask: np.ndarray
    usable: bool

    def to_dict(self) -> dict:
        return {"mean": self.mean, "stderr": self.stderr, "R": self.R, "truncated": self.truncated,
                "usable": self.usable, "method": "monte_carlo"}


# uniforms ---------------------------------------------------------------------

class _Streams:
    """Per-replica uniform buffers, refilled in chunks from each replica's own stream."""

    def __init__(self, seed: int, indices: np.ndarray, width: int):
        self.gens = [rng.generator(seed, rng.REPLICA, int(i)) for i in indices]
        self.width = width
        self.buf = np.empty((len(self.gens), CHUNK * width))
        self.pos = self.buf.shape[1]

    def draw(self, rows: np.ndarray) -> np.ndarray:
        """``width`` uniforms for each replica in ``rows`` (all live replicas advance together)."""
        if self.pos >= self.buf.shape[1]:
            for r in rows:
                self.buf[r] = self.gens[r].random(self.buf.shape[1])
            self.pos = 0
        out = self.buf[rows, self.pos:self.pos + self.width]
        self.pos += self.width
        return out


# start states -----------------------------------------------------------------

def _log_esf(logw: np.ndarray, kmax: int) -> np.ndarray:
    """``E[i, j] = log e_j(w_i, ..., w_{n-1})`` (elementary symmetric polynomials of suffixes)."""
    n = logw.size
    E = np.full((n + 1, kmax + 1), -np.inf)
    E[n, 0] = 0.0
    for i in range(n - 1, -1, -1):
        E[i, 0] = 0.0
        E[i, 1:] = np.logaddexp(E[i + 1, 1:], logw[i] + E[i + 1, :-1])
    return E


def _conditional_block(logw: np.ndarray, k: int, gen: np.random.Generator) -> np.ndarray:
    """Spins of one block with exactly ``k`` up spins, ``P(S) ~ prod_{i in S} w_i``."""
    n = logw.size
    if np.all(logw == logw[0]):
        up = np.zeros(n, dtype=bool)
        up[gen.choice(n, size=k, replace=False)] = True
        return np.where(up, 1, -1).astype(np.int8)
    E = _log_esf(logw, k)
    out = np.full(n, -1, dtype=np.int8)
    need = k
    for i in range(n):
        if need == 0:
            break
        p = math.exp(logw[i] + E[i + 1, need - 1] - E[i, need])
        if gen.random() < p:
            out[i] = 1
            need -= 1
    return out


def _configuration(spec: SimSpec, state: int, gen: np.random.Generator) -> np.ndarray:
    part = spec.partition
    grid = MesoGrid(part.sizes, spec.params.N)
    k = np.unravel_index(state, grid.shape)
    sigma = np.empty(spec.params.N, dtype=np.int8)
    for b, kb in zip(part.blocks, k):
        # within a block mu is proportional to exp(2 beta sum_{up} htilde)
        logw = 2.0 * spec.params.beta * part.htilde[b]
        sigma[b] = _conditional_block(logw, int(kb), gen)
    return sigma


def sample_start(spec: SimSpec, index: int):
    """Start state of replica ``index``: a lumped index, or a configuration for microscopic runs."""
    gen = rng.generator(spec.seed, rng.START, index)
    if isinstance(spec.start, int):
        state = spec.start
    else:
        state = int(np.searchsorted(np.cumsum(spec.start), gen.random(), side="right"))
        state = min(state, spec.start.size - 1)
    if spec.kind == "lumped":
        return state
    return _configuration(spec, state, gen)


# engines ----------------------------------------------------------------------

def _lumped_tables(chain: ReversibleChain):
    P = chain.transition_matrix()
    deg = np.diff(P.indptr)
    D = int(deg.max())
    nb = np.repeat(np.arange(chain.n_states)[:, None], D, axis=1)
    cum = np.ones((chain.n_states, D))
    for s in range(chain.n_states):
        lo, hi = P.indptr[s], P.indptr[s + 1]
        nb[s, :hi - lo] = P.indices[lo:hi]
        cum[s, :hi - lo] = np.cumsum(P.data[lo:hi])
    cum[:, -1] = np.maximum(cum[:, -1], 1.0)
    return nb, cum


def _run_lumped(spec: SimSpec, indices: np.ndarray, tables, digest=None):
    nb, cum = tables
    in_target = np.zeros(spec.n_states, dtype=bool)
    in_target[spec.target] = True
    state = np.array([sample_start(spec, int(i)) for i in indices], dtype=np.int64)
    steps = np.zeros(indices.size, dtype=np.int64)
    live = np.flatnonzero(~in_target[state])
    streams = _Streams(spec.seed, indices, 1)
    t = 0
    while live.size and t < spec.max_steps:
        u = streams.draw(live)[:, 0]
        s = state[live]
        j = (u[:, None] >= cum[s]).sum(axis=1)
        np.minimum(j, cum.shape[1] - 1, out=j)
        state[live] = nb[s, j]
        t += 1
        steps[live] = t
        if digest is not None:
            digest.update(state[live].tobytes())
        live = live[~in_target[state[live]]]
    return steps, live


def _run_micro(spec: SimSpec, indices: np.ndarray, digest=None):
    N = spec.params.N
    beta = spec.params.beta
    h = spec.field
    part = spec.partition
    grid = MesoGrid(part.sizes, N)
    stride = np.array([int(np.prod(grid.shape[l + 1:])) for l in range(part.n)], dtype=np.int64)
    block_of = np.empty(N, dtype=np.int64)
    for l, b in enumerate(part.blocks):
        block_of[b] = l
    site_stride = stride[block_of]
    in_target = np.zeros(grid.n_states, dtype=bool)
    in_target[spec.target] = True

    sigma = np.stack([sample_start(spec, int(i)) for i in indices]).astype(np.int8)
    idx = grid.index(part.up_counts(sigma)).astype(np.int64)
    up = (sigma > 0).sum(axis=1).astype(np.int64)
    if spec.burn_in_sweeps > 0:
        allowed = np.zeros(grid.n_states, dtype=bool)
        if spec.well is None:
            allowed[:] = True
            allowed[spec.target] = False
        else:
            allowed[np.asarray(spec.well, dtype=np.int64)] = True
        burn = _Streams(spec.seed ^ 0x5A5A5A5A, indices, 2)
        rows = np.arange(indices.size)
        for _ in range(spec.burn_in_sweeps * N):
            _micro_step(sigma, up, idx, rows, burn.draw(rows), h, beta, N, site_stride, allowed)

    steps = np.zeros(indices.size, dtype=np.int64)
    live = np.flatnonzero(~in_target[idx])
    streams = _Streams(spec.seed, indices, 2)
    t = 0
    while live.size and t < spec.max_steps:
        _micro_step(sigma, up, idx, live, streams.draw(live), h, beta, N, site_stride, None)
        t += 1
        steps[live] = t
        if digest is not None:
            digest.update(idx[live].tobytes())
        live = live[~in_target[idx[live]]]
    return steps, live


def _micro_step(sigma, up, idx, rows, u, h, beta, N, site_stride, allowed):
    i = np.minimum((u[:, 0] * N).astype(np.int64), N - 1)
    s = sigma[rows, i].astype(float)
    m = (2.0 * up[rows] - N) / N
    dH = 2.0 * s * (m + h[i]) - 2.0 / N
    acc = u[:, 1] < np.exp(-beta * np.maximum(dH, 0.0))
    # s = -1 flips up (index grows), s = +1 flips down
    delta = np.where(s < 0, 1, -1)
    new_idx = idx[rows] + delta * site_stride[i]
    if allowed is not None:
        acc &= allowed[new_idx]
    r = rows[acc]
    sigma[r, i[acc]] *= -1
    up[r] += delta[acc]
    idx[r] = new_idx[acc]


def simulate_batch(spec: SimSpec, indices=None) -> tuple[np.ndarray, np.ndarray]:
    """Hitting times of the replicas ``indices`` (default ``range(R)``).

    Returns
    -------
    steps : ndarray of int
        Steps until the target is entered (``max_steps`` if truncated).
    truncated : ndarray of bool
    """
    indices = np.arange(spec.R) if indices is None else np.asarray(indices, dtype=np.int64)
    if spec.kind == "lumped":
        steps, live = _run_lumped(spec, indices, _lumped_tables(spec.chain))
    else:
        steps, live = _run_micro(spec, indices)
    trunc = np.zeros(indices.size, dtype=bool)
    trunc[live] = True
    return steps, trunc


def simulate_hitting(spec: SimSpec, replica_index: int, return_hash: bool = False):
    """Hitting time of a single replica; optionally a SHA-256 of its visited lumped states."""
    digest = hashlib.sha256() if return_hash else None
    idx = np.array([replica_index], dtype=np.int64)
    if spec.kind == "lumped":
        steps, live = _run_lumped(spec, idx, _lumped_tables(spec.chain), digest)
    else:
        steps, live = _run_micro(spec, idx, digest)
    out = (int(steps[0]), bool(live.size))
    if return_hash:
        return out + (digest.hexdigest(),)
    return out


def estimate_mean_time(spec: SimSpec, threads: int = 1) -> McEstimate:
    """Mean and standard error of the hitting time over ``spec.R`` replicas.

    Replicas are split into ``threads`` contiguous groups; the result does
    not depend on the split.
    """
    idx = np.arange(spec.R)
    groups = [g for g in np.array_split(idx, max(1, min(threads, spec.R))) if g.size]
    if len(groups) == 1:
        parts = [simulate_batch(spec, groups[0])]
    else:
        with ThreadPoolExecutor(max_workers=len(groups)) as ex:
            parts = list(ex.map(lambda g: simulate_batch(spec, g), groups))
    steps = np.concatenate([p[0] for p in parts])
    trunc = np.concatenate([p[1] for p in parts])
    x = steps.astype(float)
    mean = math.fsum(x) / x.size
    var = math.fsum((x - mean) ** 2) / (x.size - 1) if x.size > 1 else 0.0
    n_trunc = int(trunc.sum())
    return McEstimate(mean, math.sqrt(var / x.size), spec.R, n_trunc, steps, trunc,
                      n_trunc <= TRUNCATION_LIMIT * spec.R)


def occupation_histogram(spec: SimSpec, steps: int, replica_index: int = 0) -> np.ndarray:
    """Visit counts over lumped states of one long run that ignores the target."""
    free = SimSpec(spec.start, np.array([-1]), 1, spec.seed, steps, spec.chain, spec.field,
                   spec.params, spec.partition)
    counts = np.zeros(spec.n_states, dtype=np.int64)
    idx = np.array([replica_index], dtype=np.int64)
    if free.kind == "lumped":
        nb, cum = _lumped_tables(free.chain)
        s = sample_start(free, replica_index)
        streams = _Streams(free.seed, idx, 1)
        rows = np.array([0])
        for _ in range(steps):
            u = streams.draw(rows)[0, 0]
            j = min(int((u >= cum[s]).sum()), cum.shape[1] - 1)
            s = int(nb[s, j])
            counts[s] += 1
        return counts
    part = free.partition
    grid = MesoGrid(part.sizes, free.params.N)
    N = free.params.N
    stride = np.array([int(np.prod(grid.shape[l + 1:])) for l in range(part.n)], dtype=np.int64)
    block_of = np.empty(N, dtype=np.int64)
    for l, b in enumerate(part.blocks):
        block_of[b] = l
    sigma = sample_start(free, replica_index)[None, :].copy()
    up = np.array([(sigma > 0).sum()], dtype=np.int64)
    ix = grid.index(part.up_counts(sigma)).astype(np.int64)
    streams = _Streams(free.seed, idx, 2)
    rows = np.array([0])
    for _ in range(steps):
        _micro_step(sigma, up, ix, rows, streams.draw(rows), free.field, free.params.beta, N,
                    stride[block_of], None)
        counts[ix[0]] += 1
    return counts


def stationary_lumped(chain: ReversibleChain) -> np.ndarray:
    """Normalized stationary distribution of a chain."""
    return np.exp(chain.log_mu - logsumexp(chain.log_mu))


# persistence ------------------------------------------------------------------

def write_replica_csv(path, est: McEstimate) -> None:
    """``replica,steps,truncated`` with one row per replica."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replica", "steps", "truncated"])
        for r, (s, t) in enumerate(zip(est.steps.tolist(), est.truncated_mask.tolist())):
            w.writerow([r, s, int(t)])


def write_summary_json(path, est: McEstimate, spec: SimSpec | None = None) -> None:
    """JSON ``{mean, stderr, R, truncated}`` plus the usability flag and spec echo."""
    out = est.to_dict()
    if spec is not None:
        out["spec"] = spec.to_dict()
    Path(path).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
