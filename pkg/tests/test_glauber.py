import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rfcw.errors import DomainError
from rfcw.glauber import (SimSpec, estimate_mean_time, occupation_histogram, sample_start, simulate_batch,
                          simulate_hitting, stationary_lumped, write_replica_csv, write_summary_json)
from rfcw.meso import build_partition, layer_states, lumped_chain
from rfcw.model import FieldDistribution, SystemParams, sample_field
from rfcw.potential import ReversibleChain, mean_hitting_time


def two_state(p):
    return ReversibleChain(np.zeros(2), [[0, 1]], [math.log(p)])


def small_lumped(N=10, beta=0.8, n=1):
    dist = FieldDistribution.constant(0.0) if n == 1 else FieldDistribution.two_valued(0.2)
    f = sample_field(dist, N, 0)
    return f, lumped_chain(build_partition(f, n), SystemParams(N, beta))


def test_start_inside_target_takes_zero_steps():
    spec = SimSpec(1, [1], R=5, chain=two_state(0.3))
    steps, trunc = simulate_batch(spec)
    assert steps.tolist() == [0] * 5 and not trunc.any()


@pytest.mark.parametrize("p", [0.1, 0.5, 0.9])
def test_two_state_hitting_time_is_geometric(p):
    est = estimate_mean_time(SimSpec(0, [1], R=20_000, seed=4, chain=two_state(p)))
    assert abs(est.mean - 1 / p) < 4 * est.stderr
    assert est.stderr == pytest.approx(math.sqrt((1 - p) / p ** 2 / 20_000), rel=0.05)


def test_replica_trajectories_do_not_depend_on_the_batch():
    _, ch = small_lumped()
    spec = SimSpec(0, [ch.n_states - 1], R=12, seed=9, chain=ch)
    full, _ = simulate_batch(spec)
    some, _ = simulate_batch(spec, [3, 7])
    assert some.tolist() == [full[3], full[7]]
    assert simulate_hitting(spec, 7)[0] == full[7]
    a = estimate_mean_time(spec, threads=1)
    b = estimate_mean_time(spec, threads=4)
    assert a.steps.tolist() == b.steps.tolist() and a.mean == b.mean


def test_trajectory_hash_is_reproducible():
    _, ch = small_lumped()
    spec = SimSpec(0, [ch.n_states - 1], R=1, seed=2, chain=ch)
    assert simulate_hitting(spec, 0, True) == simulate_hitting(spec, 0, True)
    assert simulate_hitting(spec, 0, True)[2] != simulate_hitting(spec, 1, True)[2]
    other = SimSpec(0, [ch.n_states - 1], R=1, seed=3, chain=ch)
    assert simulate_hitting(spec, 0, True)[2] != simulate_hitting(other, 0, True)[2]


def test_microscopic_hash_is_reproducible():
    f = sample_field(FieldDistribution.two_valued(0.2), 8, 1)
    params = SystemParams(8, 1.2)
    spec = SimSpec(0, [8], R=1, seed=5, field=f, params=params)
    assert simulate_hitting(spec, 0, True) == simulate_hitting(spec, 0, True)


def test_standard_error_scales_as_inverse_root_R():
    ch = two_state(0.2)
    s1 = estimate_mean_time(SimSpec(0, [1], R=2_000, seed=1, chain=ch)).stderr
    s4 = estimate_mean_time(SimSpec(0, [1], R=8_000, seed=1, chain=ch)).stderr
    assert s4 / s1 == pytest.approx(0.5, rel=0.1)


def chi2_p(counts, probs):
    from scipy.stats import chisquare
    keep = probs * counts.sum() >= 5
    exp = probs[keep] * counts.sum()
    obs = counts[keep].astype(float)
    exp *= obs.sum() / exp.sum()
    return chisquare(obs, exp).pvalue


def test_lumped_occupation_matches_stationary_law():
    _, ch = small_lumped(N=10, beta=0.8)
    spec = SimSpec(5, [0], seed=1, chain=ch)
    counts = sum(occupation_histogram(spec, 20_000, r) for r in range(10))
    pi = stationary_lumped(ch)
    # consecutive visits are correlated, so compare in total variation
    assert 0.5 * np.abs(counts / counts.sum() - pi).sum() < 0.02


def test_microscopic_occupation_matches_lumped_stationary_law():
    f, ch = small_lumped(N=10, beta=0.8, n=2)
    spec = SimSpec(ch.n_states // 2, [0], seed=1, field=f, params=SystemParams(10, 0.8),
                   partition=build_partition(f, 2))
    counts = sum(occupation_histogram(spec, 10_000, r) for r in range(8))
    pi = stationary_lumped(ch)
    assert 0.5 * np.abs(counts / counts.sum() - pi).sum() < 0.03


def test_start_configuration_is_the_conditioned_gibbs_law():
    f = sample_field(FieldDistribution.uniform(-0.5, 0.5), 5, 3)
    beta = 1.0
    params = SystemParams(5, beta)
    part = build_partition(f, 1)
    spec = SimSpec(2, [5], R=1, seed=8, field=f, params=params, partition=part)
    subsets = list(itertools.combinations(range(5), 2))
    logw = np.array([2 * beta * f.h[list(s)].sum() for s in subsets])
    probs = np.exp(logw - logw.max())
    probs /= probs.sum()
    counts = np.zeros(len(subsets))
    for i in range(20_000):
        sigma = sample_start(spec, i)
        counts[subsets.index(tuple(np.flatnonzero(sigma > 0)))] += 1
    assert chi2_p(counts, probs) > 1e-3


def test_microscopic_and_exact_hitting_times_agree():
    f = sample_field(FieldDistribution.two_valued(0.2), 8, 5)
    params = SystemParams(8, 1.5)
    part = build_partition(f, 2)
    ch = lumped_chain(part, params)
    A = layer_states(ch, -1.0)
    B = layer_states(ch, 1.0)
    ht = mean_hitting_time(ch, A, B)
    start = np.zeros(ch.n_states)
    start[ht.A] = ht.nu
    est = estimate_mean_time(SimSpec(start, B, R=3000, seed=2, field=f, params=params, partition=part))
    assert abs(est.mean - ht.mean) < 4 * est.stderr
    lum = estimate_mean_time(SimSpec(start, B, R=3000, seed=2, chain=ch))
    assert abs(lum.mean - ht.mean) < 4 * lum.stderr


def test_truncation_marks_estimate_unusable(tmp_path):
    _, ch = small_lumped(N=10, beta=1.5)
    est = estimate_mean_time(SimSpec(0, [ch.n_states - 1], R=20, seed=0, max_steps=3, chain=ch))
    assert est.truncated == 20 and not est.usable
    assert np.all(est.steps == 3)
    write_replica_csv(tmp_path / "r.csv", est)
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "replica,steps,truncated" and lines[1] == "0,3,1" and len(lines) == 21
    write_summary_json(tmp_path / "s.json", est)
    rec = json.loads((tmp_path / "s.json").read_text())
    assert rec["truncated"] == 20 and rec["usable"] is False and rec["R"] == 20


@settings(max_examples=20)
@given(st.integers(1, 50), st.integers(0, 2 ** 32))
def test_spec_validation(R, seed):
    ch = two_state(0.5)
    spec = SimSpec(np.array([1.0, 0.0]), [1], R=R, seed=seed, chain=ch)
    assert spec.kind == "lumped" and spec.n_states == 2
    assert spec.to_dict()["R"] == R


def test_spec_rejects_bad_input():
    ch = two_state(0.5)
    with pytest.raises(DomainError):
        SimSpec(0, [1], R=0, chain=ch)
    with pytest.raises(DomainError):
        SimSpec(0, [], chain=ch)
    with pytest.raises(DomainError):
        SimSpec(0, [1])
    with pytest.raises(DomainError):
        SimSpec(0, [1], field=np.zeros(4), params=SystemParams(5, 1.0))
    with pytest.raises(DomainError):
        SimSpec(np.array([-1.0, 2.0]), [1], chain=ch)
