"""Monte Carlo hitting times of the microscopic dynamics against the exact value.

``N = 12`` spins with a two-valued field; the microscopic chain lumps
exactly onto the two block magnetizations, so the exact mean comes from the
small lumped chain.
"""
import numpy as np

from rfcw.glauber import SimSpec, estimate_mean_time
from rfcw.landscape import Landscape1D
from rfcw.meso import build_partition, grid_total, layer_states, lumped_chain
from rfcw.model import FieldDistribution, SystemParams, sample_field
from rfcw.potential import mean_hitting_time


def main():
    N, beta = 12, 1.5
    params = SystemParams(N, beta)
    field = sample_field(FieldDistribution.two_valued(0.2), N, 5)
    bar = Landscape1D.from_field(params, field).transition_barrier()
    part = build_partition(field, 2)
    chain = lumped_chain(part, params)
    A = layer_states(chain, grid_total(N, bar.start.m_star))
    B = layer_states(chain, grid_total(N, bar.target.m_star))
    ht = mean_hitting_time(chain, A, B)
    start = np.zeros(chain.n_states)
    start[ht.A] = ht.nu
    for R in (500, 2000, 8000):
        est = estimate_mean_time(SimSpec(start, B, R=R, seed=3, field=field, params=params, partition=part),
                                 threads=4)
        z = (est.mean - ht.mean) / est.stderr
        print(f"R={R:5d}: mean {est.mean:9.2f} +- {est.stderr:6.2f}, exact {ht.mean:9.2f}, z = {z:+.2f}")


if __name__ == "__main__":
    main()
