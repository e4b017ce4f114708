"""Capacity bracketed by a test function and a unit flow.

The upper bound is the Dirichlet form of the Gaussian test function around
the saddle; the lower bound is the Berman-Konsowa value of the saddle flow.
"""
import math

from rfcw.landscape import Landscape1D
from rfcw.meso import build_partition, lumped_chain
from rfcw.model import FieldDistribution, SystemParams, sample_field
from rfcw.potential import bk_lower_bound, solve_potential
from rfcw.saddleflow import build_saddle_flow, make_neighborhood, upper_bound_via_g


def main():
    beta = 1.5
    print(f"{'N':>5} {'log lower':>11} {'log cap':>11} {'log upper':>11} {'upper/lower':>12}")
    for N in (100, 200, 400):
        params = SystemParams(N, beta)
        field = sample_field(FieldDistribution.two_valued(0.2), N, 11)
        bar = Landscape1D.from_field(params, field).transition_barrier()
        part = build_partition(field, 2)
        chain = lumped_chain(part, params)
        nb = make_neighborhood(chain, part, params, bar)
        cap = solve_potential(chain, nb.A, nb.B, window=(40, 25)).log_cap
        lower = bk_lower_bound(chain, build_saddle_flow(nb), mode="monte_carlo", paths=5000, seed=1).log_value
        upper = upper_bound_via_g(nb)["log_phi"]
        print(f"{N:5d} {lower:11.4f} {cap:11.4f} {upper:11.4f} {math.exp(upper - lower):12.4f}")


if __name__ == "__main__":
    main()
