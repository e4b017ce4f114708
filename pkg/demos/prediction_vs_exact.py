"""Closed-form mean transition time against the exact lumped chain.

Two-valued field ``h = +-0.2`` at ``beta = 1.5``.  For growing ``N`` prints
the exact mean hitting time of the target layer, the sharp formula and the
naive one-dimensional formula, all as logs.
"""
import math

from rfcw.kramers import predict
from rfcw.landscape import Landscape1D
from rfcw.meso import build_partition, grid_total, layer_states, lumped_chain
from rfcw.model import FieldDistribution, SystemParams, sample_field
from rfcw.potential import mean_hitting_time


def main():
    beta = 1.5
    print(f"{'N':>5} {'log exact':>11} {'log sharp':>11} {'log naive':>11} {'exact/sharp':>12}")
    for N in (100, 200, 400, 800):
        params = SystemParams(N, beta)
        field = sample_field(FieldDistribution.two_valued(0.2), N, 7)
        bar = Landscape1D.from_field(params, field).transition_barrier()
        pred = predict(field, params, barrier=bar)
        chain = lumped_chain(build_partition(field, 2), params)
        A = layer_states(chain, grid_total(N, bar.start.m_star))
        B = layer_states(chain, grid_total(N, bar.target.m_star))
        exact = mean_hitting_time(chain, A, B, window=(40, 25)).log_mean
        print(f"{N:5d} {exact:11.4f} {pred.log_mean_time:11.4f} {pred.log_naive_mean_time:11.4f} "
              f"{math.exp(exact - pred.log_mean_time):12.4f}")


if __name__ == "__main__":
    main()
