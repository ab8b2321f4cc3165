"""Sweep controller settings with oracle perception and print final-error statistics.

For each (epsilon, loop period, q_max) the four standard scenarios are poured
and the percent-error RMSE is reported; this shows where the stop band and the
post-stop drain dominate the error.
"""

import argparse
import itertools

from liquidseg.control import ControllerConfig, simulate_pour
from liquidseg.evaluation import eval_pouring

SCENARIOS = ((0.0, 0.25), (0.0, 0.5), (0.0, 0.75), (0.25, 0.75))


def sweep(epsilons, periods, rates):
    rows = []
    for eps, dt, q in itertools.product(epsilons, periods, rates):
        traces = [simulate_pour(ControllerConfig(l_target=t, epsilon=eps, loop_period=dt), l0, q_max=q)
                  for l0, t in SCENARIOS]
        overall = eval_pouring(traces).rows()[-1]
        worst = max(abs(tr.final_error) for tr in traces)
        rows.append((eps, dt, q, overall["rmse_pct"], 100 * worst))
    return rows


if __name__ == "__main__":
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--epsilon", type=float, nargs="+", default=[0.005, 0.01, 0.02])
    p.add_argument("--period", type=float, nargs="+", default=[0.05, 0.1, 0.2])
    p.add_argument("--q-max", type=float, nargs="+", default=[0.02, 0.05, 0.1])
    a = p.parse_args()
    print(f"{'epsilon':>8}{'period s':>10}{'q_max':>8}{'RMSE %':>9}{'worst %':>9}")
    for eps, dt, q, rmse, worst in sweep(a.epsilon, a.period, a.q_max):
        print(f"{eps:>8.3f}{dt:>10.3f}{q:>8.3f}{rmse:>9.3f}{worst:>9.3f}")
