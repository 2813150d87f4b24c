"""Receding-horizon control through the shipped three-goal list.

Runs both inequality formulations and prints travel time per goal and the
median solve time per epoch. Takes around a minute per formulation.

    python demos/mpc_three_goals.py
"""

import numpy as np

from alfg.apps import mpc
from alfg.cli import default_goals_path


def main():
    goals = mpc.load_goals(default_goals_path("goals3.txt"))
    for form in ("slack", "maxpen"):
        log = mpc.run_simulation(goals, mpc.MpcConfig(formulation=form))
        times = ", ".join(f"{t:.1f}" for t in log.travel_times)
        print(f"{form:>6}: travel times [{times}] s, median solve "
              f"{np.median(log.solve_ms):.0f} ms, median iterations {np.median(log.iterations):.0f}")


if __name__ == "__main__":
    main()
