"""Monte Carlo comparison of free and constrained single-pose estimates.

A robot drives one second along a circle of radius ``v T`` while odometry
believes it went straight at heading ``theta0``. A GPS fix and the odometry
are fused with and without the circular-motion constraint.

    python demos/pose_estimation.py [trials]
"""

import sys

from alfg.apps import pose_estimation as pe


def main(trials=200):
    results = pe.run_monte_carlo(trials, seed=0)
    s = pe.summarize(results)
    print(f"{trials} trials")
    print(f"  translational error: free {s['mean_e_t_free']:.4f} m, "
          f"constrained {s['mean_e_t_constrained']:.4f} m")
    print(f"  rotational error:    free {s['mean_e_rot_free']:.4f} rad, "
          f"constrained {s['mean_e_rot_constrained']:.4f} rad")
    print(f"  constraint satisfied in {100 * s['constraint_satisfied_fraction']:.1f}% of converged trials")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 200)
