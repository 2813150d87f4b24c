"""Rotation synchronization over a ring with chords.

Solves the same noisy problem twice: with orthonormality constraints on every
matrix, and unconstrained followed by SVD projection.

    python demos/rotation_sync.py
"""

import numpy as np

from alfg.apps import rotation_sync as rs


def main(n=30):
    problem = rs.generate_problem(n, 1e4, np.random.default_rng(0))
    for constrained in (False, True):
        res = rs.solve_sync(problem, constrained)
        print(f"{res.method:>11}: mean |angle error| per axis {np.array2string(res.errors, precision=4)}, "
              f"max |A^T A - I| {res.orth_violation:.1e}, {res.outer_iterations} outer iterations")


if __name__ == "__main__":
    main()
