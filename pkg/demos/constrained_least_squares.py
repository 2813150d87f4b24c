"""Equality- and inequality-constrained least squares on a tiny graph.

Minimizes ``||x - (3, -1)||^2`` subject to ``x0 + x1 = 1`` and ``x0 <= 1.5``,
then prints the solution next to the multipliers the solver found.

    python demos/constrained_least_squares.py
"""

import numpy as np

from alfg import Euclidean, FactorGraph, FunctionEquality, FunctionInequality, LinearFactor, solve


def main():
    graph = FactorGraph()
    x = graph.add_variable(Euclidean(2), np.zeros(2))
    graph.add(LinearFactor((x,), [np.eye(2)], [3.0, -1.0]))
    graph.add(FunctionEquality((x,), 1, lambda v: [v[0] + v[1] - 1.0], lambda v: [[[1.0, 1.0]]]))
    graph.add(FunctionInequality((x,), 1, lambda v: [v[0] - 1.5], lambda v: [[[1.0, 0.0]]]))
    graph.finalize()

    est, report = solve(graph)
    print(f"x = {est[x]} after {report.outer_iterations} outer iterations")
    print(f"lambda = {graph.eq_factors[0].lam}, mu = {graph.ineq_factors[0].mu}")
    # both constraints bind, so the answer is (1.5, -0.5)
    print(f"expected (1.5, -0.5); violation {report.max_eq_violation:.1e}")


if __name__ == "__main__":
    main()
