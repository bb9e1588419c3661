"""Grid toy: classification solver and relax-and-round NNContPI against the grid DP."""

import argparse
import sys

import numpy as np

from nncontrol import algos
from nncontrol.optim import GdConfig, Schedule
from nncontrol.oracle import grid_dp_solve
from nncontrol.problems import grid_toy_problem, grid_toy_spec


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    p.add_argument("--samples", type=int, default=100_000, help="Monte Carlo paths for values")
    args = p.parse_args(argv)

    problem = grid_toy_problem()
    grid = grid_toy_spec(problem)
    oracle = grid_dp_solve(problem, grid)
    pts, acts = grid.states, problem.control_set.actions
    ref = oracle.values[0, len(pts) // 2]
    print(f"grid DP V_0(0) = {ref:.5f}")
    N = problem.horizon

    for seed in args.seeds:
        cls_cfg = algos.SolverConfig(
            "classification_pi", 16384, algos.empirical_training([pts] * N),
            policy_net=algos.NetworkShape(16, 10, 50, init="spread", bias_scale=10.0),
            policy_gd=GdConfig("minibatch", 20, 64, Schedule("constant", 0.5)), seed=seed)
        cls = algos.solve(problem, cls_cfg)
        match = np.mean([cls.policy_fns()[n].indices(pts) == oracle.actions[n] for n in range(N)])
        v, se = algos.estimate_value_pi(problem, cls, 0, [0.0], args.samples, seed=99)
        print(f"seed {seed} classification   match {match:.3f}  V_0(0) {v:.4f} +- {se:.4f}")

        relax_cfg = algos.SolverConfig(
            "nncontpi", 4096, algos.empirical_training([pts] * N),
            policy_net=algos.NetworkShape(16, 10, 10, init="spread", bias_scale=3.0),
            policy_gd=GdConfig("minibatch", 30, 16, Schedule("constant", 0.02)), seed=seed)
        relaxed = algos.solve(grid_toy_problem(relaxed=True), relax_cfg)
        rounded = [algos.rounded_policy(q, acts) for q in relaxed.policies]
        match = np.mean([rounded[n](pts)[:, 0] == acts[oracle.actions[n], 0] for n in range(N)])
        v, se = algos.estimate_value_pi(problem, rounded, 0, [0.0], args.samples, seed=99)
        print(f"seed {seed} nncontpi+round   match {match:.3f}  V_0(0) {v:.4f} +- {se:.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
