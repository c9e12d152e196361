"""Max node distance to an M2-ball versus dyadic depth, feasible and infeasible families.

Prints a CSV; the feasible column should be ~0 at every depth, the infeasible
one should track the closed-form translation excess.
"""

import argparse

import numpy as np

from wviab.acceptance import feasible_viability_scenario, infeasible_viability_scenario, translated_ball_excess
from wviab.viability import m2_ball, viable_trajectory


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--max-depth", type=int, default=7)
    ap.add_argument("--horizon", type=float, default=1.0)
    ap.add_argument("--dt", type=float, default=0.01)
    args = ap.parse_args()

    Q = m2_ball(1.0)
    good_dyn, good_mu = feasible_viability_scenario()
    bad_dyn, bad_mu = infeasible_viability_scenario()
    closed = float(translated_ball_excess(bad_mu, np.array([args.horizon]))[0])
    print("depth,feasible_max_g,feasible_status,infeasible_final_g,closed_form_final_g")
    for depth in range(args.max_depth + 1):
        good = viable_trajectory(good_dyn, Q, good_mu, args.horizon, depth, args.dt)
        bad = viable_trajectory(bad_dyn, Q, bad_mu, args.horizon, depth, args.dt)
        print(f"{depth},{good.g_values.max():.3e},{good.status},{bad.g_values[-1]:.6f},{closed:.6f}")


if __name__ == "__main__":
    main()
