"""Solve and verify one profile on a long grid, printing the report summary.

usage: python scripts/run_verification.py {constant,brownian} rho [x_max] [out.json]
"""
import sys

from fattail.kernel import brownian, constant
from fattail.solver import GridConfig, ProfileProblem, solve
from fattail.verify import assemble_report, write_report

if __name__ == "__main__":
    kname, rho = sys.argv[1], float(sys.argv[2])
    x_max = float(sys.argv[3]) if len(sys.argv) > 3 else 1e12
    k = constant() if kname == "constant" else brownian()
    prob = ProfileProblem(k, rho, grid=GridConfig(1e-5, x_max, 60))
    p, rep = solve(prob)
    vr = assemble_report(prob, p)
    print(f"converged={rep.converged} residual={rep.residual_history[-1]:.2e}")
    print(f"tail exponent {vr.tail_fit.exponent:.6f} (target {-1 - rho})")
    print(f"amplitude error {vr.amplitude_error:.2e}")
    print(f"delta {vr.delta_estimate.delta:.4f} (bound {vr.delta_estimate.predicted:.4f})")
    print(f"laplace residual {vr.laplace_residual:.2e}")
    print(f"inequalities {sum(c.passed for c in vr.inequality_suite)}/{len(vr.inequality_suite)}")
    print("overall", "PASS" if vr.overall else "FAIL")
    if len(sys.argv) > 4:
        write_report(vr, sys.argv[4])
