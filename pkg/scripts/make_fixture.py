"""Write the exact power-law fixture (1-rho) x^{-1-rho}, rho = 0.5."""
from pathlib import Path

from fattail.profile import write_profile
from fattail.selftest import power_law

HERE = Path(__file__).resolve().parent.parent / "fixtures"

if __name__ == "__main__":
    HERE.mkdir(exist_ok=True)
    p = power_law(0.5)
    meta = {
        "description": "exact power law (1-rho) x^(-1-rho), rho = 0.5",
        # a pure power law is not a solution, so the Laplace identity is not certified
        "config": {"kernel": {"family": "constant"}, "problem": {"rho": "0.5"},
                   "verify": {"laplace": "false"}},
    }
    for f in write_profile(p, HERE / "powerlaw_rho0.5.csv", meta):
        print(f)
