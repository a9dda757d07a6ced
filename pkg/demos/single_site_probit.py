"""One probit observation, worked end to end.

With a single observation y=1 at x=1 and a standard normal prior, the exact
posterior is a skew normal. One EP site reproduces its mean and variance
exactly and recovers the evidence P(y=1) = 1/2. This script shows each
intermediate quantity next to the value it should equal.
"""

import math

import numpy as np

from epglm import CavityProjection, Dataset, EPConfig, run_ep, tilted_probit, tilted_to_site
from epglm.oracles import grid_posterior


def main():
    cav = CavityProjection(lam=0.0, rho2=1.0)
    t = tilted_probit(1, cav)
    k, m = tilted_to_site(cav, t)
    print("tilted log Z      ", t.log_z, " expected", math.log(0.5))
    print("tilted mean       ", t.mean(cav), " expected", 1 / math.sqrt(math.pi))
    print("tilted variance   ", t.variance(cav), " expected", 1 - 1 / math.pi)
    print("site precision k  ", k)
    print("site shift m      ", m)

    data = Dataset(np.ones((1, 1)), [1.0], "probit")
    fit = run_ep(data, 1.0, EPConfig())
    mean, cov, log_ml = grid_posterior(data, 1.0, bounds=10.0, nodes_per_dim=2001)
    print()
    print(f"{'':18}{'EP':>22}{'grid':>22}")
    print(f"{'posterior mean':18}{fit.xi[0]:22.15f}{mean[0]:22.15f}")
    print(f"{'posterior var':18}{fit.omega[0, 0]:22.15f}{cov[0, 0]:22.15f}")
    print(f"{'log evidence':18}{fit.log_ml:22.15f}{log_ml:22.15f}")
    print(f"sweeps: {fit.sweeps}, converged: {fit.converged}")


if __name__ == "__main__":
    main()
