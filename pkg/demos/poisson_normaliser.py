"""How good are the Poisson tilted normalisers?

The Poisson tilted integral has no closed form. Counts y >= 1 use a Lambert-W
Laplace-transform approximation; y = 0 with a wide cavity uses a series
expansion. This prints both against Gauss-Hermite quadrature, including the
narrow-cavity region where the series breaks down and the dispatcher falls
back to the Lambert-W formula.
"""

import math

from epglm import CavityProjection, InvalidTiltedVariance, tilted_poisson, tilted_quadrature


def row(y, lam, rho2):
    cav = CavityProjection(lam, rho2)
    q = tilted_quadrature("poisson", y, cav).log_z
    out = [f"{y:3d} {lam:6.2f} {rho2:5.2f} {q:10.5f}"]
    for branch in ("asmussen", "rossberg", "auto"):
        if branch == "rossberg" and y > 0:
            out.append(f"{'n/a':>10}")
            continue
        try:
            out.append(f"{tilted_poisson(y, cav, branch=branch).log_z - q:+10.5f}")
        except InvalidTiltedVariance:
            out.append(f"{'invalid':>10}")
    return " ".join(out)


def main():
    print("  y    lam  rho2    quad lZ   lambertW     series       auto")
    for y, lam, rho2 in [(3, 1.0, 0.5), (10, 2.0, 1.5), (1, -1.0, 0.1)]:
        print(row(y, lam, rho2))
    print()
    for lam in (-3.0, -1.0, 0.4):
        for rho2 in (0.1, 0.5, 1.0, 2.0):
            print(row(0, lam, rho2))
    print("\nexp(-1)/sqrt(2) check:", math.exp(tilted_poisson(1, CavityProjection(0.0, 1.0)).log_z))


if __name__ == "__main__":
    main()
