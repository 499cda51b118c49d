"""Radius lag of the Lie baseline against sqrt(R0^2 - 2t) as dt shrinks.

For each dt = f * eps^2 prints the worst relative radius error while R > 6 eps,
the first step over 3%, and the apparent front speed relative to the law
(measured at one sixth of the extinction time).
"""
import argparse
import math

from mcfnet.grid import Grid
from mcfnet.phasefield import radius_estimate
from mcfnet.schemes import stepper
from mcfnet.training import ball_field


def study(n: int, f: float, r0: float = 0.3):
    eps = 2.0 / n
    g = Grid(2, n, 1.0, eps, f * eps * eps)
    step = stepper("lie", g)
    u = ball_field(g, r0, "oriented")
    worst, first, speed = 0.0, None, None
    probe = int(r0 * r0 / 12 / g.delta_t)
    k = 0
    while r0 * r0 - 2 * k * g.delta_t > (6 * eps) ** 2:
        t = k * g.delta_t
        r = math.sqrt(r0 * r0 - 2 * t)
        est = radius_estimate(u, g, "oriented")
        err = abs(est - r) / r
        worst = max(worst, err)
        if first is None and err >= 0.03:
            first = k
        if k == probe:
            speed = (r0 * r0 - est * est) / (2 * t)
        u = step(u)
        k += 1
    return worst, first, speed, k


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=256)
    ap.add_argument("--factors", type=float, nargs="+", default=[1.0, 0.25, 0.0625])
    args = ap.parse_args()
    print("dt/eps^2  steps  worst_rel_err  first_over_3pct  speed_ratio")
    for f in args.factors:
        worst, first, speed, k = study(args.n, f)
        print(f"{f:8.4f} {k:6d} {worst:14.4f} {str(first):>16} {speed:12.4f}")


if __name__ == "__main__":
    main()
