"""Fit a degree-(3,2) rational function to the ramp max(0,x) on [-1, 1].

The best-fit coefficients seed every hidden-layer activation at network
initialization (see pdeid.network.RAMP_INIT). The fit is constrained so the
rational tracks the ramp outside the fit interval as well:

  r(x) = (a3 x^3 + a2 x^2 + a1 x + a0) / (b2 x^2 + b1 x + b0)

with a3 = b2 (unit far-field slope, r(x) -> x + (a2-b1)/b2 as |x| grows)
and a2 = b1 (zero far-field offset). b0 is normalized to 1 and rescaled
out afterwards; the denominator must stay positive on all of R.

Run:  python scripts/fit_ramp_activation.py
Emits the frozen coefficient tuple plus the max fit error on [-1, 1],
which the test suite uses as the initialization error bound.
"""

import numpy as np
from scipy.optimize import least_squares


def rational(x, a3, a2, a1, a0, b2, b1, b0):
    return (((a3 * x + a2) * x + a1) * x + a0) / ((b2 * x + b1) * x + b0)


def residuals(theta, x, target):
    c, b1, a1, a0 = theta
    return rational(x, c, b1, a1, a0, c, b1, 1.0) - target


def fit(n_grid=4001, n_restarts=40, seed=0):
    x = np.linspace(-1.0, 1.0, n_grid)
    target = np.maximum(0.0, x)
    rng = np.random.default_rng(seed)
    best = None
    for k in range(n_restarts):
        if k == 0:
            theta0 = np.array([2.0, 1.2, 0.5, 0.03])
        else:
            theta0 = rng.uniform([0.3, -1.0, 0.0, -0.2], [6.0, 4.0, 2.0, 0.2])
        try:
            sol = least_squares(residuals, theta0, args=(x, target),
                                method="lm", xtol=1e-15, ftol=1e-15, max_nfev=20000)
        except Exception:
            continue
        c, b1 = sol.x[0], sol.x[1]
        if c <= 0 or b1 * b1 - 4.0 * c >= 0:  # denominator must have no real root
            continue
        if best is None or sol.cost < best.cost:
            best = sol
    if best is None:
        raise RuntimeError("no admissible fit found")
    return x, target, best.x


def main():
    x, target, theta = fit()
    c, b1, a1, a0 = theta
    coeffs = (c, b1, a1, a0, c, b1, 1.0)  # a3 a2 a1 a0 b2 b1 b0
    r = rational(x, *coeffs)
    max_err = float(np.max(np.abs(r - target)))
    rms_err = float(np.sqrt(np.mean((r - target) ** 2)))
    disc = b1 * b1 - 4.0 * c
    print("numerator  (a3,a2,a1,a0):", tuple(repr(float(v)) for v in coeffs[:4]))
    print("denominator (b2,b1,b0):  ", tuple(repr(float(v)) for v in coeffs[4:]))
    print(f"max |r - ramp| on [-1,1]: {max_err!r}")
    print(f"rms error on [-1,1]:      {rms_err!r}")
    print(f"denominator discriminant: {disc!r} (negative -> positive on R)")
    for probe in (2.0, 5.0, 10.0, -10.0):
        print(f"r({probe:+.1f}) = {rational(probe, *coeffs)!r}")


if __name__ == "__main__":
    main()
