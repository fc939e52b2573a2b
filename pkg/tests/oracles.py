"""Independent numerical oracles for the uniform-deterioration scenario.

Everything here is computed from first principles with plain numpy quadrature
and closed-form probability, with no imports from the package under test, so
these values can safely pin the estimators and solvers.

Scenario conventions: state space [0, 1], next state Uniform[current, 1],
waiting reward c constant, transplant reward r(h) = r0 * (1 - h), start h0 = 0,
no interior death region.
"""

from __future__ import annotations

import numpy as np

C_WAIT = 0.5
R0 = 8.0


def simpson(f, a: float, b: float, n: int = 2048) -> float:
    """Composite Simpson with n panels (n even by construction)."""
    x = np.linspace(a, b, 2 * n + 1)
    y = np.asarray(f(x), dtype=float)
    h = (b - a) / (2 * n)
    return float(h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-2:2].sum()))


def value_exact(theta: float, lam: float) -> float:
    """Infinite-horizon policy value from h0 = 0.

    From h0 = 0 the crossing period M satisfies M - 1 ~ Poisson(-ln(1-theta))
    (the log-residual 1 - h_k is a product of iid uniforms), which gives
    E[lam^M] = lam * (1-theta)^(1-lam); conditional on crossing, the overshoot
    state is Uniform[theta, 1], so E[r at stop] = (R0/2) * (1-theta).
    """
    y = 1.0 - theta
    e_lam_m = lam * y ** (1.0 - lam)
    return (C_WAIT / (1.0 - lam)) * (1.0 - e_lam_m) + (R0 / 2.0) * lam * y ** (2.0 - lam)


def derivative_exact(theta: float, lam: float) -> float:
    """d/dtheta of `value_exact`."""
    y = 1.0 - theta
    return C_WAIT * lam * y ** (-lam) - (R0 / 2.0) * lam * (2.0 - lam) * y ** (1.0 - lam)


def two_period_value(theta: float, lam: float, panels: int = 1500) -> float:
    """E[v_2(theta)] from h0 = 0 by nested quadrature over the two transitions.

    v_2 accrues the waiting reward at period 0, then either stops at period 1
    (h1 >= theta) or accrues c and resolves period 2 against the second
    transition, which from h1 is uniform on [h1, 1].
    """

    def r(h):
        return R0 * (1.0 - h)

    stop1 = simpson(r, theta, 1.0, panels)  # h1 ~ U[0,1] density 1

    def waited(h1_arr):
        out = np.empty_like(h1_arr)
        for i, h1 in enumerate(h1_arr):
            dens = 1.0 / (1.0 - h1)
            stop2 = simpson(lambda y: r(y) * dens, theta, 1.0, panels)
            wait2 = C_WAIT * dens * (theta - h1)  # constant integrand on [h1, theta)
            out[i] = lam * C_WAIT + lam * lam * (stop2 + wait2)
        return out

    return C_WAIT + lam * stop1 + simpson(waited, 0.0, theta, 400)


def two_period_derivative(theta: float, lam: float, delta: float = 1e-5) -> float:
    """Central difference of the truncated-horizon expected value in theta."""
    return (two_period_value(theta + delta / 2.0, lam) - two_period_value(theta - delta / 2.0, lam)) / delta


def continuation_mean_reward(theta: float) -> float:
    """E[r(h')] for h' ~ Uniform[theta, 1], by quadrature (equals (R0/2)(1-theta))."""
    dens = 1.0 / (1.0 - theta)
    return simpson(lambda y: R0 * (1.0 - y) * dens, theta, 1.0)
