"""Patient-health transition kernels: densities, tail masses, sampling, IFR checks."""

from __future__ import annotations

import abc
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "DomainError",
    "TransitionKernel",
    "UniformDeteriorationKernel",
    "IfrReport",
    "check_ifr",
    "integrate_density",
]

# Composite-Simpson panel count used by the quadrature checks (2^10 panels).
DEFAULT_PANELS = 1024

# Relative inward nudge applied at piece endpoints so that quadrature picks up
# one-sided limits at declared density discontinuities.
_EDGE_NUDGE = 1e-12


class DomainError(ValueError):
    """A state argument lies outside the kernel's state space [0, H]."""


def _check_state(x, H: float, name: str) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if np.any(a < 0.0) or np.any(a > H) or np.any(np.isnan(a)):
        raise DomainError(f"{name} must lie in [0, {H}]")
    return a


def _scalar_like(out: np.ndarray, *inputs) -> np.ndarray | float:
    if all(np.ndim(v) == 0 for v in inputs):
        return float(out)
    return out


class TransitionKernel(abc.ABC):
    """One-step Markov kernel for the waiting dynamics on the health interval [0, H].

    A kernel is a density part plus optional point masses at absorbing states
    (`point_masses`).  Sampling is inverse-CDF with exactly one uniform draw per
    transition, which keeps common-random-number coupling exact and makes the
    draw count per path deterministic.

    Kernels are immutable after construction and safe to share across worker
    processes; all randomness enters through the rng passed to `sample_next`.
    """

    H: float = 1.0

    #: Declared global bound on the density, or None when no finite bound exists
    #: on the full square [0, H]^2 (the structural audit then reports the bound
    #: observed on its grid).
    density_bound: float | None = None

    @abc.abstractmethod
    def density(self, h_next, h_cur):
        """Density f(h_next | h_cur) of the next health state."""

    def tail_mass(self, a, h_cur):
        """P(h_next >= a | h_cur).  Closed form where available, quadrature otherwise."""
        a_arr = _check_state(a, self.H, "a")
        h_arr = _check_state(h_cur, self.H, "h_cur")
        b = np.broadcast(a_arr, h_arr)
        out = np.empty(b.shape)
        flat = out.reshape(-1)
        for i, (ai, hi) in enumerate(np.nditer([a_arr, h_arr])):
            m = integrate_density(self, float(hi), float(ai), self.H)
            m += sum(w for loc, w in self.point_masses(float(hi)) if loc >= ai)
            flat[i] = min(max(m, 0.0), 1.0)
        return _scalar_like(out, a_arr, h_arr)

    def ppf(self, u, h_cur):
        """Inverse CDF: the state reached from h_cur when the uniform draw is u.

        Default is a bisection on `tail_mass`; kernels with closed-form inverses
        or point masses should override.
        """
        u_arr = np.asarray(u, dtype=float)
        h_arr = _check_state(h_cur, self.H, "h_cur")
        u_b, h_b = np.broadcast_arrays(u_arr, h_arr)
        lo = np.zeros(u_b.shape)
        hi = np.full(u_b.shape, self.H)
        target = 1.0 - u_b  # solve tail_mass(x | h) = 1 - u
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            t = np.asarray(self.tail_mass(mid, h_b))
            go_right = t > target
            lo = np.where(go_right, mid, lo)
            hi = np.where(go_right, hi, mid)
        out = 0.5 * (lo + hi)
        return _scalar_like(out, u_arr, h_arr)

    def sample_next(self, h_cur, rng):
        """Draw the next state; consumes exactly one uniform per state."""
        h_arr = _check_state(h_cur, self.H, "h_cur")
        u = rng.random() if h_arr.ndim == 0 else rng.random(h_arr.shape)
        return self.ppf(u, h_arr if h_arr.ndim else float(h_arr))

    def density_discontinuities(self, h_cur: float) -> tuple[float, ...]:
        """Jump locations of h' -> density(h' | h_cur), used to split quadrature panels."""
        return ()

    def point_masses(self, h_cur: float) -> tuple[tuple[float, float], ...]:
        """(location, mass) atoms of the transition law from h_cur."""
        return ()


@dataclass(frozen=True)
class UniformDeteriorationKernel(TransitionKernel):
    """Next health state is Uniform[h, 1]; health never improves.

    The endpoint h = 1 carries no density (the law from 1 is a point mass at 1),
    so density/tail_mass treat it as an absorbing atom.
    """

    H: float = 1.0

    def __post_init__(self):
        if self.H != 1.0:
            raise ValueError("uniform-deterioration kernel is defined on the unit interval")

    def density(self, h_next, h_cur):
        hn = _check_state(h_next, self.H, "h_next")
        hc = _check_state(h_cur, self.H, "h_cur")
        with np.errstate(divide="ignore"):
            val = np.where(hc < 1.0, 1.0 / (1.0 - np.where(hc < 1.0, hc, 0.0)), 0.0)
        out = np.where((hc < 1.0) & (hn >= hc) & (hn <= 1.0), val, 0.0)
        return _scalar_like(out, hn, hc)

    def tail_mass(self, a, h_cur):
        aa = _check_state(a, self.H, "a")
        hc = _check_state(h_cur, self.H, "h_cur")
        safe = np.where(hc < 1.0, hc, 0.0)
        frac = (1.0 - np.maximum(aa, safe)) / (1.0 - safe)
        out = np.where(hc < 1.0, np.clip(frac, 0.0, 1.0), 1.0)
        return _scalar_like(out, aa, hc)

    def ppf(self, u, h_cur):
        uu = np.asarray(u, dtype=float)
        hc = _check_state(h_cur, self.H, "h_cur")
        out = hc + (1.0 - hc) * uu
        return _scalar_like(out, uu, hc)

    def density_discontinuities(self, h_cur: float) -> tuple[float, ...]:
        return (float(h_cur),) if h_cur < 1.0 else ()

    def point_masses(self, h_cur: float) -> tuple[tuple[float, float], ...]:
        return (((1.0, 1.0),) if h_cur >= 1.0 else ())


def _simpson(fn, a: float, b: float, panels: int) -> float:
    if b <= a:
        return 0.0
    x = np.linspace(a, b, 2 * panels + 1)
    y = np.asarray(fn(x), dtype=float)
    h = (b - a) / (2 * panels)
    return float(h / 3.0 * (y[0] + y[-1] + 4.0 * y[1:-1:2].sum() + 2.0 * y[2:-2:2].sum()))


def integrate_density(
    kernel: TransitionKernel,
    h_cur: float,
    a: float = 0.0,
    b: float | None = None,
    panels: int = DEFAULT_PANELS,
) -> float:
    """Quadrature of the density part of kernel(. | h_cur) over [a, b].

    The interval is split at the kernel's declared discontinuities and each
    smooth piece is integrated by composite Simpson with endpoints nudged
    inward, so one-sided limits are used at the jumps.  Point masses are not
    included.
    """
    if b is None:
        b = kernel.H
    if b <= a:
        return 0.0
    cuts = sorted(d for d in kernel.density_discontinuities(h_cur) if a < d < b)
    edges = [a, *cuts, b]
    total = 0.0
    for p, q in zip(edges[:-1], edges[1:]):
        width = q - p
        if width <= 0.0:
            continue
        pad = _EDGE_NUDGE * width
        total += _simpson(lambda x: kernel.density(x, h_cur), p + pad, q - pad, panels)
    return total


@dataclass(frozen=True)
class IfrReport:
    """Outcome of the grid-based increasing-failure-rate audit."""

    passed: bool
    worst_violation: float
    witness: tuple[float, float, float] | None
    tol: float

    def __bool__(self) -> bool:
        return self.passed


def check_ifr(kernel: TransitionKernel, grid: Sequence[float] | None = None, tol: float = 1e-9) -> IfrReport:
    """Check on a grid that x -> tail_mass(x0, x) is nondecreasing for every grid x0.

    Numerical audit, not a proof: monotonicity is tested pairwise on adjacent
    grid points (101 equispaced points by default).  Returns the worst
    violating triple (x0, x1, x2) if any.
    """
    if grid is None:
        grid = np.linspace(0.0, kernel.H, 101)
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise ValueError("grid must be a non-empty 1-D sequence")
    if np.any(np.diff(g) <= 0.0):
        raise ValueError("grid must be strictly increasing")
    _check_state(g, kernel.H, "grid")
    if g.size == 1:
        return IfrReport(True, 0.0, None, tol)
    tails = np.asarray(kernel.tail_mass(g[:, None], g[None, :]))  # [x0, x]
    drops = tails[:, :-1] - tails[:, 1:]  # positive entries are violations
    worst = float(drops.max())
    if worst <= tol:
        return IfrReport(True, max(worst, 0.0), None, tol)
    i, j = np.unravel_index(int(np.argmax(drops)), drops.shape)
    witness = (float(g[i]), float(g[j]), float(g[j + 1]))
    return IfrReport(False, worst, witness, tol)
