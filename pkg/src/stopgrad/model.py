"""The stopping-problem instance: rewards, discounting, policies, assumption audits."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .kernel import DomainError, TransitionKernel, check_ifr, integrate_density

__all__ = [
    "Action",
    "ConstantReward",
    "LinearReward",
    "TabulatedReward",
    "StoppingModel",
    "ControlLimitPolicy",
    "AssumptionResult",
    "AssumptionReport",
    "check_assumptions",
]


class Action(enum.Enum):
    WAIT = "wait"
    TRANSPLANT = "transplant"


@dataclass(frozen=True)
class ConstantReward:
    value: float

    def __call__(self, h):
        return np.full_like(np.asarray(h, dtype=float), self.value) if np.ndim(h) else float(self.value)


@dataclass(frozen=True)
class LinearReward:
    """Linear in the health state: at_zero at h=0, at_H at h=H."""

    at_zero: float
    at_H: float
    H: float = 1.0

    def __call__(self, h):
        out = self.at_zero + (self.at_H - self.at_zero) * np.asarray(h, dtype=float) / self.H
        return float(out) if np.ndim(h) == 0 else out


@dataclass(frozen=True)
class TabulatedReward:
    """Piecewise-linear interpolation of tabulated (health, reward) pairs."""

    xs: tuple[float, ...]
    ys: tuple[float, ...]

    def __post_init__(self):
        if len(self.xs) != len(self.ys) or len(self.xs) < 2:
            raise ValueError("tabulated reward needs at least two (x, y) pairs")
        if np.any(np.diff(self.xs) <= 0.0):
            raise ValueError("tabulated reward abscissae must be strictly increasing")

    def __call__(self, h):
        out = np.interp(np.asarray(h, dtype=float), self.xs, self.ys)
        return float(out) if np.ndim(h) == 0 else out


RewardFn = Callable[[object], object]


@dataclass(frozen=True)
class StoppingModel:
    """Immutable MDP instance: bounds, discount, rewards, and the waiting kernel.

    `H_D` is the death threshold: states in [H_D, H] are absorbing with zero reward
    for either action.  With H_D == H the death region degenerates to the single
    absorbing endpoint.  The discount may equal 1 for finite-horizon simulation;
    the infinite-horizon solvers in `dp` require it to be below 1.
    """

    kernel: TransitionKernel
    reward_wait: RewardFn
    reward_transplant: RewardFn
    H: float = 1.0
    H_D: float = 1.0
    discount: float = 0.97
    wait_sup: float = field(init=False, repr=False, default=0.0)
    transplant_sup: float = field(init=False, repr=False, default=0.0)

    def __post_init__(self):
        if not (self.H > 0.0):
            raise ValueError("H must be positive")
        if not (0.0 < self.H_D <= self.H):
            raise ValueError("H_D must lie in (0, H]")
        if not (0.0 < self.discount <= 1.0):
            raise ValueError("discount must lie in (0, 1]")
        if self.kernel.H != self.H:
            raise ValueError("kernel state space does not match the model's H")
        grid = np.linspace(0.0, self.H, 2049)
        c = np.asarray(self.reward_wait(grid), dtype=float)
        r = np.asarray(self.reward_transplant(grid), dtype=float)
        if np.any(c < 0.0) or np.any(r < 0.0):
            raise ValueError("reward functions must be nonnegative on [0, H]")
        object.__setattr__(self, "wait_sup", float(c.max()))
        object.__setattr__(self, "transplant_sup", float(r.max()))

    @property
    def value_bound(self) -> float:
        """Upper bound max(sup c, sup r) / (1 - discount) on any discounted value."""
        g = max(self.wait_sup, self.transplant_sup)
        return float("inf") if self.discount >= 1.0 else g / (1.0 - self.discount)

    def is_dead(self, h):
        return np.asarray(h, dtype=float) >= self.H_D if np.ndim(h) else float(h) >= self.H_D

    def wait_reward(self, h):
        """One-period waiting reward, zero on the death region."""
        hv = self._check(h)
        out = np.where(hv >= self.H_D, 0.0, np.asarray(self.reward_wait(hv), dtype=float))
        return float(out) if np.ndim(h) == 0 else out

    def transplant_reward(self, h):
        """Terminal transplant reward, zero on the death region."""
        hv = self._check(h)
        out = np.where(hv >= self.H_D, 0.0, np.asarray(self.reward_transplant(hv), dtype=float))
        return float(out) if np.ndim(h) == 0 else out

    def stage_reward(self, h, action: Action):
        return self.transplant_reward(h) if action is Action.TRANSPLANT else self.wait_reward(h)

    def truncation_bound(self, horizon: int) -> float:
        """Bound on the value mass discarded by truncating paths after `horizon` periods."""
        if self.discount >= 1.0:
            return float("inf")
        return self.discount ** (horizon + 1) * max(self.wait_sup, self.transplant_sup) / (1.0 - self.discount)

    def _check(self, h):
        hv = np.asarray(h, dtype=float)
        if np.any(hv < 0.0) or np.any(hv > self.H) or np.any(np.isnan(hv)):
            raise DomainError(f"health state must lie in [0, {self.H}]")
        return hv


@dataclass(frozen=True)
class ControlLimitPolicy:
    """Stationary threshold policy: transplant exactly when h >= theta.

    The tie at h == theta resolves to TRANSPLANT; the crossing-event estimators
    depend on this convention.
    """

    theta: float
    H: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.theta <= self.H):
            raise ValueError("theta must lie in [0, H]")

    def action(self, h) -> Action:
        if not (0.0 <= h <= self.H):
            raise DomainError(f"health state must lie in [0, {self.H}]")
        return Action.TRANSPLANT if h >= self.theta else Action.WAIT

    def transplant_mask(self, h):
        return np.asarray(h, dtype=float) >= self.theta


@dataclass(frozen=True)
class AssumptionResult:
    name: str
    passed: bool
    vacuous: bool = False
    worst: float = 0.0
    witness: tuple | None = None
    note: str = ""


@dataclass(frozen=True)
class AssumptionReport:
    results: tuple[AssumptionResult, ...]

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.results)

    def __iter__(self):
        return iter(self.results)

    def __getitem__(self, name: str) -> AssumptionResult:
        for r in self.results:
            if r.name == name:
                return r
        raise KeyError(name)


def _monotone_worst(values: np.ndarray, direction: int) -> tuple[float, int]:
    """Largest violation of (non)monotonicity along axis 0; direction +1 = nondecreasing."""
    diffs = direction * np.diff(values)
    worst = float((-diffs).max()) if diffs.size else 0.0
    idx = int(np.argmax(-diffs)) if diffs.size else 0
    return worst, idx


def check_assumptions(
    model: StoppingModel,
    grid: Sequence[float] | None = None,
    tol: float = 1e-9,
    norm_tol: float = 1e-8,
) -> AssumptionReport:
    """Numerical audit of the structural conditions behind the threshold-optimality result.

    A failing entry does not block simulation or gradient estimation; it only
    means the sufficient conditions for an optimal control limit are unverified.
    The grid must lie in the living region [0, H_D).
    """
    if grid is None:
        grid = np.linspace(0.0, model.H_D, 102)[:-1]
    g = np.asarray(grid, dtype=float)
    if np.any(np.diff(g) <= 0.0):
        raise ValueError("grid must be strictly increasing")
    if np.any(g < 0.0) or np.any(g >= model.H_D):
        raise ValueError("grid must lie in [0, H_D)")

    results = []

    # A1: both reward functions continuous and nonincreasing (nonincreasing audited).
    c = np.asarray(model.reward_wait(g), dtype=float)
    r = np.asarray(model.reward_transplant(g), dtype=float)
    worst_c, i_c = _monotone_worst(c, -1)
    worst_r, i_r = _monotone_worst(r, -1)
    if max(worst_c, worst_r) <= tol:
        results.append(AssumptionResult("A1", True, worst=max(worst_c, worst_r)))
    else:
        which, worst, i = ("wait", worst_c, i_c) if worst_c >= worst_r else ("transplant", worst_r, i_r)
        results.append(
            AssumptionResult(
                "A1", False, worst=worst, witness=(float(g[i]), float(g[i + 1])),
                note=f"{which} reward increases on the grid",
            )
        )

    # A2: density exists, normalized, and bounded on the audited grid.
    worst_norm = 0.0
    for h in g[:: max(1, g.size // 25)]:
        mass = integrate_density(model.kernel, float(h), 0.0, model.H)
        mass += sum(w for _, w in model.kernel.point_masses(float(h)))
        worst_norm = max(worst_norm, abs(mass - 1.0))
    dens = np.asarray(model.kernel.density(g[None, :], g[:, None]))
    grid_bound = float(dens.max())
    declared = model.kernel.density_bound
    a2_ok = worst_norm <= norm_tol and np.isfinite(grid_bound)
    note = f"grid density bound {grid_bound:.6g}" + ("" if declared is None else f", declared {declared:.6g}")
    results.append(AssumptionResult("A2", a2_ok, worst=worst_norm, note=note))

    # A3: increasing failure rate of the kernel.
    ifr = check_ifr(model.kernel, g, tol=tol)
    results.append(AssumptionResult("A3", ifr.passed, worst=ifr.worst_violation, witness=ifr.witness))

    no_death = model.H_D >= model.H
    tails_hd = np.asarray(model.kernel.tail_mass(model.H_D, g))

    # A4: mass placed below H_D but above any h0 is monotone in the current state.
    if no_death:
        results.append(AssumptionResult("A4", True, vacuous=True, note="death interval empty"))
    else:
        tails_h0 = np.asarray(model.kernel.tail_mass(g[:, None], g[None, :]))  # [h0, h]
        below = tails_h0 - tails_hd[None, :]
        worst = float((below[:, :-1] - below[:, 1:]).max())
        if worst <= tol:
            results.append(AssumptionResult("A4", True, worst=max(worst, 0.0)))
        else:
            i, j = np.unravel_index(int(np.argmax(below[:, :-1] - below[:, 1:])), (g.size, g.size - 1))
            results.append(
                AssumptionResult("A4", False, worst=worst, witness=(float(g[i]), float(g[j]), float(g[j + 1])))
            )

    # A5: relative transplant-reward drop is covered by the added death risk.
    if no_death:
        results.append(AssumptionResult("A5", True, vacuous=True, note="death interval empty"))
    else:
        i1, i2 = np.triu_indices(g.size, k=1)
        ok_pairs = r[i2] > 0.0
        lhs = np.where(ok_pairs, (r[i1] - r[i2]) / np.where(ok_pairs, r[i2], 1.0), -np.inf)
        rhs = model.discount * (tails_hd[i2] - tails_hd[i1])
        excess = lhs - rhs
        worst = float(excess.max()) if excess.size else 0.0
        if worst <= tol:
            results.append(AssumptionResult("A5", True, worst=max(worst, 0.0)))
        else:
            k = int(np.argmax(excess))
            results.append(AssumptionResult("A5", False, worst=worst, witness=(float(g[i1[k]]), float(g[i2[k]]))))

    return AssumptionReport(tuple(results))
