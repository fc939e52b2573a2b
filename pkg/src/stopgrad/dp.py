"""Discretized dynamic programming: value iteration, policy values, and the
finite-difference oracle for the threshold derivative."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .kernel import DomainError
from .model import StoppingModel

__all__ = [
    "ConvergenceError",
    "GridValueFunction",
    "PolicyValue",
    "ControlLimitResult",
    "make_grid",
    "GridDynamics",
    "bellman_backup",
    "value_iterate",
    "extract_control_limit",
    "policy_value",
    "policy_value_sweep",
    "oracle_derivative",
]

DEFAULT_NODES = 1025   # 2^10 + 1
ORACLE_NODES = 4097    # 2^12 + 1

_EDGE_NUDGE = 1e-9


class ConvergenceError(RuntimeError):
    """A fixed-point solve failed to reach its tolerance within the iteration budget."""


def make_grid(model: StoppingModel, num_nodes: int = DEFAULT_NODES, extra: Sequence[float] = ()) -> np.ndarray:
    """Uniform node grid on [0, H] with H_D and any extra points inserted exactly."""
    pts = np.concatenate([np.linspace(0.0, model.H, num_nodes), [model.H_D], np.asarray(extra, dtype=float)])
    if np.any(pts < 0.0) or np.any(pts > model.H):
        raise DomainError("grid points must lie in [0, H]")
    return np.unique(pts)


class GridDynamics:
    """Quadrature weights of the waiting-transition operator on a node grid.

    Row i integrates f(.|x_i) against piecewise-linear functions over the living
    region [0, H_D], with one-sided evaluation at declared density jumps, plus
    any point masses.  Because grid values may represent one-sided limits at
    discontinuity nodes (the policy threshold, the death boundary), the operator
    is applied as `continuation(v_right, v_left)`: `v_right[j]` is the value just
    above node j and `v_left[j]` the value just below; they coincide wherever the
    function is continuous.
    """

    def __init__(self, model: StoppingModel, nodes: np.ndarray):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2 or np.any(np.diff(nodes) <= 0.0):
            raise ValueError("nodes must be a strictly increasing 1-D grid")
        if nodes[0] != 0.0 or nodes[-1] != model.H:
            raise ValueError("grid must span [0, H]")
        if model.H_D not in nodes:
            raise ValueError("grid must contain the death threshold H_D")
        self.model = model
        self.nodes = nodes
        n = nodes.size
        self.alive = nodes <= model.H_D
        self._cuts = [
            sorted(model.kernel.density_discontinuities(float(x))) if a else []
            for x, a in zip(nodes, self.alive)
        ]
        self._n_cells = int(np.searchsorted(nodes, model.H_D))  # cells [x_j, x_{j+1}] with x_{j+1} <= H_D
        self._wr_cache: dict[int, np.ndarray] = {}
        self.W = np.zeros((n, n))
        for j in range(self._n_cells):
            wl, wr = self._cell_weights(j)
            self.W[:, j] += wl
            self.W[:, j + 1] += wr
        rows, locs, masses = [], [], []
        for i in np.nonzero(self.alive)[0]:
            for loc, mass in model.kernel.point_masses(float(nodes[i])):
                if loc <= model.H_D:
                    rows.append(i)
                    locs.append(loc)
                    masses.append(mass)
        self._atom_rows = np.asarray(rows, dtype=np.intp)
        self._atom_locs = np.asarray(locs, dtype=float)
        self._atom_masses = np.asarray(masses, dtype=float)

    def _cell_weights(self, j: int) -> tuple[np.ndarray, np.ndarray]:
        """Weights of cell [x_j, x_{j+1}] onto its two endpoint values, per row."""
        x = self.nodes
        n = x.size
        p, q = x[j], x[j + 1]
        dx = q - p
        kernel = self.model.kernel
        alive_idx = np.nonzero(self.alive)[0]
        pts = np.array([p + _EDGE_NUDGE * dx, 0.5 * (p + q), q - _EDGE_NUDGE * dx])
        f = np.zeros((n, 3))
        f[alive_idx] = np.asarray(kernel.density(pts[None, :], x[alive_idx, None]))
        wl = np.zeros(n)
        wr = np.zeros(n)
        wl[alive_idx] = dx / 6.0 * (f[alive_idx, 0] + 2.0 * f[alive_idx, 1])
        wr[alive_idx] = dx / 6.0 * (2.0 * f[alive_idx, 1] + f[alive_idx, 2])
        # Rows whose density jumps strictly inside this cell: redo with split pieces.
        for i in alive_idx:
            cuts = [d for d in self._cuts[i] if p < d < q]
            if not cuts:
                continue
            wli = wri = 0.0
            edges = [p, *cuts, q]
            for a, b in zip(edges[:-1], edges[1:]):
                w = b - a
                if w <= 0.0:
                    continue
                sub = np.array([a + _EDGE_NUDGE * w, 0.5 * (a + b), b - _EDGE_NUDGE * w])
                fv = np.asarray(kernel.density(sub, float(x[i])))
                alpha = (q - sub) / dx  # interpolation weight onto the left endpoint
                wli += w / 6.0 * (fv[0] * alpha[0] + 4.0 * fv[1] * alpha[1] + fv[2] * alpha[2])
                wri += w / 6.0 * (fv[0] * (1 - alpha[0]) + 4.0 * fv[1] * (1 - alpha[1]) + fv[2] * (1 - alpha[2]))
            wl[i] = wli
            wr[i] = wri
        return wl, wr

    def _right_col(self, k: int) -> np.ndarray:
        """Weight column of node k in its role as the right endpoint of cell k-1."""
        if k not in self._wr_cache:
            if k == 0:
                self._wr_cache[k] = np.zeros(self.nodes.size)
            else:
                self._wr_cache[k] = self._cell_weights(k - 1)[1]
        return self._wr_cache[k]

    def continuation(self, v_right: np.ndarray, v_left: np.ndarray | None = None) -> np.ndarray:
        """E[v(h') | h = x_i] for every node, integrating over the living region."""
        cont = self.W @ v_right
        if v_left is not None and v_left is not v_right:
            for k in np.nonzero(v_left != v_right)[0]:
                cont += (v_left[k] - v_right[k]) * self._right_col(int(k))
        else:
            v_left = v_right
        if self._atom_rows.size:
            vals = np.interp(self._atom_locs, self.nodes, v_left)
            np.add.at(cont, self._atom_rows, self._atom_masses * vals)
        return cont


@dataclass
class GridValueFunction:
    """Value function on a node grid.

    Values at nodes strictly beyond H_D are zero (death region).  The node at
    H_D itself stores the living-side limit, which is what the quadrature needs;
    for reward functions that vanish continuously at the death boundary this
    limit is itself zero.
    """

    nodes: np.ndarray
    values: np.ndarray
    iterations: int = 0
    residual: float = float("inf")
    converged: bool = False
    tol: float = 0.0
    residual_history: tuple[float, ...] = field(default_factory=tuple, repr=False)

    def value_at(self, h):
        out = np.interp(np.asarray(h, dtype=float), self.nodes, self.values)
        return float(out) if np.ndim(h) == 0 else out


@dataclass(frozen=True)
class PolicyValue:
    value: float
    converged: bool
    iterations: int
    residual: float


@dataclass(frozen=True)
class ControlLimitResult:
    theta: float
    structure_ok: bool
    violations: tuple[float, ...] = ()


def _raw_rewards(model: StoppingModel, nodes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(model.reward_wait(nodes), dtype=float)
    r = np.asarray(model.reward_transplant(nodes), dtype=float)
    return c, r


def bellman_backup(model: StoppingModel, V: GridValueFunction, dynamics: GridDynamics | None = None) -> GridValueFunction:
    """One backup of the optimality recursion on V's grid."""
    dyn = dynamics if dynamics is not None else GridDynamics(model, V.nodes)
    c, r = _raw_rewards(model, dyn.nodes)
    cont = dyn.continuation(V.values)
    out = np.where(dyn.alive, np.maximum(r, c + model.discount * cont), 0.0)
    return GridValueFunction(dyn.nodes, out, iterations=V.iterations + 1)


def value_iterate(
    model: StoppingModel,
    tol: float = 1e-10,
    max_iter: int = 100_000,
    num_nodes: int = DEFAULT_NODES,
    nodes: np.ndarray | None = None,
) -> GridValueFunction:
    """Iterate backups from V0 = 0 until the sup-norm change drops below tol.

    The iterate sequence is checked to be pointwise nondecreasing; the result
    carries a non-convergence flag if the budget runs out first.
    """
    if tol <= 0.0:
        raise ValueError("tol must be positive")
    if model.discount >= 1.0:
        raise ValueError("infinite-horizon value iteration requires discount < 1")
    grid = make_grid(model, num_nodes) if nodes is None else np.asarray(nodes, dtype=float)
    dyn = GridDynamics(model, grid)
    c, r = _raw_rewards(model, grid)
    lam = model.discount
    V = np.zeros(grid.size)
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Vn = np.where(dyn.alive, np.maximum(r, c + lam * dyn.continuation(V)), 0.0)
        drop = float((V - Vn).max())
        if drop > 1e-9:
            raise RuntimeError(f"value iteration lost monotonicity (drop {drop:.3e})")
        residual = float(np.abs(Vn - V).max())
        history.append(residual)
        V = Vn
        if residual < tol:
            converged = True
            break
    residual = history[-1] if history else float("inf")
    return GridValueFunction(grid, V, it if max_iter > 0 else 0, residual, converged, tol, tuple(history))


def extract_control_limit(model: StoppingModel, V: GridValueFunction, tol: float = 1e-8) -> ControlLimitResult:
    """Smallest grid node where transplanting is optimal under V, with a check
    that the transplant-optimal node set is an up-set of the grid."""
    dyn = GridDynamics(model, V.nodes)
    c, r = _raw_rewards(model, V.nodes)
    cont = dyn.continuation(V.values)
    opt_t = (r >= c + model.discount * cont - tol) & dyn.alive
    alive_idx = np.nonzero(dyn.alive)[0]
    flags = opt_t[alive_idx]
    if not flags.any():
        return ControlLimitResult(float(model.H), True)
    first = int(np.argmax(flags))
    theta_star = float(V.nodes[alive_idx[first]])
    holes = alive_idx[first:][~flags[first:]]
    return ControlLimitResult(theta_star, holes.size == 0, tuple(float(V.nodes[k]) for k in holes[:10]))


def _policy_fixed_point(
    dyn: GridDynamics,
    model: StoppingModel,
    theta: float,
    tol: float,
    max_iter: int,
    warm: np.ndarray | None = None,
) -> tuple[np.ndarray, int, float, bool]:
    """Solve the fixed point of the threshold policy on the grid.

    Returns the array of left-limit values at the nodes (death nodes zero),
    which is the function used both for integration and for reporting values
    below the threshold.
    """
    x = dyn.nodes
    lam = model.discount
    c, r = _raw_rewards(model, x)
    alive = dyn.alive
    left_wait = alive & (x <= theta)
    right_wait = alive & (x < theta)
    base_l = np.where(alive, r, 0.0)
    base_r = np.where(alive, r, 0.0)
    vl = base_l.copy()
    vr = base_r.copy()
    if warm is not None:
        vl[left_wait] = warm[left_wait]
    else:
        vl[left_wait] = np.where(left_wait, r, 0.0)[left_wait]
    vr[right_wait] = vl[right_wait]
    converged = False
    it = 0
    residual = float("inf")
    for it in range(1, max_iter + 1):
        cont = dyn.continuation(vr, vl)
        new_wait = c + lam * cont
        residual = float(np.abs(new_wait[left_wait] - vl[left_wait]).max()) if left_wait.any() else 0.0
        vl = np.where(left_wait, new_wait, base_l)
        vr = np.where(right_wait, new_wait, base_r)
        if residual < tol:
            converged = True
            break
    return vl, it, residual, converged


def _policy_value_from(
    dyn: GridDynamics, model: StoppingModel, theta: float, h0: float, tol: float, max_iter: int,
    warm: np.ndarray | None = None,
) -> tuple[PolicyValue, np.ndarray]:
    vl, it, residual, converged = _policy_fixed_point(dyn, model, theta, tol, max_iter, warm)
    if model.is_dead(h0):
        val = 0.0
    elif h0 >= theta:
        val = float(model.transplant_reward(h0))
    else:
        val = float(np.interp(h0, dyn.nodes, vl))
    return PolicyValue(val, converged, it, residual), vl


def policy_value(
    model: StoppingModel,
    theta: float,
    h0: float,
    num_nodes: int = DEFAULT_NODES,
    nodes: np.ndarray | None = None,
    tol: float = 1e-10,
    max_iter: int = 50_000,
) -> PolicyValue:
    """Expected discounted reward of the threshold policy from h0, solved on a grid.

    The threshold is inserted as a grid node so the wait/transplant boundary is
    honored exactly.
    """
    if not (0.0 <= theta <= model.H) or not (0.0 <= h0 <= model.H):
        raise DomainError("theta and h0 must lie in [0, H]")
    if model.discount >= 1.0:
        raise ValueError("infinite-horizon policy evaluation requires discount < 1")
    grid = make_grid(model, num_nodes, extra=(theta,)) if nodes is None else np.asarray(nodes, dtype=float)
    dyn = GridDynamics(model, grid)
    result, _ = _policy_value_from(dyn, model, theta, h0, tol, max_iter)
    return result


def policy_value_sweep(
    model: StoppingModel,
    thetas: Sequence[float],
    h0: float,
    num_nodes: int = DEFAULT_NODES,
    tol: float = 1e-10,
    max_iter: int = 50_000,
) -> list[PolicyValue]:
    """Policy values over a list of thresholds on one shared grid (warm-started)."""
    ths = [float(t) for t in thetas]
    grid = make_grid(model, num_nodes, extra=ths)
    dyn = GridDynamics(model, grid)
    out: list[PolicyValue] = []
    warm: np.ndarray | None = None
    for t in ths:
        res, warm = _policy_value_from(dyn, model, t, h0, tol, max_iter, warm)
        out.append(res)
    return out


def oracle_derivative(
    model: StoppingModel,
    theta: float,
    h0: float,
    dtheta: float = 1e-3,
    num_nodes: int = ORACLE_NODES,
    tol: float = 1e-10,
    max_iter: int = 50_000,
) -> float:
    """Deterministic central difference of the policy value in the threshold.

    Both evaluation points are inserted as nodes of one shared grid, so the
    difference never degenerates to a same-cell comparison and the grid bias
    cancels between the two solves.
    """
    if dtheta <= 0.0:
        raise ValueError("dtheta must be positive")
    lo, hi = theta - dtheta / 2.0, theta + dtheta / 2.0
    if not (0.0 < lo and hi < model.H):
        raise DomainError("theta +/- dtheta/2 must lie inside (0, H)")
    grid = make_grid(model, num_nodes, extra=(lo, hi))
    dyn = GridDynamics(model, grid)
    res_hi, warm = _policy_value_from(dyn, model, hi, h0, tol, max_iter)
    res_lo, _ = _policy_value_from(dyn, model, lo, h0, tol, max_iter, warm)
    if not (res_hi.converged and res_lo.converged):
        raise ConvergenceError("policy evaluation did not converge while forming the oracle derivative")
    return (res_hi.value - res_lo.value) / dtheta
