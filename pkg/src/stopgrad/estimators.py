"""Derivative estimators for the policy value with respect to the control limit.

Three routes to d V(theta) / d theta:

* crossing-event estimator (`spa_*`): conditions on the period M where the path
  first reaches the threshold, weights by the hazard of landing exactly at
  theta, and multiplies the bracket
      lambda^M (c(theta) - r(theta)) + E[continuation from theta],
  estimating the continuation with auxiliary subpaths.  Note the bracket's
  sign: some write-ups state the negated form (r - c) - E[tail]; the form used
  here is the one that matches the derivative of the simulated value, which
  the test suite pins against the dynamic-programming oracle.
* symmetric finite differences (`fd_estimate`), optionally with common random
  numbers across the two evaluation points;
* the pathwise estimator (`ipa_estimate`), identically zero here because a
  threshold perturbation almost surely changes no stage reward; kept as the
  documented degenerate baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .kernel import DomainError
from .model import StoppingModel
from .sim import ReplicationStreams, _paths_from_uniforms, block_ranges, map_blocks, simulate_path

__all__ = [
    "DegenerateHazardError",
    "GradEstimate",
    "spa_single_rep",
    "spa_estimate",
    "fd_estimate",
    "ipa_estimate",
]


class DegenerateHazardError(RuntimeError):
    """The crossing hazard is undefined: zero tail mass above the threshold."""


@dataclass(frozen=True, eq=False)
class GradEstimate:
    """Per-replication derivative estimates with their summary statistics."""

    method: str
    theta: float
    values: np.ndarray = field(repr=False)
    mean: float
    se: float
    reps: int
    horizon: int
    delta: float | None = None
    crn: bool | None = None
    aux_reps: int | None = None

    @classmethod
    def from_values(cls, method: str, theta: float, values: np.ndarray, horizon: int, **meta) -> "GradEstimate":
        values = np.asarray(values, dtype=float)
        reps = values.size
        mean = float(values.mean())
        se = float(values.std(ddof=1) / np.sqrt(reps)) if reps > 1 else float("nan")
        return cls(method, float(theta), values, mean, se, reps, horizon, **meta)


def _check_grad_args(model: StoppingModel, theta: float, h0: float, horizon: int, reps: int) -> None:
    if not (0.0 <= h0 < model.H):
        raise DomainError("h0 must lie in [0, H)")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    if reps < 2:
        raise ValueError("gradient estimation needs reps >= 2")


def _hazard(model: StoppingModel, theta: float, h_prev: np.ndarray) -> np.ndarray:
    dens = np.asarray(model.kernel.density(theta, h_prev), dtype=float)
    tail = np.asarray(model.kernel.tail_mass(theta, h_prev), dtype=float)
    if np.any(tail <= 0.0):
        raise DegenerateHazardError(
            "tail mass above theta vanished at a crossing state; "
            "this cannot happen on a path whose stopping event fired"
        )
    return dens / tail


def spa_single_rep(
    model: StoppingModel,
    theta: float,
    h0: float,
    horizon: int,
    rng,
    aux_reps: int = 1,
) -> float:
    """One replication of the crossing-event estimator (scalar reference path).

    Simulates the nominal path, and if the stopping event fired at some period
    M >= 1, returns hazard(theta | h_{M-1}) times the bracket; paths with no
    perturbable crossing (death first, horizon reached, or an immediate stop at
    a fixed initial state) contribute zero.  Auxiliary continuations restart
    from the threshold value itself, having waited at M, and then follow the
    policy; draws come from the same rng, after the nominal path's draws.
    """
    if not (0.0 < theta < model.H):
        raise DomainError("theta must lie strictly inside (0, H)")
    if aux_reps < 1:
        raise ValueError("aux_reps must be >= 1")
    traj = simulate_path(model, theta, h0, horizon, rng)
    M = traj.stop_index
    if M is None or M == 0:
        return 0.0
    h_prev = float(traj.states[M - 1])
    hz = float(_hazard(model, theta, np.asarray(h_prev)))
    lam = model.discount
    disc_m = 1.0
    for _ in range(M):
        disc_m *= lam
    tail = 0.0
    for _ in range(aux_reps):
        state = theta
        disc = disc_m
        for _i in range(M + 1, horizon + 1):
            state = float(model.kernel.sample_next(state, rng))
            disc *= lam
            if state >= model.H_D:
                break
            if state >= theta:
                tail += disc * model.transplant_reward(state)
                break
            tail += disc * model.wait_reward(state)
    tail /= aux_reps
    bracket = disc_m * (model.wait_reward(theta) - model.transplant_reward(theta)) + tail
    return hz * bracket


def _spa_tail(
    model: StoppingModel,
    theta: float,
    horizon: int,
    aux_reps: int,
    stop_index: np.ndarray,
    disc_at_stop: np.ndarray,
    U_aux: np.ndarray,
) -> np.ndarray:
    """Vectorized auxiliary continuations; row layout mirrors `spa_single_rep`."""
    lam = model.discount
    n = stop_index.size
    tail = np.zeros(n)
    for j in range(aux_reps):
        state = np.full(n, float(theta))
        disc = disc_at_stop.copy()
        act = np.nonzero(stop_index + 1 <= horizon)[0]
        t = 0
        while act.size:
            t += 1
            state[act] = model.kernel.ppf(U_aux[act, j * horizon + (t - 1)], state[act])
            disc[act] *= lam
            s = state[act]
            live = act[s < model.H_D]
            crossed = state[live] >= theta
            ic = live[crossed]
            if ic.size:
                tail[ic] += disc[ic] * model.transplant_reward(state[ic])
            stay = live[~crossed]
            if stay.size:
                tail[stay] += disc[stay] * model.wait_reward(state[stay])
            act = stay[stop_index[stay] + t + 1 <= horizon]
    return tail / aux_reps


def _spa_block(
    model: StoppingModel,
    theta: float,
    h0: float,
    horizon: int,
    aux_reps: int,
    streams: ReplicationStreams,
    lo: int,
    hi: int,
) -> np.ndarray:
    U = streams.uniform_rows(ReplicationStreams.PATH, lo, hi, horizon)
    batch = _paths_from_uniforms(model, theta, h0, horizon, U)
    out = np.zeros(hi - lo)
    idx = np.nonzero(batch.stop_index >= 1)[0]
    if idx.size == 0:
        return out
    hz = _hazard(model, theta, batch.h_prev[idx])
    U_aux = streams.uniform_rows(ReplicationStreams.AUX, lo, hi, aux_reps * horizon)
    tail = _spa_tail(model, theta, horizon, aux_reps,
                     batch.stop_index[idx], batch.disc_at_stop[idx], U_aux[idx])
    bracket = batch.disc_at_stop[idx] * (model.wait_reward(theta) - model.transplant_reward(theta)) + tail
    out[idx] = hz * bracket
    return out


def spa_estimate(
    model: StoppingModel,
    theta: float,
    h0: float,
    horizon: int,
    reps: int,
    aux_reps: int,
    streams: ReplicationStreams,
    workers: int = 1,
) -> GradEstimate:
    """Crossing-event derivative estimate over independent replication streams."""
    if not (0.0 < theta < model.H):
        raise DomainError("theta must lie strictly inside (0, H)")
    if aux_reps < 1:
        raise ValueError("aux_reps must be >= 1")
    _check_grad_args(model, theta, h0, horizon, reps)
    fn = partial(_spa_block, model, theta, h0, horizon, aux_reps, streams)
    values = np.concatenate(map_blocks(fn, block_ranges(reps, streams.block_rows), workers))
    return GradEstimate.from_values("spa", theta, values, horizon, aux_reps=aux_reps)


def _fd_block(
    model: StoppingModel,
    theta: float,
    h0: float,
    horizon: int,
    delta: float,
    crn: bool,
    streams: ReplicationStreams,
    lo: int,
    hi: int,
) -> np.ndarray:
    U_plus = streams.uniform_rows(ReplicationStreams.PATH, lo, hi, horizon)
    U_minus = U_plus if crn else streams.uniform_rows(ReplicationStreams.ALT, lo, hi, horizon)
    v_plus = _paths_from_uniforms(model, theta + delta / 2.0, h0, horizon, U_plus).value
    v_minus = _paths_from_uniforms(model, theta - delta / 2.0, h0, horizon, U_minus).value
    return (v_plus - v_minus) / delta


def fd_estimate(
    model: StoppingModel,
    theta: float,
    h0: float,
    horizon: int,
    reps: int,
    delta: float,
    crn: bool = True,
    streams: ReplicationStreams | None = None,
    workers: int = 1,
) -> GradEstimate:
    """Symmetric finite difference (v(theta + delta/2) - v(theta - delta/2)) / delta.

    With `crn` both evaluation points replay the same uniform substream, which
    couples the paths until they first disagree about stopping.
    """
    if streams is None:
        raise ValueError("fd_estimate requires a ReplicationStreams instance")
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    if theta - delta / 2.0 < 0.0 or theta + delta / 2.0 > model.H:
        raise DomainError("theta +/- delta/2 must stay inside [0, H]")
    _check_grad_args(model, theta, h0, horizon, reps)
    fn = partial(_fd_block, model, theta, h0, horizon, delta, crn, streams)
    values = np.concatenate(map_blocks(fn, block_ranges(reps, streams.block_rows), workers))
    return GradEstimate.from_values("fd", theta, values, horizon, delta=delta, crn=crn)


def ipa_estimate(
    model: StoppingModel,
    theta: float,
    h0: float,
    horizon: int,
    reps: int,
    streams: ReplicationStreams | None = None,
    workers: int = 1,
) -> GradEstimate:
    """Pathwise derivative estimate: identically zero for this stopping problem.

    Holding the event sequence fixed, a threshold perturbation changes neither
    the visited states nor (almost surely) any stage reward, so the pathwise
    derivative is 0 with probability one, a biased estimate whenever the true
    derivative is not.
    """
    if not (0.0 <= theta <= model.H):
        raise DomainError("theta must lie in [0, H]")
    if reps < 1:
        raise ValueError("reps must be positive")
    # The estimate is constant by construction, so its standard error is zero
    # even for a single replication.
    return GradEstimate("ipa", float(theta), np.zeros(reps), 0.0, 0.0, reps, horizon)
