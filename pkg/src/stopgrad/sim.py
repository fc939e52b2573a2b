"""Trajectory simulation under threshold policies and Monte Carlo value estimation.

Replications are driven by `ReplicationStreams`, which hands every replication
id its own reproducible uniform substream.  Batches of replications simulate
vectorized; results are reduced in fixed replication order, so estimates are
bit-identical for any worker count.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from typing import Callable, Sequence

import numpy as np

from .kernel import DomainError
from .model import StoppingModel

__all__ = [
    "ReplicationStreams",
    "Trajectory",
    "PathBatch",
    "simulate_path",
    "sample_paths",
    "estimate_value",
]

DEFAULT_BLOCK_ROWS = 16384


@dataclass(frozen=True)
class ReplicationStreams:
    """Reproducible per-replication uniform streams.

    Replication ids are grouped into fixed-size blocks; each (domain, purpose,
    block) triple seeds an independent child generator whose row-major uniform
    matrix assigns one row per replication.  (seed, domain, purpose, rep)
    therefore fully determines a replication's draws, independent of worker
    count or scheduling.  `domain` separates larger experiment phases (e.g.
    optimizer iterations) that must not share randomness.
    """

    seed: int
    domain: int = 0
    block_rows: int = DEFAULT_BLOCK_ROWS

    PATH = 0  # nominal path draws
    AUX = 1   # auxiliary continuation draws
    ALT = 2   # secondary path draws (uncoupled finite differences)

    def __post_init__(self):
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")
        if self.block_rows < 1:
            raise ValueError("block_rows must be positive")

    def child(self, domain: int) -> "ReplicationStreams":
        return ReplicationStreams(self.seed, domain, self.block_rows)

    def _block_generator(self, purpose: int, block: int) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.domain, purpose, block))
        return np.random.Generator(np.random.PCG64(ss))

    def uniform_rows(self, purpose: int, rep_lo: int, rep_hi: int, ncols: int) -> np.ndarray:
        """Uniform draw matrix for replications [rep_lo, rep_hi); row i serves rep_lo + i.

        Within a block, row r is draws [r*ncols, (r+1)*ncols) of the block
        generator, recovered for partial requests by advancing the generator, so
        any sub-range reproduces exactly the rows of the full block.
        """
        if not (0 <= purpose < 16):
            raise ValueError("purpose must lie in [0, 16)")
        if rep_lo < 0 or rep_hi < rep_lo or ncols < 0:
            raise ValueError("invalid replication range")
        rows = rep_hi - rep_lo
        out = np.empty((rows, ncols))
        if rows == 0 or ncols == 0:
            return out
        first, last = rep_lo // self.block_rows, (rep_hi - 1) // self.block_rows
        for b in range(first, last + 1):
            lo = max(rep_lo, b * self.block_rows)
            hi = min(rep_hi, (b + 1) * self.block_rows)
            gen = self._block_generator(purpose, b)
            offset = lo - b * self.block_rows
            if offset:
                gen.bit_generator.advance(offset * ncols)
            out[lo - rep_lo : hi - rep_lo] = gen.random((hi - lo, ncols))
        return out

    def stream(self, rep_id: int, purpose: int = 0) -> np.random.Generator:
        """Standalone generator for ad-hoc single-path use (disjoint from block draws)."""
        if rep_id < 0:
            raise ValueError("rep_id must be nonnegative")
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.domain, 16 + purpose, rep_id))
        return np.random.Generator(np.random.PCG64(ss))


@dataclass
class Trajectory:
    """One simulated path: visited states, how it ended, and its discounted reward."""

    states: np.ndarray
    stop_index: int | None
    died: bool
    horizon: int
    discounted_reward: float


@dataclass
class PathBatch:
    """Vectorized per-replication path summaries (stop_index = -1 when no transplant)."""

    value: np.ndarray
    stop_index: np.ndarray
    died: np.ndarray
    h_stop: np.ndarray
    h_prev: np.ndarray
    disc_at_stop: np.ndarray


def _check_sim_args(model: StoppingModel, theta: float, h0: float, horizon: int) -> None:
    if not (0.0 <= theta <= model.H):
        raise DomainError("theta must lie in [0, H]")
    if not (0.0 <= h0 < model.H):
        raise DomainError("h0 must lie in [0, H)")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")


def simulate_path(model: StoppingModel, theta: float, h0: float, horizon: int, rng) -> Trajectory:
    """Simulate one path under the threshold policy through period `horizon`.

    Periods accrue the waiting reward until the state crosses theta (transplant,
    terminal reward, path ends) or enters the death region (path ends, zero
    rewards).  One uniform draw is consumed per transition taken.
    """
    _check_sim_args(model, theta, h0, horizon)
    lam = model.discount
    states = [float(h0)]
    v = 0.0
    disc = 1.0
    stop_index: int | None = None
    died = False
    for k in range(horizon + 1):
        h = states[-1]
        if h >= model.H_D:
            died = True
            break
        if h >= theta:
            v += disc * model.transplant_reward(h)
            stop_index = k
            break
        v += disc * model.wait_reward(h)
        if k == horizon:
            break
        states.append(float(model.kernel.sample_next(h, rng)))
        disc *= lam
    return Trajectory(np.asarray(states), stop_index, died, horizon, v)


def _paths_from_uniforms(model: StoppingModel, theta: float, h0: float, horizon: int, U: np.ndarray) -> PathBatch:
    """Vectorized twin of `simulate_path`: row i consumes U[i, k] for its k-th transition."""
    rows = U.shape[0]
    lam = model.discount
    h = np.full(rows, float(h0))
    h_prev = np.full(rows, np.nan)
    h_stop = np.full(rows, np.nan)
    value = np.zeros(rows)
    stop_index = np.full(rows, -1, dtype=np.int64)
    disc_at_stop = np.zeros(rows)
    died = np.zeros(rows, dtype=bool)
    active = np.arange(rows)
    disc = 1.0
    for k in range(horizon + 1):
        if active.size == 0:
            break
        hk = h[active]
        dead = hk >= model.H_D
        died[active[dead]] = True
        live = active[~dead]
        cross = h[live] >= theta
        ic = live[cross]
        if ic.size:
            value[ic] += disc * model.transplant_reward(h[ic])
            stop_index[ic] = k
            disc_at_stop[ic] = disc
            h_stop[ic] = h[ic]
        stay = live[~cross]
        if stay.size:
            value[stay] += disc * model.wait_reward(h[stay])
        if k < horizon and stay.size:
            h_prev[stay] = h[stay]
            h[stay] = model.kernel.ppf(U[stay, k], h[stay])
            active = stay
        else:
            active = np.empty(0, dtype=np.int64)
        disc *= lam
    return PathBatch(value, stop_index, died, h_stop, h_prev, disc_at_stop)


def block_ranges(reps: int, block_rows: int) -> list[tuple[int, int]]:
    return [(lo, min(reps, lo + block_rows)) for lo in range(0, reps, block_rows)]


def map_blocks(fn: Callable, ranges: Sequence[tuple[int, int]], workers: int = 1) -> list:
    """Apply fn(lo, hi) over block ranges, in order; parallel when workers > 1."""
    if workers <= 1 or len(ranges) <= 1:
        return [fn(lo, hi) for lo, hi in ranges]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_call_range, [fn] * len(ranges), ranges))


def _call_range(fn: Callable, rng_pair: tuple[int, int]):
    return fn(*rng_pair)


def _path_block(model: StoppingModel, theta: float, h0: float, horizon: int,
                streams: ReplicationStreams, lo: int, hi: int) -> PathBatch:
    U = streams.uniform_rows(ReplicationStreams.PATH, lo, hi, horizon)
    return _paths_from_uniforms(model, theta, h0, horizon, U)


def sample_paths(
    model: StoppingModel,
    theta: float,
    h0: float,
    horizon: int,
    reps: int,
    streams: ReplicationStreams,
    workers: int = 1,
) -> PathBatch:
    """Simulate `reps` independent replications; results ordered by replication id."""
    _check_sim_args(model, theta, h0, horizon)
    if reps < 1:
        raise ValueError("reps must be positive")
    fn = partial(_path_block, model, theta, h0, horizon, streams)
    parts = map_blocks(fn, block_ranges(reps, streams.block_rows), workers)
    return PathBatch(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                       ("value", "stop_index", "died", "h_stop", "h_prev", "disc_at_stop")))


def estimate_value(
    model: StoppingModel,
    theta: float,
    h0: float,
    horizon: int,
    reps: int,
    streams: ReplicationStreams,
    workers: int = 1,
) -> tuple[float, float]:
    """Mean and standard error of the discounted reward over independent replications."""
    if reps < 2:
        raise ValueError("estimate_value needs reps >= 2")
    batch = sample_paths(model, theta, h0, horizon, reps, streams, workers)
    mean = float(batch.value.mean())
    se = float(batch.value.std(ddof=1) / np.sqrt(reps))
    return mean, se
