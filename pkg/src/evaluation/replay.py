"""
File: src/evaluation/replay.py
Task: Replay recorded command sequences through a plant and measure how far
the simulated joint positions drift from the recording.

A window is a (session, start, length) slice of a dataset. All windows of a
call run as one plant batch: each env is placed at its window's recorded
start state, primed with the commands preceding the start, then driven by
the recorded commands. Envs whose window has ended keep stepping on zero
torque and are masked out.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np
import pandas as pd

from ..data.datagen import TransitionDataset

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Window:
    session_id: int
    tag: str
    start: int
    length: int


def tile_windows(ds: TransitionDataset, tags: Sequence[str], window_s: float, overlap: float) -> List[Window]:
    """
    Windows of `window_s` seconds, `overlap` fraction shared between
    neighbours, covering every selected session. A last window aligned to the
    session end covers any tail; sessions shorter than a window give one
    window spanning the whole session.
    """
    size = int(round(window_s / ds.timestep))
    stride = max(1, int(round(size * (1.0 - overlap))))
    out: List[Window] = []
    sessions = ds.sessions()
    for sid in ds.session_ids(tags):
        n = sessions[sid].n_steps
        tag = ds.tags[sid]
        if n <= size:
            out.append(Window(sid, tag, 0, n))
            continue
        starts = list(range(0, n - size + 1, stride))
        if starts[-1] + size < n:
            starts.append(n - size)
        out.extend(Window(sid, tag, s, size) for s in starts)
    return out


def sample_windows(ds: TransitionDataset, tags: Sequence[str], count: int, window_s: float, rng: np.random.Generator) -> List[Window]:
    """`count` windows with uniformly drawn sessions (length-weighted) and starts."""
    size = int(round(window_s / ds.timestep))
    sessions = ds.sessions()
    ids = [sid for sid in ds.session_ids(tags) if sessions[sid].n_steps >= size]
    if not ids:
        raise ValueError(f"no session of kind {list(tags)} is at least {window_s} s long")
    weights = np.array([sessions[s].n_steps - size + 1 for s in ids], dtype=np.float64)
    picks = rng.choice(len(ids), size=count, p=weights / weights.sum())
    out = []
    for p in picks:
        sid = ids[int(p)]
        start = int(rng.integers(0, sessions[sid].n_steps - size + 1))
        out.append(Window(sid, ds.tags[sid], start, size))
    return out


@dataclass
class ReplayResult:
    windows: List[Window]
    # per-window mean over joints and steps of (q_sim - q_real)^2; NaN where diverged
    mse: np.ndarray
    diverged: np.ndarray
    # step index of the first divergence, -1 if none
    diverged_at: np.ndarray

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "session_id": [w.session_id for w in self.windows],
            "tag": [w.tag for w in self.windows],
            "start": [w.start for w in self.windows],
            "length": [w.length for w in self.windows],
            "mse": self.mse,
            "diverged": self.diverged,
            "diverged_at": self.diverged_at,
        })


def replay_windows(
    plant_factory: Optional[Callable[[int], object]],
    ds: TransitionDataset,
    windows: Sequence[Window],
    *,
    teacher_forcing: bool = False,
    plant: Optional[object] = None,
) -> ReplayResult:
    """
    Free-run (default) or teacher-forced replay of every window in one batch.
    `plant_factory(n_envs)` builds a PlantBatch-shaped object in torque mode;
    a prebuilt `plant` with matching size can be passed instead.
    """
    windows = list(windows)
    E = len(windows)
    if E == 0:
        empty = np.zeros(0)
        return ReplayResult([], empty, np.zeros(0, dtype=bool), np.zeros(0, dtype=np.int64))
    plant = plant if plant is not None else plant_factory(E)
    if plant.control_mode != "torque":
        raise ValueError("replay needs a torque-mode plant")
    sessions = ds.sessions()
    n = ds.n_joints
    T = max(w.length for w in windows)

    tau = np.zeros((T, E, n))
    q_real = np.zeros((T, E, n))
    q_next = np.zeros((T, E, n))
    qd_next = np.zeros((T, E, n))
    active = np.zeros((T, E), dtype=bool)
    q0, qd0, prefixes = np.zeros((E, n)), np.zeros((E, n)), []
    for e, w in enumerate(windows):
        s = sessions[w.session_id]
        sl = slice(w.start, w.start + w.length)
        tau[: w.length, e] = s.tau_cmd[sl]
        q_real[: w.length, e] = s.q[sl]
        q_next[: w.length, e] = s.q_next[sl]
        qd_next[: w.length, e] = s.qdot_next[sl]
        active[: w.length, e] = True
        q0[e], qd0[e] = s.q[w.start], s.qdot[w.start]
        prefixes.append(s.tau_cmd[: w.start])

    ids = np.arange(E)
    plant.reset(ids, q0, qd0)
    plant.prime(ids, prefixes)

    sq = np.zeros(E)
    diverged = np.zeros(E, dtype=bool)
    diverged_at = np.full(E, -1, dtype=np.int64)
    for t in range(T):
        flags = plant.step(tau[t])
        fresh = flags & active[t] & ~diverged
        diverged_at[fresh] = t
        diverged |= fresh
        err = plant.observed.q - q_next[t]
        live = active[t] & ~diverged
        sq[live] += np.sum(err[live] ** 2, axis=1)
        if teacher_forcing and t + 1 < T:
            nxt_live = np.flatnonzero(active[t + 1])
            plant.set_state(nxt_live, q_real[t + 1, nxt_live], qd_next[t, nxt_live])

    lengths = np.array([w.length for w in windows], dtype=np.float64)
    mse = np.where(diverged, np.nan, sq / (lengths * n))
    if np.any(diverged):
        logger.warning("replay: %d of %d window(s) diverged", int(diverged.sum()), E)
    return ReplayResult(windows, mse, diverged, diverged_at)
