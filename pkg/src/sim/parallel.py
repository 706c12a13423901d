"""
File: src/sim/parallel.py
Task: Fixed-shard execution of plant batches. A batch of E envs is cut into
`n_shards` contiguous shards once, each shard an independent PlantBatch with
its own random stream. The thread count only decides how many shards step at
the same time, so results are identical for any `threads` value.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, List, Optional, Sequence

import numpy as np

from .dynamics import JointState
from .plants import PlantBatch


class ShardPool:
    """Ordered map over a thread pool; threads <= 1 runs inline."""

    def __init__(self, threads: int = 1):
        self.threads = max(1, int(threads))
        self._executor: Optional[ThreadPoolExecutor] = None
        if self.threads > 1:
            self._executor = ThreadPoolExecutor(max_workers=self.threads, thread_name_prefix="shard")

    def map(self, fn: Callable[[Any], Any], items: Iterable[Any]) -> List[Any]:
        items = list(items)
        if self._executor is None or len(items) <= 1:
            return [fn(x) for x in items]
        return list(self._executor.map(fn, items))

    def close(self) -> None:
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def __enter__(self) -> "ShardPool":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def shard_bounds(n_envs: int, n_shards: int) -> List[slice]:
    n_shards = max(1, min(int(n_shards), int(n_envs)))
    edges = np.linspace(0, n_envs, n_shards + 1).round().astype(int)
    return [slice(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def shard_rngs(seed: int, n_shards: int) -> List[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n_shards)]


class ShardedPlant:
    """
    Presents N shard plants as one PlantBatch-shaped object. `factory(n)` builds
    a shard with n envs. Randomized resets draw from the owning shard's stream,
    never from a caller-supplied one.
    """

    def __init__(
        self,
        factory: Callable[[int], PlantBatch],
        n_envs: int,
        n_shards: int,
        seed: int,
        pool: Optional[ShardPool] = None,
    ):
        self.n_envs = int(n_envs)
        self.bounds = shard_bounds(self.n_envs, n_shards)
        self.shards = [factory(s.stop - s.start) for s in self.bounds]
        self.rngs = shard_rngs(seed, len(self.shards))
        self.pool = pool or ShardPool(1)
        first = self.shards[0]
        self.name = first.name
        self.cfg = first.cfg
        self.h = first.h
        self.n_joints = first.n_joints

    @property
    def control_mode(self) -> str:
        return self.shards[0].control_mode

    def _cat_state(self, attr: str) -> JointState:
        parts = [getattr(s, attr) for s in self.shards]
        return JointState(np.concatenate([p.q for p in parts]), np.concatenate([p.qdot for p in parts]))

    @property
    def physical(self) -> JointState:
        return self._cat_state("physical")

    @property
    def observed(self) -> JointState:
        return self._cat_state("observed")

    @property
    def applied_torque(self) -> np.ndarray:
        return np.concatenate([s.applied_torque for s in self.shards])

    @property
    def command_torque(self) -> np.ndarray:
        return np.concatenate([s.command_torque for s in self.shards])

    def _split_ids(self, env_ids: Sequence[int]):
        ids = np.asarray(env_ids, dtype=np.int64)
        for k, b in enumerate(self.bounds):
            mask = (ids >= b.start) & (ids < b.stop)
            if np.any(mask):
                yield k, mask, ids[mask] - b.start

    def reset(self, env_ids, q_obs, qdot, rng=None) -> None:
        q_obs, qdot = np.asarray(q_obs), np.asarray(qdot)
        for k, mask, local in self._split_ids(env_ids):
            self.shards[k].reset(local, q_obs[mask], qdot[mask], self.rngs[k])

    def set_state(self, env_ids, q_obs, qdot) -> None:
        q_obs, qdot = np.asarray(q_obs), np.asarray(qdot)
        for k, mask, local in self._split_ids(env_ids):
            self.shards[k].set_state(local, q_obs[mask], qdot[mask])

    def prime(self, env_ids, tau_prefix) -> None:
        ids = np.asarray(env_ids, dtype=np.int64)
        for k, mask, local in self._split_ids(ids):
            self.shards[k].prime(local, [tau_prefix[i] for i in np.flatnonzero(mask)])

    def step(self, command: np.ndarray, extra_tau: Optional[np.ndarray] = None) -> np.ndarray:
        command = np.asarray(command, dtype=np.float64)
        jobs = [
            (shard, command[b], None if extra_tau is None else extra_tau[b])
            for shard, b in zip(self.shards, self.bounds)
        ]
        flags = self.pool.map(lambda job: job[0].step(job[1], job[2]), jobs)
        return np.concatenate(flags)

    def describe(self):
        out = self.shards[0].describe()
        out.update({"n_envs": self.n_envs, "n_shards": len(self.shards)})
        return out
