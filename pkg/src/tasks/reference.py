"""
File: src/tasks/reference.py
Task: Hand-designed throw reference and the phase schedule it follows.

The reference is built by joint interpolation at the sim resolution:
  - set-up: cosine blend from the rest pose to the cocked pose;
  - throw: linear max-speed swing from the cocked to the release pose, then hold;
  - settle: cosine blend back to rest, then hold.
Each phase is stored separately and sampled with phase-relative time, so a
throw phase that is stochastically extended simply keeps holding its last
target.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np

from ..sim.dynamics import ArmModel, JointState, ee_kinematics

SETUP, THROW, SETTLE = 0, 1, 2
PHASE_NAMES = ("throw-set-up", "throw", "settle")


def _cosine(a: np.ndarray, b: np.ndarray, steps: int) -> np.ndarray:
    s = 0.5 - 0.5 * np.cos(np.pi * np.arange(1, steps + 1) / steps)
    return a + (b - a) * s[:, None]


def _linear(a: np.ndarray, b: np.ndarray, steps: int) -> np.ndarray:
    s = np.arange(1, steps + 1) / steps
    return a + (b - a) * s[:, None]


def _hold(pose: np.ndarray, steps: int) -> np.ndarray:
    return np.repeat(pose[None, :], max(0, steps), axis=0)


@dataclass
class ReferenceTrajectory:
    # per phase: (T_phase, n) joint targets at resolution `h`
    phases: Dict[int, np.ndarray]
    h: float
    provenance: str = "hand-designed joint interpolation"

    def at(self, phase: np.ndarray, t_phase: np.ndarray) -> np.ndarray:
        """Targets for per-env phases and phase-relative times; clamps at each phase's end."""
        phase = np.asarray(phase, dtype=np.int64)
        k = np.floor(np.asarray(t_phase, dtype=np.float64) / self.h + 1e-9).astype(np.int64)
        n = self.phases[SETUP].shape[1]
        out = np.zeros(phase.shape + (n,))
        for p, traj in self.phases.items():
            mask = phase == p
            if np.any(mask):
                out[mask] = traj[np.clip(k[mask], 0, traj.shape[0] - 1)]
        return out

    def concatenated(self) -> np.ndarray:
        return np.concatenate([self.phases[SETUP], self.phases[THROW], self.phases[SETTLE]])

    def max_step_jump(self) -> float:
        full = self.concatenated()
        return float(np.max(np.abs(np.diff(full, axis=0))))

    def durations(self) -> Dict[str, float]:
        return {PHASE_NAMES[p]: traj.shape[0] * self.h for p, traj in sorted(self.phases.items())}


def make_reference_throw(
    model: ArmModel,
    rest_pose: Sequence[float],
    cocked_pose: Sequence[float],
    release_pose: Sequence[float],
    *,
    setup_s: float = 2.5,
    throw_s: float = 1.0,
    swing_s: float = 0.4,
    settle_s: float = 1.5,
    settle_move_s: float = 1.0,
    h: float = 0.005,
) -> ReferenceTrajectory:
    rest, cocked, release = (np.asarray(p, dtype=np.float64) for p in (rest_pose, cocked_pose, release_pose))
    if not rest.shape == cocked.shape == release.shape == (model.n_joints,):
        raise ValueError("reference poses need one entry per joint")
    steps = lambda s: int(round(s / h))
    swing = steps(swing_s)
    settle_move = min(steps(settle_move_s), steps(settle_s))
    setup = _cosine(rest, cocked, steps(setup_s))
    throw = np.concatenate([_linear(cocked, release, swing), _hold(release, steps(throw_s) - swing)])
    settle = np.concatenate([_cosine(release, rest, settle_move), _hold(rest, steps(settle_s) - settle_move)])
    return ReferenceTrajectory({SETUP: setup, THROW: throw, SETTLE: settle}, h)


def reference_ee(model: ArmModel, q_ref: np.ndarray) -> np.ndarray:
    """(x, z, orientation) of the arm tip at the given joint targets."""
    pos, _, orient = ee_kinematics(model, JointState(q_ref, np.zeros_like(q_ref)))
    return np.concatenate([pos, orient[..., None]], axis=-1)
