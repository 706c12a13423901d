"""
File: src/sim/plants.py
Task: Batched plant variants behind one step interface. Every simulator the
workbench compares (ideal/Default, reference, CEM-fitted, domain-randomized,
UAN-calibrated, supervised actuator net) is a `PlantBatch`, so task envs,
UAN training and evaluation drive them identically.

A plant holds E independent arms. `step(command)` advances all of them by
one 5 ms step and returns a per-env divergence flag; diverged rows keep their
previous state so the caller can reset them.
"""

from __future__ import annotations

import logging
from typing import Any, Dict, Optional, Sequence

import numpy as np

from .actuator import (
    ActuatorState,
    PlantConfig,
    TransmissionModel,
    lag_update,
    pd_torque,
    clip_command,
    step_ideal,
    step_reference,
)
from .dynamics import JointState, is_diverged

logger = logging.getLogger(__name__)


class PlantBatch:
    """Base class: ideal-sim physics, torque or position-target commands."""

    name = "plant"

    def __init__(self, cfg: PlantConfig, n_envs: int, h: float = 0.005):
        self.cfg = cfg
        self.n_envs = int(n_envs)
        self.h = float(h)
        n = cfg.arm.n_joints
        self.n_joints = n
        self.state = JointState(np.zeros((self.n_envs, n)), np.zeros((self.n_envs, n)))
        self._command_torque = np.zeros((self.n_envs, n))
        self._applied_torque = np.zeros((self.n_envs, n))

    # --------- per-variant hooks ---------

    def encoder_offset(self) -> np.ndarray:
        return np.zeros((self.n_envs, self.n_joints))

    def pd_gains(self):
        return self.cfg.gains

    def _reset_hidden(self, env_ids: np.ndarray, rng: Optional[np.random.Generator]) -> None:
        pass

    def _integrate(self, tau_cmd: np.ndarray, extra_tau: Optional[np.ndarray] = None):
        """Return (next physical state, applied torque) for the whole batch."""
        applied = clip_command(tau_cmd, self.state.qdot, self.cfg.limits)
        if extra_tau is not None:
            applied = applied + extra_tau
        return step_ideal(self.cfg, self.state, tau_cmd, self.h, extra_tau=extra_tau), applied

    def _commit_hidden(self, keep: np.ndarray) -> None:
        pass

    def _delay(self, command: np.ndarray) -> np.ndarray:
        return command

    def prime(self, env_ids: Sequence[int], tau_prefix: Sequence[np.ndarray]) -> None:
        """Restore hidden state from the commands that preceded a mid-session start."""

    # --------- interface ---------

    @property
    def control_mode(self) -> str:
        return self.cfg.control_mode

    @property
    def physical(self) -> JointState:
        return self.state

    @property
    def observed(self) -> JointState:
        return JointState(self.state.q + self.encoder_offset(), self.state.qdot)

    @property
    def applied_torque(self) -> np.ndarray:
        return self._applied_torque

    @property
    def command_torque(self) -> np.ndarray:
        return self._command_torque

    def reset(
        self,
        env_ids: Sequence[int],
        q_obs: np.ndarray,
        qdot: np.ndarray,
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        """Start fresh episodes: new hidden state (and randomization) then place the arm."""
        ids = np.asarray(env_ids, dtype=np.int64)
        if ids.size == 0:
            return
        self._reset_hidden(ids, rng)
        self.set_state(ids, q_obs, qdot)
        self._command_torque[ids] = 0.0
        self._applied_torque[ids] = 0.0

    def set_state(self, env_ids: Sequence[int], q_obs: np.ndarray, qdot: np.ndarray) -> None:
        """Overwrite the joint state from encoder readings, keeping hidden actuator state."""
        ids = np.asarray(env_ids, dtype=np.int64)
        self.state.q[ids] = np.asarray(q_obs, dtype=np.float64) - self.encoder_offset()[ids]
        self.state.qdot[ids] = np.asarray(qdot, dtype=np.float64)

    def torque_for(self, command: np.ndarray) -> np.ndarray:
        command = np.asarray(command, dtype=np.float64)
        if self.control_mode == "position":
            return pd_torque(self.pd_gains(), command, self.observed)
        return command

    def step(self, command: np.ndarray, extra_tau: Optional[np.ndarray] = None) -> np.ndarray:
        """Advance one step. `extra_tau` is added after clipping (calibration corrections)."""
        tau_cmd = self.torque_for(self._delay(np.asarray(command, dtype=np.float64)))
        with np.errstate(all="ignore"):
            nxt, applied = self._integrate(tau_cmd, extra_tau)
            diverged = is_diverged(nxt, self.cfg.divergence_limit)
        keep = ~diverged
        if np.any(diverged):
            logger.debug("%s: %d env(s) diverged", self.name, int(diverged.sum()))
        self.state.q[keep] = nxt.q[keep]
        self.state.qdot[keep] = nxt.qdot[keep]
        self._command_torque = np.where(keep[:, None], tau_cmd, self._command_torque)
        self._applied_torque = np.where(keep[:, None], applied, self._applied_torque)
        self._commit_hidden(keep)
        return diverged

    def describe(self) -> Dict[str, Any]:
        return {"name": self.name, "n_envs": self.n_envs, "h": self.h, "control_mode": self.control_mode}


class IdealPlant(PlantBatch):
    """The idealized training simulator (the Default variant)."""

    name = "default"

    def __init__(self, cfg: PlantConfig, n_envs: int, h: float = 0.005):
        super().__init__(cfg.as_ideal(), n_envs, h)


class ReferencePlant(PlantBatch):
    """The synthetic stand-in for hardware: transmission effects with hidden actuator state."""

    name = "reference"

    def __init__(self, cfg: PlantConfig, n_envs: int, h: float = 0.005):
        if not cfg.is_reference:
            raise ValueError("ReferencePlant needs a PlantConfig with a transmission")
        super().__init__(cfg, n_envs, h)
        self.act = ActuatorState.zeros((self.n_envs, self.n_joints))
        self._pending: Optional[ActuatorState] = None

    def encoder_offset(self) -> np.ndarray:
        return np.broadcast_to(self.cfg.transmission.encoder_offset, (self.n_envs, self.n_joints))

    def _reset_hidden(self, env_ids, rng) -> None:
        self.act.lagged_torque[env_ids] = 0.0
        self.act.motor_torque[env_ids] = 0.0

    def _integrate(self, tau_cmd, extra_tau=None):
        if extra_tau is not None:
            raise ValueError("the reference plant takes no extra torque")
        nxt, act = step_reference(self.cfg, self.state, self.act, tau_cmd, self.h)
        self._pending = act
        return nxt, act.motor_torque

    def _commit_hidden(self, keep: np.ndarray) -> None:
        if self._pending is None:
            return
        self.act.lagged_torque[keep] = self._pending.lagged_torque[keep]
        self.act.motor_torque[keep] = self._pending.motor_torque[keep]
        self._pending = None

    def prime(self, env_ids: Sequence[int], tau_prefix: Sequence[np.ndarray]) -> None:
        """
        The lag filter only depends on past commands, so replaying each env's
        command prefix (a (T_k, n_joints) array) restores it exactly. Prefixes
        are left-padded with zeros, which keep a zero-initialized filter at zero.
        """
        ids = np.asarray(env_ids, dtype=np.int64)
        if ids.size == 0:
            return
        lag = np.broadcast_to(self.cfg.transmission.lag_tau, (self.n_envs, self.n_joints))[ids]
        if not np.any(lag > 0):
            # pass-through filter: the state is just the last command
            for k, prefix in enumerate(tau_prefix):
                self.act.lagged_torque[ids[k]] = prefix[-1] if len(prefix) else 0.0
            return
        longest = max(len(p) for p in tau_prefix)
        padded = np.zeros((ids.size, longest, self.n_joints))
        for k, prefix in enumerate(tau_prefix):
            if len(prefix):
                padded[k, longest - len(prefix):] = prefix
        lagged = np.zeros((ids.size, self.n_joints))
        for t in range(longest):
            lagged = lag_update(lag, lagged, padded[:, t], self.h)
        self.act.lagged_torque[ids] = lagged


def make_cem_plant_config(base: PlantConfig, coulomb, visc, armature) -> PlantConfig:
    """
    Ideal sim augmented with fitted physics parameters only (coulomb friction,
    viscous damping, armature), as a system-identification baseline would.
    """
    coulomb = np.asarray(coulomb, dtype=np.float64)
    tm = TransmissionModel(
        lag_tau=0.0,
        tau_coulomb=coulomb,
        tau_stiction=coulomb,
        stribeck_vel=1.0,
        visc=visc,
        efficiency=1.0,
        armature_extra=armature,
        encoder_offset=0.0,
    )
    ideal = base.as_ideal()
    return PlantConfig(
        arm=ideal.arm,
        gains=ideal.gains,
        limits=ideal.limits,
        sim_armature=ideal.sim_armature,
        transmission=tm,
        control_mode=ideal.control_mode,
        divergence_limit=ideal.divergence_limit,
    )


class CemPlant(ReferencePlant):
    """Ideal sim plus CEM-fitted friction, damping and armature (per env or shared)."""

    name = "cem"

    def __init__(self, base: PlantConfig, params: Dict[str, Any], n_envs: int, h: float = 0.005):
        super().__init__(
            make_cem_plant_config(base, params["coulomb"], params["visc"], params["armature"]),
            n_envs,
            h,
        )
