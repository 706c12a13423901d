"""
File: src/learn/nn.py
Task: Minimal float64 neural-network stack for the UAN, the supervised
actuator net, policies and critics: ELU MLPs with exact reverse-mode
gradients, a state-independent diagonal Gaussian head, and AdamW.

Parameters are plain numpy arrays; weights are stored (fan_in, fan_out) so a
batch forward is `x @ W + b`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


# --------- MLP ---------

@dataclass
class MlpParams:
    sizes: Tuple[int, ...]
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.weights) != len(self.sizes) - 1 or len(self.biases) != len(self.sizes) - 1:
            raise ValueError("MlpParams needs one weight/bias pair per layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.sizes[i], self.sizes[i + 1]) or b.shape != (self.sizes[i + 1],):
                raise ValueError(f"layer {i}: shapes {w.shape}/{b.shape} do not chain with sizes {self.sizes}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def arrays(self) -> List[np.ndarray]:
        """Parameters in declared order: W0, b0, W1, b1, ..."""
        out: List[np.ndarray] = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MlpParams":
        return MlpParams(self.sizes, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def checksum(self) -> float:
        return float(sum(np.sum(a) for a in self.arrays()))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def _orthogonal(rng: np.random.Generator, n_in: int, n_out: int, gain: float) -> np.ndarray:
    a = rng.normal(size=(max(n_in, n_out), min(n_in, n_out)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if n_in < n_out:
        q = q.T
    return gain * q[:n_in, :n_out]


def init_mlp(sizes: Sequence[int], rng: np.random.Generator, hidden_gain: float = math.sqrt(2.0), out_gain: float = 0.01) -> MlpParams:
    """Seeded orthogonal weights (gain sqrt(2) hidden, 0.01 output), zero biases."""
    sizes = tuple(int(s) for s in sizes)
    weights, biases = [], []
    for i in range(len(sizes) - 1):
        gain = out_gain if i == len(sizes) - 2 else hidden_gain
        weights.append(_orthogonal(rng, sizes[i], sizes[i + 1], gain))
        biases.append(np.zeros(sizes[i + 1]))
    return MlpParams(sizes, weights, biases)


def zeros_like_params(params: MlpParams) -> MlpParams:
    return MlpParams(params.sizes, [np.zeros_like(w) for w in params.weights], [np.zeros_like(b) for b in params.biases])


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0.0, 1.0, np.exp(np.minimum(x, 0.0)))


def _check_input(params: MlpParams, x: np.ndarray) -> None:
    if x.shape[-1] != params.sizes[0]:
        raise ValueError(f"input width {x.shape[-1]} != first layer size {params.sizes[0]}")


def forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _check_input(params, x)
    h = x
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        h = z if i == last else elu(z)
    return h


def forward_cached(params: MlpParams, x: np.ndarray) -> Tuple[np.ndarray, List[np.ndarray]]:
    """Forward that also returns every layer's pre-activation (and the input) for backward."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(params, x)
    cache = [x]
    h = x
    last = params.n_layers - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        cache.append(z)
        h = z if i == last else elu(z)
    return h, cache


def backward(
    params: MlpParams,
    x: np.ndarray,
    grad_out: np.ndarray,
    cache: Optional[List[np.ndarray]] = None,
) -> Tuple[MlpParams, np.ndarray]:
    """
    Reverse-mode gradients of sum(grad_out * forward(x)).
    Returns (parameter gradients, input gradient). Works for a single vector or a batch.
    """
    if cache is None:
        _, cache = forward_cached(params, x)
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape[-1] != params.sizes[-1]:
        raise ValueError(f"output gradient width {g.shape[-1]} != last layer size {params.sizes[-1]}")
    squeeze = g.ndim == 1
    if squeeze:
        g = g[None, :]
        cache = [c[None, :] for c in cache]

    gw: List[np.ndarray] = [None] * params.n_layers
    gb: List[np.ndarray] = [None] * params.n_layers
    for i in reversed(range(params.n_layers)):
        z_in = cache[i]
        h_in = z_in if i == 0 else elu(z_in)
        gw[i] = h_in.T @ g
        gb[i] = g.sum(axis=0)
        g = g @ params.weights[i].T
        if i > 0:
            g = g * elu_grad(z_in)
    grad_in = g[0] if squeeze else g
    return MlpParams(params.sizes, gw, gb), grad_in


# --------- Gaussian head ---------

@dataclass
class GaussianHead:
    log_std: np.ndarray

    def __post_init__(self):
        self.log_std = np.asarray(self.log_std, dtype=np.float64)

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def copy(self) -> "GaussianHead":
        return GaussianHead(self.log_std.copy())


def gaussian_logprob(head: GaussianHead, mean: np.ndarray, action: np.ndarray) -> np.ndarray:
    """Log-density of a diagonal normal, summed over the last axis."""
    z = (action - mean) / head.std
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(head.log_std) - 0.5 * mean.shape[-1] * LOG_2PI


def gaussian_logprob_grads(head: GaussianHead, mean: np.ndarray, action: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """d logprob / d mean (per sample) and d logprob / d log_std (per sample)."""
    var = head.std**2
    diff = action - mean
    return diff / var, diff * diff / var - 1.0


def gaussian_sample(head: GaussianHead, mean: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return mean + head.std * rng.standard_normal(size=mean.shape)


def gaussian_entropy(head: GaussianHead) -> float:
    return float(np.sum(head.log_std) + 0.5 * head.log_std.shape[-1] * (1.0 + LOG_2PI))


def gaussian_kl(new_mean, new_log_std, old_mean, old_log_std) -> np.ndarray:
    """Closed-form KL(new || old) between diagonal Gaussians, per sample."""
    new_var, old_var = np.exp(2.0 * new_log_std), np.exp(2.0 * old_log_std)
    kl = old_log_std - new_log_std + (new_var + (new_mean - old_mean) ** 2) / (2.0 * old_var) - 0.5
    return np.sum(kl, axis=-1)


# --------- AdamW ---------

@dataclass
class AdamWState:
    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    lr: float = 1.0e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1.0e-8

    @classmethod
    def for_arrays(cls, arrays: Sequence[np.ndarray], lr: float, weight_decay: float = 0.01) -> "AdamWState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0, float(lr), float(weight_decay))


def adamw_step(state: AdamWState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> List[np.ndarray]:
    """
    One AdamW update. Decay is applied to the parameters directly; moments are
    bias-corrected. Returns new arrays and advances `state` in place.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("AdamW: params, grads and moments must align")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**state.step, 1.0 - b2**state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat, v_hat = state.m[i] / c1, state.v[i] / c2
        p_new = p * (1.0 - state.lr * state.weight_decay) - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        out.append(p_new)
    return out


def global_norm(grads: Sequence[np.ndarray]) -> float:
    return float(math.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> Tuple[List[np.ndarray], float]:
    norm = global_norm(grads)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return list(grads), norm


def params_from_arrays(template: MlpParams, arrays: Sequence[np.ndarray]) -> MlpParams:
    arrays = list(arrays)
    return MlpParams(template.sizes, arrays[0::2], arrays[1::2])
