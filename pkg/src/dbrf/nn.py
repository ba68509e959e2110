"""Dense layers, variational heads, losses, and an Adam optimizer.

Everything here is a pure function of its inputs plus explicit state
records, so concurrent workers can share nothing but code.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError

ACTIVATIONS = ("identity", "relu", "sigmoid")

LOG_VAR_RANGE = (-10.0, 10.0)


@dataclass
class DenseLayer:
    """A fully connected layer: activation(weights @ x + bias)."""

    weights: ad.Tensor  # (out, in)
    bias: ad.Tensor  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.activation!r}")
        w, b = self.weights.value, self.bias.value
        if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
            raise ConfigurationError(
                f"inconsistent layer shapes: weights {w.shape}, bias {b.shape}")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ConfigurationError("layer parameters must be finite")

    @property
    def params(self) -> list[ad.Tensor]:
        return [self.weights, self.bias]


def glorot_uniform(rng: np.random.Generator, out_dim: int, in_dim: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (in_dim + out_dim))
    return rng.uniform(-limit, limit, size=(out_dim, in_dim))


def init_dense(rng: np.random.Generator, in_dim: int, out_dim: int,
               activation: str = "identity") -> DenseLayer:
    return DenseLayer(
        weights=ad.Tensor(glorot_uniform(rng, out_dim, in_dim), requires_grad=True),
        bias=ad.Tensor(np.zeros(out_dim), requires_grad=True),
        activation=activation,
    )


def dense_forward(layer: DenseLayer, x) -> ad.Tensor:
    """Apply the layer to a single vector or a (batch, in) matrix."""
    x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
    single = x.value.ndim == 1
    if single:
        x = ad.reshape(x, (1, x.value.shape[0]))
    out = ad.linear(x, layer.weights, layer.bias)
    if layer.activation == "relu":
        out = ad.relu(out)
    elif layer.activation == "sigmoid":
        out = ad.sigmoid(out)
    if single:
        out = ad.reshape(out, (out.value.shape[1],))
    return out


def dropout(x: ad.Tensor, rate: float, rng: np.random.Generator | None) -> ad.Tensor:
    """Inverted dropout; pass rng=None at evaluation time for the identity."""
    if rng is None or rate == 0.0:
        return x
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate {rate} outside [0, 1)")
    mask = (rng.random(x.value.shape) >= rate) / (1.0 - rate)
    return ad.mul(x, mask)


@dataclass
class GaussianHead:
    """Mean and log-variance of a diagonal Gaussian posterior."""

    mu: ad.Tensor
    log_var: ad.Tensor

    def __post_init__(self):
        if self.mu.value.shape != self.log_var.value.shape:
            raise ConfigurationError(
                f"mu shape {self.mu.value.shape} != log_var shape {self.log_var.value.shape}")


def gaussian_head(mu: ad.Tensor, raw_log_var: ad.Tensor) -> GaussianHead:
    """Build a head from raw network outputs, clamping log_var against collapse."""
    return GaussianHead(mu=mu, log_var=ad.clip(raw_log_var, *LOG_VAR_RANGE))


def reparameterize(head: GaussianHead, noise: np.ndarray) -> ad.Tensor:
    """mu + exp(log_var / 2) * noise; gradient reaches mu and log_var only."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != head.mu.value.shape:
        raise ConfigurationError(
            f"noise shape {noise.shape} != head shape {head.mu.value.shape}")
    std = ad.exp(ad.mul(head.log_var, 0.5))
    return ad.add(head.mu, ad.mul(std, noise))


def gaussian_kl(head: GaussianHead) -> ad.Tensor:
    """KL from the head to a standard normal, summed over the last axis.

    For a vector head this is the scalar 0.5 * sum(exp(lv) + mu^2 - 1 - lv);
    for a (batch, d) head it is one value per example.
    """
    lv, mu = head.log_var, head.mu
    inner = ad.add(ad.add(ad.exp(lv), ad.square(mu)), ad.add(ad.mul(lv, -1.0), -1.0))
    return ad.mul(ad.tsum(inner, axis=-1 if mu.value.ndim > 1 else None), 0.5)


def binary_cross_entropy(logits, targets, weights=None) -> ad.Tensor:
    """Mean over examples of weight * stable BCE(logit, target)."""
    logits = logits if isinstance(logits, ad.Tensor) else ad.Tensor(logits)
    per_example = ad.bce_with_logits(logits, targets)
    if weights is not None:
        w = weights.value if isinstance(weights, ad.Tensor) else np.asarray(weights, dtype=np.float64)
        if np.any(w < 0):
            raise ConfigurationError("example weights must be non-negative")
        per_example = ad.mul(per_example, w)
    return ad.tmean(per_example)


def gaussian_recon_loss(predicted, target) -> ad.Tensor:
    """0.5 * sum of squared errors over the last axis (per example for batches)."""
    predicted = predicted if isinstance(predicted, ad.Tensor) else ad.Tensor(predicted)
    target = target if isinstance(target, ad.Tensor) else ad.Tensor(target)
    sq = ad.square(ad.add(predicted, ad.mul(target, -1.0)))
    axis = -1 if predicted.value.ndim > 1 else None
    return ad.mul(ad.tsum(sq, axis=axis), 0.5)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    first_moment: tuple[np.ndarray, ...]
    second_moment: tuple[np.ndarray, ...]
    step_count: int = 0
    learning_rate: float = 1e-3
    decay1: float = 0.9
    decay2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if not (0 < self.decay1 < 1 and 0 < self.decay2 < 1):
            raise ConfigurationError("decay rates must lie in (0, 1)")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        if self.step_count < 0:
            raise ConfigurationError("step_count must be non-negative")


def init_adam_state(params: list[np.ndarray], learning_rate: float = 1e-3,
                    decay1: float = 0.9, decay2: float = 0.999,
                    epsilon: float = 1e-8) -> OptimizerState:
    return OptimizerState(
        first_moment=tuple(np.zeros_like(p) for p in params),
        second_moment=tuple(np.zeros_like(p) for p in params),
        learning_rate=learning_rate, decay1=decay1, decay2=decay2, epsilon=epsilon,
    )


def adam_step(params: list[np.ndarray], grads: list[np.ndarray],
              state: OptimizerState) -> tuple[list[np.ndarray], OptimizerState]:
    """One bias-corrected adaptive-moment update; pure, bit-reproducible."""
    if not (len(params) == len(grads) == len(state.first_moment)):
        raise ConfigurationError("params, grads, and state moments must align")
    t = state.step_count + 1
    c1 = 1.0 - state.decay1 ** t
    c2 = 1.0 - state.decay2 ** t
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if p.shape != g.shape:
            raise ConfigurationError(f"grad shape {g.shape} != param shape {p.shape}")
        m = state.decay1 * m + (1.0 - state.decay1) * g
        v = state.decay2 * v + (1.0 - state.decay2) * (g * g)
        step = state.learning_rate * (m / c1) / (np.sqrt(v / c2) + state.epsilon)
        new_params.append(p - step)
        new_m.append(m)
        new_v.append(v)
    new_state = replace(state, first_moment=tuple(new_m),
                        second_moment=tuple(new_v), step_count=t)
    return new_params, new_state


class Adam:
    """Stateful convenience wrapper binding adam_step to a list of tensors."""

    def __init__(self, tensors: list[ad.Tensor], learning_rate: float = 1e-3,
                 decay1: float = 0.9, decay2: float = 0.999, epsilon: float = 1e-8):
        self.tensors = list(tensors)
        self.state = init_adam_state([t.value for t in self.tensors], learning_rate,
                                     decay1, decay2, epsilon)

    def step(self) -> None:
        """Apply accumulated grads to the bound tensors and clear them."""
        grads = [np.zeros_like(t.value) if t.grad is None else t.grad
                 for t in self.tensors]
        new_values, self.state = adam_step([t.value for t in self.tensors], grads, self.state)
        for t, v in zip(self.tensors, new_values):
            t.value = v
        ad.zero_grads(self.tensors)
