"""Multilayer perceptrons with per-graph instance normalization, plus Adam.

Every learnable map in the matcher is an :class:`Mlp`: a stack of affine
layers with ReLU between them, an optional final activation, and (when
enabled) instance normalization after each affine layer.  The normalization
instance is the set of rows passed in one call, i.e. the vertices or edges of
a single graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NonFiniteGradientError, ShapeError

__all__ = ["Mlp", "mlp_forward", "glorot_mlp", "AdamState", "adam_step"]

_FINAL_ACTIVATIONS = ("identity", "relu", "sigmoid")


@dataclass
class Mlp:
    """Affine layers with ReLU between them and a configurable final activation."""

    weights: list[Tensor]
    biases: list[Tensor]
    activation: str = "identity"
    use_instance_norm: bool = True

    def __post_init__(self):
        if self.activation not in _FINAL_ACTIVATIONS:
            raise ShapeError(f"unknown final activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("Mlp needs one bias per weight and at least one layer")
        for i in range(len(self.weights) - 1):
            out_w = self.weights[i].value.shape[1]
            next_in = self.weights[i + 1].value.shape[0]
            if out_w != next_in:
                raise ShapeError(
                    f"layer {i} outputs {out_w} columns but layer {i + 1} "
                    f"expects {next_in}"
                )

    @property
    def in_width(self) -> int:
        return self.weights[0].value.shape[0]

    @property
    def out_width(self) -> int:
        return self.weights[-1].value.shape[1]

    def parameters(self):
        """Yield (suffix, tensor) for every learnable array of this net."""
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"w{i}", w
            yield f"b{i}", b


def mlp_forward(net: Mlp, batch: Tensor) -> Tensor:
    """Run a batch (rows = graph elements) through the net.

    Per layer: affine, then instance norm when enabled, then ReLU on hidden
    layers or the configured final activation on the last one.
    """
    if not isinstance(batch, Tensor):
        batch = Tensor(batch)
    if batch.value.ndim != 2 or batch.value.shape[1] != net.in_width:
        raise ShapeError(
            f"mlp_forward expects (n x {net.in_width}) input, got "
            f"{batch.value.shape}"
        )
    h = batch
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = ad.add_bias(ad.matmul(h, w), b)
        if net.use_instance_norm:
            h = ad.instance_norm(h)
        if i < last:
            h = ad.relu(h)
        elif net.activation == "relu":
            h = ad.relu(h)
        elif net.activation == "sigmoid":
            h = ad.sigmoid(h)
    return h


def glorot_mlp(
    widths: list[int],
    rng: np.random.Generator,
    activation: str = "identity",
    use_instance_norm: bool = True,
) -> Mlp:
    """Build an Mlp with Glorot-uniform weights and zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True))
        biases.append(Tensor(np.zeros((1, fan_out)), requires_grad=True))
    return Mlp(weights, biases, activation=activation, use_instance_norm=use_instance_norm)


@dataclass
class AdamState:
    """Adam optimizer state; moment buffers are keyed by parameter name."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> None:
    """Apply one Adam update (with bias correction) in place.

    Raises :class:`NonFiniteGradientError` if any gradient entry is NaN or
    infinite; gradients are never clamped silently.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r}")
        if g.shape != params[name].value.shape:
            raise ShapeError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} shape {params[name].value.shape}"
            )
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        np.sqrt(v_hat, out=v_hat)
        v_hat += state.epsilon
        m_hat /= v_hat
        m_hat *= state.lr
        params[name].value = params[name].value - m_hat
