"""
Network Module for SMELL

Fully-connected autoencoder (encoder m-512-512-2048-n, mirrored decoder) with
a cached forward pass, manual backpropagation and SGD with classical momentum.

CFG Structure:
═══════════════════════════════════════════════════════════════════════════════
Start Symbol    : NetworkModule (this file)

Non-Terminals   :
  ┌─ INTERNAL ────────────────────────────────────────────────────────────────┐
  │  <InitParams>   → N(0, σ) weights, N(0.5, σ) biases, seeded               │
  │  <Forward>      → ReLU on hidden layers, linear output, cache kept        │
  │  <Backward>     → Chain rule through the cached pre-activations           │
  │  <SGDStep>      → v ← βv + g ; θ ← θ − λv                                 │
  └───────────────────────────────────────────────────────────────────────────┘

  ┌─ EXTERNAL ────────────────────────────────────────────────────────────────┐
  │  <numpy>       ← from library (Linear algebra)                            │
  │  <exceptions>  ← from core (DimensionError, TrainingDivergedError)        │
  └───────────────────────────────────────────────────────────────────────────┘

Terminals       : np.ndarray, int, float

Production Rules:
  NetworkModule   → imports + <InitParams> + <Forward> + <Backward> + <SGDStep>
═══════════════════════════════════════════════════════════════════════════════
"""

from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from core.exceptions import DimensionError, TrainingDivergedError

# Pattern: Memento
# Purpose: The forward pass returns a cache that the backward pass replays.

DEFAULT_HIDDEN = (512, 512, 2048)
SeedLike = Union[int, np.random.SeedSequence]


@dataclass
class DenseLayer:
    """Affine map x @ W + b with W shaped (fan_in, fan_out)."""

    W: np.ndarray
    b: np.ndarray

    @property
    def fan_in(self) -> int:
        return self.W.shape[0]

    @property
    def fan_out(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "DenseLayer":
        return DenseLayer(self.W.copy(), self.b.copy())


@dataclass
class NetworkParams:
    """Encoder weights Θ and decoder weights Θ′."""

    encoder: List[DenseLayer]
    decoder: List[DenseLayer]

    def __post_init__(self):
        for name, layers in (("encoder", self.encoder), ("decoder", self.decoder)):
            for prev, nxt in zip(layers, layers[1:]):
                if prev.fan_out != nxt.fan_in:
                    raise DimensionError(f"{name} layers do not chain: {prev.fan_out} -> {nxt.fan_in}")
        if self.encoder[-1].fan_out != self.decoder[0].fan_in:
            raise DimensionError("encoder output width differs from decoder input width")
        if self.decoder[-1].fan_out != self.encoder[0].fan_in:
            raise DimensionError("decoder output width differs from encoder input width")

    @property
    def input_dim(self) -> int:
        return self.encoder[0].fan_in

    @property
    def latent_dim(self) -> int:
        return self.encoder[-1].fan_out

    def named_tensors(self) -> Dict[str, np.ndarray]:
        """Live references keyed enc.{l}.W / enc.{l}.b / dec.{l}.W / dec.{l}.b."""
        tensors = {}
        for prefix, layers in (("enc", self.encoder), ("dec", self.decoder)):
            for idx, layer in enumerate(layers):
                tensors[f"{prefix}.{idx}.W"] = layer.W
                tensors[f"{prefix}.{idx}.b"] = layer.b
        return tensors

    @classmethod
    def from_tensors(cls, tensors: Dict[str, np.ndarray]) -> "NetworkParams":
        def collect(prefix: str) -> List[DenseLayer]:
            layers = []
            idx = 0
            while f"{prefix}.{idx}.W" in tensors:
                layers.append(DenseLayer(np.array(tensors[f"{prefix}.{idx}.W"], dtype=np.float64),
                                         np.array(tensors[f"{prefix}.{idx}.b"], dtype=np.float64)))
                idx += 1
            return layers

        return cls(collect("enc"), collect("dec"))

    def copy(self) -> "NetworkParams":
        return NetworkParams([l.copy() for l in self.encoder], [l.copy() for l in self.decoder])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.named_tensors().values())


@dataclass
class ForwardCache:
    """Layer inputs and pre-activations from one forward pass."""

    inputs: List[np.ndarray] = field(default_factory=list)
    pre_activations: List[np.ndarray] = field(default_factory=list)


@dataclass
class OptimizerState:
    """Velocity buffers for classical momentum, one per named tensor."""

    learning_rate: float = 0.01
    momentum: float = 0.9
    velocity: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_tensors(cls, tensors: Dict[str, np.ndarray], learning_rate: float = 0.01,
                    momentum: float = 0.9) -> "OptimizerState":
        return cls(learning_rate, momentum, {k: np.zeros_like(v) for k, v in tensors.items()})


def _layer_dims(m: int, n: int, hidden_dims: Sequence[int]) -> Tuple[List[int], List[int]]:
    enc = [m, *hidden_dims, n]
    return enc, enc[::-1]


def init_params(
    m: int,
    n: int,
    seed: SeedLike,
    hidden_dims: Sequence[int] = DEFAULT_HIDDEN,
    weight_std: float = 0.01,
    bias_mean: float = 0.5,
    bias_std: float = 0.01,
) -> NetworkParams:
    """
    Draws weights from N(0, weight_std) and biases from N(bias_mean, bias_std).
    Rule: encoder layers are drawn first, then decoder layers, from one stream.
    """
    if m < 1 or n < 1:
        raise DimensionError(f"input and latent widths must be >= 1 (got m={m}, n={n})")
    rng = np.random.default_rng(seed)
    enc_dims, dec_dims = _layer_dims(m, n, hidden_dims)

    def build(dims: List[int]) -> List[DenseLayer]:
        return [
            DenseLayer(
                rng.normal(0.0, weight_std, size=(fan_in, fan_out)),
                rng.normal(bias_mean, bias_std, size=fan_out),
            )
            for fan_in, fan_out in zip(dims, dims[1:])
        ]

    return NetworkParams(build(enc_dims), build(dec_dims))


def forward(layers: Sequence[DenseLayer], x: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
    """Runs a stack of dense layers on a (batch, width) array; ReLU on hidden layers only."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != layers[0].fan_in:
        raise DimensionError(f"expected input of width {layers[0].fan_in}, got shape {x.shape}")
    cache = ForwardCache()
    h = x
    last = len(layers) - 1
    for idx, layer in enumerate(layers):
        cache.inputs.append(h)
        pre = h @ layer.W + layer.b
        cache.pre_activations.append(pre)
        h = pre if idx == last else np.maximum(pre, 0.0)
    return h, cache


def backward(
    layers: Sequence[DenseLayer], grad_output: np.ndarray, cache: ForwardCache
) -> Tuple[List[DenseLayer], np.ndarray]:
    """
    Backpropagates grad_output (dLoss/d output) through the cached pass.
    Returns per-layer gradients (as DenseLayer holders) and dLoss/d input.
    Gradients are sums over batch rows; batch averaging lives in the loss.
    """
    if len(cache.pre_activations) != len(layers) or grad_output.shape != cache.pre_activations[-1].shape:
        raise DimensionError(
            f"stale cache: gradient shape {np.shape(grad_output)} does not match the cached forward pass"
        )
    grads: List[DenseLayer] = [None] * len(layers)  # type: ignore[list-item]
    delta = grad_output
    for idx in range(len(layers) - 1, -1, -1):
        if idx != len(layers) - 1:
            delta = delta * (cache.pre_activations[idx] > 0.0)
        grads[idx] = DenseLayer(cache.inputs[idx].T @ delta, delta.sum(axis=0))
        delta = delta @ layers[idx].W.T
    return grads, delta


def _as_batch(x: np.ndarray, width: int) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise DimensionError(f"expected width {width}, got shape {np.shape(x)}")
    return x, single


def encode(p: NetworkParams, x: np.ndarray) -> np.ndarray:
    """f_Θ: feature vector(s) of width m to latent vector(s) of width n."""
    batch, single = _as_batch(x, p.input_dim)
    z, _ = forward(p.encoder, batch)
    return z[0] if single else z


def decode(p: NetworkParams, z: np.ndarray) -> np.ndarray:
    """f⁻¹_Θ′: latent vector(s) back to width m."""
    batch, single = _as_batch(z, p.latent_dim)
    x_rec, _ = forward(p.decoder, batch)
    return x_rec[0] if single else x_rec


def reconstruction_mse(p: NetworkParams, x: np.ndarray) -> float:
    """Mean over rows of ||x - decode(encode(x))||²."""
    batch, _ = _as_batch(x, p.input_dim)
    residual = decode(p, encode(p, batch)) - batch
    return float(np.mean(np.sum(residual ** 2, axis=1)))


def named_gradients(prefix: str, grads: Sequence[DenseLayer]) -> Dict[str, np.ndarray]:
    out = {}
    for idx, g in enumerate(grads):
        out[f"{prefix}.{idx}.W"] = g.W
        out[f"{prefix}.{idx}.b"] = g.b
    return out


def sgd_step(
    params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: OptimizerState
) -> Dict[str, np.ndarray]:
    """
    Classical momentum, applied in place: v ← momentum·v + grad; θ ← θ − λ·v.
    Tensors without a gradient entry are left untouched.
    """
    for name, grad in grads.items():
        if name not in params:
            raise DimensionError(f"gradient for unknown tensor {name!r}")
        param = params[name]
        if grad.shape != param.shape:
            raise DimensionError(f"gradient shape {grad.shape} != parameter shape {param.shape} for {name}")
        if not np.all(np.isfinite(grad)):
            raise TrainingDivergedError(f"non-finite gradient for {name}", phase="sgd")
    for name, grad in grads.items():
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(params[name])
        v *= state.momentum
        v += grad
        params[name] -= state.learning_rate * v
    return params
