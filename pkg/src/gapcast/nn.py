"""Minimal neural-network toolkit on top of the autodiff tape.

Provides dense layers with optional fixed binary weight masks (used by the
autoregressive flow conditioners), tanh MLPs, a bias-corrected Adam with
global-norm gradient clipping, and a versioned JSON checkpoint format.

Checkpoint layout (format_version 1)::

    {
      "format": "gapcast-checkpoint",
      "format_version": 1,
      "meta": {...arbitrary JSON metadata, e.g. widths, seed, hyperparams...},
      "arrays": {"<name>": {"shape": [..], "values": [..flat row-major..]}}
    }

Floats round-trip exactly through JSON (shortest repr), so save/load is
bit-faithful for float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError, Tensor, add, matmul, mul, tanh

__all__ = [
    "AdamState",
    "Linear",
    "Mlp",
    "adam_step",
    "clip_gradients",
    "init_params",
    "linear_init",
    "load_checkpoint",
    "mlp_forward",
    "save_checkpoint",
]

CHECKPOINT_FORMAT = "gapcast-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class Linear:
    """Dense layer ``x @ W + b``; ``mask`` (if set) zeroes weights for good."""

    W: Tensor
    b: Tensor | None = None
    mask: np.ndarray | None = None

    def __call__(self, x) -> Tensor:
        W = self.W if self.mask is None else mul(self.W, Tensor(self.mask))
        out = matmul(x, W)
        if self.b is not None:
            out = add(out, self.b)
        return out

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.W": self.W}
        if self.b is not None:
            out[f"{prefix}.b"] = self.b
        return out


@dataclass
class Mlp:
    """Stack of dense layers with tanh between them.

    The final layer is linear unless ``activate_final`` is set (trunks that
    feed separate heads want the activation on their last layer too).
    """

    layers: list[Linear]
    activate_final: bool = False

    @property
    def widths(self) -> tuple[int, ...]:
        ws = [self.layers[0].W.shape[0]]
        ws += [layer.W.shape[1] for layer in self.layers]
        return tuple(ws)

    @property
    def n_params(self) -> int:
        return sum(int(t.size) for t in self.params().values())

    def __call__(self, x) -> Tensor:
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < last or self.activate_final:
                h = tanh(h)
        return h

    def params(self, prefix: str = "layers") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.layers):
            out.update(layer.params(f"{prefix}.{i}"))
        return out


def linear_init(rng: np.random.Generator, n_in: int, n_out: int, zero: bool = False) -> Linear:
    """Glorot-uniform weights, zero biases (all zero when ``zero`` is set)."""

    if zero:
        W = np.zeros((n_in, n_out))
    else:
        bound = np.sqrt(6.0 / (n_in + n_out))
        W = rng.uniform(-bound, bound, size=(n_in, n_out))
    return Linear(W=Tensor(W), b=Tensor(np.zeros(n_out)))


def init_params(seed: int | np.random.Generator, widths, activate_final: bool = False) -> Mlp:
    """Fresh MLP for the given layer widths, deterministic in the seed."""

    widths = tuple(int(w) for w in widths)
    if len(widths) < 2 or any(w <= 0 for w in widths):
        raise ValueError(f"widths must be at least two positive sizes, got {widths}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    layers = [linear_init(rng, widths[i], widths[i + 1]) for i in range(len(widths) - 1)]
    return Mlp(layers=layers, activate_final=activate_final)


def mlp_forward(net: Mlp, x) -> Tensor:
    """Run the network on a single vector or a batch of rows."""

    return net(x)


# ---------------------------------------------------------------------------
# optimisation
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Scale the gradient dict so its global L2 norm is at most ``max_norm``."""

    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm <= 0 or total <= max_norm:
        return grads, total
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}, total


def adam_step(state: AdamState, params: dict[str, Tensor], grads: dict[str, np.ndarray]) -> AdamState:
    """One bias-corrected Adam minimisation update, applied in place.

    ``p -= lr * mhat / (sqrt(vhat) + eps)`` per parameter.  Raises
    :class:`NonFiniteError` naming the offending parameter if any gradient
    is non-finite, so training aborts with a diagnosable message.
    """

    state.step += 1
    t = state.step
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ValueError(f"adam_step: gradient shape {g.shape} != param {p.data.shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"adam_step: non-finite gradient for {name!r} at step {t}")
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.m[name] = m
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / (1.0 - state.beta1**t)
        vhat = v / (1.0 - state.beta2**t)
        p.data = p.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return state


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "meta": meta,
        "arrays": {
            name: {"shape": list(a.shape), "values": np.asarray(a, dtype=np.float64).reshape(-1).tolist()}
            for name, a in arrays.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if payload.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('format_version')}")
    arrays = {
        name: np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        for name, entry in payload["arrays"].items()
    }
    return payload["meta"], arrays
