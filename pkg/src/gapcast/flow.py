"""Affine autoregressive normalizing flow for the variational posterior.

Each transform permutes its input (a constant permutation matrix, reversed
order between successive transforms) and applies ``y_j = u_j * exp(a_j) +
b_j`` where the per-dimension shift ``b`` and log-scale ``a`` come from a
masked conditioner: a small MLP whose weight masks enforce that outputs for
dimension j depend only on input dimensions strictly below j.  A context
vector (embedding of the zero-imputed window) enters the first layer
unmasked and also skips straight to the output layer, so even dimension 1,
which has no autoregressive parents, is data-conditioned.

Log-scales are clamped to [-5, 5] by tanh scaling.  The conditioner output
layer and the context skip start at zero, so a freshly built chain is the
identity map with zero log-determinant and the posterior equals its base
Gaussian; training can only move away from that point if it helps.

The forward direction is one conditioner pass (log-determinant is just the
sum of the ``a_j``).  The inverse solves dimension by dimension in
autoregressive order and is evaluation-only: no gradients flow through it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, add, concat, exp, matmul, mul, slice_last, tanh, tensor_sum
from .dist import DiagGaussian, gaussian_logpdf
from .nn import Linear, linear_init

__all__ = [
    "AffineArTransform",
    "FlowChain",
    "MaskedConditioner",
    "build_conditioner",
    "build_flow_chain",
    "flow_forward",
    "flow_inverse",
    "posterior_logq",
]

LOG_SCALE_BOUND = 5.0


def _made_degrees(d: int, hidden_sizes) -> list[np.ndarray]:
    """Degree labels for inputs and each hidden layer (context gets 0)."""

    degs = [np.arange(1, d + 1)]
    span = max(1, d - 1)
    for h in hidden_sizes:
        degs.append(1 + np.arange(h) % span)
    return degs


@dataclass
class MaskedConditioner:
    """MADE-style conditioner producing per-dimension (shift, raw log-scale).

    ``hidden`` layers see ``concat(u, ctx)`` with masks that respect the
    autoregressive ordering of ``u`` while leaving context connections
    unrestricted; ``out`` is strictly masked; ``ctx_skip`` is an unmasked
    linear path from the context straight to the outputs.
    """

    d: int
    ctx_dim: int
    hidden: list[Linear]
    out: Linear
    ctx_skip: Linear

    def __call__(self, u, ctx=None) -> tuple[Tensor, Tensor]:
        """Return ``(shift, log_scale)`` for the given input and context."""

        u = u if isinstance(u, Tensor) else Tensor(u)
        if ctx is None:
            if self.ctx_dim != 0:
                raise ValueError("conditioner: context required")
            batch = u.shape[:-1]
            ctx = Tensor(np.zeros(batch + (0,)))
        elif not isinstance(ctx, Tensor):
            ctx = Tensor(ctx)
        h = concat([u, ctx], axis=-1)
        for layer in self.hidden:
            h = tanh(layer(h))
        o = add(self.out(h), matmul(ctx, self.ctx_skip.W))
        shift = slice_last(o, 0, self.d)
        raw = slice_last(o, self.d, 2 * self.d)
        log_scale = mul(tanh(mul(raw, 1.0 / LOG_SCALE_BOUND)), LOG_SCALE_BOUND)
        return shift, log_scale

    def params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, layer in enumerate(self.hidden):
            out.update(layer.params(f"{prefix}.hidden.{i}"))
        out.update(self.out.params(f"{prefix}.out"))
        out[f"{prefix}.ctx_skip.W"] = self.ctx_skip.W
        return out


def build_conditioner(rng: np.random.Generator, d: int, ctx_dim: int, hidden_sizes=(64,)) -> MaskedConditioner:
    degs = _made_degrees(d, hidden_sizes)
    in_deg = np.concatenate([degs[0], np.zeros(ctx_dim, dtype=int)])
    layers: list[Linear] = []
    prev_deg = in_deg
    prev_width = d + ctx_dim
    for li, width in enumerate(hidden_sizes):
        layer = linear_init(rng, prev_width, width)
        layer.mask = (degs[li + 1][None, :] >= prev_deg[:, None]).astype(np.float64)
        layers.append(layer)
        prev_deg = degs[li + 1]
        prev_width = width
    out_deg = np.concatenate([degs[0], degs[0]])
    out = linear_init(rng, prev_width, 2 * d, zero=True)
    out.mask = (out_deg[None, :] > prev_deg[:, None]).astype(np.float64)
    ctx_skip = Linear(W=Tensor(np.zeros((ctx_dim, 2 * d))), b=None)
    return MaskedConditioner(d=d, ctx_dim=ctx_dim, hidden=layers, out=out, ctx_skip=ctx_skip)


@dataclass
class AffineArTransform:
    """One permute-then-affine autoregressive step of the flow."""

    perm: np.ndarray
    cond: MaskedConditioner
    _P: Tensor = field(init=False, repr=False)

    def __post_init__(self):
        self.perm = np.asarray(self.perm, dtype=int)
        self._P = Tensor(np.eye(self.perm.size)[:, self.perm])

    @property
    def d(self) -> int:
        return self.perm.size

    def forward(self, u, ctx=None) -> tuple[Tensor, Tensor]:
        """Push ``u`` through; returns ``(y, log_det)`` with gradients."""

        u = u if isinstance(u, Tensor) else Tensor(u)
        up = matmul(u, self._P)
        shift, a = self.cond(up, ctx)
        y = add(mul(up, exp(a)), shift)
        return y, tensor_sum(a, axis=-1)

    def inverse(self, y: np.ndarray, ctx=None) -> tuple[np.ndarray, np.ndarray]:
        """Solve for the input dimension by dimension (no gradients)."""

        y = np.asarray(y, dtype=np.float64)
        single = y.ndim == 1
        y2 = np.atleast_2d(y)
        ctx2 = None
        if self.cond.ctx_dim:
            ctx2 = np.atleast_2d(np.asarray(ctx, dtype=np.float64))
        up = np.zeros_like(y2)
        log_det_inv = np.zeros(y2.shape[0])
        for j in range(self.d):
            shift, a = self.cond(up, ctx2)
            aj = a.data[:, j]
            up[:, j] = (y2[:, j] - shift.data[:, j]) * np.exp(-aj)
            log_det_inv -= aj
        x = up @ self._P.data.T
        if single:
            return x[0], log_det_inv[0]
        return x, log_det_inv


@dataclass
class FlowChain:
    """Composition of affine autoregressive transforms (possibly empty)."""

    d: int
    transforms: list[AffineArTransform]

    @property
    def n_transforms(self) -> int:
        return len(self.transforms)

    def params(self, prefix: str = "flow") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, t in enumerate(self.transforms):
            out.update(t.cond.params(f"{prefix}.{i}"))
        return out


def build_flow_chain(
    seed: int | np.random.Generator,
    d: int,
    ctx_dim: int,
    n_transforms: int,
    hidden_sizes=(64,),
) -> FlowChain:
    """Chain of ``n_transforms`` steps with reversed order between steps.

    ``n_transforms = 0`` is the plain Gaussian posterior: the chain is the
    identity.
    """

    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    transforms = []
    for i in range(n_transforms):
        perm = np.arange(d) if i == 0 else np.arange(d)[::-1]
        cond = build_conditioner(rng, d, ctx_dim, hidden_sizes)
        transforms.append(AffineArTransform(perm=perm, cond=cond))
    return FlowChain(d=d, transforms=transforms)


def flow_forward(chain: FlowChain, u0, ctx=None) -> tuple[Tensor, Tensor]:
    """Run the whole chain; returns ``(u_N, total log_det)`` differentiably."""

    u = u0 if isinstance(u0, Tensor) else Tensor(u0)
    batch = u.shape[:-1]
    total = Tensor(np.zeros(batch))
    for t in chain.transforms:
        u, ld = t.forward(u, ctx)
        total = add(total, ld)
    return u, total


def flow_inverse(chain: FlowChain, u_n: np.ndarray, ctx=None) -> tuple[np.ndarray, np.ndarray]:
    """Invert the whole chain numerically; also returns the inverse log-det.

    The returned log-determinant is the negative of what ``flow_forward``
    reports at the recovered input, evaluated transform by transform on the
    way back.
    """

    u = np.asarray(u_n, dtype=np.float64)
    single = u.ndim == 1
    u2 = np.atleast_2d(u)
    total = np.zeros(u2.shape[0])
    for t in reversed(chain.transforms):
        u2, ld = t.inverse(u2, ctx)
        u2 = np.atleast_2d(u2)
        total = total + np.atleast_1d(ld)
    if single:
        return u2[0], total[0]
    return u2, total


def posterior_logq(base: DiagGaussian, chain: FlowChain, u_n, ctx=None) -> np.ndarray:
    """Log-density of the flow posterior at ``u_n`` (evaluation only).

    Computes ``log q0(u0) - log_det_forward`` by inverting the chain; during
    training the same quantity is carried from sampling instead, where it
    stays differentiable.
    """

    u_n = np.asarray(u_n, dtype=np.float64)
    u0, log_det_inv = flow_inverse(chain, u_n, ctx)
    base_ll = gaussian_logpdf(base, np.atleast_2d(u0)).data
    out = base_ll + np.atleast_1d(log_det_inv)
    if u_n.ndim == 1:
        return out[0]
    return out
