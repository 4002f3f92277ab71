"""Distribution primitives used by the generative model.

Diagonal Gaussians (reparameterised sampling + log-density) and diagonal
Student's t (heavy-tailed decoder likelihood), both differentiable in their
parameters through the autodiff tape, plus the logit transform that maps
power measurements from [0, 1] onto the real line.

Conventions: parameters may be :class:`~gapcast.autodiff.Tensor` or plain
arrays (arrays are lifted to constants); ``sigma`` is a standard deviation,
already positive (heads apply ``softplus + 1e-3`` upstream); ``nu`` exceeds
2 (heads apply ``softplus + 2``).  Per-row log-densities sum over the last
axis; ``*_terms`` variants return the per-coordinate summands so callers
can mask them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import (
    Tensor,
    add,
    const,
    div,
    lgamma,
    log,
    mul,
    square,
    sub,
    tensor_sum,
)

__all__ = [
    "DiagGaussian",
    "DiagStudentT",
    "IdentityTransform",
    "LogitTransform",
    "gaussian_logpdf",
    "gaussian_logpdf_terms",
    "gaussian_rsample",
    "student_t_logpdf",
    "student_t_logpdf_terms",
    "student_t_sample",
]

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


@dataclass
class DiagGaussian:
    """Independent normal coordinates with mean ``mu`` and std ``sigma``."""

    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        self.mu = const(self.mu)
        self.sigma = const(self.sigma)


@dataclass
class DiagStudentT:
    """Independent Student's t coordinates, located/scaled per coordinate."""

    mu: Tensor
    sigma: Tensor
    nu: Tensor

    def __post_init__(self):
        self.mu = const(self.mu)
        self.sigma = const(self.sigma)
        self.nu = const(self.nu)


def gaussian_logpdf_terms(d: DiagGaussian, x) -> Tensor:
    """Per-coordinate Gaussian log-density at ``x``."""

    x = const(x)
    z = div(sub(x, d.mu), d.sigma)
    return sub(mul(add(square(z), 2.0 * _HALF_LOG_2PI), -0.5), log(d.sigma))


def gaussian_logpdf(d: DiagGaussian, x) -> Tensor:
    """Row log-density: sum of coordinate terms over the last axis."""

    return tensor_sum(gaussian_logpdf_terms(d, x), axis=-1)


def gaussian_rsample(d: DiagGaussian, rng: np.random.Generator | None = None, eta: np.ndarray | None = None):
    """Reparameterised draw ``mu + sigma * eta`` with ``eta ~ N(0, I)``.

    Pass ``eta`` explicitly to reuse noise (finite-difference checks); it is
    returned alongside the sample either way.  Gradients flow into ``mu``
    and ``sigma``.
    """

    if eta is None:
        if rng is None:
            raise ValueError("gaussian_rsample: need rng or explicit eta")
        eta = rng.standard_normal(np.broadcast_shapes(d.mu.shape, d.sigma.shape))
    eta = np.asarray(eta, dtype=np.float64)
    return add(d.mu, mul(d.sigma, Tensor(eta))), eta


def student_t_logpdf_terms(d: DiagStudentT, x) -> Tensor:
    """Per-coordinate Student's t log-density at ``x``.

    For coordinate j:
    ``lgamma((nu+1)/2) - lgamma(nu/2) - 0.5 log(nu pi) - log sigma
    - (nu+1)/2 log(1 + ((x-mu)/sigma)^2 / nu)``.
    Differentiable in ``x``, ``mu``, ``sigma`` and ``nu``.
    """

    x = const(x)
    half_nu = mul(d.nu, 0.5)
    half_nu1 = add(half_nu, 0.5)
    z2 = square(div(sub(x, d.mu), d.sigma))
    body = log(add(div(z2, d.nu), 1.0))
    norm = sub(lgamma(half_nu1), lgamma(half_nu))
    norm = sub(norm, mul(log(mul(d.nu, np.pi)), 0.5))
    norm = sub(norm, log(d.sigma))
    return sub(norm, mul(half_nu1, body))


def student_t_logpdf(d: DiagStudentT, x) -> Tensor:
    """Row log-density: sum of coordinate terms over the last axis."""

    return tensor_sum(student_t_logpdf_terms(d, x), axis=-1)


def student_t_sample(d: DiagStudentT, rng: np.random.Generator) -> np.ndarray:
    """Plain (non-differentiable) draw ``mu + sigma * t_nu``."""

    nu = np.broadcast_to(d.nu.data, np.broadcast_shapes(d.mu.shape, d.sigma.shape, d.nu.shape))
    t = rng.standard_t(nu)
    return d.mu.data + d.sigma.data * t


@dataclass(frozen=True)
class LogitTransform:
    """Map power values in [0, 1] onto the real line and back.

    ``forward`` clips into ``[clip, 1 - clip]`` first so the endpoints stay
    finite; ``inverse`` is the logistic sigmoid.  NaN passes through both
    directions (missing cells stay missing).
    """

    clip: float = 1e-4

    def forward(self, p):
        p = np.asarray(p, dtype=np.float64)
        with np.errstate(invalid="ignore"):
            q = np.clip(p, self.clip, 1.0 - self.clip)
            return np.log(q) - np.log1p(-q)

    def inverse(self, r):
        r = np.asarray(r, dtype=np.float64)
        with np.errstate(invalid="ignore"):
            e = np.exp(-np.abs(r))
            return np.where(r >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


@dataclass(frozen=True)
class IdentityTransform:
    """No-op value transform, for modelling real-valued data directly."""

    def forward(self, p):
        return np.asarray(p, dtype=np.float64).copy()

    def inverse(self, r):
        return np.asarray(r, dtype=np.float64).copy()
