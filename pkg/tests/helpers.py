"""Shared fixtures-in-code: hand-built models and analytic oracles."""

from __future__ import annotations

import numpy as np
from scipy import integrate

from gapcast.autodiff import Tensor, lgamma
from gapcast.data import SeriesTable, make_synthetic
from gapcast.flow import FlowChain
from gapcast.genmodel import GenerativeModel
from gapcast.nn import Linear, Mlp


def softplus_inv(y: float) -> float:
    """Inverse of log(1+e^x), stable for large y."""

    y = float(y)
    if y > 30.0:
        return y + float(np.log1p(-np.exp(-y)))
    return float(np.log(np.expm1(y)))


def _linear(W, b) -> Linear:
    return Linear(
        W=Tensor(np.asarray(W, dtype=np.float64)),
        b=Tensor(np.asarray(b, dtype=np.float64)),
    )


def linear_gaussian_model(
    w,
    sigma_eps,
    nu: float = 1e6,
    enc_w=None,
    enc_sd=None,
) -> GenerativeModel:
    """One-factor model z = w·u + eps with hand-set heads and no trunks.

    The decoder mean is exactly ``w * u``, the scale and degrees of freedom
    are constants, and the encoder is the exact Gaussian posterior of the
    factor model (override ``enc_w``/``enc_sd`` to use a different proposal,
    e.g. the prior).  With a huge ``nu`` the likelihood is Gaussian for all
    practical purposes, which makes every conditional available in closed
    form.
    """

    w = np.atleast_1d(np.asarray(w, dtype=np.float64))
    d = w.size
    sig = np.broadcast_to(np.asarray(sigma_eps, dtype=np.float64), (d,)).astype(np.float64)
    if enc_w is None:
        # exact posterior of u | z for the fully observed Gaussian model
        prec = 1.0 + np.sum(w * w / sig**2)
        v = 1.0 / prec
        enc_w = (w / sig**2 * v)[:, None]
        enc_sd = np.array([np.sqrt(v)])
    enc_w = np.asarray(enc_w, dtype=np.float64)
    enc_sd = np.atleast_1d(np.asarray(enc_sd, dtype=np.float64))
    nu_raw = nu - 2.0 if nu > 60 else softplus_inv(nu - 2.0)
    return GenerativeModel(
        d=d,
        d_u=1,
        n_flows=0,
        include_mask=False,
        hidden=(),
        flow_hidden=(),
        dec_trunk=Mlp([]),
        dec_mu=_linear(w[None, :], np.zeros(d)),
        dec_sigma=_linear(np.zeros((1, d)), [softplus_inv(s - 1e-3) for s in sig]),
        dec_nu=_linear(np.zeros((1, d)), [nu_raw] * d),
        enc_trunk=Mlp([]),
        enc_mu=_linear(enc_w, np.zeros(1)),
        enc_sigma=_linear(np.zeros((d, 1)), [softplus_inv(s - 1e-3) for s in enc_sd]),
        flow=FlowChain(d=1, transforms=[]),
    )


def lanczos_lgamma(x: float) -> float:
    """log Gamma as the library computes it (so constants cancel exactly)."""

    return float(lgamma(Tensor(np.array([float(x)]))).data[0])


def t_log_marginal(z: float, w: float = 1.0, sigma: float = 0.5, nu: float = 1e6) -> float:
    """log of the exact marginal density of the 1-D hand-built model.

    Integrates the model's own heavy-tailed likelihood against the standard
    normal prior by quadrature, using the library's log-gamma so that its
    normalisation constant matches the model bit for bit.
    """

    C = (
        lanczos_lgamma((nu + 1.0) / 2.0)
        - lanczos_lgamma(nu / 2.0)
        - 0.5 * np.log(nu * np.pi)
        - np.log(sigma)
    )

    def integrand(u):
        r = (z - w * u) / sigma
        log_prior = -0.5 * np.log(2.0 * np.pi) - 0.5 * u * u
        return np.exp(log_prior + C - (nu + 1.0) / 2.0 * np.log1p(r * r / nu))

    val, _ = integrate.quad(integrand, -12.0, 12.0, limit=400, epsabs=1e-13, epsrel=1e-13)
    return float(np.log(val))


def gaussian_log_marginal(z: float, w: float = 1.0, sigma: float = 0.5) -> float:
    """Closed-form log density of z = w·u + eps with Gaussian noise."""

    var = w * w + sigma * sigma
    return float(-0.5 * np.log(2.0 * np.pi * var) - z * z / (2.0 * var))


def nested_masked_synthetic(rate: float, seed: int, n_rows: int = 5000) -> tuple[SeriesTable, SeriesTable]:
    """Synthetic series plus an MCAR-masked copy, coupled across rates.

    One uniform draw per cell is shared by every rate for the same seed, so
    a cell missing at 5% is also missing at 25%: each rate is marginally
    MCAR while the information content shrinks monotonically, which removes
    mask-resampling noise from cross-rate comparisons.
    """

    table = make_synthetic(n_rows, n_sites=1, seed=100 + seed)
    u = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,))).random(
        (table.n_rows, 1)
    )
    mask = (u < rate).astype(np.uint8)
    values = table.values.copy()
    values[mask == 1] = np.nan
    masked = SeriesTable(table.timestamps, table.columns, values, mask, table.step_seconds)
    return table, masked
