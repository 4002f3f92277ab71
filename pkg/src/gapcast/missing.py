"""Missingness simulation and mask handling.

Mask convention everywhere in this package: ``1 = missing``, ``0 =
observed``.  Two mechanisms are supported, missing completely at random
(each cell an independent Bernoulli) and missing at random (cell
probability is a logistic function of columns that stay fully observed,
with the intercept calibrated so the marginal rate matches the target).
Missing-not-at-random is deliberately rejected: inference here relies on
the missingness being ignorable given observed data.

Zero-imputation is the canonical "fill for the encoder" map and happens in
logit space, where 0 corresponds to a power of one half.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

__all__ = [
    "MissingnessConfig",
    "gen_mask_mar",
    "gen_mask_mcar",
    "reassemble",
    "split_obs_missing",
    "zero_impute",
]

MAR_RATE_TOL = 0.005


@dataclass(frozen=True)
class MissingnessConfig:
    """What to knock out: mechanism, marginal rate, MAR dependence.

    ``mar_beta`` maps covariate column names to logistic coefficients; those
    columns must stay fully observed, which the caller enforces by never
    masking them.
    """

    mechanism: str = "mcar"
    rate: float = 0.2
    mar_beta: dict[str, float] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.mechanism not in ("mcar", "mar"):
            raise ValueError(
                f"mechanism must be 'mcar' or 'mar', got {self.mechanism!r}; "
                "missing-not-at-random is out of scope (non-ignorable)"
            )
        if not (0.0 <= self.rate <= 1.0):
            raise ValueError(f"rate must lie in [0, 1], got {self.rate}")
        if self.mechanism == "mar" and not self.mar_beta:
            raise ValueError("mar mechanism needs at least one coefficient in mar_beta")


def gen_mask_mcar(rate: float, n_rows: int, width: int, rng: np.random.Generator) -> np.ndarray:
    """IID Bernoulli(rate) mask of shape (n_rows, width), dtype uint8."""

    if not (0.0 <= rate <= 1.0):
        raise ValueError(f"rate must lie in [0, 1], got {rate}")
    return (rng.random((n_rows, width)) < rate).astype(np.uint8)


def _calibrate_intercept(logits: np.ndarray, rate: float) -> float:
    """Intercept b0 with mean(sigmoid(b0 + logits)) == rate, by bisection."""

    def gap(b0):
        return float(expit(b0 + logits).mean() - rate)

    lo, hi = -40.0, 40.0
    if gap(lo) > 0 or gap(hi) < 0:
        raise ValueError("MAR calibration failed to bracket the target rate")
    b0 = brentq(gap, lo, hi, xtol=1e-10)
    realized = float(expit(b0 + logits).mean())
    if abs(realized - rate) > MAR_RATE_TOL:
        raise ValueError(
            f"MAR calibration landed at {realized:.4f}, more than {MAR_RATE_TOL} from {rate:.4f}"
        )
    return float(b0)


def gen_mask_mar(
    rate: float,
    covariates: np.ndarray,
    beta: np.ndarray,
    width: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Row-dependent mask: P(missing) = sigmoid(b0 + covariates @ beta).

    ``covariates`` (n_rows, p) must be fully observed; ``beta`` (p,) sets the
    dependence and ``b0`` is calibrated so the marginal rate is ``rate``
    within ±0.005.  All ``width`` cells of a row share the same probability
    but are drawn independently.
    """

    cov = np.asarray(covariates, dtype=np.float64)
    if cov.ndim != 2:
        raise ValueError(f"covariates must be 2-D, got shape {cov.shape}")
    if not np.all(np.isfinite(cov)):
        raise ValueError("MAR covariates must be fully observed (finite)")
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    if beta.shape[0] != cov.shape[1]:
        raise ValueError(f"beta has {beta.shape[0]} coefficients for {cov.shape[1]} covariates")
    if rate <= 0.0:
        return np.zeros((cov.shape[0], width), dtype=np.uint8)
    if rate >= 1.0:
        return np.ones((cov.shape[0], width), dtype=np.uint8)
    logits = cov @ beta
    b0 = _calibrate_intercept(logits, rate)
    p = expit(b0 + logits)
    return (rng.random((cov.shape[0], width)) < p[:, None]).astype(np.uint8)


def zero_impute(z: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Replace missing coordinates with 0 (logit-space midpoint).

    ``z`` may carry NaN at missing positions; observed positions must be
    finite.  Returns a fresh array, never mutates the input.
    """

    z = np.asarray(z, dtype=np.float64)
    s = np.asarray(s)
    if z.shape != s.shape:
        raise ValueError(f"value/mask shape mismatch: {z.shape} vs {s.shape}")
    obs = s == 0
    if not np.all(np.isfinite(z[obs])):
        raise ValueError("observed coordinate is non-finite")
    out = np.where(obs, z, 0.0)
    return out


def split_obs_missing(z: np.ndarray, s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Partition a vector by its mask.

    Returns ``(obs_idx, obs_values, missing_idx)`` with 0-based positions in
    original order, so ``reassemble`` can undo the split exactly.
    """

    z = np.asarray(z, dtype=np.float64)
    s = np.asarray(s)
    if z.ndim != 1 or z.shape != s.shape:
        raise ValueError("split_obs_missing expects matching 1-D value and mask vectors")
    obs_idx = np.flatnonzero(s == 0)
    mis_idx = np.flatnonzero(s != 0)
    return obs_idx, z[obs_idx], mis_idx


def reassemble(
    obs_idx: np.ndarray,
    obs_values: np.ndarray,
    missing_idx: np.ndarray,
    missing_values: np.ndarray,
) -> np.ndarray:
    """Inverse of :func:`split_obs_missing` given values for the gaps."""

    n = len(obs_idx) + len(missing_idx)
    out = np.empty(n, dtype=np.float64)
    out[np.asarray(obs_idx, dtype=int)] = obs_values
    out[np.asarray(missing_idx, dtype=int)] = missing_values
    return out
