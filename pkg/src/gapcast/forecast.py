"""Operational forecasting: propose, weigh, resample, summarise.

A forecast for one origin treats the unknown target as just another missing
coordinate.  L full-window scenarios are drawn ancestrally (latent from the
amortised posterior given the zero-imputed window, then a window from the
decoder); each is weighted by how well its latent explains the coordinates
that *were* observed, ``log r_i = log p(z_obs | u_i) + log p(u_i) -
log q(u_i)``, computed in logit space.  Self-normalised weights drive a
multinomial (optionally systematic) resampling step, and the target
coordinate of the surviving scenarios, mapped back to power space, is the
forecast ensemble.  The same scenarios restricted to missing feature
coordinates provide imputations for free.

:class:`GenerativeForecaster` wraps model fitting plus this pipeline behind
the familiar estimator API (``fit`` / ``predict`` / ``predict_ensemble`` /
``predict_quantiles``).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .dist import DiagGaussian, LogitTransform, gaussian_logpdf, student_t_sample
from .genmodel import (
    GenerativeModel,
    TrainConfig,
    TrainState,
    decode,
    encode_sample,
    init_model,
    observed_loglik,
    train,
)
from .missing import zero_impute
from .nn import AdamState

__all__ = [
    "ForecastEnsemble",
    "GenerativeForecaster",
    "ProposalSet",
    "effective_sample_size",
    "ensemble_to_quantiles",
    "missing_feature_imputations",
    "normalize_weights",
    "propose",
    "resample",
]


@dataclass
class ProposalSet:
    """L ancestral scenarios for one origin, with importance weights.

    ``z`` holds full-window draws in logit space; ``log_r`` the raw
    log-ratios over observed coordinates; ``weights`` their self-normalised
    form (non-finite proposals carry weight zero and are counted in
    ``n_dropped``).
    """

    u: np.ndarray
    z: np.ndarray
    log_r: np.ndarray
    weights: np.ndarray
    mask: np.ndarray
    n_dropped: int


@dataclass
class ForecastEnsemble:
    """Equally weighted target samples (power space) for one origin."""

    samples: np.ndarray
    scenarios: np.ndarray
    origin_timestamp: str | None = None
    lead: int | None = None


def effective_sample_size(weights: np.ndarray) -> float:
    """Kish effective sample size ``1 / sum(w^2)`` of normalised weights."""

    w = np.asarray(weights, dtype=np.float64)
    return float(1.0 / np.sum(w * w))


def normalize_weights(log_r: np.ndarray) -> tuple[np.ndarray, int]:
    """Self-normalise log-ratios with a max shift.

    Non-finite entries are dropped (weight zero) with a warning; if nothing
    finite remains, raises ``FloatingPointError``.  The finite weights sum
    to one.
    """

    log_r = np.asarray(log_r, dtype=np.float64)
    finite = np.isfinite(log_r)
    n_dropped = int(log_r.size - finite.sum())
    if n_dropped:
        warnings.warn(
            f"dropping {n_dropped} proposals with non-finite log-ratios", RuntimeWarning
        )
    if not finite.any():
        raise FloatingPointError("all proposal log-ratios are non-finite")
    shifted = log_r[finite] - log_r[finite].max()
    w = np.zeros_like(log_r)
    expw = np.exp(shifted)
    w[finite] = expw / expw.sum()
    return w, n_dropped


def propose(
    model: GenerativeModel,
    z: np.ndarray,
    s: np.ndarray,
    rng: np.random.Generator,
    L: int = 1000,
) -> ProposalSet:
    """Draw and weigh L ancestral scenarios for one window.

    ``z``/``s`` describe the window in logit space with the target (last)
    coordinate flagged missing; observed coordinates steer the weights.
    """

    z = np.asarray(z, dtype=np.float64).reshape(-1)
    s = np.asarray(s).reshape(-1)
    if z.shape != s.shape or z.shape[0] != model.d:
        raise ValueError(f"window shape {z.shape} does not match model d={model.d}")
    if s[-1] != 1:
        raise ValueError("target coordinate must be flagged missing at forecast time")
    if L < 1:
        raise ValueError(f"need at least one proposal, got L={L}")
    g = zero_impute(z, s)
    lat = encode_sample(model, g[None, :], rng=rng, K=L, s=s[None, :])
    dist = decode(model, lat.u)
    z_draws = student_t_sample(dist, rng)
    z_rep = np.broadcast_to(z, (L, z.size))
    s_rep = np.broadcast_to(s, (L, s.size))
    ll = observed_loglik(dist, z_rep, s_rep).data
    prior = DiagGaussian(mu=np.zeros(model.d_u), sigma=np.ones(model.d_u))
    log_p_u = gaussian_logpdf(prior, lat.u).data
    log_r = ll + log_p_u - lat.log_q.data
    weights, n_dropped = normalize_weights(log_r)
    return ProposalSet(
        u=lat.u.data.copy(),
        z=z_draws,
        log_r=log_r,
        weights=weights,
        mask=s.astype(np.uint8).copy(),
        n_dropped=n_dropped,
    )


def _resample_indices(
    weights: np.ndarray, M: int, rng: np.random.Generator, method: str
) -> np.ndarray:
    if method == "multinomial":
        return rng.choice(weights.size, size=M, p=weights)
    if method == "systematic":
        positions = (rng.random() + np.arange(M)) / M
        return np.searchsorted(np.cumsum(weights), positions)
    raise ValueError(f"unknown resampling method {method!r}")


def resample(
    proposals: ProposalSet,
    M: int = 200,
    rng: np.random.Generator | None = None,
    transform: LogitTransform | None = LogitTransform(),
    method: str = "multinomial",
    origin_timestamp: str | None = None,
    lead: int | None = None,
) -> ForecastEnsemble:
    """Resample M equally weighted scenarios and read off the target.

    The target is the last coordinate of each surviving scenario, mapped to
    power space through the inverse transform (pass ``transform=None`` to
    stay in the modelling space).
    """

    if M < 1:
        raise ValueError(f"need at least one scenario, got M={M}")
    if rng is None:
        rng = np.random.default_rng(0)
    idx = _resample_indices(proposals.weights, M, rng, method)
    scenarios = proposals.z[idx]
    target = scenarios[:, -1]
    samples = transform.inverse(target) if transform is not None else target.copy()
    return ForecastEnsemble(
        samples=samples,
        scenarios=scenarios,
        origin_timestamp=origin_timestamp,
        lead=lead,
    )


def missing_feature_imputations(
    proposals: ProposalSet,
    M: int = 200,
    rng: np.random.Generator | None = None,
    transform: LogitTransform | None = LogitTransform(),
    method: str = "multinomial",
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior draws for the missing feature coordinates.

    Returns ``(feature_indices, samples)`` where ``samples[m, j]`` imputes
    window coordinate ``feature_indices[j]`` in scenario m.  Observed
    positions are never returned.  The target (last coordinate) belongs to
    forecasting, not imputation, so it is excluded too.
    """

    if rng is None:
        rng = np.random.default_rng(0)
    feat_idx = np.flatnonzero(proposals.mask[:-1] == 1)
    idx = _resample_indices(proposals.weights, M, rng, method)
    draws = proposals.z[idx][:, feat_idx]
    if transform is not None:
        draws = transform.inverse(draws)
    return feat_idx, draws


def ensemble_to_quantiles(samples: np.ndarray, levels) -> np.ndarray:
    """Empirical quantiles (type 7, numpy's linear interpolation)."""

    levels = np.asarray(levels, dtype=np.float64)
    if levels.ndim != 1 or levels.size == 0:
        raise ValueError("levels must be a non-empty 1-D sequence")
    if np.any(levels <= 0.0) or np.any(levels >= 1.0):
        raise ValueError("levels must lie strictly inside (0, 1)")
    if np.any(np.diff(levels) <= 0.0):
        raise ValueError("levels must be strictly increasing")
    return np.quantile(np.asarray(samples, dtype=np.float64), levels)


# ---------------------------------------------------------------------------
# estimator wrapper
# ---------------------------------------------------------------------------


class GenerativeForecaster(BaseEstimator):
    """Joint-model forecaster with the scikit-learn estimator API.

    ``fit(X, y)`` takes lag features and targets that may both contain NaN
    (missing cells participate through the joint model rather than being
    imputed away).  With ``value_transform="logit"`` (the default) inputs
    are power values in [0, 1] modelled in logit space and every prediction
    comes back in power space; ``"identity"`` models arbitrary real data
    directly.

    Predictions are Monte Carlo: ``predict_ensemble`` returns an (n, M)
    sample matrix using an independent, deterministic random stream per row,
    ``predict_quantiles`` summarises it, ``predict`` is the ensemble mean.
    """

    def __init__(
        self,
        latent_dim: int = 16,
        n_flows: int = 3,
        K: int = 50,
        hidden=(64, 64),
        flow_hidden=(64,),
        epochs: int = 100,
        batch_size: int = 128,
        lr: float = 1e-3,
        grad_clip: float = 10.0,
        n_proposals: int = 1000,
        n_scenarios: int = 200,
        value_transform: str = "logit",
        include_mask_in_encoder: bool = False,
        resample_method: str = "multinomial",
        random_state: int = 0,
        verbose: bool = False,
    ):
        self.latent_dim = latent_dim
        self.n_flows = n_flows
        self.K = K
        self.hidden = hidden
        self.flow_hidden = flow_hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.grad_clip = grad_clip
        self.n_proposals = n_proposals
        self.n_scenarios = n_scenarios
        self.value_transform = value_transform
        self.include_mask_in_encoder = include_mask_in_encoder
        self.resample_method = resample_method
        self.random_state = random_state
        self.verbose = verbose

    # -- helpers ----------------------------------------------------------

    def _transform(self) -> LogitTransform | None:
        if self.value_transform == "logit":
            return LogitTransform()
        if self.value_transform == "identity":
            return None
        raise ValueError(f"value_transform must be 'logit' or 'identity', got {self.value_transform!r}")

    def _to_model_space(self, a: np.ndarray) -> np.ndarray:
        tr = self._transform()
        if tr is None:
            return a
        finite = a[np.isfinite(a)]
        if finite.size and (finite.min() < 0.0 or finite.max() > 1.0):
            raise ValueError("power values must lie in [0, 1] under the logit transform")
        return tr.forward(a)

    @staticmethod
    def _check_X(X, expected_width=None) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError(f"X must be 2-D, got shape {X.shape}")
        if expected_width is not None and X.shape[1] != expected_width:
            raise ValueError(f"X has {X.shape[1]} features, expected {expected_width}")
        return X

    # -- estimator API ----------------------------------------------------

    def fit(self, X, y):
        X = self._check_X(X)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        Z = self._to_model_space(np.column_stack([X, y]))
        S = np.isnan(Z).astype(np.uint8)
        ss = np.random.SeedSequence(self.random_state)
        init_seed, train_seed = ss.spawn(2)
        model = init_model(
            np.random.default_rng(init_seed),
            d=Z.shape[1],
            d_u=self.latent_dim,
            n_flows=self.n_flows,
            hidden=tuple(self.hidden),
            flow_hidden=tuple(self.flow_hidden),
            include_mask=self.include_mask_in_encoder,
        )
        cfg = TrainConfig(
            K=self.K,
            epochs=self.epochs,
            batch_size=self.batch_size,
            lr=self.lr,
            seed=0,
            grad_clip=self.grad_clip,
            verbose=self.verbose,
        )
        state = TrainState(rng=np.random.default_rng(train_seed), adam=AdamState(lr=self.lr))
        state = train(model, Z, S, cfg, state=state)
        self.model_ = model
        self.train_state_ = state
        self.loss_trace_ = list(state.trace)
        self.n_features_in_ = X.shape[1]
        self.is_fitted_ = True
        return self

    def predict_ensemble(self, X, n_scenarios: int | None = None, random_state: int | None = None) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = self._check_X(X, self.n_features_in_)
        M = int(n_scenarios or self.n_scenarios)
        base = self.random_state if random_state is None else random_state
        tr = self._transform()
        Xt = self._to_model_space(X)
        out = np.empty((X.shape[0], M))
        for i in range(X.shape[0]):
            z = np.append(Xt[i], np.nan)
            s = np.isnan(z).astype(np.uint8)
            rng = np.random.default_rng(np.random.SeedSequence(entropy=base, spawn_key=(i,)))
            ps = propose(self.model_, z, s, rng, L=self.n_proposals)
            ens = resample(ps, M=M, rng=rng, transform=tr, method=self.resample_method)
            out[i] = ens.samples
        return out

    def predict_quantiles(self, X, levels=(0.05, 0.25, 0.5, 0.75, 0.95), n_scenarios=None, random_state=None) -> np.ndarray:
        ens = self.predict_ensemble(X, n_scenarios=n_scenarios, random_state=random_state)
        levels = np.asarray(levels, dtype=np.float64)
        return np.quantile(ens, levels, axis=1).T

    def predict(self, X) -> np.ndarray:
        return self.predict_ensemble(X).mean(axis=1)

    def score(self, X, y) -> float:
        """Negative mean CRPS (higher is better), for model selection."""

        from .metrics import crps_mean

        y = np.asarray(y, dtype=np.float64).reshape(-1)
        ens = self.predict_ensemble(X)
        return -crps_mean(ens, y)
