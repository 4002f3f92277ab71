"""Benchmark baselines: imputers and impute-then-predict forecasters.

The point of comparison for the joint generative forecaster is the classic
two-stage recipe: fill the gaps in the lag features first, then fit a
predictor on the completed matrix.  This module supplies both stages as
scikit-learn estimators:

* :class:`MeanImputer` and :class:`IterativeLinearImputer` complete feature
  matrices (the latter cycles per-column linear regressions to convergence);
* :class:`ClimatologyForecaster` ignores features entirely and resamples the
  training targets;
* :class:`QuantileRegressionForecaster` fits linear pinball regression on a
  grid of quantile levels and samples ensembles by inverse CDF;
* :class:`GaussianForecaster` fits an MLP with a Gaussian head.

``fit_reference_model`` fits the quantile regression on fully observed data
only, as the stand-in for an oracle trained without any missingness.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .autodiff import Tensor, add, backward, mean as tensor_mean, mul, softplus
from .dist import DiagGaussian, LogitTransform, gaussian_logpdf
from .genmodel import SIGMA_FLOOR
from .metrics import DEFAULT_TAUS
from .nn import (
    AdamState,
    Mlp,
    adam_step,
    clip_gradients,
    init_params,
    linear_init,
    mlp_forward,
)

__all__ = [
    "ClimatologyForecaster",
    "GaussianForecaster",
    "IterativeLinearImputer",
    "MeanImputer",
    "QuantileRegressionForecaster",
    "fit_reference_model",
]


def _check_matrix(X, name="X") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {X.shape}")
    return X


def _require_complete(X: np.ndarray, name="X") -> None:
    if np.isnan(X).any():
        raise ValueError(
            f"{name} contains missing values; impute first "
            "(MeanImputer or IterativeLinearImputer)"
        )


def _get_transform(name: str) -> LogitTransform | None:
    if name == "logit":
        return LogitTransform()
    if name == "identity":
        return None
    raise ValueError(f"value_transform must be 'logit' or 'identity', got {name!r}")


def _to_model_space(tr: LogitTransform | None, a: np.ndarray, what: str) -> np.ndarray:
    if tr is None:
        return a
    finite = a[np.isfinite(a)]
    if finite.size and (finite.min() < 0.0 or finite.max() > 1.0):
        raise ValueError(f"{what} must lie in [0, 1] under the logit transform")
    return tr.forward(a)


def _from_model_space(tr: LogitTransform | None, a: np.ndarray) -> np.ndarray:
    return a if tr is None else tr.inverse(a)


# ---------------------------------------------------------------------------
# imputers
# ---------------------------------------------------------------------------


class MeanImputer(TransformerMixin, BaseEstimator):
    """Fill missing cells with per-column training means."""

    def fit(self, X, y=None):
        X = _check_matrix(X)
        obs = ~np.isnan(X)
        if not obs.any(axis=0).all():
            bad = int(np.flatnonzero(~obs.any(axis=0))[0])
            raise ValueError(f"column {bad} has no observed values")
        self.means_ = np.nanmean(X, axis=0)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "means_")
        X = _check_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        out = X.copy()
        miss = np.isnan(out)
        out[miss] = np.broadcast_to(self.means_, out.shape)[miss]
        return out


class IterativeLinearImputer(TransformerMixin, BaseEstimator):
    """Cycle per-column linear regressions over a mean-filled matrix.

    Starting from the mean fill, each sweep re-estimates every column from
    the others by least squares on its observed rows and overwrites its
    missing cells with the predictions, until the largest cell change drops
    below ``tol`` or ``max_iter`` sweeps pass.  ``transform`` replays the
    regressions learned at fit time on new rows.
    """

    def __init__(self, max_iter: int = 10, tol: float = 1e-4):
        self.max_iter = max_iter
        self.tol = tol

    @staticmethod
    def _design(work: np.ndarray, j: int, rows) -> np.ndarray:
        others = np.delete(work[rows], j, axis=1)
        return np.column_stack([others, np.ones(others.shape[0])])

    def fit(self, X, y=None):
        X = _check_matrix(X)
        miss = np.isnan(X)
        if not (~miss).any(axis=0).all():
            bad = int(np.flatnonzero(miss.all(axis=0))[0])
            raise ValueError(f"column {bad} has no observed values")
        self.means_ = np.nanmean(X, axis=0)
        self.n_features_in_ = X.shape[1]
        work = X.copy()
        work[miss] = np.broadcast_to(self.means_, X.shape)[miss]
        n_iter = 0
        if X.shape[1] >= 2 and miss.any():
            # update sparsest columns first: their regressions rest on the
            # most observed data
            order = np.argsort(miss.sum(axis=0), kind="stable")
            for n_iter in range(1, self.max_iter + 1):
                prev = work.copy()
                for j in order:
                    rows_mis = miss[:, j]
                    if not rows_mis.any():
                        continue
                    A = self._design(work, j, ~rows_mis)
                    coef, *_ = np.linalg.lstsq(A, work[~rows_mis, j], rcond=None)
                    work[rows_mis, j] = self._design(work, j, rows_mis) @ coef
                if np.max(np.abs(work - prev)) < self.tol:
                    break
        self.coefs_ = {}
        if X.shape[1] >= 2:
            for j in range(X.shape[1]):
                obs_j = ~miss[:, j]
                A = self._design(work, j, obs_j)
                coef, *_ = np.linalg.lstsq(A, work[obs_j, j], rcond=None)
                self.coefs_[j] = coef
        self.n_iter_ = n_iter
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "means_")
        X = _check_matrix(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        miss = np.isnan(X)
        out = X.copy()
        out[miss] = np.broadcast_to(self.means_, X.shape)[miss]
        if not self.coefs_ or not miss.any():
            return out
        for _ in range(self.max_iter):
            prev = out.copy()
            for j in range(X.shape[1]):
                rows_mis = miss[:, j]
                if rows_mis.any():
                    out[rows_mis, j] = self._design(out, j, rows_mis) @ self.coefs_[j]
            if np.max(np.abs(out - prev)) < self.tol:
                break
        return out


# ---------------------------------------------------------------------------
# forecasters
# ---------------------------------------------------------------------------


def _n_rows(X) -> int:
    if isinstance(X, (int, np.integer)):
        return int(X)
    return _check_matrix(X).shape[0]


class ClimatologyForecaster(BaseEstimator):
    """Unconditional baseline: resample the training targets.

    Every origin receives the same ensemble (one shared bootstrap draw from
    the target history), so its CRPS measures what the features are worth.
    ``predict_ensemble`` accepts either a feature matrix or a plain row
    count, since features are ignored anyway.
    """

    def __init__(self, n_scenarios: int = 200, random_state: int = 0):
        self.n_scenarios = n_scenarios
        self.random_state = random_state

    def fit(self, X, y):
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        hist = y[~np.isnan(y)]
        if hist.size == 0:
            raise ValueError("no observed targets to build a climatology from")
        self.history_ = hist.copy()
        return self

    def _shared_draw(self, M: int, random_state) -> np.ndarray:
        seed = self.random_state if random_state is None else random_state
        rng = np.random.default_rng(seed)
        return rng.choice(self.history_, size=M, replace=True)

    def predict_ensemble(self, X, n_scenarios=None, random_state=None) -> np.ndarray:
        check_is_fitted(self, "history_")
        M = int(n_scenarios or self.n_scenarios)
        draw = self._shared_draw(M, random_state)
        return np.tile(draw, (_n_rows(X), 1))

    def predict_quantiles(self, X, levels=(0.05, 0.25, 0.5, 0.75, 0.95), n_scenarios=None, random_state=None) -> np.ndarray:
        check_is_fitted(self, "history_")
        M = int(n_scenarios or self.n_scenarios)
        q = np.quantile(self._shared_draw(M, random_state), np.asarray(levels, dtype=np.float64))
        return np.tile(q, (_n_rows(X), 1))

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "history_")
        return np.full(_n_rows(X), float(self.history_.mean()))


class QuantileRegressionForecaster(BaseEstimator):
    """Linear pinball regression on a grid of quantile levels.

    Requires complete features (impute first).  Fits one linear model per
    level by full-batch Adam on the pinball loss, with intercepts started
    at the empirical target quantiles; predicted quantile curves are sorted
    to repair crossings, and ensembles are drawn by inverse-CDF sampling
    from the piecewise-linear quantile function.
    """

    def __init__(
        self,
        taus=DEFAULT_TAUS,
        epochs: int = 300,
        lr: float = 0.05,
        value_transform: str = "logit",
        n_scenarios: int = 200,
        random_state: int = 0,
    ):
        self.taus = taus
        self.epochs = epochs
        self.lr = lr
        self.value_transform = value_transform
        self.n_scenarios = n_scenarios
        self.random_state = random_state

    def fit(self, X, y):
        X = _check_matrix(X)
        _require_complete(X)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        keep = ~np.isnan(y)
        if not keep.any():
            raise ValueError("no observed targets to fit on")
        tr = _get_transform(self.value_transform)
        Xt = _to_model_space(tr, X[keep], "features")
        yt = _to_model_space(tr, y[keep], "targets")
        taus = np.asarray(self.taus, dtype=np.float64)
        if np.any(taus <= 0.0) or np.any(taus >= 1.0) or np.any(np.diff(taus) <= 0.0):
            raise ValueError("taus must be strictly increasing inside (0, 1)")
        X1 = np.column_stack([Xt, np.ones(Xt.shape[0])])
        W0 = np.zeros((taus.size, X1.shape[1]))
        W0[:, -1] = np.quantile(yt, taus)  # start each level at its marginal quantile
        W = Tensor(W0)
        adam = AdamState(lr=self.lr)
        n = X1.shape[0]
        for _ in range(self.epochs):
            Q = X1 @ W.data.T  # (n, n_tau)
            diff = yt[:, None] - Q
            dQ = np.where(diff > 0.0, -taus, 1.0 - taus) / (n * taus.size)
            adam_step(adam, {"W": W}, {"W": dQ.T @ X1})
        self.W_ = W.data.copy()
        self.taus_ = taus
        self.n_features_in_ = X.shape[1]
        return self

    def _quantile_curves(self, X: np.ndarray) -> np.ndarray:
        """Sorted per-row quantiles at the fitted levels, model space."""

        X = _check_matrix(X)
        _require_complete(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        tr = _get_transform(self.value_transform)
        Xt = _to_model_space(tr, X, "features")
        X1 = np.column_stack([Xt, np.ones(Xt.shape[0])])
        return np.sort(X1 @ self.W_.T, axis=1)

    def predict_quantiles(self, X, levels=None) -> np.ndarray:
        check_is_fitted(self, "W_")
        Q = self._quantile_curves(X)
        tr = _get_transform(self.value_transform)
        if levels is None:
            return _from_model_space(tr, Q)
        levels = np.asarray(levels, dtype=np.float64)
        out = np.vstack([np.interp(levels, self.taus_, row) for row in Q])
        return _from_model_space(tr, out)

    def predict_ensemble(self, X, n_scenarios=None, random_state=None) -> np.ndarray:
        check_is_fitted(self, "W_")
        Q = self._quantile_curves(X)
        tr = _get_transform(self.value_transform)
        M = int(n_scenarios or self.n_scenarios)
        base = self.random_state if random_state is None else random_state
        out = np.empty((Q.shape[0], M))
        for i, row in enumerate(Q):
            rng = np.random.default_rng(np.random.SeedSequence(entropy=base, spawn_key=(i,)))
            out[i] = np.interp(rng.random(M), self.taus_, row)
        return _from_model_space(tr, out)

    def predict(self, X) -> np.ndarray:
        return self.predict_quantiles(X, levels=(0.5,))[:, 0]


class GaussianForecaster(BaseEstimator):
    """MLP with a Gaussian head, trained by maximum likelihood.

    Requires complete features.  The trunk is a tanh MLP; two linear heads
    give the mean and (through a softplus floor) the standard deviation in
    model space.  Quantiles are exact Gaussian quantiles pushed through the
    inverse value transform; ensembles are per-row seeded Gaussian draws.
    """

    def __init__(
        self,
        hidden=(64, 64),
        epochs: int = 150,
        batch_size: int = 128,
        lr: float = 1e-3,
        grad_clip: float = 10.0,
        value_transform: str = "logit",
        n_scenarios: int = 200,
        random_state: int = 0,
    ):
        self.hidden = hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.grad_clip = grad_clip
        self.value_transform = value_transform
        self.n_scenarios = n_scenarios
        self.random_state = random_state

    def _params(self) -> dict:
        params = self.trunk_.params("trunk")
        params.update(self.mu_.params("mu"))
        params.update(self.sigma_.params("sigma"))
        return params

    def _heads(self, X1: Tensor) -> DiagGaussian:
        h = mlp_forward(self.trunk_, X1)
        mu = self.mu_(h)
        sigma = add(softplus(self.sigma_(h)), SIGMA_FLOOR)
        return DiagGaussian(mu=mu, sigma=sigma)

    def fit(self, X, y):
        X = _check_matrix(X)
        _require_complete(X)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
        keep = ~np.isnan(y)
        if not keep.any():
            raise ValueError("no observed targets to fit on")
        tr = _get_transform(self.value_transform)
        Xt = _to_model_space(tr, X[keep], "features")
        yt = _to_model_space(tr, y[keep], "targets")
        ss = np.random.SeedSequence(self.random_state)
        init_ss, batch_ss = ss.spawn(2)
        rng = np.random.default_rng(init_ss)
        if self.hidden:
            self.trunk_ = init_params(rng, (Xt.shape[1], *self.hidden), activate_final=True)
        else:
            self.trunk_ = Mlp(layers=[])  # no trunk: linear heads on raw features
        width = self.hidden[-1] if self.hidden else Xt.shape[1]
        self.mu_ = linear_init(rng, width, 1)
        self.sigma_ = linear_init(rng, width, 1)
        adam = AdamState(lr=self.lr)
        params = self._params()
        brng = np.random.default_rng(batch_ss)
        n = Xt.shape[0]
        yt2 = yt[:, None]
        for _ in range(self.epochs):
            perm = brng.permutation(n)
            for lo in range(0, n, self.batch_size):
                sel = perm[lo : lo + self.batch_size]
                d = self._heads(Tensor(Xt[sel]))
                loss = mul(tensor_mean(gaussian_logpdf(d, Tensor(yt2[sel]))), -1.0)
                grads = backward(loss, wrt=list(params.values()))
                named = {k: grads[v] for k, v in params.items()}
                named, _ = clip_gradients(named, self.grad_clip)
                adam_step(adam, params, named)
        self.n_features_in_ = X.shape[1]
        return self

    def _moments(self, X) -> tuple[np.ndarray, np.ndarray]:
        X = _check_matrix(X)
        _require_complete(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        tr = _get_transform(self.value_transform)
        Xt = _to_model_space(tr, X, "features")
        d = self._heads(Tensor(Xt))
        return d.mu.data[:, 0], d.sigma.data[:, 0]

    def predict_quantiles(self, X, levels=(0.05, 0.25, 0.5, 0.75, 0.95)) -> np.ndarray:
        check_is_fitted(self, "trunk_")
        mu, sigma = self._moments(X)
        z = ndtri(np.asarray(levels, dtype=np.float64))
        tr = _get_transform(self.value_transform)
        return _from_model_space(tr, mu[:, None] + sigma[:, None] * z[None, :])

    def predict_ensemble(self, X, n_scenarios=None, random_state=None) -> np.ndarray:
        check_is_fitted(self, "trunk_")
        mu, sigma = self._moments(X)
        M = int(n_scenarios or self.n_scenarios)
        base = self.random_state if random_state is None else random_state
        tr = _get_transform(self.value_transform)
        out = np.empty((mu.shape[0], M))
        for i in range(mu.shape[0]):
            rng = np.random.default_rng(np.random.SeedSequence(entropy=base, spawn_key=(i,)))
            out[i] = mu[i] + sigma[i] * rng.standard_normal(M)
        return _from_model_space(tr, out)

    def predict(self, X) -> np.ndarray:
        return self.predict_ensemble(X).mean(axis=1)


def fit_reference_model(X, y, **params) -> QuantileRegressionForecaster:
    """Fit the quantile-regression forecaster on fully observed data only.

    Raises if any feature or target cell is missing: the reference point is
    a model trained as if no data had ever gone missing.
    """

    X = _check_matrix(X)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if np.isnan(X).any() or np.isnan(y).any():
        raise ValueError("reference model requires fully observed features and targets")
    return QuantileRegressionForecaster(**params).fit(X, y)
