"""Session-wide training caches shared by the heavier end-to-end tests.

The direction-of-effect tests all train real models; the runner below
memoizes each (rate, K, n_flows, epochs, seed) configuration so that one
training run can serve several tests.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from gapcast.bench import ClimatologyForecaster, MeanImputer, QuantileRegressionForecaster
from gapcast.data import chronological_split, make_windows, windows_to_matrices
from gapcast.dist import IdentityTransform, LogitTransform
from gapcast.forecast import propose, resample
from gapcast.genmodel import TrainConfig, TrainState, init_model, train
from gapcast.metrics import crps_mean
from gapcast.nn import AdamState

from helpers import nested_masked_synthetic

# One shared budget keeps the synthetic comparisons fair and fast: every
# trained arm differs only in the knob under test.
BENCH = dict(
    n_rows=5000,
    h=6,
    d_u=8,
    hidden=(32, 32),
    flow_hidden=(32,),
    batch_size=256,
    lr=2e-3,
    epochs=25,
    L=500,
    M=200,
)


class SyntheticBenchmark:
    """Train/forecast/score runner over the synthetic series, memoized."""

    def __init__(self):
        self._crps: dict[tuple, float] = {}
        self._baselines: dict[tuple, dict[str, float]] = {}

    def _split(self, rate: float, seed: int, transform):
        complete, masked = nested_masked_synthetic(rate, seed, BENCH["n_rows"])
        windows = make_windows(masked, BENCH["h"], 1, transform=transform)
        train_w, test_w = chronological_split(windows, 0.8)
        y_true = np.array(
            [complete.values[w.origin_row + w.lead, 0] for w in test_w]
        )
        return complete, train_w, test_w, y_true

    def proposed_crps(
        self, rate: float, seed: int, k_train: int = 10, n_flows: int = 3, epochs: int | None = None
    ) -> float:
        epochs = BENCH["epochs"] if epochs is None else epochs
        key = (rate, seed, k_train, n_flows, epochs)
        if key in self._crps:
            return self._crps[key]
        _, train_w, test_w, y_true = self._split(rate, seed, None)
        Z, S = windows_to_matrices(train_w)
        init_ss, train_ss = np.random.SeedSequence(seed).spawn(2)
        model = init_model(
            np.random.default_rng(init_ss),
            d=BENCH["h"] + 1,
            d_u=BENCH["d_u"],
            n_flows=n_flows,
            hidden=BENCH["hidden"],
            flow_hidden=BENCH["flow_hidden"],
        )
        cfg = TrainConfig(
            K=k_train,
            epochs=epochs,
            batch_size=BENCH["batch_size"],
            lr=BENCH["lr"],
            seed=seed,
        )
        train(model, Z, S, cfg, state=TrainState(rng=np.random.default_rng(train_ss), adam=AdamState(lr=BENCH["lr"])))
        transform = LogitTransform()
        ens = np.empty((len(test_w), BENCH["M"]))
        for i, w in enumerate(test_w):
            z = w.values.copy()
            s = w.mask.astype(np.uint8).copy()
            z[-1] = np.nan
            s[-1] = 1
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(w.origin_row,)))
            ps = propose(model, z, s, rng, L=BENCH["L"])
            ens[i] = resample(ps, M=BENCH["M"], rng=rng, transform=transform).samples
        value = crps_mean(ens, y_true)
        self._crps[key] = value
        return value

    def baseline_crps(self, rate: float, seed: int) -> dict[str, float]:
        key = (rate, seed)
        if key in self._baselines:
            return self._baselines[key]
        _, train_w, test_w, y_true = self._split(rate, seed, IdentityTransform())
        Z, _ = windows_to_matrices(train_w)
        X_train, y_train = Z[:, :-1], Z[:, -1]
        X_test = np.stack([w.values[:-1] for w in test_w])
        clim = ClimatologyForecaster(n_scenarios=BENCH["M"], random_state=seed).fit(None, y_train)
        crps_clim = crps_mean(clim.predict_ensemble(len(test_w)), y_true)
        imputer = MeanImputer().fit(X_train)
        qr = QuantileRegressionForecaster(n_scenarios=BENCH["M"], random_state=seed)
        qr.fit(imputer.transform(X_train), y_train)
        crps_qr = crps_mean(qr.predict_ensemble(imputer.transform(X_test)), y_true)
        out = {"climatology": crps_clim, "qr_im_mean": crps_qr}
        self._baselines[key] = out
        return out


@pytest.fixture(scope="session")
def benchmark_runs() -> SyntheticBenchmark:
    return SyntheticBenchmark()


@pytest.fixture(scope="session")
def bivariate_forecasts() -> dict:
    """(ensemble mean, ensemble std) of y | x=1 under a trained model.

    Five full pipelines on 20,000 draws of a correlated bivariate Gaussian
    (correlation 0.8, unit marginals) with 20% of the cells deleted at
    random; the model never sees the data-generating parameters.  Returns
    the (mean, std) pairs plus the wall-clock cost of building them.
    """

    t0 = time.monotonic()
    out = []
    for seed in range(5):
        ss = np.random.SeedSequence(seed)
        data_ss, mask_ss, init_ss, train_ss, fc_ss = ss.spawn(5)
        rng = np.random.default_rng(data_ss)
        cov = np.array([[1.0, 0.8], [0.8, 1.0]])
        Z = rng.multivariate_normal([0.0, 0.0], cov, size=20_000)
        S = (np.random.default_rng(mask_ss).random(Z.shape) < 0.20).astype(np.uint8)
        Z[S == 1] = np.nan
        model = init_model(
            np.random.default_rng(init_ss), d=2, d_u=2, n_flows=2, hidden=(16, 16), flow_hidden=(8,)
        )
        cfg = TrainConfig(K=10, epochs=10, batch_size=512, lr=3e-3, seed=seed)
        train(model, Z, S, cfg, state=TrainState(rng=np.random.default_rng(train_ss), adam=AdamState(lr=3e-3)))
        fc_rng = np.random.default_rng(fc_ss)
        ps = propose(model, np.array([1.0, np.nan]), np.array([0, 1], dtype=np.uint8), fc_rng, L=4000)
        ens = resample(ps, M=2000, rng=fc_rng, transform=None).samples
        out.append((float(ens.mean()), float(ens.std())))
    return {"pairs": out, "elapsed_seconds": time.monotonic() - t0}
