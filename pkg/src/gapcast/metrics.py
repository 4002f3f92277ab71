"""Probabilistic forecast scoring: CRPS, reliability, sharpness, pinball.

All scores consume equally weighted sample ensembles, one row per forecast
case.  CRPS uses the exact energy form over all M^2 sample pairs; interval
diagnostics use central intervals derived from empirical quantiles, with
the degenerate edge levels pinned to the support bounds.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DEFAULT_LEVELS",
    "DEFAULT_TAUS",
    "ScoreReport",
    "central_interval",
    "crps_ensemble",
    "crps_mean",
    "pinball_loss",
    "reliability",
    "report_to_dict",
    "score_report",
    "sharpness",
    "write_report_csvs",
    "write_report_json",
]

DEFAULT_LEVELS = tuple(np.round(np.arange(0.1, 0.91, 0.1), 2))
DEFAULT_TAUS = tuple(np.round(np.arange(0.05, 0.951, 0.05), 2))


def crps_ensemble(samples: np.ndarray, y: float) -> float:
    """CRPS of one sample ensemble against a scalar observation.

    Energy form ``mean|X - y| - 0.5 * mean|X - X'|`` with the pairwise term
    taken over all M^2 ordered pairs.
    """

    x = np.asarray(samples, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise ValueError("ensemble is empty")
    if not np.isfinite(x).all() or not np.isfinite(y):
        raise ValueError("CRPS inputs must be finite")
    term1 = np.mean(np.abs(x - y))
    term2 = 0.5 * np.mean(np.abs(x[:, None] - x[None, :]))
    return float(term1 - term2)


def crps_mean(ensembles: np.ndarray, obs: np.ndarray) -> float:
    """Mean CRPS over forecast cases (rows of ``ensembles``)."""

    ensembles = np.asarray(ensembles, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64).reshape(-1)
    if ensembles.ndim != 2 or ensembles.shape[0] != obs.shape[0]:
        raise ValueError(
            f"ensembles {ensembles.shape} do not align with {obs.shape[0]} observations"
        )
    return float(np.mean([crps_ensemble(row, o) for row, o in zip(ensembles, obs)]))


def pinball_loss(q_hat: np.ndarray, y: np.ndarray, tau: float) -> float:
    """Mean pinball (quantile) loss of level-``tau`` predictions."""

    if not 0.0 < tau < 1.0:
        raise ValueError(f"tau must lie in (0, 1), got {tau}")
    q_hat = np.asarray(q_hat, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if q_hat.shape != y.shape:
        raise ValueError(f"shapes differ: {q_hat.shape} vs {y.shape}")
    diff = y - q_hat
    return float(np.mean(np.where(diff >= 0.0, tau * diff, (tau - 1.0) * diff)))


def central_interval(
    ensemble: np.ndarray, level: float, support: tuple[float, float] | None = (0.0, 1.0)
) -> tuple[float, float]:
    """Central interval of nominal coverage ``level`` from one ensemble.

    Interior levels use empirical quantiles at (1 +/- level)/2; the bound
    that degenerates at level 1 is pinned to the support edge (so level 1
    always covers when a support is given).
    """

    if not 0.0 < level <= 1.0:
        raise ValueError(f"level must lie in (0, 1], got {level}")
    x = np.asarray(ensemble, dtype=np.float64).reshape(-1)
    a_lo = (1.0 - level) / 2.0
    a_hi = (1.0 + level) / 2.0
    if support is not None:
        lo = support[0] if a_lo <= 0.0 else float(np.quantile(x, a_lo))
        hi = support[1] if a_hi >= 1.0 else float(np.quantile(x, a_hi))
        lo = max(lo, support[0])
        hi = min(hi, support[1])
    else:
        lo = float(np.quantile(x, a_lo))
        hi = float(np.quantile(x, a_hi))
    return lo, hi


def reliability(
    ensembles: np.ndarray,
    obs: np.ndarray,
    levels=DEFAULT_LEVELS,
    support: tuple[float, float] | None = (0.0, 1.0),
) -> np.ndarray:
    """Empirical coverage of central intervals at each nominal level."""

    ensembles = np.asarray(ensembles, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64).reshape(-1)
    cov = np.empty(len(levels))
    for j, gamma in enumerate(levels):
        hits = 0
        for row, o in zip(ensembles, obs):
            lo, hi = central_interval(row, gamma, support)
            hits += int(lo <= o <= hi)
        cov[j] = hits / obs.shape[0]
    return cov


def sharpness(
    ensembles: np.ndarray,
    levels=DEFAULT_LEVELS,
    support: tuple[float, float] | None = (0.0, 1.0),
) -> np.ndarray:
    """Mean central-interval width at each nominal level (smaller = sharper)."""

    ensembles = np.asarray(ensembles, dtype=np.float64)
    widths = np.empty(len(levels))
    for j, gamma in enumerate(levels):
        w = [hi - lo for lo, hi in (central_interval(r, gamma, support) for r in ensembles)]
        widths[j] = float(np.mean(w))
    return widths


@dataclass
class ScoreReport:
    """Bundle of forecast scores over a set of cases."""

    n_cases: int
    crps: float
    crps_pct: float
    levels: tuple = DEFAULT_LEVELS
    coverage: np.ndarray = field(default_factory=lambda: np.empty(0))
    width: np.ndarray = field(default_factory=lambda: np.empty(0))
    taus: tuple = DEFAULT_TAUS
    pinball: np.ndarray = field(default_factory=lambda: np.empty(0))


def score_report(
    ensembles: np.ndarray,
    obs: np.ndarray,
    levels=DEFAULT_LEVELS,
    taus=DEFAULT_TAUS,
    support: tuple[float, float] | None = (0.0, 1.0),
) -> ScoreReport:
    """Compute CRPS, reliability, sharpness and pinball in one pass."""

    ensembles = np.asarray(ensembles, dtype=np.float64)
    obs = np.asarray(obs, dtype=np.float64).reshape(-1)
    crps = crps_mean(ensembles, obs)
    q = np.quantile(ensembles, taus, axis=1)  # (n_tau, n_cases)
    pb = np.array([pinball_loss(q[j], obs, t) for j, t in enumerate(taus)])
    return ScoreReport(
        n_cases=obs.shape[0],
        crps=crps,
        crps_pct=100.0 * crps,
        levels=tuple(levels),
        coverage=reliability(ensembles, obs, levels, support),
        width=sharpness(ensembles, levels, support),
        taus=tuple(taus),
        pinball=pb,
    )


def report_to_dict(report: ScoreReport, meta: dict | None = None) -> dict:
    """JSON-ready dictionary form of a report (meta keys first)."""

    out: dict = dict(meta or {})
    out.update(
        {
            "n_cases": report.n_cases,
            "crps": report.crps,
            "crps_pct": report.crps_pct,
            "reliability": {
                "levels": [float(g) for g in report.levels],
                "coverage": [float(c) for c in report.coverage],
            },
            "sharpness": {
                "levels": [float(g) for g in report.levels],
                "width": [float(w) for w in report.width],
            },
            "pinball": {
                "taus": [float(t) for t in report.taus],
                "loss": [float(p) for p in report.pinball],
            },
        }
    )
    return out


def write_report_json(path, report: ScoreReport, meta: dict | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(report_to_dict(report, meta), fh, indent=2)
        fh.write("\n")


def write_report_csvs(
    reliability_path, sharpness_path, report: ScoreReport, comments: list[str] | None = None
) -> None:
    """Write the diagram data: nominal level vs coverage, and vs width."""

    for path, col, vals in (
        (reliability_path, "coverage", report.coverage),
        (sharpness_path, "width", report.width),
    ):
        with open(path, "w", newline="") as fh:
            for line in comments or []:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["level", col])
            for g, v in zip(report.levels, vals):
                w.writerow([repr(float(g)), repr(float(v))])
