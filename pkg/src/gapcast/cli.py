"""Experiment command line: simulate, train, forecast, evaluate, benchmark, sweep.

One flat configuration (JSON file and/or flags, flags win) drives every
command.  All commands are deterministic given the config and seed: no
wall-clock seeding anywhere, every random stream is derived from the config
seed, and output files carry no timestamps — so identical runs produce
byte-identical artifacts.  Every output file starts with a comment header
naming the tool version, the resolved-config hash and the command.

Exit codes: 0 success, 1 validation error (bad flags, malformed data,
incompatible checkpoint), 2 numerical failure (training divergence,
non-finite values).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import __version__
from .autodiff import NonFiniteError
from .bench import (
    ClimatologyForecaster,
    GaussianForecaster,
    IterativeLinearImputer,
    MeanImputer,
    QuantileRegressionForecaster,
)
from .data import (
    DataError,
    SeriesTable,
    apply_mask_csv,
    chronological_split,
    load_csv,
    make_synthetic,
    make_windows,
    windows_to_matrices,
    write_mask_csv,
    write_series_csv,
)
from .dist import IdentityTransform, LogitTransform
from .forecast import propose, resample
from .genmodel import (
    TrainConfig,
    TrainState,
    TrainingDiverged,
    model_from_arrays,
    model_to_arrays,
    train,
)
from .genmodel import _HYPER_KEYS as HYPER_KEYS
from .genmodel import init_model, load_model
from .metrics import score_report, write_report_csvs, write_report_json
from .missing import gen_mask_mar, gen_mask_mcar
from .nn import AdamState, load_checkpoint, save_checkpoint

__all__ = ["RunConfig", "config_hash", "main"]

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2


class CliError(ValueError):
    """Bad invocation or incompatible inputs; maps to exit code 1."""


@dataclass
class RunConfig:
    """Everything an experiment run needs, in one flat record.

    The JSON config schema is exactly these field names; unknown keys are
    rejected.  ``site`` empty means the first data column; ``aux_sites``
    adds auxiliary feature sites; ``aux_missing_rate`` null means "same as
    missing_rate".  Seeds are mandatory in the sense that all randomness
    derives from ``seed`` — nothing is ever seeded from the clock.
    """

    data: str = ""
    site: str = ""
    aux_sites: tuple = ()
    h: int = 24
    k: int = 1
    train_fraction: float = 0.8
    mechanism: str = "mcar"
    missing_rate: float = 0.2
    aux_missing_rate: float | None = None
    mar_beta: dict = field(default_factory=dict)
    d_u: int = 16
    n_flows: int = 3
    K: int = 50
    L: int = 1000
    M: int = 200
    hidden: tuple = (64, 64)
    flow_hidden: tuple = (64,)
    include_mask: bool = False
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    grad_clip: float = 10.0
    seed: int = 0
    levels: tuple = (0.05, 0.25, 0.5, 0.75, 0.95)
    out_dir: str = "runs/latest"


_TUPLE_FIELDS = {"aux_sites", "hidden", "flow_hidden", "levels"}


def config_hash(cfg: RunConfig) -> str:
    """Short stable digest of the resolved configuration.

    ``out_dir`` is excluded: where results land is not part of the
    experiment's identity, and the same experiment written to two
    directories must produce byte-identical files.
    """

    payload = asdict(cfg)
    payload.pop("out_dir")
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def load_config_file(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, dict):
        raise CliError(f"{path}: config must be a JSON object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise CliError(f"{path}: unknown config keys {unknown}; valid keys: {sorted(known)}")
    return raw


def resolve_config(args: argparse.Namespace) -> RunConfig:
    """Defaults <- config file <- command-line flags (flags win)."""

    merged = asdict(RunConfig())
    if getattr(args, "config", None):
        merged.update(load_config_file(args.config))
    known = set(merged)
    for key, val in vars(args).items():
        if key in known and val is not None:
            merged[key] = val
    for key in _TUPLE_FIELDS:
        merged[key] = tuple(merged[key])
    cfg = RunConfig(**merged)
    if not (0.0 <= cfg.missing_rate <= 1.0):
        raise CliError(f"missing_rate must lie in [0, 1], got {cfg.missing_rate}")
    if cfg.aux_missing_rate is not None and not (0.0 <= cfg.aux_missing_rate <= 1.0):
        raise CliError(f"aux_missing_rate must lie in [0, 1], got {cfg.aux_missing_rate}")
    if cfg.mechanism not in ("mcar", "mar"):
        raise CliError(f"mechanism must be 'mcar' or 'mar', got {cfg.mechanism!r}")
    return cfg


def _header_lines(cfg: RunConfig, command: str) -> list[str]:
    return [f"gapcast {__version__}", f"config {config_hash(cfg)}", f"command {command}"]


def _meta(cfg: RunConfig, command: str) -> dict:
    return {"version": __version__, "config_hash": config_hash(cfg), "command": command}


def _ensure_out_dir(cfg: RunConfig) -> str:
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg.out_dir


def _resolve_sites(cfg: RunConfig, table: SeriesTable) -> list[str]:
    site = cfg.site or table.columns[0]
    sites = [site, *cfg.aux_sites]
    unknown = [s for s in sites if s not in table.columns]
    if unknown:
        raise CliError(f"site columns {unknown} not in data columns {table.columns}")
    return sites


def _load_table(cfg: RunConfig, mask_path=None) -> SeriesTable:
    if not cfg.data:
        raise CliError("no input data; pass --data or set 'data' in the config file")
    table = load_csv(cfg.data)
    if mask_path:
        table = apply_mask_csv(table, mask_path)
    return table


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def _apply_missingness(table: SeriesTable, cfg: RunConfig) -> tuple[SeriesTable, float]:
    """Knock cells out of a complete table per the configured mechanism.

    The target site gets ``missing_rate``; every other site gets
    ``aux_missing_rate`` (defaulting to the target rate).  MAR covariate
    columns are never masked.  Returns the masked table and the realized
    rate over maskable cells.
    """

    if table.masks.any():
        raise CliError("input data already contains missing cells; simulate needs complete data")
    target = cfg.site or table.columns[0]
    if target not in table.columns:
        raise CliError(f"site column {target!r} not in data columns {table.columns}")
    aux_rate = cfg.missing_rate if cfg.aux_missing_rate is None else cfg.aux_missing_rate
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(11,)))
    T = table.n_rows
    mask = np.zeros((T, len(table.columns)), dtype=np.uint8)
    if cfg.mechanism == "mar":
        cov_cols = list(cfg.mar_beta)
        missing_cov = [c for c in cov_cols if c not in table.columns]
        if missing_cov:
            raise CliError(f"mar_beta columns {missing_cov} not in data columns {table.columns}")
        if not cov_cols:
            raise CliError("mechanism 'mar' needs mar_beta coefficients")
        cov = table.values[:, [table.columns.index(c) for c in cov_cols]]
        beta = np.array([cfg.mar_beta[c] for c in cov_cols], dtype=np.float64)
    exempt = set(cfg.mar_beta) if cfg.mechanism == "mar" else set()
    maskable = [j for j, c in enumerate(table.columns) if c not in exempt]
    if not maskable:
        raise CliError("every column is a MAR covariate; nothing can be masked")
    for j in maskable:
        rate = cfg.missing_rate if table.columns[j] == target else aux_rate
        if cfg.mechanism == "mcar":
            mask[:, j] = gen_mask_mcar(rate, T, 1, rng)[:, 0]
        else:
            mask[:, j] = gen_mask_mar(rate, cov, beta, 1, rng)[:, 0]
    values = table.values.copy()
    values[mask == 1] = np.nan
    masked = SeriesTable(
        timestamps=table.timestamps,
        columns=table.columns,
        values=values,
        masks=mask,
        step_seconds=table.step_seconds,
    )
    realized = float(mask[:, maskable].mean())
    return masked, realized


def cmd_simulate(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = _ensure_out_dir(cfg)
    header = _header_lines(cfg, "simulate")
    if args.generate:
        table = make_synthetic(
            args.generate, n_sites=args.n_sites, seed=cfg.seed, step_seconds=args.step_seconds
        )
        source = os.path.join(out, "complete.csv")
        write_series_csv(source, table, comments=header)
        print(f"wrote {source} ({table.n_rows} rows x {len(table.columns)} sites)")
    else:
        table = _load_table(cfg)
    masked, realized = _apply_missingness(table, cfg)
    masked_path = os.path.join(out, "masked.csv")
    mask_path = os.path.join(out, "mask.csv")
    write_series_csv(masked_path, masked, comments=header)
    write_mask_csv(mask_path, masked, comments=header)
    print(f"wrote {masked_path} and {mask_path}")
    print(f"realized missing rate: {realized:.4f} (target {cfg.missing_rate})")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def _adam_to_arrays(adam: AdamState) -> dict[str, np.ndarray]:
    out = {}
    for name, m in adam.m.items():
        out[f"adam.m.{name}"] = m
    for name, v in adam.v.items():
        out[f"adam.v.{name}"] = v
    return out


def _save_train_checkpoint(path, cfg, model, state, sites, table, diverged=False) -> None:
    meta = dict(model.hyperparams())
    meta.update(
        {
            "h": cfg.h,
            "k": cfg.k,
            "sites": list(sites),
            "step_seconds": table.step_seconds,
            "epoch": state.epoch,
            "trace": [float(v) for v in state.trace],
            "adam": {
                "lr": state.adam.lr,
                "beta1": state.adam.beta1,
                "beta2": state.adam.beta2,
                "eps": state.adam.eps,
                "step": state.adam.step,
            },
            "rng_state": state.rng.bit_generator.state,
            "diverged": diverged,
        }
    )
    meta.update(_meta(cfg, "train"))
    arrays = model_to_arrays(model)
    arrays.update(_adam_to_arrays(state.adam))
    save_checkpoint(path, meta, arrays)


def _load_train_checkpoint(path):
    meta, arrays = load_checkpoint(path)
    missing = [k for k in HYPER_KEYS if k not in meta]
    if missing:
        raise CliError(f"{path}: checkpoint meta lacks {missing}")
    model = model_from_arrays(
        {k: meta[k] for k in HYPER_KEYS},
        {k: v for k, v in arrays.items() if not k.startswith("adam.")},
    )
    a = meta.get("adam", {})
    adam = AdamState(
        lr=a.get("lr", 1e-3),
        beta1=a.get("beta1", 0.9),
        beta2=a.get("beta2", 0.999),
        eps=a.get("eps", 1e-8),
        step=a.get("step", 0),
        m={k[len("adam.m.") :]: v for k, v in arrays.items() if k.startswith("adam.m.")},
        v={k[len("adam.v.") :]: v for k, v in arrays.items() if k.startswith("adam.v.")},
    )
    rng = np.random.default_rng()
    if "rng_state" not in meta:
        raise CliError(f"{path}: checkpoint carries no rng state; cannot resume")
    rng.bit_generator.state = meta["rng_state"]
    state = TrainState(rng=rng, adam=adam, epoch=int(meta["epoch"]), trace=list(meta["trace"]))
    return model, state, meta


def _split_windows(cfg: RunConfig, table: SeriesTable, sites, transform=None):
    windows = make_windows(table, cfg.h, cfg.k, sites, transform=transform)
    return chronological_split(windows, cfg.train_fraction)


def cmd_train(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = _ensure_out_dir(cfg)
    table = _load_table(cfg, getattr(args, "mask", None))
    sites = _resolve_sites(cfg, table)
    train_w, test_w = _split_windows(cfg, table, sites)
    Z, S = windows_to_matrices(train_w)
    if getattr(args, "resume", None):
        model, state, meta = _load_train_checkpoint(args.resume)
        if model.d != Z.shape[1]:
            raise CliError(
                f"checkpoint width d={model.d} does not match windows d={Z.shape[1]} "
                f"(h={cfg.h}, k={cfg.k}, sites={sites})"
            )
        print(f"resuming from {args.resume} at epoch {state.epoch}")
    else:
        ss = np.random.SeedSequence(cfg.seed)
        init_ss, train_ss = ss.spawn(2)
        model = init_model(
            np.random.default_rng(init_ss),
            d=Z.shape[1],
            d_u=cfg.d_u,
            n_flows=cfg.n_flows,
            hidden=cfg.hidden,
            flow_hidden=cfg.flow_hidden,
            include_mask=cfg.include_mask,
        )
        state = TrainState(rng=np.random.default_rng(train_ss), adam=AdamState(lr=cfg.lr))
    tc = TrainConfig(
        K=cfg.K,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        seed=cfg.seed,
        grad_clip=cfg.grad_clip,
        verbose=bool(getattr(args, "verbose", False)),
    )
    ckpt_path = os.path.join(out, "checkpoint.json")
    try:
        state = train(model, Z, S, tc, state=state)
    except TrainingDiverged as err:
        if err.last_good is not None:
            for name, t in model.params().items():
                t.data = err.last_good[name]
        diverged_path = os.path.join(out, "checkpoint_diverged.json")
        _save_train_checkpoint(diverged_path, cfg, model, state, sites, table, diverged=True)
        print(f"training diverged; last finite parameters saved to {diverged_path}", file=sys.stderr)
        raise
    _save_train_checkpoint(ckpt_path, cfg, model, state, sites, table)
    trace_path = os.path.join(out, "loss_trace.csv")
    with open(trace_path, "w", encoding="utf-8", newline="") as fh:
        for line in _header_lines(cfg, "train"):
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["epoch", "bound_per_window"])
        for i, v in enumerate(state.trace, start=1):
            w.writerow([i, repr(float(v))])
    print(
        f"trained on {len(train_w)} windows ({len(test_w)} held out), d={Z.shape[1]}, "
        f"{model.n_params} parameters"
    )
    print(f"final bound/window: {state.trace[-1]:.4f}")
    print(f"wrote {ckpt_path} and {trace_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# forecast
# ---------------------------------------------------------------------------


def _forecast_matrix(model, windows, seed, L, M) -> np.ndarray:
    """Ensemble matrix (n_windows, M), one seeded stream per origin row.

    Streams are keyed by origin row, so forecasting any subset of origins,
    in any order, reproduces exactly the same rows.
    """

    out = np.empty((len(windows), M))
    transform = LogitTransform()
    for i, w in enumerate(windows):
        z = w.values.copy()
        s = w.mask.copy().astype(np.uint8)
        z[-1] = np.nan  # the target is unknown at forecast time
        s[-1] = 1
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(w.origin_row,)))
        ps = propose(model, z, s, rng, L=L)
        ens = resample(ps, M=M, rng=rng, transform=transform)
        out[i] = ens.samples
    return out


def _check_checkpoint_compat(cfg: RunConfig, meta: dict, sites: list[str], d: int, model) -> None:
    problems = []
    if "h" in meta and int(meta["h"]) != cfg.h:
        problems.append(f"h: checkpoint {meta['h']} vs config {cfg.h}")
    if "k" in meta and int(meta["k"]) != cfg.k:
        problems.append(f"k: checkpoint {meta['k']} vs config {cfg.k}")
    if "sites" in meta and list(meta["sites"]) != list(sites):
        problems.append(f"sites: checkpoint {meta['sites']} vs config {sites}")
    if model.d != d:
        problems.append(f"window width: checkpoint d={model.d} vs data d={d}")
    if problems:
        raise CliError("checkpoint/config mismatch: " + "; ".join(problems))


def cmd_forecast(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = _ensure_out_dir(cfg)
    model, meta = load_model(args.checkpoint)
    table = _load_table(cfg, getattr(args, "mask", None))
    sites = _resolve_sites(cfg, table)
    _train_w, test_w = _split_windows(cfg, table, sites)
    d = test_w[0].width
    _check_checkpoint_compat(cfg, meta, sites, d, model)
    E = _forecast_matrix(model, test_w, cfg.seed, cfg.L, cfg.M)
    header = _header_lines(cfg, "forecast")
    ens_path = os.path.join(out, "ensembles.csv")
    with open(ens_path, "w", encoding="utf-8", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["origin_timestamp", "lead", "sample_index", "value"])
        for i, win in enumerate(test_w):
            for m in range(cfg.M):
                w.writerow([win.origin_timestamp, win.lead, m, repr(float(E[i, m]))])
    q_path = os.path.join(out, "quantiles.csv")
    levels = np.asarray(cfg.levels, dtype=np.float64)
    Q = np.quantile(E, levels, axis=1).T
    with open(q_path, "w", encoding="utf-8", newline="") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["origin_timestamp", "lead", "level", "value"])
        for i, win in enumerate(test_w):
            for j, lvl in enumerate(levels):
                w.writerow([win.origin_timestamp, win.lead, repr(float(lvl)), repr(float(Q[i, j]))])
    print(f"forecast {len(test_w)} origins x {cfg.M} scenarios")
    print(f"wrote {ens_path} and {q_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def _read_ensembles_csv(path) -> list[tuple[str, int, np.ndarray]]:
    cases: list[tuple[str, int, list[float]]] = []
    index: dict[tuple[str, int], int] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    if not rows or rows[0] != ["origin_timestamp", "lead", "sample_index", "value"]:
        raise DataError(f"{path}: expected header origin_timestamp,lead,sample_index,value")
    for r in rows[1:]:
        if len(r) != 4:
            raise DataError(f"{path}: malformed row {r}")
        key = (r[0], int(r[1]))
        if key not in index:
            index[key] = len(cases)
            cases.append((r[0], int(r[1]), []))
        cases[index[key]][2].append(float(r[3]))
    sizes = {len(c[2]) for c in cases}
    if len(sizes) > 1:
        raise DataError(f"{path}: ensembles are ragged (sizes {sorted(sizes)})")
    return [(ts, lead, np.asarray(vals)) for ts, lead, vals in cases]


def _truth_values(truth: SeriesTable, target: str, cases) -> np.ndarray:
    col = truth.columns.index(target)
    idx = truth.row_index()
    y = np.empty(len(cases))
    for i, (ts, lead, _vals) in enumerate(cases):
        if ts not in idx:
            raise DataError(f"origin timestamp {ts} not found in the truth file")
        r = idx[ts] + lead
        if r >= truth.n_rows:
            raise DataError(f"origin {ts} + lead {lead} runs past the end of the truth file")
        y[i] = truth.values[r, col]
    return y


def cmd_evaluate(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = _ensure_out_dir(cfg)
    cases = _read_ensembles_csv(args.forecasts)
    if not cases:
        raise CliError(f"{args.forecasts}: no forecast cases found")
    truth = load_csv(args.truth)
    target = cfg.site or truth.columns[0]
    if target not in truth.columns:
        raise CliError(f"site column {target!r} not in truth columns {truth.columns}")
    y = _truth_values(truth, target, cases)
    keep = np.isfinite(y)
    n_skipped = int((~keep).sum())
    if not keep.any():
        raise CliError("every forecast case has a missing truth value; nothing to score")
    E = np.stack([vals for _, _, vals in cases])[keep]
    report = score_report(E, y[keep])
    meta = _meta(cfg, "evaluate")
    meta["n_skipped_missing_truth"] = n_skipped
    report_path = os.path.join(out, "report.json")
    write_report_json(report_path, report, meta)
    rel_path = os.path.join(out, "reliability.csv")
    sharp_path = os.path.join(out, "sharpness.csv")
    write_report_csvs(rel_path, sharp_path, report, comments=_header_lines(cfg, "evaluate"))
    print(f"scored {report.n_cases} cases ({n_skipped} skipped for missing truth)")
    print(f"CRPS {report.crps:.6f} ({report.crps_pct:.3f}%)")
    print(f"wrote {report_path}, {rel_path}, {sharp_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


def _train_generative(cfg: RunConfig, Z: np.ndarray, S: np.ndarray):
    ss = np.random.SeedSequence(cfg.seed)
    init_ss, train_ss = ss.spawn(2)
    model = init_model(
        np.random.default_rng(init_ss),
        d=Z.shape[1],
        d_u=cfg.d_u,
        n_flows=cfg.n_flows,
        hidden=cfg.hidden,
        flow_hidden=cfg.flow_hidden,
        include_mask=cfg.include_mask,
    )
    tc = TrainConfig(
        K=cfg.K,
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        seed=cfg.seed,
        grad_clip=cfg.grad_clip,
    )
    state = TrainState(rng=np.random.default_rng(train_ss), adam=AdamState(lr=cfg.lr))
    state = train(model, Z, S, tc, state=state)
    return model, state


def _benchmark_models(cfg: RunConfig, table: SeriesTable, sites, truth: SeriesTable, model=None):
    """Score the generative forecaster against the baselines on one split.

    Returns (names, reports) on the common subset of test cases whose truth
    target is observed.  ``truth`` may be the masked table itself (scores on
    observed targets only) or the complete pre-mask table.
    """

    train_l, test_l = _split_windows(cfg, table, sites)
    train_r, test_r = _split_windows(cfg, table, sites, transform=IdentityTransform())
    target_col = truth.columns.index(sites[0])
    idx = truth.row_index()
    y = np.empty(len(test_r))
    for i, w in enumerate(test_r):
        if w.origin_timestamp not in idx:
            raise CliError(f"origin timestamp {w.origin_timestamp} missing from truth data")
        r = idx[w.origin_timestamp] + w.lead
        if r >= truth.n_rows:
            raise CliError(f"origin {w.origin_timestamp} + lead {w.lead} runs past the truth data")
        y[i] = truth.values[r, target_col]
    keep = np.isfinite(y)
    if not keep.any():
        raise CliError("no test case has an observed truth target")
    y = y[keep]

    if model is None:
        Z, S = windows_to_matrices(train_l)
        model, _state = _train_generative(cfg, Z, S)
    E_prop = _forecast_matrix(model, test_l, cfg.seed, cfg.L, cfg.M)[keep]

    Zr_train, _ = windows_to_matrices(train_r)
    Zr_test, _ = windows_to_matrices(test_r)
    X_train, y_train = Zr_train[:, :-1], Zr_train[:, -1]
    X_test = Zr_test[:, :-1][keep]

    ensembles = {"proposed": E_prop}
    clim = ClimatologyForecaster(n_scenarios=cfg.M, random_state=cfg.seed).fit(None, y_train)
    ensembles["climatology"] = clim.predict_ensemble(X_test)
    for name, imputer in (
        ("qr_im_mean", MeanImputer()),
        ("qr_im_iterative", IterativeLinearImputer()),
    ):
        imputer.fit(X_train)
        qr = QuantileRegressionForecaster(n_scenarios=cfg.M, random_state=cfg.seed)
        qr.fit(imputer.transform(X_train), y_train)
        ensembles[name] = qr.predict_ensemble(imputer.transform(X_test))
    gauss_imp = MeanImputer().fit(X_train)
    gauss = GaussianForecaster(n_scenarios=cfg.M, random_state=cfg.seed)
    gauss.fit(gauss_imp.transform(X_train), y_train)
    ensembles["gaussian_im_mean"] = gauss.predict_ensemble(gauss_imp.transform(X_test))
    if truth is not table:
        # the reference model sees the world without any missingness
        ref_train, ref_test = _split_windows(cfg, truth, sites, transform=IdentityTransform())
        Zt_train, _ = windows_to_matrices(ref_train)
        Zt_test, _ = windows_to_matrices(ref_test)
        ref = QuantileRegressionForecaster(n_scenarios=cfg.M, random_state=cfg.seed)
        ref.fit(Zt_train[:, :-1], Zt_train[:, -1])
        ensembles["reference"] = ref.predict_ensemble(Zt_test[:, :-1][keep])

    reports = {name: score_report(E, y) for name, E in ensembles.items()}
    return reports


def _write_benchmark_summary(path, cfg: RunConfig, reports: dict) -> None:
    levels = None
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for line in _header_lines(cfg, "benchmark"):
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["model", "n_cases", "crps", "crps_pct", "pinball_mean", "coverage_90", "width_90"])
        for name, rep in reports.items():
            if levels is None:
                levels = list(rep.levels)
            i90 = levels.index(0.9)
            w.writerow(
                [
                    name,
                    rep.n_cases,
                    repr(rep.crps),
                    repr(rep.crps_pct),
                    repr(float(np.mean(rep.pinball))),
                    repr(float(rep.coverage[i90])),
                    repr(float(rep.width[i90])),
                ]
            )


def cmd_benchmark(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = _ensure_out_dir(cfg)
    table = _load_table(cfg, getattr(args, "mask", None))
    sites = _resolve_sites(cfg, table)
    truth = load_csv(args.truth) if getattr(args, "truth", None) else table
    model = None
    if getattr(args, "checkpoint", None):
        model, meta = load_model(args.checkpoint)
        d = len(sites) * cfg.h + 1
        _check_checkpoint_compat(cfg, meta, sites, d, model)
    reports = _benchmark_models(cfg, table, sites, truth, model=model)
    summary_path = os.path.join(out, "benchmark_summary.csv")
    _write_benchmark_summary(summary_path, cfg, reports)
    for name, rep in reports.items():
        write_report_json(os.path.join(out, f"{name}.report.json"), rep, _meta(cfg, "benchmark"))
    width = max(len(n) for n in reports)
    for name, rep in reports.items():
        print(f"{name:<{width}}  CRPS {rep.crps:.6f} ({rep.crps_pct:.3f}%)")
    print(f"wrote {summary_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

_SWEEP_AXES = {
    "missing_rate": "missing_rate",
    "K": "K",
    "lead": "k",
    "aux_missing_rate": "aux_missing_rate",
}


def _sweep_point(payload: dict) -> dict:
    """Run one full simulate/train/forecast/evaluate cycle for a sweep value.

    Module-level so process pools can pickle it; takes and returns plain
    dicts for the same reason.
    """

    cfg = RunConfig(**payload["cfg"])
    axis, value, with_baselines = payload["axis"], payload["value"], payload["with_baselines"]
    field_name = _SWEEP_AXES[axis]
    cast = type(getattr(cfg, field_name) if field_name != "aux_missing_rate" else 0.0)
    cfg = replace(cfg, **{field_name: cast(value)})
    os.makedirs(cfg.out_dir, exist_ok=True)
    complete = load_csv(cfg.data)
    sites = _resolve_sites(cfg, complete)
    masked, realized = _apply_missingness(complete, cfg)
    header = _header_lines(cfg, "sweep")
    write_series_csv(os.path.join(cfg.out_dir, "masked.csv"), masked, comments=header)
    write_mask_csv(os.path.join(cfg.out_dir, "mask.csv"), masked, comments=header)
    if with_baselines:
        reports = _benchmark_models(cfg, masked, sites, complete)
    else:
        train_l, test_l = _split_windows(cfg, masked, sites)
        Z, S = windows_to_matrices(train_l)
        model, _state = _train_generative(cfg, Z, S)
        E = _forecast_matrix(model, test_l, cfg.seed, cfg.L, cfg.M)
        target_col = complete.columns.index(sites[0])
        idx = complete.row_index()
        y = np.array(
            [complete.values[idx[w.origin_timestamp] + w.lead, target_col] for w in test_l]
        )
        reports = {"proposed": score_report(E, y)}
    for name, rep in reports.items():
        write_report_json(
            os.path.join(cfg.out_dir, f"{name}.report.json"),
            rep,
            {**_meta(cfg, "sweep"), "axis": axis, "value": value, "realized_rate": realized},
        )
    return {
        "value": value,
        "crps_pct": {name: rep.crps_pct for name, rep in reports.items()},
    }


def cmd_sweep(cfg: RunConfig, args: argparse.Namespace) -> int:
    out = _ensure_out_dir(cfg)
    axis = args.axis
    if axis not in _SWEEP_AXES:
        raise CliError(f"axis must be one of {sorted(_SWEEP_AXES)}, got {axis!r}")
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise CliError("no sweep values; pass --values v1,v2,...")
    payloads = []
    for v in values:
        point_dir = os.path.join(out, f"{axis}_{v}")
        payloads.append(
            {
                "cfg": {**asdict(cfg), "out_dir": point_dir},
                "axis": axis,
                "value": v,
                "with_baselines": bool(args.with_baselines),
            }
        )
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_point, payloads))
    else:
        results = [_sweep_point(p) for p in payloads]
    models: list[str] = []
    for res in results:
        for name in res["crps_pct"]:
            if name not in models:
                models.append(name)
    summary_path = os.path.join(out, "sweep_summary.csv")
    with open(summary_path, "w", encoding="utf-8", newline="") as fh:
        for line in _header_lines(cfg, "sweep"):
            fh.write(f"# {line}\n")
        fh.write(f"# axis {axis}\n")
        w = csv.writer(fh)
        w.writerow(["model", *values])
        for name in models:
            row = [name]
            for res in results:
                v = res["crps_pct"].get(name)
                row.append("" if v is None else repr(float(v)))
            w.writerow(row)
    print(f"swept {axis} over {values}")
    print(f"wrote {summary_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on bad flags, not argparse's default 2
        raise CliError(message)


def _csv_ints(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


def _csv_floats(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _csv_strs(text: str) -> tuple:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _beta_pairs(text: str) -> dict:
    out = {}
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise argparse.ArgumentTypeError(f"expected column=coefficient, got {part!r}")
        col, coef = part.split("=", 1)
        out[col.strip()] = float(coef)
    return out


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (schema: RunConfig fields); flags override it")
    p.add_argument("--data", help="input series CSV")
    p.add_argument("--site", help="target site column (default: first data column)")
    p.add_argument("--aux-sites", dest="aux_sites", type=_csv_strs, help="auxiliary site columns, comma-separated")
    p.add_argument("--h", type=int, help="lag window length per site")
    p.add_argument("--k", type=int, help="forecast lead (steps ahead)")
    p.add_argument("--train-fraction", dest="train_fraction", type=float, help="chronological train share")
    p.add_argument("--mechanism", choices=("mcar", "mar"), help="missingness mechanism")
    p.add_argument("--missing-rate", dest="missing_rate", type=float, help="target-site missing rate")
    p.add_argument("--aux-missing-rate", dest="aux_missing_rate", type=float, help="auxiliary-site missing rate (default: same as --missing-rate)")
    p.add_argument("--mar-beta", dest="mar_beta", type=_beta_pairs, help="MAR coefficients, e.g. site2=1.5,site3=-0.5")
    p.add_argument("--d-u", dest="d_u", type=int, help="latent dimension")
    p.add_argument("--n-flows", dest="n_flows", type=int, help="posterior flow layers (0 = Gaussian posterior)")
    p.add_argument("--K", dest="K", type=int, help="importance samples per window during training")
    p.add_argument("--L", dest="L", type=int, help="proposals per origin at forecast time")
    p.add_argument("--M", dest="M", type=int, help="resampled scenarios per origin")
    p.add_argument("--hidden", type=_csv_ints, help="encoder/decoder trunk widths, e.g. 64,64")
    p.add_argument("--flow-hidden", dest="flow_hidden", type=_csv_ints, help="flow conditioner widths, e.g. 64")
    p.add_argument("--include-mask", dest="include_mask", action="store_const", const=True, help="append the mask vector to the encoder input")
    p.add_argument("--epochs", type=int, help="training epochs")
    p.add_argument("--batch-size", dest="batch_size", type=int, help="minibatch size")
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--grad-clip", dest="grad_clip", type=float, help="global gradient-norm clip")
    p.add_argument("--seed", type=int, help="master seed; all randomness derives from it")
    p.add_argument("--levels", type=_csv_floats, help="quantile levels for forecast summaries")
    p.add_argument("--out-dir", dest="out_dir", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gapcast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gapcast {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="knock values out of a complete series (optionally generating one)")
    _add_config_flags(p)
    p.add_argument("--generate", type=int, metavar="N", help="first generate an N-row synthetic series instead of reading --data")
    p.add_argument("--n-sites", dest="n_sites", type=int, default=1, help="sites for --generate")
    p.add_argument("--step-seconds", dest="step_seconds", type=float, default=3600.0, help="sampling step for --generate")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="fit the generative model on the training split")
    _add_config_flags(p)
    p.add_argument("--mask", help="extra mask CSV applied on top of the data file")
    p.add_argument("--resume", help="continue training from this checkpoint")
    p.add_argument("--verbose", action="store_true", help="print per-epoch bound")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="forecast every test-split origin from a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True, help="trained model checkpoint")
    p.add_argument("--mask", help="extra mask CSV applied on top of the data file")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", help="score a forecast file against truth data")
    _add_config_flags(p)
    p.add_argument("--forecasts", required=True, help="ensembles.csv from the forecast command")
    p.add_argument("--truth", required=True, help="series CSV holding the realized values")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="compare the model against impute-then-predict baselines")
    _add_config_flags(p)
    p.add_argument("--checkpoint", help="reuse a trained checkpoint instead of training in-process")
    p.add_argument("--mask", help="extra mask CSV applied on top of the data file")
    p.add_argument("--truth", help="complete pre-mask series CSV; enables the reference model and full-truth scoring")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("sweep", help="run a full cycle per axis value and tabulate CRPS")
    _add_config_flags(p)
    p.add_argument("--axis", required=True, choices=sorted(_SWEEP_AXES), help="which knob to sweep")
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--jobs", type=int, default=1, help="run points in this many parallel processes")
    p.add_argument("--with-baselines", dest="with_baselines", action="store_true", help="also run the baseline models per point")
    p.set_defaults(func=cmd_sweep)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = resolve_config(args)
        return args.func(cfg, args)
    except (TrainingDiverged, NonFiniteError, FloatingPointError, OverflowError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CliError, DataError, ValueError, OSError, KeyError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    raise SystemExit(main())
