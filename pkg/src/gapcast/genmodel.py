"""Deep latent-variable model of lag windows, trained on gappy data.

The joint model is ``p(z, u) = p(z | u) p(u)``: a standard-normal latent
``u`` decoded through a tanh MLP into per-coordinate Student's t parameters
for the whole window (lags and target together).  Because the likelihood
factorises over coordinates, training scores only the observed ones; under
ignorable missingness, maximising that observed-data likelihood targets the
right model, no imputation needed.

The intractable observed-data likelihood is replaced by an importance
weighted bound: for each window, K latents are drawn from an amortised
posterior ``q(u | g(z))`` (a Gaussian base pushed through a masked
autoregressive flow, conditioned on the zero-imputed window), and the bound
is ``logsumexp_k [log p(z_obs | u_k) + log p(u_k) - log q(u_k)] - log K``,
summed over windows.  Training maximises that bound; more samples can only
tighten it in expectation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import (
    NonFiniteError,
    Tensor,
    add,
    backward,
    logsumexp,
    mul,
    reshape,
    softplus,
    sub,
    tensor_sum,
)
from .dist import (
    DiagGaussian,
    DiagStudentT,
    gaussian_logpdf,
    gaussian_rsample,
    student_t_logpdf_terms,
)
from .flow import FlowChain, build_flow_chain, flow_forward
from .missing import zero_impute
from .nn import (
    AdamState,
    Linear,
    Mlp,
    adam_step,
    clip_gradients,
    init_params,
    linear_init,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "ElboEstimate",
    "GenerativeModel",
    "LatentSample",
    "TrainConfig",
    "TrainState",
    "TrainingDiverged",
    "decode",
    "elbo",
    "encode_base",
    "encode_sample",
    "encoder_input",
    "init_model",
    "load_model",
    "model_from_arrays",
    "model_to_arrays",
    "observed_loglik",
    "save_model",
    "train",
]

SIGMA_FLOOR = 1e-3
NU_SHIFT = 2.0

_HYPER_KEYS = ("d", "d_u", "n_flows", "hidden", "flow_hidden", "include_mask")


class TrainingDiverged(RuntimeError):
    """Raised when optimisation hits non-finite numbers.

    Carries the last parameter snapshot that was still finite so callers can
    checkpoint it for diagnosis.
    """

    def __init__(self, message: str, last_good: dict[str, np.ndarray] | None, trace: list[float]):
        super().__init__(message)
        self.last_good = last_good
        self.trace = trace


@dataclass
class GenerativeModel:
    """Decoder, amortised encoder and posterior flow, with their shapes."""

    d: int
    d_u: int
    n_flows: int
    include_mask: bool
    hidden: tuple[int, ...]
    flow_hidden: tuple[int, ...]
    dec_trunk: Mlp
    dec_mu: Linear
    dec_sigma: Linear
    dec_nu: Linear
    enc_trunk: Mlp
    enc_mu: Linear
    enc_sigma: Linear
    flow: FlowChain

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(self.dec_trunk.params("dec_trunk"))
        out.update(self.dec_mu.params("dec_mu"))
        out.update(self.dec_sigma.params("dec_sigma"))
        out.update(self.dec_nu.params("dec_nu"))
        out.update(self.enc_trunk.params("enc_trunk"))
        out.update(self.enc_mu.params("enc_mu"))
        out.update(self.enc_sigma.params("enc_sigma"))
        out.update(self.flow.params("flow"))
        return out

    @property
    def n_params(self) -> int:
        return sum(int(t.size) for t in self.params().values())

    def hyperparams(self) -> dict:
        return {
            "d": self.d,
            "d_u": self.d_u,
            "n_flows": self.n_flows,
            "hidden": list(self.hidden),
            "flow_hidden": list(self.flow_hidden),
            "include_mask": self.include_mask,
        }


def init_model(
    seed: int | np.random.Generator,
    d: int,
    d_u: int = 16,
    n_flows: int = 3,
    hidden=(64, 64),
    flow_hidden=(64,),
    include_mask: bool = False,
) -> GenerativeModel:
    """Fresh model, deterministic in the seed; flow starts at identity."""

    if d < 1 or d_u < 1:
        raise ValueError(f"need positive dimensions, got d={d}, d_u={d_u}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    hidden = tuple(int(w) for w in hidden)
    flow_hidden = tuple(int(w) for w in flow_hidden)
    d_in = 2 * d if include_mask else d
    emb = hidden[-1] if hidden else d_in
    dec_trunk = init_params(rng, (d_u, *hidden), activate_final=True) if hidden else Mlp([], True)
    dec_width = hidden[-1] if hidden else d_u
    enc_trunk = init_params(rng, (d_in, *hidden), activate_final=True) if hidden else Mlp([], True)
    enc_width = hidden[-1] if hidden else d_in
    return GenerativeModel(
        d=d,
        d_u=d_u,
        n_flows=n_flows,
        include_mask=include_mask,
        hidden=hidden,
        flow_hidden=flow_hidden,
        dec_trunk=dec_trunk,
        dec_mu=linear_init(rng, dec_width, d),
        dec_sigma=linear_init(rng, dec_width, d),
        dec_nu=linear_init(rng, dec_width, d),
        enc_trunk=enc_trunk,
        enc_mu=linear_init(rng, enc_width, d_u),
        enc_sigma=linear_init(rng, enc_width, d_u),
        flow=build_flow_chain(rng, d_u, ctx_dim=emb, n_transforms=n_flows, hidden_sizes=flow_hidden),
    )


def encoder_input(model: GenerativeModel, g: np.ndarray, s: np.ndarray | None) -> np.ndarray:
    """Zero-imputed window, with the mask appended when configured."""

    if not model.include_mask:
        return g
    if s is None:
        raise ValueError("model was built with include_mask; pass the mask")
    return np.concatenate([g, np.asarray(s, dtype=np.float64)], axis=-1)


def decode(model: GenerativeModel, u) -> DiagStudentT:
    """Map latents to per-coordinate Student's t parameters.

    Positivity transforms: scale is ``softplus(raw) + 1e-3``; degrees of
    freedom are ``softplus(raw) + 2`` so the likelihood always has a
    variance.
    """

    u = u if isinstance(u, Tensor) else Tensor(u)
    trunk = model.dec_trunk(u) if model.dec_trunk.layers else u
    mu = model.dec_mu(trunk)
    sigma = add(softplus(model.dec_sigma(trunk)), SIGMA_FLOOR)
    nu = add(softplus(model.dec_nu(trunk)), NU_SHIFT)
    return DiagStudentT(mu=mu, sigma=sigma, nu=nu)


def encode_base(model: GenerativeModel, x) -> tuple[DiagGaussian, Tensor]:
    """Gaussian base of the posterior plus the context embedding."""

    x = x if isinstance(x, Tensor) else Tensor(x)
    trunk = model.enc_trunk(x) if model.enc_trunk.layers else x
    mu = model.enc_mu(trunk)
    sigma = add(softplus(model.enc_sigma(trunk)), SIGMA_FLOOR)
    return DiagGaussian(mu=mu, sigma=sigma), trunk


@dataclass
class LatentSample:
    """K posterior draws per window, with their log-densities, on the tape."""

    u: Tensor
    log_q: Tensor
    u0: Tensor
    log_det: Tensor
    context: Tensor
    eta: np.ndarray


def encode_sample(
    model: GenerativeModel,
    g: np.ndarray,
    rng: np.random.Generator | None = None,
    K: int = 1,
    eta: np.ndarray | None = None,
    s: np.ndarray | None = None,
) -> LatentSample:
    """Draw K posterior samples per row of the zero-imputed input ``g``.

    Rows are repeated K times (sample k of window t lands at row ``t*K+k``).
    Pass ``eta`` to pin the Gaussian noise; the flow transport and the
    carried log-density stay differentiable either way.
    """

    if K < 1:
        raise ValueError(f"K must be at least 1, got {K}")
    g2 = np.atleast_2d(np.asarray(g, dtype=np.float64))
    s2 = None if s is None else np.atleast_2d(np.asarray(s, dtype=np.float64))
    x = encoder_input(model, g2, s2)
    x_rep = np.repeat(x, K, axis=0)
    base, ctx = encode_base(model, x_rep)
    u0, eta = gaussian_rsample(base, rng=rng, eta=eta)
    log_q0 = gaussian_logpdf(base, u0)
    u_n, log_det = flow_forward(model.flow, u0, ctx)
    return LatentSample(
        u=u_n, log_q=sub(log_q0, log_det), u0=u0, log_det=log_det, context=ctx, eta=eta
    )


def observed_loglik(dist: DiagStudentT, z: np.ndarray, s: np.ndarray) -> Tensor:
    """Decoder log-likelihood summed over observed coordinates only.

    Missing coordinates contribute exactly zero: their (finite) terms are
    multiplied by a zero weight, so the value and every gradient ignore
    them.
    """

    z2 = np.atleast_2d(np.asarray(z, dtype=np.float64))
    s2 = np.atleast_2d(np.asarray(s))
    filled = zero_impute(z2, s2)
    terms = student_t_logpdf_terms(dist, Tensor(filled))
    weights = Tensor(1.0 - s2.astype(np.float64))
    return tensor_sum(mul(terms, weights), axis=-1)


@dataclass
class ElboEstimate:
    """Importance-weighted bound value plus its per-sample log-ratios."""

    value: float
    log_ratios: np.ndarray
    K: int
    per_window: np.ndarray
    value_tensor: Tensor = field(repr=False)


def elbo(
    model: GenerativeModel,
    Z: np.ndarray,
    S: np.ndarray,
    rng: np.random.Generator | None = None,
    K: int = 1,
    eta: np.ndarray | None = None,
) -> ElboEstimate:
    """Importance-weighted bound over a batch of windows.

    ``value = sum_t [logsumexp_k log r_{t,k} - log K]`` with
    ``log r = log p(z_obs | u) + log p(u) - log q(u | g(z))``.  The returned
    tensor backpropagates into every model parameter.
    """

    Z2 = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    S2 = np.atleast_2d(np.asarray(S))
    if Z2.shape != S2.shape:
        raise ValueError(f"value/mask shape mismatch: {Z2.shape} vs {S2.shape}")
    if Z2.shape[1] != model.d:
        raise ValueError(f"window width {Z2.shape[1]} != model d {model.d}")
    B = Z2.shape[0]
    g = zero_impute(Z2, S2)
    try:
        lat = encode_sample(model, g, rng=rng, K=K, eta=eta, s=S2)
        dist = decode(model, lat.u)
        z_rep = np.repeat(Z2, K, axis=0)
        s_rep = np.repeat(S2, K, axis=0)
        ll = observed_loglik(dist, z_rep, s_rep)
        prior = DiagGaussian(mu=Tensor(np.zeros(model.d_u)), sigma=Tensor(np.ones(model.d_u)))
        log_p_u = gaussian_logpdf(prior, lat.u)
        log_r = sub(add(ll, log_p_u), lat.log_q)
    except NonFiniteError as err:
        raise NonFiniteError(f"elbo: non-finite term over batch of {B} windows, K={K}: {err}") from err
    ratios = log_r.data.reshape(B, K)
    bad = np.argwhere(~np.isfinite(ratios))
    if bad.size:
        t, k = bad[0]
        raise NonFiniteError(f"elbo: non-finite log-ratio at window {int(t)}, sample {int(k)}")
    per = sub(logsumexp(reshape(log_r, (B, K)), axis=1), float(np.log(K)))
    total = tensor_sum(per)
    return ElboEstimate(
        value=float(total.data),
        log_ratios=ratios.copy(),
        K=K,
        per_window=per.data.copy(),
        value_tensor=total,
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    """Optimisation settings for the bound."""

    K: int = 50
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    grad_clip: float = 10.0
    verbose: bool = False


@dataclass
class TrainState:
    """Everything needed to continue training exactly where it stopped."""

    rng: np.random.Generator
    adam: AdamState
    epoch: int = 0
    trace: list[float] = field(default_factory=list)


def train(
    model: GenerativeModel,
    Z: np.ndarray,
    S: np.ndarray,
    cfg: TrainConfig,
    state: TrainState | None = None,
) -> TrainState:
    """Maximise the bound with minibatch Adam; deterministic in the seed.

    One generator drives shuffling and posterior noise sequentially, so a
    run is bit-reproducible and a resumed run continues the interrupted one
    exactly (the state carries the generator and Adam moments).  Gradients
    are clipped to a global norm before each step.  On non-finite numbers,
    raises :class:`TrainingDiverged` holding the last finite snapshot.
    """

    Z2 = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    S2 = np.atleast_2d(np.asarray(S))
    n = Z2.shape[0]
    if n == 0:
        raise ValueError("no training windows")
    if state is None:
        state = TrainState(rng=np.random.default_rng(cfg.seed), adam=AdamState(lr=cfg.lr))
    params = model.params()
    names = list(params)
    tensors = [params[name] for name in names]
    last_good = {name: params[name].data.copy() for name in names}
    for epoch in range(state.epoch, cfg.epochs):
        order = state.rng.permutation(n)
        total = 0.0
        try:
            for start in range(0, n, cfg.batch_size):
                sel = order[start : start + cfg.batch_size]
                est = elbo(model, Z2[sel], S2[sel], rng=state.rng, K=cfg.K)
                loss = mul(est.value_tensor, -1.0 / len(sel))
                grad_map = backward(loss, wrt=tensors)
                grads = {name: grad_map[t] for name, t in zip(names, tensors)}
                grads, _ = clip_gradients(grads, cfg.grad_clip)
                adam_step(state.adam, params, grads)
                total += est.value
        except NonFiniteError as err:
            raise TrainingDiverged(
                f"training diverged in epoch {epoch}: {err}", last_good, state.trace
            ) from err
        state.trace.append(total / n)
        state.epoch = epoch + 1
        last_good = {name: params[name].data.copy() for name in names}
        if cfg.verbose:
            print(f"epoch {epoch + 1}/{cfg.epochs}: bound/window {state.trace[-1]:.4f}")
    return state


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def model_to_arrays(model: GenerativeModel) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in model.params().items()}


def model_from_arrays(hyper: dict, arrays: dict[str, np.ndarray]) -> GenerativeModel:
    model = init_model(
        seed=0,
        d=int(hyper["d"]),
        d_u=int(hyper["d_u"]),
        n_flows=int(hyper["n_flows"]),
        hidden=tuple(hyper["hidden"]),
        flow_hidden=tuple(hyper["flow_hidden"]),
        include_mask=bool(hyper["include_mask"]),
    )
    params = model.params()
    missing = set(params) - set(arrays)
    if missing:
        raise ValueError(f"checkpoint is missing arrays: {sorted(missing)}")
    for name, t in params.items():
        a = np.asarray(arrays[name], dtype=np.float64)
        if a.shape != t.data.shape:
            raise ValueError(f"array {name!r} has shape {a.shape}, expected {t.data.shape}")
        t.data = a.copy()
    return model


def save_model(path, model: GenerativeModel, extra_meta: dict | None = None) -> None:
    """Checkpoint the model (and optional training state) as versioned JSON."""

    meta = dict(model.hyperparams())
    meta.update(extra_meta or {})
    save_checkpoint(path, meta, model_to_arrays(model))


def load_model(path) -> tuple[GenerativeModel, dict]:
    meta, arrays = load_checkpoint(path)
    missing = [k for k in _HYPER_KEYS if k not in meta]
    if missing:
        raise ValueError(f"{path}: checkpoint meta lacks {missing}")
    hyper = {k: meta[k] for k in _HYPER_KEYS}
    model_arrays = {k: v for k, v in arrays.items() if not k.startswith("adam.")}
    return model_from_arrays(hyper, model_arrays), meta
