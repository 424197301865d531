"""Two-stage training of the surrogate: autoencoder + multi-step forecast
losses first, then noise estimation from one-step residuals, then joint
training with the data-assimilation loss differentiated through the filter
recursion.  A post-hoc residual regression provides posterior-spread
estimates for the decoded mean.

Loss weights default to the inverse dimension of each residual vector, so
every term is a plain per-entry MSE.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import cgfilter, cgkn
from .errors import ConfigError, DivergenceError

SIGMA_FLOOR = 1e-8  # keeps the innovation covariance SPD when residuals vanish


@dataclass
class TrainConfig:
    n_forecast: int = 5
    n_da: int = 20
    n_warmup: int = 4
    lam_ae: float = None
    lam_u: float = None
    lam_v: float = None
    lam_da: float = None
    lr: float = 1e-3
    lr_stage2: float = None  # defaults to lr
    epochs_stage1: int = 100
    epochs_stage2: int = 60
    batch_size: int = 16
    grad_clip: float = 10.0
    sigma2_mode: str = "fixed"
    checkpoint_every: int = 0  # periodic checkpoints via the hook; 0 = off
    uq_hidden: tuple = (16,)
    uq_epochs: int = 200

    def __post_init__(self):
        if self.n_forecast < 1:
            raise ConfigError("n_forecast must be >= 1")
        if not self.n_da > self.n_warmup >= 0:
            raise ConfigError("need n_da > n_warmup >= 0")
        for name in ("lam_ae", "lam_u", "lam_v", "lam_da"):
            val = getattr(self, name)
            if val is not None and val < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.sigma2_mode not in ("fixed", "trainable"):
            raise ConfigError(f"unknown sigma2_mode {self.sigma2_mode!r}")

    def weights(self, spec):
        """Resolved loss weights: defaults are inverse dimensions."""
        return (
            self.lam_ae if self.lam_ae is not None else 1.0 / spec.d2,
            self.lam_u if self.lam_u is not None else 1.0 / spec.d,
            self.lam_v if self.lam_v is not None else 1.0 / spec.d_v,
            self.lam_da if self.lam_da is not None else 1.0 / spec.d2,
        )


@dataclass
class ResidualSample:
    u1: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.r) < 0):
            raise ConfigError("residuals must be nonnegative")


class Adam:
    """First/second-moment optimizer with bias correction."""

    def __init__(self, arrays, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(a) for a in arrays]
        self.v = [np.zeros_like(a) for a in arrays]

    def step(self, arrays, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, (a, g) in enumerate(zip(arrays, grads)):
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            a -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# parameter flattening --------------------------------------------------------

def layer_arrays(layers):
    out = []
    for w, b in layers:
        out.append(w)
        out.append(b)
    return out


def net_param_arrays(params):
    """Canonical flat order: encoder, decoder, eta layer weights/biases."""
    return (layer_arrays(params.encoder) + layer_arrays(params.decoder)
            + layer_arrays(params.eta))


def _tape_layers(tape, layers):
    return [(tape.param(w), tape.param(b)) for w, b in layers]


class _TapedModel:
    """One tape's view of the model parameters, in canonical order."""

    def __init__(self, tape, params):
        self.tape = tape
        self.encoder = _tape_layers(tape, params.encoder)
        self.decoder = _tape_layers(tape, params.decoder)
        self.eta = _tape_layers(tape, params.eta)

    def param_nodes(self):
        out = []
        for net in (self.encoder, self.decoder, self.eta):
            for wn, bn in net:
                out.append(wn)
                out.append(bn)
        return out


# loss graph builders ---------------------------------------------------------

def _ae_sumsq(model, u2_batch):
    u2 = model.tape.const(u2_batch)
    recon = cgkn.mlp_forward_t(model.tape, model.decoder,
                               cgkn.mlp_forward_t(model.tape, model.encoder, u2))
    return ad.sum_all(ad.square(ad.sub(u2, recon)))


def _forecast_sumsq(model, spec, segments):
    """Autonomous rollout over (B, N_s+1, d) true segments.

    Returns (sum of squared u-errors, sum of squared v-errors) nodes; the
    latent targets are re-encoded from the true unobserved states on this
    same tape, so gradients flow through both prediction and target.
    """
    tape = model.tape
    obs = list(spec.observed_indices)
    unobs = list(spec.unobserved_indices)
    n_steps = segments.shape[1] - 1
    u1 = tape.const(segments[:, 0, :][:, obs])
    v = cgkn.mlp_forward_t(tape, model.encoder,
                           tape.const(segments[:, 0, :][:, unobs]))
    su = None
    sv = None
    for n in range(n_steps):
        f1, g1, f2, g2 = cgkn.coeffs_t(tape, model.eta, u1, spec)
        u1 = ad.add(f1, ad.bmatvec(g1, v))
        v = ad.add(f2, ad.bmatvec(g2, v))
        u2 = cgkn.mlp_forward_t(tape, model.decoder, v)
        tgt = segments[:, n + 1, :]
        v_tgt = cgkn.mlp_forward_t(tape, model.encoder, tape.const(tgt[:, unobs]))
        du = ad.add(ad.sum_all(ad.square(ad.sub(u1, tape.const(tgt[:, obs])))),
                    ad.sum_all(ad.square(ad.sub(u2, tape.const(tgt[:, unobs])))))
        dv = ad.sum_all(ad.square(ad.sub(v, v_tgt)))
        su = du if su is None else ad.add(su, du)
        sv = dv if sv is None else ad.add(sv, dv)
    return su, sv


def _da_sumsq(model, spec, u1_wins, u2_wins, sigma1, sigma2, n_warmup):
    """Decoded-posterior error after the warm-up, summed over the batch."""
    tape = model.tape
    batch = u1_wins.shape[0]
    mu0 = np.zeros((batch, spec.d_v))
    sig0 = np.tile(np.eye(spec.d_v), (batch, 1, 1))
    steps = cgfilter.filter_window_t(tape, model.eta, spec, u1_wins,
                                     mu0, sig0, sigma1, sigma2)
    total = None
    for t in range(n_warmup, len(steps)):
        mu, _ = steps[t]
        dec = cgkn.mlp_forward_t(tape, model.decoder, mu)
        term = ad.sum_all(ad.square(ad.sub(dec, tape.const(u2_wins[:, t + 1, :]))))
        total = term if total is None else ad.add(total, term)
    return total


# public loss values (plain evaluation, used by tests and logging) ------------

def loss_ae(params, u2_batch):
    """Mean reconstruction error, scaled by 1/d2."""
    u2_batch = np.atleast_2d(np.asarray(u2_batch, dtype=np.float64))
    recon = cgkn.decode(params, cgkn.encode(params, u2_batch))
    return float(np.sum((u2_batch - recon) ** 2) / (u2_batch.shape[0] * params.spec.d2))


def loss_forecast(params, segment):
    """(L_u, L_v) for one true segment of shape (N_s+1, d), scaled 1/d, 1/d_v."""
    segment = np.asarray(segment, dtype=np.float64)
    tape = ad.Tape()
    model = _TapedModel(tape, params)
    su, sv = _forecast_sumsq(model, params.spec, segment[None])
    n_steps = segment.shape[0] - 1
    lu = float(su.value) / (params.spec.d * n_steps)
    lv = float(sv.value) / (params.spec.d_v * n_steps)
    return lu, lv


def loss_da(params, u1_series, u2_series, n_warmup):
    """Decoded posterior MSE over steps past the warm-up, scaled 1/d2."""
    u1_series = np.asarray(u1_series, dtype=np.float64)
    u2_series = np.asarray(u2_series, dtype=np.float64)
    n_l = u1_series.shape[0] - 1
    if not n_l > n_warmup:
        raise ConfigError("series too short for the warm-up")
    tape = ad.Tape()
    model = _TapedModel(tape, params)
    total = _da_sumsq(model, params.spec, u1_series[None], u2_series[None],
                      params.sigma1, params.sigma2, n_warmup)
    return float(total.value) / (params.spec.d2 * (n_l - n_warmup))


def estimate_sigma(params, states):
    """Per-dimension RMSE of one-step prediction residuals for u1 and v."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 2:
        states = states[None]
    spec = params.spec
    obs = list(spec.observed_indices)
    unobs = list(spec.unobserved_indices)
    u1 = states[:, :, obs]
    u2 = states[:, :, unobs]
    v_star = cgkn.encode(params, u2)
    u1_next, v_next = cgkn.step_mean(params, u1[:, :-1, :].reshape(-1, spec.d1),
                                     v_star[:, :-1, :].reshape(-1, spec.d_v))
    res1 = u1[:, 1:, :].reshape(-1, spec.d1) - u1_next
    res2 = v_star[:, 1:, :].reshape(-1, spec.d_v) - v_next
    sigma1 = np.sqrt(np.mean(res1 ** 2, axis=0))
    sigma2 = np.sqrt(np.mean(res2 ** 2, axis=0))
    return sigma1, sigma2


# training driver --------------------------------------------------------------

@dataclass
class TrainResult:
    params: cgkn.CGKNParams
    history: list = field(default_factory=list)


def _window_starts(n_steps, length, stride):
    return list(range(0, n_steps - length + 1, stride))


def _gather_windows(states, picks, length):
    return np.stack([states[r, s:s + length + 1, :] for r, s in picks])


def write_training_log(path, history):
    cols = ("epoch", "stage", "loss_ae", "loss_u", "loss_v", "loss_da",
            "total", "grad_norm", "wall_time_s")
    lines = [",".join(cols)]
    for row in history:
        lines.append(",".join(repr(row[c]) if not isinstance(row[c], str)
                              else row[c] for c in cols))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def train_cgkn(states, spec, config, rng, params=None,
               encoder_hidden=(32, 32, 32), eta_hidden=(32, 32, 32),
               stages=(1, 2), checkpoint_hook=None):
    """Two-stage training on full-observation trajectories (R, T, d).

    Stage 1 minimizes the autoencoder and forecast losses; the noise
    diagonals are then estimated from one-step residuals; stage 2 adds the
    filter-based DA loss.  Deterministic for a fixed rng seed.  When
    ``config.checkpoint_every`` is set, ``checkpoint_hook(stage, epoch,
    params)`` fires every that-many epochs.
    """
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 2:
        states = states[None]
    n_traj, n_steps_total, d = states.shape
    if d != spec.d:
        raise ConfigError(f"dataset dim {d} != spec d {spec.d}")
    lam_ae, lam_u, lam_v, lam_da = config.weights(spec)

    if params is None:
        params = cgkn.init_params(spec, list(encoder_hidden), list(eta_hidden),
                                  rng.split("init"))
    history = []

    fc_starts = _window_starts(n_steps_total - 1, config.n_forecast, 1)
    if not fc_starts:
        raise ConfigError("trajectories shorter than the forecast horizon")
    fc_picks = [(r, s) for r in range(n_traj) for s in fc_starts]

    def run_stage(stage, epochs, with_da):
        arrays = net_param_arrays(params)
        sigma2_raw = None
        if with_da and config.sigma2_mode == "trainable":
            # softplus(raw) keeps the trainable diagonal nonnegative
            sigma2_raw = np.log(np.expm1(np.maximum(params.sigma2, 1e-6)))
            arrays = arrays + [sigma2_raw]
        lr = config.lr
        if with_da and config.lr_stage2 is not None:
            lr = config.lr_stage2
        adam = Adam(arrays, lr=lr)
        shuffle_rng = rng.split(f"shuffle-stage{stage}")
        if with_da:
            if config.n_da < config.n_forecast:
                raise ConfigError("n_da must be >= n_forecast")
            da_starts = _window_starts(n_steps_total - 1, config.n_da, config.n_da)
            if not da_starts:
                raise ConfigError("trajectories shorter than the DA horizon")
            picks = [(r, s) for r in range(n_traj) for s in da_starts]
        else:
            picks = fc_picks

        for epoch in range(epochs):
            t0 = time.perf_counter()
            order = shuffle_rng.permutation(len(picks))
            sums = {"loss_ae": 0.0, "loss_u": 0.0, "loss_v": 0.0,
                    "loss_da": 0.0, "total": 0.0, "grad_norm": 0.0}
            n_batches = 0
            for lo in range(0, len(order), config.batch_size):
                batch = [picks[i] for i in order[lo:lo + config.batch_size]]
                if with_da:
                    da_wins = _gather_windows(states, batch, config.n_da)
                    offset = int(shuffle_rng.uniform(()) *
                                 (config.n_da - config.n_forecast + 1))
                    segs = da_wins[:, offset:offset + config.n_forecast + 1, :]
                else:
                    segs = _gather_windows(states, batch, config.n_forecast)
                bsz = segs.shape[0]

                tape = ad.Tape()
                model = _TapedModel(tape, params)
                u2_flat = segs.reshape(-1, d)[:, list(spec.unobserved_indices)]
                ae_sum = _ae_sumsq(model, u2_flat)
                su, sv = _forecast_sumsq(model, spec, segs)
                n_ae = u2_flat.shape[0]
                val_ae = lam_ae * float(ae_sum.value) / n_ae
                val_u = lam_u * float(su.value) / (bsz * config.n_forecast)
                val_v = lam_v * float(sv.value) / (bsz * config.n_forecast)
                total = ad.add(
                    ad.smul(ae_sum, lam_ae / n_ae),
                    ad.add(ad.smul(su, lam_u / (bsz * config.n_forecast)),
                           ad.smul(sv, lam_v / (bsz * config.n_forecast))))
                val_da = 0.0
                sigma2_node = None
                if with_da:
                    obs_idx = list(spec.observed_indices)
                    unobs_idx = list(spec.unobserved_indices)
                    if sigma2_raw is not None:
                        sigma2_node = tape.param(sigma2_raw)
                        s2 = ad.softplus(sigma2_node)
                    else:
                        s2 = params.sigma2
                    da_sum = _da_sumsq(model, spec, da_wins[:, :, obs_idx],
                                       da_wins[:, :, unobs_idx],
                                       params.sigma1, s2, config.n_warmup)
                    scale_da = lam_da / (bsz * (config.n_da - config.n_warmup))
                    val_da = scale_da * float(da_sum.value)
                    total = ad.add(total, ad.smul(da_sum, scale_da))

                total_val = float(total.value)
                if not np.isfinite(total_val):
                    raise DivergenceError(
                        f"loss diverged in stage {stage}", epoch=epoch)
                grads_by_node = tape.backward(total)
                node_list = model.param_nodes()
                if sigma2_node is not None:
                    node_list = node_list + [sigma2_node]
                grads = [grads_by_node[n] for n in node_list]
                grads, norm = ad.clip_by_global_norm(grads, config.grad_clip)
                adam.step(arrays, grads)
                if sigma2_raw is not None:
                    params.sigma2 = np.logaddexp(0.0, sigma2_raw)

                sums["loss_ae"] += val_ae
                sums["loss_u"] += val_u
                sums["loss_v"] += val_v
                sums["loss_da"] += val_da
                sums["total"] += total_val
                sums["grad_norm"] += norm
                n_batches += 1
            row = {k: v / n_batches for k, v in sums.items()}
            row.update(epoch=epoch, stage=stage,
                       wall_time_s=time.perf_counter() - t0)
            history.append(row)
            if (checkpoint_hook is not None and config.checkpoint_every > 0
                    and (epoch + 1) % config.checkpoint_every == 0):
                checkpoint_hook(stage, epoch, params)

    if 1 in stages:
        run_stage(1, config.epochs_stage1, with_da=False)
    sigma1, sigma2 = estimate_sigma(params, states)
    params.sigma1 = np.maximum(sigma1, SIGMA_FLOOR)
    params.sigma2 = np.maximum(sigma2, SIGMA_FLOOR)
    if 2 in stages:
        run_stage(2, config.epochs_stage2, with_da=True)
    return TrainResult(params=params, history=history)


# residual-based posterior spread ---------------------------------------------

def uq_predict(layers, u1):
    """Nonnegative residual prediction: softplus of the regression output."""
    return np.logaddexp(0.0, cgkn.mlp_forward(layers, u1))


def collect_residuals(params, states, n_warmup):
    """Filter each trajectory and pair post-warm-up |truth - decoded mean|
    with the observed state at the same step."""
    states = np.asarray(states, dtype=np.float64)
    if states.ndim == 2:
        states = states[None]
    spec = params.spec
    obs = list(spec.observed_indices)
    unobs = list(spec.unobserved_indices)
    xs, ys = [], []
    for r in range(states.shape[0]):
        u1_series = states[r][:, obs]
        run = cgfilter.filter_run(params, u1_series, warmup=n_warmup)
        mus = cgkn.decode(params, run.mus)
        for t in range(n_warmup, len(run.beliefs)):
            xs.append(u1_series[t + 1])
            ys.append(np.abs(states[r, t + 1, unobs] - mus[t]))
    return np.stack(xs), np.stack(ys)


def train_uq(params, states, config, rng):
    """Fit the residual regressor u1 -> r; returns the MLP layer list."""
    x, y = collect_residuals(params, states, config.n_warmup)
    spec = params.spec
    layers = cgkn.init_mlp([spec.d1] + list(config.uq_hidden) + [spec.d2],
                           rng.split("uq-init"))
    arrays = layer_arrays(layers)
    adam = Adam(arrays, lr=config.lr)
    shuffle_rng = rng.split("uq-shuffle")
    for epoch in range(config.uq_epochs):
        order = shuffle_rng.permutation(x.shape[0])
        for lo in range(0, len(order), config.batch_size):
            idx = order[lo:lo + config.batch_size]
            tape = ad.Tape()
            layer_nodes = _tape_layers(tape, layers)
            pred = ad.softplus(cgkn.mlp_forward_t(tape, layer_nodes,
                                                  tape.const(x[idx])))
            loss = ad.mean_all(ad.square(ad.sub(pred, tape.const(y[idx]))))
            if not np.isfinite(float(loss.value)):
                raise DivergenceError("UQ regression diverged", epoch=epoch)
            grads_by_node = tape.backward(loss)
            nodes = [n for pair in layer_nodes for n in pair]
            grads, _ = ad.clip_by_global_norm([grads_by_node[n] for n in nodes],
                                              config.grad_clip)
            adam.step(arrays, grads)
    return layers
