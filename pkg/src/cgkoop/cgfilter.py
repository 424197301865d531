"""Analytic data-assimilation recursion for the conditional-Gaussian model.

Given the observed series u1 and coefficients evaluated at each step, the
latent posterior stays Gaussian and evolves in closed form:

    K  = G2 S G1^T (s1 s1^T + G1 S G1^T)^(-1)
    mu' = F2 + G2 mu + K (u1_next - F1 - G1 mu)
    S'  = G2 S G2^T + s2 s2^T - K G1 S G2^T

The recursion is implemented twice: a compiled kernel (cgkoop._kernels,
built from Cython) used for evaluation and the complexity probe, and a
pure-numpy fallback selected at import when the extension is missing.
A separate taped variant (filter_window_t) makes the recursion
differentiable for training.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import cgkn
from . import numcore as nc
from .errors import NumericalError, ShapeError

DEFAULT_JITTER = 1e-10

try:
    from . import _kernels

    HAVE_KERNELS = True
except ImportError:  # pure-Python fallback
    _kernels = None
    HAVE_KERNELS = False


@dataclass
class GaussianBelief:
    """Latent posterior mean and covariance."""

    mu: np.ndarray
    sigma: np.ndarray


@dataclass
class DecodedPosterior:
    mu: np.ndarray
    std: np.ndarray = None


@dataclass
class FilterRun:
    beliefs: list
    n_warmup: int

    @property
    def mus(self):
        return np.stack([b.mu for b in self.beliefs])

    @property
    def sigmas(self):
        return np.stack([b.sigma for b in self.beliefs])

    def warmup_flags(self):
        return np.arange(len(self.beliefs)) < self.n_warmup


def default_belief(d_v):
    """Uninformative start: zero mean, identity covariance."""
    return GaussianBelief(mu=np.zeros(d_v), sigma=np.eye(d_v))


def _step_np(f1, g1, f2, g2, r1, r2, u1_next, mu, sigma, jitter):
    """One filter step, numpy path; mirrors the compiled kernel exactly."""
    d1 = f1.shape[0]
    s = g1 @ sigma @ g1.T + np.diag(r1) + jitter * np.eye(d1)
    cross = g2 @ sigma @ g1.T  # (dv, d1)
    kt = nc.solve_spd(s, cross.T)  # K^T, (d1, dv)
    innov = u1_next - f1 - g1 @ mu
    mu_next = f2 + g2 @ mu + kt.T @ innov
    sig_next = g2 @ sigma @ g2.T + np.diag(r2) - kt.T @ cross.T
    return mu_next, 0.5 * (sig_next + sig_next.T)


def _select(backend):
    if backend == "auto":
        return "compiled" if HAVE_KERNELS else "python"
    if backend == "compiled" and not HAVE_KERNELS:
        raise NumericalError("compiled kernels are not available")
    return backend


def filter_step(params, belief, u1_now, u1_next, jitter=DEFAULT_JITTER,
                backend="auto"):
    """Advance the belief by one observation using coefficients at u1_now."""
    c = cgkn.coeffs(params, u1_now)
    r1 = params.sigma1 ** 2
    r2 = params.sigma2 ** 2
    u1_next = np.asarray(u1_next, dtype=np.float64)
    if _select(backend) == "compiled":
        mu, sigma = _kernels.filter_step(
            c.f1, c.g1, c.f2, c.g2, r1, r2, u1_next,
            belief.mu, belief.sigma, jitter)
    else:
        mu, sigma = _step_np(c.f1, c.g1, c.f2, c.g2, r1, r2, u1_next,
                             belief.mu, belief.sigma, jitter)
    return GaussianBelief(mu=mu, sigma=sigma)


def filter_run(params, u1_series, init=None, warmup=0, jitter=DEFAULT_JITTER,
               backend="auto"):
    """Run the filter over an observed series of shape (N+1, d1).

    Returns all N posterior beliefs; the first ``warmup`` are flagged as
    warm-up and should be excluded from losses and metrics.
    """
    u1_series = np.asarray(u1_series, dtype=np.float64)
    if u1_series.ndim != 2 or u1_series.shape[1] != params.spec.d1:
        raise ShapeError(f"u1 series must be (N+1, {params.spec.d1}), "
                         f"got {u1_series.shape}")
    n_steps = u1_series.shape[0] - 1
    if warmup < 0 or warmup > n_steps:
        raise ShapeError(f"warmup {warmup} outside [0, {n_steps}]")
    belief = init if init is not None else default_belief(params.spec.d_v)
    beliefs = []
    for t in range(n_steps):
        try:
            belief = filter_step(params, belief, u1_series[t], u1_series[t + 1],
                                 jitter=jitter, backend=backend)
        except NumericalError as err:
            raise NumericalError(f"filter failed at step {t}: {err}",
                                 pivot_index=err.pivot_index,
                                 step_index=t) from None
        beliefs.append(belief)
    return FilterRun(beliefs=beliefs, n_warmup=warmup)


def decode_posterior(params, belief, uq_predictor=None, u1=None):
    """Decode the latent mean; attach predicted stds when a UQ net is given."""
    mu = cgkn.decode(params, belief.mu)
    std = None
    if uq_predictor is not None:
        if u1 is None:
            raise ShapeError("uq_predictor needs the current observed state u1")
        std = uq_predictor(u1)
    return DecodedPosterior(mu=mu, std=std)


def filter_run_const(f1, g1, f2, g2, r1, r2, u1_series, mu0, sigma0,
                     jitter=DEFAULT_JITTER, backend="auto", record=True):
    """Constant-coefficient filter run (both backends share this entry)."""
    if _select(backend) == "compiled":
        return _kernels.filter_run_const(f1, g1, f2, g2, r1, r2, u1_series,
                                         mu0, sigma0, jitter, record)
    mu = np.array(mu0, dtype=np.float64)
    sigma = np.array(sigma0, dtype=np.float64)
    n_steps = len(u1_series) - 1
    mus = np.empty((n_steps if record else 0, len(f2)))
    sigmas = np.empty((n_steps if record else 0, len(f2), len(f2)))
    for t in range(n_steps):
        mu, sigma = _step_np(f1, g1, f2, g2, r1, r2, u1_series[t + 1],
                             mu, sigma, jitter)
        if record:
            mus[t] = mu
            sigmas[t] = sigma
    if record:
        return mus, sigmas
    return mu, sigma


# differentiable window recursion -------------------------------------------

def filter_window_t(tape, eta_nodes, spec, u1_series, mu0, sigma0,
                    sigma1, sigma2, jitter=DEFAULT_JITTER):
    """Taped filter recursion over a batch of windows.

    u1_series: (B, N+1, d1) array; mu0 (B, d_v), sigma0 (B, d_v, d_v).
    sigma1/sigma2 may be Nodes (trainable diagonals) or plain arrays.
    Returns the list of (mu, sigma) node pairs, one per step.
    """
    d1, dv = spec.d1, spec.d_v
    u1_series = np.asarray(u1_series, dtype=np.float64)
    n_steps = u1_series.shape[1] - 1

    if isinstance(sigma1, ad.Node):
        r1 = ad.add(ad.diag(ad.square(sigma1)), tape.const(jitter * np.eye(d1)))
    else:
        r1 = tape.const(np.diag(np.asarray(sigma1) ** 2) + jitter * np.eye(d1))
    if isinstance(sigma2, ad.Node):
        r2 = ad.diag(ad.square(sigma2))
    else:
        r2 = tape.const(np.diag(np.asarray(sigma2) ** 2))

    mu = mu0 if isinstance(mu0, ad.Node) else tape.const(mu0)
    sigma = sigma0 if isinstance(sigma0, ad.Node) else tape.const(sigma0)
    out = []
    for t in range(n_steps):
        u1_now = tape.const(u1_series[:, t, :])
        u1_next = tape.const(u1_series[:, t + 1, :])
        f1, g1, f2, g2 = cgkn.coeffs_t(tape, eta_nodes, u1_now, spec)
        g1t = ad.transpose(g1)
        g2t = ad.transpose(g2)
        s_mat = ad.add(ad.matmul(g1, ad.matmul(sigma, g1t)), r1)
        cross = ad.matmul(g1, ad.matmul(sigma, g2t))  # (B, d1, dv) = (G2 S G1^T)^T
        kt = ad.solve_spd(s_mat, cross)  # K^T
        innov = ad.sub(u1_next, ad.add(f1, ad.bmatvec(g1, mu)))
        mu = ad.add(ad.add(f2, ad.bmatvec(g2, mu)),
                    ad.bmatvec(ad.transpose(kt), innov))
        sig_prop = ad.add(ad.matmul(g2, ad.matmul(sigma, g2t)), r2)
        sigma = ad.symmetrize(ad.sub(sig_prop, ad.matmul(ad.transpose(kt), cross)))
        out.append((mu, sigma))
    return out


# external interfaces --------------------------------------------------------

def write_filter_log(path, run, sigma_diag_path=None):
    """CSV log: step, warmup_flag, mu entries; optional Sigma diagonals dump."""
    lines = []
    d_v = run.beliefs[0].mu.shape[0] if run.beliefs else 0
    header = "step,warmup_flag," + ",".join(f"mu_{i}" for i in range(d_v))
    lines.append(header)
    for t, belief in enumerate(run.beliefs):
        flag = 1 if t < run.n_warmup else 0
        mu_txt = ",".join(repr(float(x)) for x in belief.mu)
        lines.append(f"{t},{flag},{mu_txt}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    if sigma_diag_path is not None:
        diags = np.stack([np.diag(b.sigma) for b in run.beliefs])
        nc.write_cgt(sigma_diag_path, diags)


@dataclass
class ProbeRow:
    d_v: int
    seconds_compiled: float
    seconds_python: float


def filter_complexity_probe(dv_values, n_steps=1000, d1=4, seed=0,
                            include_python=True):
    """Time constant-coefficient filter runs across latent dimensions.

    Returns (rows, slope): per-d_v wall times for both backends and the
    log-log slope of the active backend's times against d_v.
    """
    rows = []
    for d_v in dv_values:
        rng = nc.RngStream(nc.derive_seed(seed, "probe", d_v))
        g1 = rng.gaussian((d1, d_v)) * 0.5
        q, _ = np.linalg.qr(rng.gaussian((d_v, d_v)))
        g2 = 0.6 * q
        f1 = rng.gaussian((d1,)) * 0.1
        f2 = rng.gaussian((d_v,)) * 0.1
        r1 = np.full(d1, 0.5)
        r2 = np.full(d_v, 0.04)
        u1_series = rng.gaussian((n_steps + 1, d1))
        mu0 = np.zeros(d_v)
        sigma0 = np.eye(d_v)

        def run(backend):
            best = np.inf
            for _ in range(3):
                t0 = time.perf_counter()
                filter_run_const(f1, g1, f2, g2, r1, r2, u1_series, mu0,
                                 sigma0, backend=backend, record=False)
                best = min(best, time.perf_counter() - t0)
            return best

        t_compiled = run("compiled") if HAVE_KERNELS else float("nan")
        t_python = run("python") if include_python else float("nan")
        rows.append(ProbeRow(d_v=int(d_v), seconds_compiled=t_compiled,
                             seconds_python=t_python))
    times = [r.seconds_compiled if HAVE_KERNELS else r.seconds_python
             for r in rows]
    slope = float(np.polyfit(np.log([r.d_v for r in rows]), np.log(times), 1)[0])
    return rows, slope
