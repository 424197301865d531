"""Shared toy conditional-Gaussian system: a known linear instance of the
surrogate family, used to test identifiability end to end."""

import numpy as np

from cgkoop import cgfilter, cgkn
from cgkoop.numcore import RngStream


def make_toy_params():
    """Stable linear system with identity latent embedding (u2 == v)."""
    spec = cgkn.StateSpec(d=4, d1=2, d2=2, d_v=2, observed_indices=(0, 1))
    a11 = np.array([[0.60, 0.10], [-0.10, 0.55]])
    g1 = np.array([[0.50, 0.00], [0.20, 0.45]])
    a21 = np.array([[0.10, -0.20], [0.15, 0.00]])
    g2 = np.array([[0.70, 0.20], [-0.15, 0.60]])
    big = np.block([[a11, g1], [a21, g2]])
    assert np.abs(np.linalg.eigvals(big)).max() < 0.95
    w = np.zeros((spec.coeff_len, 2))
    w[:2, :] = a11
    w[2 + 4:2 + 4 + 2, :] = a21
    bias = cgkn.pack_coeffs(spec, np.zeros(2), g1, np.zeros(2), g2)
    params = cgkn.CGKNParams(
        spec=spec,
        encoder=[(np.eye(2), np.zeros(2))],
        decoder=[(np.eye(2), np.zeros(2))],
        eta=[(w, bias)],
        sigma1=np.array([0.05, 0.06]),
        sigma2=np.array([0.04, 0.05]),
    )
    return params


def simulate(params, n_steps, seed):
    """Sample a trajectory of the toy system; returns states (n_steps+1, d)."""
    rng = RngStream(seed)
    u1 = 0.5 * rng.gaussian((params.spec.d1,))
    v = 0.5 * rng.gaussian((params.spec.d_v,))
    states = [params.spec.merge(u1, cgkn.decode(params, v))]
    for _ in range(n_steps):
        u1, v = cgkn.step_sample(params, u1, v, rng)
        states.append(params.spec.merge(u1, cgkn.decode(params, v)))
    return np.stack(states)


def oracle_da_mse(true_params, states, n_warmup):
    """DA error of the filter that knows the true system."""
    spec = true_params.spec
    u1_series = states[:, list(spec.observed_indices)]
    u2_true = states[:, list(spec.unobserved_indices)]
    run = cgfilter.filter_run(true_params, u1_series, warmup=n_warmup)
    decoded = cgkn.decode(true_params, run.mus)
    diff = decoded[n_warmup:] - u2_true[1 + n_warmup:]
    return float(np.mean(diff ** 2))


def model_da_mse(params, states, n_warmup):
    spec = params.spec
    u1_series = states[:, list(spec.observed_indices)]
    u2_true = states[:, list(spec.unobserved_indices)]
    run = cgfilter.filter_run(params, u1_series, warmup=n_warmup)
    decoded = cgkn.decode(params, run.mus)
    diff = decoded[n_warmup:] - u2_true[1 + n_warmup:]
    return float(np.mean(diff ** 2))
