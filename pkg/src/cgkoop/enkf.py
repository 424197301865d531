"""Perturbed-observation ensemble Kalman filter baseline.

Applied to the true discrete dynamics on a periodic grid, with constant
multiplicative inflation of ensemble deviations and Gaspari-Cohn tapering
of the state-observation sample covariance.  Members advance one at a time
through the forward model (which may substep internally); the analysis
updates every member with independently perturbed observations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numcore as nc
from .errors import ConfigError, NumericalError

INNOVATION_REG = 1e-8


@dataclass
class Ensemble:
    members: np.ndarray  # (J, d)

    def __post_init__(self):
        self.members = np.asarray(self.members, dtype=np.float64)
        if self.members.ndim != 2 or self.members.shape[0] < 2:
            raise ConfigError(f"ensemble must be (J >= 2, d), got {self.members.shape}")

    @property
    def size(self):
        return self.members.shape[0]

    def mean(self):
        return self.members.mean(axis=0)

    def std(self):
        return self.members.std(axis=0, ddof=1)


@dataclass
class EnKFConfig:
    ensemble_size: int
    obs_indices: tuple
    obs_noise_std: float
    forward_model: object = None  # callable state (d,) -> (d,)
    inflation: float = 1.0
    localization_radius: float = 0.0  # grid units; <= 0 disables tapering

    def __post_init__(self):
        if self.ensemble_size < 2:
            raise ConfigError("ensemble size must be >= 2")
        if self.inflation < 1.0:
            raise ConfigError("inflation must be >= 1")
        if self.obs_noise_std < 0:
            raise ConfigError("observation noise std must be >= 0")


def gaspari_cohn(r):
    """Fifth-order piecewise-polynomial compactly supported correlation.

    Support is [0, 2): gc(0) = 1 and gc(r) = 0 for r >= 2.
    """
    r = np.abs(np.asarray(r, dtype=np.float64))
    out = np.zeros_like(r)
    near = r <= 1.0
    far = (r > 1.0) & (r < 2.0)
    rn = r[near]
    out[near] = (-0.25 * rn ** 5 + 0.5 * rn ** 4 + 0.625 * rn ** 3
                 - (5.0 / 3.0) * rn ** 2 + 1.0)
    rf = r[far]
    out[far] = ((1.0 / 12.0) * rf ** 5 - 0.5 * rf ** 4 + 0.625 * rf ** 3
                + (5.0 / 3.0) * rf ** 2 - 5.0 * rf + 4.0 - (2.0 / 3.0) / rf)
    return out if out.ndim else float(out)


def periodic_distance(n, i, j):
    """Grid-index distance on a ring of n points."""
    diff = np.abs(np.asarray(i) - np.asarray(j))
    return np.minimum(diff, n - diff)


def localization_taper(d, obs_indices, radius):
    """(d, d1) Gaspari-Cohn taper of state-to-observation distances."""
    idx = np.arange(d)[:, None]
    obs = np.asarray(obs_indices)[None, :]
    dist = periodic_distance(d, idx, obs)
    return gaspari_cohn(dist / float(radius))


def inflate(members, rho):
    """Scale deviations about the ensemble mean by rho (rho = 1 is a no-op)."""
    if rho == 1.0:
        return members
    mean = members.mean(axis=0)
    return mean + rho * (members - mean)


def enkf_forecast(ensemble, forward_model):
    """Advance each member independently through the forward model."""
    members = ensemble.members
    out = np.empty_like(members)
    for i in range(members.shape[0]):
        try:
            out[i] = forward_model(members[i])
        except Exception as err:
            raise NumericalError(f"forward model failed for member {i}: {err}",
                                 step_index=i) from None
        if not np.all(np.isfinite(out[i])):
            raise NumericalError(f"member {i} blew up in the forecast",
                                 step_index=i)
    return Ensemble(members=out)


def enkf_analysis(ensemble, obs, config, rng):
    """Perturbed-observation analysis with inflation and localization."""
    obs = np.asarray(obs, dtype=np.float64)
    if not np.all(np.isfinite(obs)):
        raise ConfigError("observations must be finite")
    members = inflate(ensemble.members, config.inflation)
    j, d = members.shape
    obs_idx = list(config.obs_indices)
    d1 = len(obs_idx)

    mean = members.mean(axis=0)
    dev = members - mean
    obs_dev = dev[:, obs_idx]
    p_xy = dev.T @ obs_dev / (j - 1)  # (d, d1)
    p_yy = obs_dev.T @ obs_dev / (j - 1)  # (d1, d1)
    if config.localization_radius > 0:
        p_xy = p_xy * localization_taper(d, obs_idx, config.localization_radius)

    r_cov = np.full(d1, config.obs_noise_std ** 2)
    s = p_yy + np.diag(r_cov) + INNOVATION_REG * np.eye(d1)
    try:
        kt = nc.solve_spd(s, p_xy.T)  # K^T, (d1, d)
    except NumericalError as err:
        raise NumericalError(f"innovation covariance singular: {err}",
                             pivot_index=err.pivot_index) from None

    perturbations = config.obs_noise_std * rng.gaussian((j, d1))
    innovations = obs[None, :] + perturbations - members[:, obs_idx]
    return Ensemble(members=members + innovations @ kt)


def enkf_run(config, obs_series, init_ensemble, rng):
    """Alternate analysis/forecast over an observed series of shape (N+1, d1).

    The first observation is assimilated into the initial ensemble; each
    later step forecasts then assimilates.  Returns posterior means and
    ensemble stds, both (N+1, d).
    """
    obs_series = np.asarray(obs_series, dtype=np.float64)
    ens = Ensemble(members=np.asarray(init_ensemble, dtype=np.float64))
    n_steps = obs_series.shape[0]
    means = np.empty((n_steps, ens.members.shape[1]))
    stds = np.empty_like(means)
    for t in range(n_steps):
        if t > 0:
            ens = enkf_forecast(ens, config.forward_model)
        ens = enkf_analysis(ens, obs_series[t], config, rng)
        means[t] = ens.mean()
        stds[t] = ens.std()
    return means, stds
