"""Truth-data generation: spectral solvers for viscous Burgers and
Kuramoto-Sivashinsky on periodic grids, Gaussian-random-field initial
conditions, and dataset packaging (sub-sampling, observation masks,
measurement noise).

Both PDEs are semi-linear with a diagonal linear part in Fourier space, so
one ETDRK4 integrator (Kassam-Trefethen contour coefficients) serves both;
the quadratic nonlinearity -u u_x is evaluated pseudo-spectrally with
2/3-rule dealiasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numcore as nc
from .errors import ConfigError, DivergenceError, ShapeError

DATASET_SCHEMA = 1


@dataclass(frozen=True)
class GridSpec:
    """Periodic 1-D grid with a power-of-two point count."""

    l_x: float
    n: int

    def __post_init__(self):
        if self.n < 2 or (self.n & (self.n - 1)) != 0:
            raise ConfigError(f"grid size {self.n} is not a power of two")
        if self.l_x <= 0:
            raise ConfigError("domain length must be positive")

    @property
    def dx(self):
        return self.l_x / self.n

    @property
    def x(self):
        return np.arange(self.n) * self.dx


@dataclass
class SolveConfig:
    dt_internal: float
    t_final: float
    subsample_dt: float = None
    subsample_nx: int = 1
    viscosity: float = None

    def n_steps(self):
        steps = self.t_final / self.dt_internal
        if abs(steps - round(steps)) > 1e-9:
            raise ConfigError("t_final must be a multiple of dt_internal")
        return int(round(steps))

    def stride_t(self):
        if self.subsample_dt is None:
            return 1
        ratio = self.subsample_dt / self.dt_internal
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("subsample_dt must be a multiple of dt_internal")
        return int(round(ratio))


@dataclass
class TrajectoryDataset:
    """Sub-sampled trajectories with grid/observation metadata.

    states has shape (n_traj, n_steps, d); single-trajectory data uses
    n_traj = 1.
    """

    states: np.ndarray
    grid: GridSpec
    obs_indices: tuple
    noise_std: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim == 2:
            self.states = self.states[None]
        if self.states.ndim != 3:
            raise ShapeError(f"states must be (R, T, d), got {self.states.shape}")
        if self.states.shape[1] < 2:
            raise ConfigError("need at least two time steps")
        d = self.states.shape[2]
        obs = tuple(int(i) for i in self.obs_indices)
        if any(i < 0 or i >= d for i in obs):
            raise ConfigError("observation index out of range")
        self.obs_indices = obs

    @property
    def d(self):
        return self.states.shape[2]

    @property
    def unobserved_indices(self):
        mask = np.ones(self.d, dtype=bool)
        mask[list(self.obs_indices)] = False
        return tuple(np.nonzero(mask)[0])

    def observed(self):
        return self.states[:, :, list(self.obs_indices)]

    def unobserved(self):
        return self.states[:, :, list(self.unobserved_indices)]


def grf_mode_variance(grid, k):
    """Spectral variance of mode k for the N(0, 625(-Lap + 25 I)^-2) field."""
    w = (2.0 * np.pi * k / grid.l_x) ** 2
    return 625.0 / (w + 25.0) ** 2


def sample_grf(grid, rng):
    """Draw one real periodic field from the squared-inverse-Laplacian GP."""
    n = grid.n
    z = rng.gaussian((n,))
    c = np.zeros(n, dtype=np.complex128)
    c[0] = np.sqrt(grf_mode_variance(grid, 0)) * z[0]
    half = n // 2
    for k in range(1, half):
        amp = np.sqrt(grf_mode_variance(grid, k) / 2.0)
        c[k] = amp * (z[2 * k - 1] + 1j * z[2 * k])
        c[n - k] = np.conj(c[k])
    c[half] = np.sqrt(grf_mode_variance(grid, half)) * z[n - 1]
    return (np.fft.ifft(c * n)).real


def wavenumbers(grid):
    """Angular wavenumbers in fft order: 2*pi*j/L for j = 0..n/2, -n/2+1..-1."""
    return 2.0 * np.pi * np.fft.fftfreq(grid.n, d=1.0 / grid.n) / grid.l_x


def dealias_mask(n):
    """Keep |mode| <= n//3: the top third of modes is zeroed (2/3 rule)."""
    j = np.fft.fftfreq(n, d=1.0 / n)
    return np.abs(j) <= n // 3


def quadratic_advection_hat(u_hat, k, mask):
    """Spectral -u u_x = -(u^2/2)_x with dealiased physical-space product."""
    u = np.fft.ifft(u_hat).real
    sq_hat = np.fft.fft(u * u)
    return -0.5j * k * (sq_hat * mask)


class Etdrk4:
    """Fourth-order exponential time differencing for u_hat' = L u_hat + N(u_hat).

    L is a diagonal (per-mode) linear symbol; the phi-function coefficients
    are evaluated by the standard contour-integral mean over roots of unity.
    """

    def __init__(self, linear_symbol, dt, n_contour=32):
        lin = np.asarray(linear_symbol, dtype=np.float64)
        self.dt = dt
        self.e_full = np.exp(dt * lin)
        self.e_half = np.exp(0.5 * dt * lin)
        r = np.exp(1j * np.pi * (np.arange(n_contour) + 0.5) / n_contour)
        lr = dt * lin[:, None] + r[None, :]
        elr = np.exp(lr)
        self.q = dt * ((np.exp(lr / 2.0) - 1.0) / lr).mean(axis=1).real
        self.f1 = dt * ((-4.0 - lr + elr * (4.0 - 3.0 * lr + lr ** 2)) / lr ** 3).mean(axis=1).real
        self.f2 = dt * ((2.0 + lr + elr * (lr - 2.0)) / lr ** 3).mean(axis=1).real
        self.f3 = dt * ((-4.0 - 3.0 * lr - lr ** 2 + elr * (4.0 - lr)) / lr ** 3).mean(axis=1).real

    def step(self, v, nonlin):
        n_v = nonlin(v)
        a = self.e_half * v + self.q * n_v
        n_a = nonlin(a)
        b = self.e_half * v + self.q * n_a
        n_b = nonlin(b)
        c = self.e_half * a + self.q * (2.0 * n_b - n_v)
        n_c = nonlin(c)
        return (self.e_full * v + self.f1 * n_v + 2.0 * self.f2 * (n_a + n_b)
                + self.f3 * n_c)


def _integrate(u0, grid, config, linear_symbol):
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.shape != (grid.n,):
        raise ShapeError(f"initial condition must have shape ({grid.n},)")
    k = wavenumbers(grid)
    mask = dealias_mask(grid.n)
    stepper = Etdrk4(linear_symbol, config.dt_internal)
    nonlin = lambda v: quadratic_advection_hat(v, k, mask)
    n_steps = config.n_steps()
    states = np.empty((n_steps + 1, grid.n))
    states[0] = u0
    v = np.fft.fft(u0)
    for t in range(n_steps):
        v = stepper.step(v, nonlin)
        u = np.fft.ifft(v).real
        if not np.all(np.isfinite(u)):
            raise DivergenceError(f"solver blew up at internal step {t + 1}",
                                  step_index=t + 1)
        states[t + 1] = u
    return states


def solve_burgers(u0, grid, config):
    """Viscous Burgers u_t = -u u_x + nu u_xx; returns internal-step states."""
    if config.viscosity is None or config.viscosity <= 0:
        raise ConfigError("Burgers needs viscosity > 0")
    k = wavenumbers(grid)
    return _integrate(u0, grid, config, -config.viscosity * k ** 2)


def solve_ks(u0, grid, config):
    """Kuramoto-Sivashinsky u_t = -u u_x - u_xx - u_xxxx."""
    k = wavenumbers(grid)
    return _integrate(u0, grid, config, k ** 2 - k ** 4)


def ks_preset_ic(grid):
    """The canonical chaotic-regime initial profile (as printed, x/16 waves)."""
    x = grid.x
    return 0.1 * np.cos(x / 16.0) * (1.0 + 2.0 * np.sin(x / 16.0))


def make_forward_model(pde, grid, dt_internal, horizon, viscosity=None):
    """Closure advancing one state by ``horizon`` with internal substeps.

    Used as the EnKF forward model; the integrator tables are built once.
    """
    k = wavenumbers(grid)
    mask = dealias_mask(grid.n)
    if pde == "burgers":
        if viscosity is None or viscosity <= 0:
            raise ConfigError("Burgers forward model needs viscosity > 0")
        lin = -viscosity * k ** 2
    elif pde == "ks":
        lin = k ** 2 - k ** 4
    else:
        raise ConfigError(f"unknown pde {pde!r}")
    ratio = horizon / dt_internal
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigError("horizon must be a multiple of dt_internal")
    n_sub = int(round(ratio))
    stepper = Etdrk4(lin, dt_internal)

    def forward(u):
        v = np.fft.fft(u)
        for _ in range(n_sub):
            v = stepper.step(v, lambda w: quadratic_advection_hat(w, k, mask))
        return np.fft.ifft(v).real

    return forward


def uniform_obs_indices(d, count):
    """count indices uniformly spaced over a periodic grid, starting at 0."""
    if count < 1 or d % count != 0:
        raise ConfigError(f"{count} observed points do not divide grid size {d}")
    return tuple(range(0, d, d // count))


def make_dataset(traj, grid, stride_t, stride_x, obs_indices, noise_std, rng,
                 meta=None):
    """Package solver output: stride sub-sampling, then i.i.d. noise on all
    states (train and test alike), with the observation mask recorded."""
    traj = np.asarray(traj, dtype=np.float64)
    if traj.ndim == 2:
        traj = traj[None]
    if grid.n % stride_x != 0:
        raise ConfigError(f"spatial stride {stride_x} does not divide n={grid.n}")
    if stride_t < 1 or (traj.shape[1] - 1) % stride_t != 0:
        raise ConfigError(f"time stride {stride_t} does not divide step count "
                          f"{traj.shape[1] - 1}")
    states = traj[:, ::stride_t, ::stride_x].copy()
    if noise_std > 0:
        states += noise_std * rng.gaussian(states.shape)
    sub_grid = GridSpec(l_x=grid.l_x, n=grid.n // stride_x)
    return TrajectoryDataset(states=states, grid=sub_grid,
                             obs_indices=tuple(obs_indices),
                             noise_std=float(noise_std), meta=dict(meta or {}))


def save_dataset(out_dir, dataset):
    """Dataset directory: states.cgt (rank-3) + manifest.json."""
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    nc.write_cgt(path / "states.cgt", dataset.states)
    manifest = {
        "schema": DATASET_SCHEMA,
        "l_x": dataset.grid.l_x,
        "d": dataset.grid.n,
        "n_traj": int(dataset.states.shape[0]),
        "n_steps": int(dataset.states.shape[1]),
        "obs_indices": list(dataset.obs_indices),
        "obs_indices_one_based": [i + 1 for i in dataset.obs_indices],
        "noise_std": dataset.noise_std,
        "meta": dataset.meta,
    }
    nc.write_json(path / "manifest.json", manifest)
    return path


def load_dataset(ds_dir):
    path = Path(ds_dir)
    manifest = nc.read_json(path / "manifest.json")
    if manifest.get("schema") != DATASET_SCHEMA:
        raise ConfigError(f"unsupported dataset schema {manifest.get('schema')}")
    states = nc.read_cgt(path / "states.cgt")
    grid = GridSpec(l_x=manifest["l_x"], n=manifest["d"])
    return TrajectoryDataset(states=states, grid=grid,
                             obs_indices=tuple(manifest["obs_indices"]),
                             noise_std=manifest["noise_std"],
                             meta=manifest.get("meta", {}))
