"""Conditional-Gaussian Koopman surrogate model.

The model advances observed states u1 and a latent representation v of the
unobserved states u2 with maps that are nonlinear in u1 but linear in v:

    u1' = F1(u1) + G1(u1) v + sigma1 * eps1
    v'  = F2(u1) + G2(u1) v + sigma2 * eps2

An encoder maps u2 -> v, a decoder maps v -> u2, and a single sub-network
maps u1 to the packed coefficient block (F1, G1, F2, G2).  All networks
are tanh MLPs; an empty hidden list degenerates to a plain affine map.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import numcore as nc
from .errors import ConfigError, DivergenceError, ShapeError

CHECKPOINT_SCHEMA = 1


@dataclass(frozen=True)
class StateSpec:
    """Dimensions of the partitioned state and the latent space."""

    d: int
    d1: int
    d2: int
    d_v: int
    observed_indices: tuple = ()

    def __post_init__(self):
        if self.d1 + self.d2 != self.d:
            raise ConfigError(f"d1 + d2 = {self.d1 + self.d2} != d = {self.d}")
        if self.d_v < 1:
            raise ConfigError("d_v must be >= 1")
        obs = tuple(int(i) for i in self.observed_indices)
        if len(obs) != self.d1:
            raise ConfigError(f"{len(obs)} observed indices for d1 = {self.d1}")
        if any(b <= a for a, b in zip(obs, obs[1:])):
            raise ConfigError("observed indices must be strictly increasing")
        if obs and (obs[0] < 0 or obs[-1] >= self.d):
            raise ConfigError("observed index out of range")
        object.__setattr__(self, "observed_indices", obs)

    @property
    def unobserved_indices(self):
        mask = np.ones(self.d, dtype=bool)
        mask[list(self.observed_indices)] = False
        return tuple(np.nonzero(mask)[0])

    @property
    def coeff_len(self):
        return self.d1 + self.d1 * self.d_v + self.d_v + self.d_v * self.d_v

    def split(self, u):
        """Full state (..., d) -> (u1, u2)."""
        u = np.asarray(u)
        return u[..., list(self.observed_indices)], u[..., list(self.unobserved_indices)]

    def merge(self, u1, u2):
        """(u1, u2) -> full state (..., d)."""
        u1 = np.asarray(u1)
        u2 = np.asarray(u2)
        out = np.empty(u1.shape[:-1] + (self.d,))
        out[..., list(self.observed_indices)] = u1
        out[..., list(self.unobserved_indices)] = u2
        return out

    def to_json(self):
        return {
            "d": self.d, "d1": self.d1, "d2": self.d2, "d_v": self.d_v,
            "observed_indices": list(self.observed_indices),
        }

    @staticmethod
    def from_json(obj):
        return StateSpec(obj["d"], obj["d1"], obj["d2"], obj["d_v"],
                         tuple(obj["observed_indices"]))


@dataclass
class StateVector:
    u1: np.ndarray
    u2: np.ndarray


@dataclass
class CGCoeffs:
    f1: np.ndarray
    g1: np.ndarray
    f2: np.ndarray
    g2: np.ndarray


@dataclass
class CGKNParams:
    """All trainable parameters plus the noise diagonals."""

    spec: StateSpec
    encoder: list  # [(W, b), ...] with W of shape (out, in)
    decoder: list
    eta: list
    sigma1: np.ndarray = field(default=None)
    sigma2: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.sigma1 is None:
            self.sigma1 = np.zeros(self.spec.d1)
        if self.sigma2 is None:
            self.sigma2 = np.zeros(self.spec.d_v)
        self.sigma1 = np.asarray(self.sigma1, dtype=np.float64)
        self.sigma2 = np.asarray(self.sigma2, dtype=np.float64)
        if np.any(self.sigma1 < 0) or np.any(self.sigma2 < 0):
            raise ConfigError("noise diagonals must be nonnegative")


def init_mlp(dims, rng, gain=1.0):
    """Layer list for an MLP through the given dims chain (LeCun normal)."""
    layers = []
    for din, dout in zip(dims[:-1], dims[1:]):
        scale = gain / np.sqrt(max(din, 1))
        w = rng.gaussian((dout, din)) * scale
        b = np.zeros(dout)
        layers.append((w, b))
    return layers


def init_params(spec, encoder_hidden, eta_hidden, rng, decoder_hidden=None):
    """Fresh CGKNParams with tanh MLPs sized from the hidden-width lists."""
    if decoder_hidden is None:
        decoder_hidden = list(reversed(encoder_hidden))
    enc_dims = [spec.d2] + list(encoder_hidden) + [spec.d_v]
    dec_dims = [spec.d_v] + list(decoder_hidden) + [spec.d2]
    eta_dims = [spec.d1] + list(eta_hidden) + [spec.coeff_len]
    return CGKNParams(
        spec=spec,
        encoder=init_mlp(enc_dims, rng.split("encoder")),
        decoder=init_mlp(dec_dims, rng.split("decoder")),
        eta=init_mlp(eta_dims, rng.split("eta")),
    )


def mlp_forward(layers, x):
    """Plain numpy MLP forward; tanh on all but the final layer."""
    h = np.asarray(x, dtype=np.float64)
    for i, (w, b) in enumerate(layers):
        h = h @ w.T + b
        if i < len(layers) - 1:
            h = np.tanh(h)
    return h


def mlp_forward_t(tape, layer_nodes, x):
    """Taped MLP forward over (..., d_in) input nodes."""
    h = x
    for i, (wn, bn) in enumerate(layer_nodes):
        h = ad.add(ad.matmul(h, ad.transpose(wn)), bn)
        if i < len(layer_nodes) - 1:
            h = ad.tanh(h)
    return h


def encode(params, u2):
    """u2 (..., d2) -> latent v (..., d_v)."""
    u2 = np.asarray(u2)
    if u2.shape[-1] != params.spec.d2:
        raise ShapeError(f"encode expects trailing dim {params.spec.d2}, got {u2.shape}")
    return mlp_forward(params.encoder, u2)


def decode(params, v):
    """Latent v (..., d_v) -> u2 (..., d2)."""
    v = np.asarray(v)
    if v.shape[-1] != params.spec.d_v:
        raise ShapeError(f"decode expects trailing dim {params.spec.d_v}, got {v.shape}")
    return mlp_forward(params.decoder, v)


def _split_coeffs(spec, y):
    d1, dv = spec.d1, spec.d_v
    i0, i1 = d1, d1 + d1 * dv
    i2, i3 = i1 + dv, i1 + dv + dv * dv
    f1 = y[..., :i0]
    g1 = y[..., i0:i1].reshape(y.shape[:-1] + (d1, dv))
    f2 = y[..., i1:i2]
    g2 = y[..., i2:i3].reshape(y.shape[:-1] + (dv, dv))
    return f1, g1, f2, g2


def coeffs(params, u1):
    """u1 (..., d1) -> CGCoeffs; the packed output is split row-major."""
    u1 = np.asarray(u1, dtype=np.float64)
    if u1.shape[-1] != params.spec.d1:
        raise ShapeError(f"coeffs expects trailing dim {params.spec.d1}, got {u1.shape}")
    y = mlp_forward(params.eta, u1)
    if y.shape[-1] != params.spec.coeff_len:
        raise ConfigError(
            f"eta output length {y.shape[-1]} != required {params.spec.coeff_len}")
    return CGCoeffs(*_split_coeffs(params.spec, y))


def coeffs_t(tape, eta_nodes, u1, spec):
    """Taped coefficients for batched u1 (B, d1); returns node 4-tuple."""
    y = mlp_forward_t(tape, eta_nodes, u1)
    d1, dv = spec.d1, spec.d_v
    batch = y.shape[:-1]
    i0, i1 = d1, d1 + d1 * dv
    i2, i3 = i1 + dv, i1 + dv + dv * dv
    ax = len(batch)
    f1 = ad.slice_axis(y, ax, 0, d1)
    g1 = ad.reshape(ad.slice_axis(y, ax, i0, i1 - i0), batch + (d1, dv))
    f2 = ad.slice_axis(y, ax, i1, dv)
    g2 = ad.reshape(ad.slice_axis(y, ax, i2, i3 - i2), batch + (dv, dv))
    return f1, g1, f2, g2


def step_mean(params, u1, v):
    """Noise-free transition: (u1, v) -> (u1', v'); batched over leading axes."""
    c = coeffs(params, u1)
    v = np.asarray(v, dtype=np.float64)
    u1n = c.f1 + np.einsum("...ij,...j->...i", c.g1, v)
    vn = c.f2 + np.einsum("...ij,...j->...i", c.g2, v)
    return u1n, vn


def step_sample(params, u1, v, rng):
    """One stochastic transition with diagonal Gaussian noise."""
    u1n, vn = step_mean(params, u1, v)
    u1n = u1n + params.sigma1 * rng.gaussian(u1n.shape)
    vn = vn + params.sigma2 * rng.gaussian(vn.shape)
    return u1n, vn


def forecast(params, initial, n_steps):
    """Roll the conditional mean forward; emits n_steps decoded states."""
    if n_steps < 1:
        raise ConfigError("n_steps must be >= 1")
    u1 = np.asarray(initial.u1, dtype=np.float64)
    v = encode(params, np.asarray(initial.u2, dtype=np.float64))
    out = []
    for step in range(n_steps):
        u1, v = step_mean(params, u1, v)
        if not (np.all(np.isfinite(u1)) and np.all(np.isfinite(v))):
            raise DivergenceError(f"forecast diverged at step {step + 1}",
                                  step_index=step + 1)
        out.append(StateVector(u1=u1.copy(), u2=decode(params, v)))
    return out


def pack_coeffs(spec, f1, g1, f2, g2):
    """Flatten (F1, G1, F2, G2) into the eta output layout (row-major)."""
    f1 = np.asarray(f1, dtype=np.float64).reshape(spec.d1)
    g1 = np.asarray(g1, dtype=np.float64).reshape(spec.d1, spec.d_v)
    f2 = np.asarray(f2, dtype=np.float64).reshape(spec.d_v)
    g2 = np.asarray(g2, dtype=np.float64).reshape(spec.d_v, spec.d_v)
    return np.concatenate([f1.ravel(), g1.ravel(), f2.ravel(), g2.ravel()])


def constant_coeff_params(spec, f1, g1, f2, g2, sigma1=None, sigma2=None,
                          encoder=None, decoder=None):
    """Params whose eta ignores u1 (zero weights, coefficient block as bias).

    Encoder/decoder default to identity affine maps, which requires
    d2 == d_v.
    """
    bias = pack_coeffs(spec, f1, g1, f2, g2)
    eta = [(np.zeros((spec.coeff_len, spec.d1)), bias)]
    if encoder is None:
        if spec.d2 != spec.d_v:
            raise ConfigError("identity encoder needs d2 == d_v")
        encoder = [(np.eye(spec.d_v), np.zeros(spec.d_v))]
    if decoder is None:
        if spec.d2 != spec.d_v:
            raise ConfigError("identity decoder needs d2 == d_v")
        decoder = [(np.eye(spec.d2), np.zeros(spec.d2))]
    return CGKNParams(spec=spec, encoder=encoder, decoder=decoder, eta=eta,
                      sigma1=sigma1, sigma2=sigma2)


# checkpoint io --------------------------------------------------------------

_NET_ROLES = ("encoder", "decoder", "eta")


def save_checkpoint(ckpt_dir, params, uq_layers=None, extra=None):
    """Write params (and optional UQ net) as CGT1 tensors plus a manifest."""
    path = Path(ckpt_dir)
    path.mkdir(parents=True, exist_ok=True)
    tensors = []

    def dump(role, layer, kind, arr):
        fname = f"{role}_{layer}_{kind}.cgt"
        nc.write_cgt(path / fname, arr)
        tensors.append({"file": fname, "role": role, "layer": layer, "kind": kind})

    for role in _NET_ROLES:
        for i, (w, b) in enumerate(getattr(params, role)):
            dump(role, i, "weight", w)
            dump(role, i, "bias", b)
    dump("sigma1", 0, "diag", params.sigma1)
    dump("sigma2", 0, "diag", params.sigma2)
    if uq_layers is not None:
        for i, (w, b) in enumerate(uq_layers):
            dump("uq", i, "weight", w)
            dump("uq", i, "bias", b)
    manifest = {
        "schema": CHECKPOINT_SCHEMA,
        "state_spec": params.spec.to_json(),
        "tensors": tensors,
    }
    if extra:
        manifest.update(extra)
    nc.write_json(path / "manifest.json", manifest)
    return path


def load_checkpoint(ckpt_dir):
    """Read a checkpoint directory; returns (CGKNParams, uq_layers or None)."""
    path = Path(ckpt_dir)
    manifest = nc.read_json(path / "manifest.json")
    if manifest.get("schema") != CHECKPOINT_SCHEMA:
        raise ConfigError(f"unsupported checkpoint schema {manifest.get('schema')}")
    spec = StateSpec.from_json(manifest["state_spec"])
    nets = {role: {} for role in _NET_ROLES + ("uq",)}
    sigma = {}
    for entry in manifest["tensors"]:
        arr = nc.read_cgt(path / entry["file"])
        role, layer, kind = entry["role"], entry["layer"], entry["kind"]
        if role in ("sigma1", "sigma2"):
            sigma[role] = arr
        else:
            nets[role].setdefault(layer, {})[kind] = arr

    def collect(role):
        layers = nets[role]
        return [(layers[i]["weight"], layers[i]["bias"]) for i in sorted(layers)]

    params = CGKNParams(
        spec=spec,
        encoder=collect("encoder"),
        decoder=collect("decoder"),
        eta=collect("eta"),
        sigma1=sigma["sigma1"],
        sigma2=sigma["sigma2"],
    )
    uq_layers = collect("uq") if nets["uq"] else None
    return params, uq_layers
