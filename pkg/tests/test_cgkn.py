import numpy as np
import pytest

from cgkoop import cgkn
from cgkoop.errors import ConfigError, DivergenceError
from cgkoop.numcore import RngStream


def spec_for(d1, d2, d_v):
    return cgkn.StateSpec(d=d1 + d2, d1=d1, d2=d2, d_v=d_v,
                          observed_indices=tuple(range(d1)))


def mlp_oracle(layers, x):
    """Layer-by-layer evaluation, written independently of the package path."""
    h = np.array(x, dtype=float)
    for i, (w, b) in enumerate(layers):
        pre = np.empty(w.shape[0])
        for r in range(w.shape[0]):
            pre[r] = np.dot(w[r], h) + b[r]
        h = np.tanh(pre) if i < len(layers) - 1 else pre
    return h


def test_spec_validation():
    with pytest.raises(ConfigError):
        cgkn.StateSpec(d=4, d1=2, d2=3, d_v=1, observed_indices=(0, 1))
    with pytest.raises(ConfigError):
        cgkn.StateSpec(d=4, d1=2, d2=2, d_v=1, observed_indices=(1, 0))
    with pytest.raises(ConfigError):
        cgkn.StateSpec(d=4, d1=2, d2=2, d_v=0, observed_indices=(0, 1))


def test_spec_split_merge_roundtrip():
    spec = cgkn.StateSpec(d=6, d1=2, d2=4, d_v=3, observed_indices=(1, 4))
    u = np.arange(6.0)
    u1, u2 = spec.split(u)
    assert np.array_equal(u1, [1.0, 4.0])
    assert np.array_equal(u2, [0.0, 2.0, 3.0, 5.0])
    assert np.array_equal(spec.merge(u1, u2), u)


def test_encode_identity_configuration():
    spec = spec_for(2, 3, 3)
    params = cgkn.CGKNParams(
        spec=spec,
        encoder=[(np.eye(3), np.zeros(3))],
        decoder=[(np.eye(3), np.zeros(3))],
        eta=[(np.zeros((spec.coeff_len, 2)), np.zeros(spec.coeff_len))],
    )
    u2 = np.array([0.3, -1.2, 2.0])
    assert np.array_equal(cgkn.encode(params, u2), u2)
    assert np.array_equal(cgkn.decode(params, u2), u2)


def test_encode_zero_weights_gives_bias():
    spec = spec_for(2, 4, 3)
    bias = np.array([1.0, -2.0, 0.5])
    params = cgkn.CGKNParams(
        spec=spec,
        encoder=[(np.zeros((3, 4)), bias)],
        decoder=[(np.zeros((4, 3)), np.ones(4))],
        eta=[(np.zeros((spec.coeff_len, 2)), np.zeros(spec.coeff_len))],
    )
    assert np.array_equal(cgkn.encode(params, np.ones(4)), bias)
    assert np.array_equal(cgkn.decode(params, np.zeros(3)), np.ones(4))


def test_encode_matches_layer_oracle():
    rng = RngStream(11)
    spec = spec_for(3, 8, 4)
    params = cgkn.init_params(spec, [16, 16, 16], [8, 8, 8], rng)
    u2 = rng.gaussian((8,))
    got = cgkn.encode(params, u2)
    want = mlp_oracle(params.encoder, u2)
    assert np.abs(got - want).max() < 1e-12
    v = rng.gaussian((4,))
    assert np.abs(cgkn.decode(params, v) - mlp_oracle(params.decoder, v)).max() < 1e-12


def test_coeff_lengths_burgers_and_ks():
    assert spec_for(4, 60, 10).coeff_len == 154
    assert spec_for(8, 120, 12).coeff_len == 260


def test_coeffs_zero_eta():
    spec = spec_for(4, 60, 10)
    rng = RngStream(0)
    params = cgkn.init_params(spec, [8], [8], rng)
    params.eta = [(np.zeros((spec.coeff_len, 4)), np.zeros(spec.coeff_len))]
    c = cgkn.coeffs(params, np.ones(4))
    assert not c.f1.any() and not c.g1.any() and not c.f2.any() and not c.g2.any()
    assert c.g1.shape == (4, 10) and c.g2.shape == (10, 10)


def test_coeffs_packing_roundtrip():
    spec = spec_for(3, 5, 5)
    rng = RngStream(1)
    f1, g1 = rng.gaussian((3,)), rng.gaussian((3, 5))
    f2, g2 = rng.gaussian((5,)), rng.gaussian((5, 5))
    params = cgkn.constant_coeff_params(spec, f1, g1, f2, g2)
    c = cgkn.coeffs(params, rng.gaussian((3,)))
    assert np.array_equal(c.f1, f1) and np.array_equal(c.g1, g1)
    assert np.array_equal(c.f2, f2) and np.array_equal(c.g2, g2)


def test_step_mean_zero_coeffs():
    spec = spec_for(2, 3, 3)
    params = cgkn.constant_coeff_params(spec, np.zeros(2), np.zeros((2, 3)),
                                        np.zeros(3), np.zeros((3, 3)))
    u1n, vn = cgkn.step_mean(params, np.ones(2), np.ones(3))
    assert not u1n.any() and not vn.any()


def test_step_mean_hand_case():
    spec = spec_for(1, 1, 1)
    params = cgkn.constant_coeff_params(spec, [0.0], [[1.0]], [0.0], [[0.5]])
    u1n, vn = cgkn.step_mean(params, np.array([7.7]), np.array([2.0]))
    assert np.allclose(u1n, [2.0]) and np.allclose(vn, [1.0])


def test_step_mean_constant_matches_matrix_power():
    rng = RngStream(2)
    spec = spec_for(2, 3, 3)
    g1 = rng.gaussian((2, 3)) * 0.3
    g2 = rng.gaussian((3, 3)) * 0.3
    params = cgkn.constant_coeff_params(spec, np.zeros(2), g1, np.zeros(3), g2)
    v = rng.gaussian((3,))
    u1 = np.zeros(2)
    for _ in range(10):
        u1, v = cgkn.step_mean(params, u1, v)
    want_v = np.linalg.matrix_power(g2, 10) @ rng_reset_v(rng)
    assert np.abs(v - want_v).max() < 1e-10


def rng_reset_v(rng):
    # reproduce the v drawn above from a fresh stream with the same seed
    r = RngStream(2)
    r.gaussian((2, 3))
    r.gaussian((3, 3))
    return r.gaussian((3,))


def test_step_sample_zero_noise_equals_mean():
    spec = spec_for(2, 3, 3)
    rng = RngStream(3)
    params = cgkn.constant_coeff_params(
        spec, rng.gaussian((2,)), rng.gaussian((2, 3)),
        rng.gaussian((3,)), rng.gaussian((3, 3)))
    u1, v = np.ones(2), np.ones(3)
    mean = cgkn.step_mean(params, u1, v)
    sampled = cgkn.step_sample(params, u1, v, RngStream(99))
    assert np.array_equal(mean[0], sampled[0])
    assert np.array_equal(mean[1], sampled[1])


def test_step_sample_reproducible():
    spec = spec_for(2, 3, 3)
    params = cgkn.constant_coeff_params(
        spec, np.zeros(2), np.zeros((2, 3)), np.zeros(3), np.zeros((3, 3)),
        sigma1=np.array([0.5, 1.0]), sigma2=np.array([0.1, 0.2, 0.3]))
    a = cgkn.step_sample(params, np.zeros(2), np.zeros(3), RngStream(5))
    b = cgkn.step_sample(params, np.zeros(2), np.zeros(3), RngStream(5))
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_step_sample_covariance():
    spec = spec_for(2, 2, 2)
    sigma1 = np.array([0.7, 1.3])
    params = cgkn.constant_coeff_params(
        spec, np.zeros(2), np.zeros((2, 2)), np.zeros(2), np.zeros((2, 2)),
        sigma1=sigma1, sigma2=np.zeros(2))
    rng = RngStream(8)
    u1 = np.zeros((100_000, 2))
    v = np.zeros((100_000, 2))
    u1n, _ = cgkn.step_sample(params, u1, v, rng)
    var = u1n.var(axis=0)
    assert np.abs(var - sigma1 ** 2).max() / (sigma1 ** 2).max() < 0.02


def test_forecast_zero_eta_identity_autoencoder():
    spec = spec_for(2, 3, 3)
    params = cgkn.constant_coeff_params(spec, np.zeros(2), np.zeros((2, 3)),
                                        np.zeros(3), np.zeros((3, 3)))
    out = cgkn.forecast(params, cgkn.StateVector(np.ones(2), np.ones(3)), 1)
    assert len(out) == 1
    assert not out[0].u1.any() and not out[0].u2.any()


def test_forecast_linear_closed_form():
    rng = RngStream(4)
    spec = spec_for(2, 3, 3)
    a11 = rng.gaussian((2, 2)) * 0.3
    g1 = rng.gaussian((2, 3)) * 0.3
    a21 = rng.gaussian((3, 2)) * 0.3
    g2 = rng.gaussian((3, 3)) * 0.3
    # affine eta: F1 = A11 u1, F2 = A21 u1, G1/G2 constant
    w = np.zeros((spec.coeff_len, 2))
    w[:2, :] = a11
    w[2 + 6:2 + 6 + 3, :] = a21
    bias = cgkn.pack_coeffs(spec, np.zeros(2), g1, np.zeros(3), g2)
    params = cgkn.CGKNParams(
        spec=spec,
        encoder=[(np.eye(3), np.zeros(3))],
        decoder=[(np.eye(3), np.zeros(3))],
        eta=[(w, bias)],
    )
    u1_0, u2_0 = rng.gaussian((2,)), rng.gaussian((3,))
    big = np.block([[a11, g1], [a21, g2]])
    z = np.concatenate([u1_0, u2_0])
    out = cgkn.forecast(params, cgkn.StateVector(u1_0, u2_0), 7)
    for state in out:
        z = big @ z
        assert np.abs(np.concatenate([state.u1, state.u2]) - z).max() < 1e-9


def test_forecast_determinism():
    rng = RngStream(12)
    spec = spec_for(2, 5, 3)
    params = cgkn.init_params(spec, [8, 8], [8, 8], rng)
    init = cgkn.StateVector(rng.gaussian((2,)), rng.gaussian((5,)))
    a = cgkn.forecast(params, init, 5)
    b = cgkn.forecast(params, init, 5)
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.u1, sb.u1) and np.array_equal(sa.u2, sb.u2)


def test_forecast_divergence_reports_step():
    spec = spec_for(1, 1, 1)
    params = cgkn.constant_coeff_params(spec, [1e200], [[1e200]], [1e200], [[1e200]])
    with pytest.raises(DivergenceError) as err:
        cgkn.forecast(params, cgkn.StateVector(np.ones(1), np.ones(1)), 10)
    assert err.value.step_index is not None


def test_conditional_linearity_in_v():
    rng = RngStream(13)
    spec = spec_for(3, 6, 4)
    params = cgkn.init_params(spec, [8, 8], [8, 8], rng)
    u1 = rng.gaussian((3,))
    v1, v2 = rng.gaussian((4,)), rng.gaussian((4,))
    for alpha in (0.0, 0.3, 0.7, 1.0):
        mix = alpha * v1 + (1 - alpha) * v2
        got = cgkn.step_mean(params, u1, mix)
        a = cgkn.step_mean(params, u1, v1)
        b = cgkn.step_mean(params, u1, v2)
        want_u1 = alpha * a[0] + (1 - alpha) * b[0]
        want_v = alpha * a[1] + (1 - alpha) * b[1]
        assert np.abs(got[0] - want_u1).max() < 1e-10
        assert np.abs(got[1] - want_v).max() < 1e-10


def test_latent_linear_degenerate_no_observations():
    # d1 = 0 with constant G2 reduces the latent recursion to v' = A v
    rng = RngStream(14)
    a = rng.gaussian((3, 3)) * 0.5
    spec = cgkn.StateSpec(d=3, d1=0, d2=3, d_v=3, observed_indices=())
    params = cgkn.constant_coeff_params(
        spec, np.zeros(0), np.zeros((0, 3)), np.zeros(3), a)
    v = rng.gaussian((3,))
    u1 = np.zeros(0)
    got = v.copy()
    for _ in range(6):
        u1, got = cgkn.step_mean(params, u1, got)
    want = np.linalg.matrix_power(a, 6) @ v
    assert np.abs(got - want).max() < 1e-12


def test_checkpoint_roundtrip(tmp_path):
    rng = RngStream(15)
    spec = cgkn.StateSpec(d=8, d1=2, d2=6, d_v=3, observed_indices=(0, 4))
    params = cgkn.init_params(spec, [8, 8], [4], rng)
    params.sigma1 = np.array([0.1, 0.2])
    params.sigma2 = np.array([0.3, 0.4, 0.5])
    uq = cgkn.init_mlp([2, 8, 6], rng)
    cgkn.save_checkpoint(tmp_path / "ck", params, uq_layers=uq)
    loaded, uq2 = cgkn.load_checkpoint(tmp_path / "ck")
    assert loaded.spec == spec
    for (w, b), (w2, b2) in zip(params.encoder + params.decoder + params.eta,
                                loaded.encoder + loaded.decoder + loaded.eta):
        assert w.tobytes() == w2.tobytes() and b.tobytes() == b2.tobytes()
    assert np.array_equal(loaded.sigma1, params.sigma1)
    assert np.array_equal(loaded.sigma2, params.sigma2)
    for (w, b), (w2, b2) in zip(uq, uq2):
        assert w.tobytes() == w2.tobytes()


def test_taped_forward_matches_plain():
    from cgkoop import autodiff as ad

    rng = RngStream(16)
    spec = spec_for(3, 6, 4)
    params = cgkn.init_params(spec, [8, 8], [8], rng)
    u1 = rng.gaussian((5, 3))
    v = rng.gaussian((5, 4))
    tape = ad.Tape()
    eta_nodes = [(tape.param(w), tape.param(b)) for w, b in params.eta]
    f1, g1, f2, g2 = cgkn.coeffs_t(tape, eta_nodes, tape.const(u1), spec)
    u1n_t = ad.add(f1, ad.bmatvec(g1, tape.const(v)))
    vn_t = ad.add(f2, ad.bmatvec(g2, tape.const(v)))
    u1n, vn = cgkn.step_mean(params, u1, v)
    assert np.abs(u1n_t.value - u1n).max() < 1e-12
    assert np.abs(vn_t.value - vn).max() < 1e-12
