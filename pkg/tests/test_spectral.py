import numpy as np
import numpy.testing as npt
import pytest

import spectral_gain.layers as L
import spectral_gain.network as N
import spectral_gain.spectral as S
from spectral_gain.errors import ShapeError


def naive_dft2(x):
    """DFT straight from the definition, via explicit transform matrices."""
    P, Q = x.shape
    fp = np.exp(-2j * np.pi * np.outer(np.arange(P), np.arange(P)) / P)
    fq = np.exp(-2j * np.pi * np.outer(np.arange(Q), np.arange(Q)) / Q)
    return fp @ x.astype(complex) @ fq


# ---------------------------------------------------------------------------
# impulse image


def test_impulse_image_3x3():
    img = S.impulse_image(3, 3, 1, 255.0)
    assert img[1, 1, 0] == 255.0
    assert img.sum() == 255.0


def test_impulse_image_28x28():
    img = S.impulse_image(28, 28, 1)
    nz = np.argwhere(img != 0)
    npt.assert_array_equal(nz, [[14, 14, 0]])


def test_impulse_image_per_channel_sum():
    img = S.impulse_image(9, 7, 3, 255.0)
    for ch in range(3):
        assert img[:, :, ch].sum() == 255.0


def test_impulse_image_bad_extents():
    with pytest.raises(ShapeError):
        S.impulse_image(0, 3, 1)


# ---------------------------------------------------------------------------
# projection


def _trace_with(z, idx, score):
    return N.ForwardTrace(activations=[z], prediction=(idx, score))


def test_make_projection_inv_score():
    z = np.full(10, 0.05)
    z[3] = 0.5
    p = S.make_projection(_trace_with(z, 3, 0.5))
    want = np.zeros(10)
    want[3] = 2.0
    npt.assert_array_equal(p, want)


def test_make_projection_score_one():
    z = np.zeros(5)
    z[2] = 1.0
    p = S.make_projection(_trace_with(z, 2, 1.0))
    assert p[2] == 1.0


def test_make_projection_score_mode():
    z = np.full(4, 0.25)
    p = S.make_projection(_trace_with(z, 0, 0.25), mode="score")
    assert p[0] == 0.25


def test_make_projection_score_floor():
    z = np.zeros(3)
    p = S.make_projection(_trace_with(z, 0, 0.0))
    assert p[0] == 1e12  # 1 / floor


# ---------------------------------------------------------------------------
# hann window


def test_hann2d_corners_zero():
    w = S.hann2d(8, 6)
    assert w[0, 0] == 0 and w[0, -1] == 0 and w[-1, 0] == 0 and w[-1, -1] == 0


def test_hann2d_odd_center_one():
    w = S.hann2d(9, 7)
    assert w[4, 3] == pytest.approx(1.0, abs=1e-15)


def test_hann2d_4x4_closed_form():
    w = S.hann2d(4, 4)
    axis = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(4) / 3.0))
    for r in range(4):
        for c in range(4):
            assert w[r, c] == pytest.approx(axis[r] * axis[c], abs=1e-15)


def test_hann2d_extent_one_rejected():
    with pytest.raises(ShapeError):
        S.hann2d(1, 8)


# ---------------------------------------------------------------------------
# fft2d


def test_fft2d_impulse_at_origin_flat():
    x = np.zeros((8, 8))
    x[0, 0] = 3.0
    spec = S.fft2d(x)
    npt.assert_allclose(np.abs(spec), np.full((8, 8), 3.0), atol=1e-12)


def test_fft2d_constant_dc_bin():
    x = np.full((5, 6), 2.0)  # pads to 8x8
    spec = S.fft2d(x)
    assert spec[0, 0] == pytest.approx(5 * 6 * 2.0, abs=1e-10)


def test_fft2d_random_28x28_matches_quadruple_loop():
    rng = np.random.default_rng(42)
    x = rng.normal(size=(28, 28))
    got = S.fft2d(x)
    padded = np.zeros((32, 32))
    padded[:28, :28] = x
    want = np.zeros((32, 32), complex)
    for u in range(32):
        for v in range(32):
            want[u, v] = np.sum(
                padded * np.exp(-2j * np.pi * (u * np.arange(32)[:, None] / 32
                                               + v * np.arange(32)[None, :] / 32))
            )
    assert np.abs(got - want).max() < 1e-9


def test_fft2d_many_sizes_match_naive_dft(rng):
    for _ in range(40):
        h = int(rng.integers(1, 65))
        w = int(rng.integers(1, 65))
        x = rng.normal(size=(h, w))
        got = S.fft2d(x)
        padded = np.zeros((S.next_pow2(h), S.next_pow2(w)))
        padded[:h, :w] = x
        assert np.abs(got - naive_dft2(padded)).max() < 1e-9


def test_fft2d_parseval(rng):
    x = rng.normal(size=(13, 21))
    spec = S.fft2d(x)
    ph, pw = spec.shape
    energy = np.sum(np.abs(x) ** 2)  # padding adds zeros only
    assert np.sum(np.abs(spec) ** 2) == pytest.approx(ph * pw * energy, rel=1e-12)


def test_fft2d_conjugate_symmetry_for_real_input(rng):
    x = rng.normal(size=(16, 16))
    spec = S.fft2d(x)
    flipped = np.conj(spec[(-np.arange(16)) % 16][:, (-np.arange(16)) % 16])
    npt.assert_allclose(spec, flipped, atol=1e-9)


def test_next_pow2():
    assert [S.next_pow2(n) for n in (1, 2, 3, 28, 32, 33)] == [1, 2, 4, 32, 32, 64]


# ---------------------------------------------------------------------------
# amplitude in dB


def test_amplitude_db_reference_points():
    spec = np.array([[1.0, 10.0, 0.1]], dtype=complex)
    db = S.amplitude_db(spec)
    npt.assert_allclose(db, [[0.0, 20.0, -20.0]], atol=1e-12)


def test_amplitude_db_floor():
    db = S.amplitude_db(np.zeros((2, 2), complex), floor=1e-12)
    npt.assert_allclose(db, np.full((2, 2), -240.0), atol=1e-12)


def test_amplitude_db_rejects_bad_floor():
    with pytest.raises(ShapeError):
        S.amplitude_db(np.zeros((2, 2), complex), floor=0.0)


# ---------------------------------------------------------------------------
# probes end to end


def test_unit_sum_gaussian_probe_peaks_at_dc_near_zero_db():
    """Conv-only net, impulse input, p one-hot with value 1: the derivative is
    the unit-sum filter, whose DC gain is 1 (0 dB) up to the window loss."""
    net = N.Network(layers=(N.toy_network(64, 64).layers[0],), input_shape=(64, 64, 1))
    x = S.impulse_image(64, 64, 1, 255.0)
    trace = N.forward(net, x)
    idx = int(np.argmax(trace.output))
    p = np.zeros_like(trace.output)
    p.reshape(-1)[idx] = 1.0
    back = N.backward_projected(net, trace, p)
    resp = S.response_from_derivative(back.input_derivative[:, :, 0], S.ProbeConfig())
    assert abs(resp.max_gain_db) < 0.5
    peak = np.unravel_index(int(resp.amplitude_db.argmax()), resp.amplitude_db.shape)
    assert peak == (0, 0)


def test_toy_probe_low_pass_peak_at_dc():
    net = N.toy_network(64, 64)
    rng = np.random.default_rng(5)
    x = (rng.normal(size=(64, 64)) + 3.0)[:, :, None]  # positive conv outputs
    trace = N.forward(net, x)
    p = np.zeros_like(trace.output)
    p[32, 32, 0] = 1.0
    back = N.backward_projected(net, trace, p)
    resp = S.response_from_derivative(back.input_derivative[:, :, 0], S.ProbeConfig())
    peak = np.unravel_index(int(resp.amplitude_db.argmax()), resp.amplitude_db.shape)
    assert peak == (0, 0)
    assert resp.max_gain_db == resp.amplitude_db.max()


def test_relu_gated_projection_gives_floor_spectrum():
    net = N.toy_network(32, 32)
    x = np.full((32, 32, 1), -1.0)  # negative input -> all outputs rectified to 0
    trace = N.forward(net, x)
    assert not trace.output.any()
    p = np.zeros_like(trace.output)
    p[16, 16, 0] = 1.0
    back = N.backward_projected(net, trace, p)
    assert not back.input_derivative.any()
    resp = S.response_from_derivative(back.input_derivative[:, :, 0], S.ProbeConfig())
    npt.assert_allclose(resp.amplitude_db, np.full((32, 32), -240.0), atol=1e-12)
    assert resp.max_gain_db == -240.0


def test_probe_returns_one_response_per_channel(rng):
    net = N.Network(
        layers=(L.conv(rng.normal(size=(3, 3, 3, 4)) * 0.3, rng.normal(size=4) * 0.1),
                L.relu(), L.fc(rng.normal(size=(4 * 6 * 6, 5)) * 0.3)),
        input_shape=(8, 8, 3), num_classes=5,
    )
    x = rng.normal(size=(8, 8, 3))
    responses = S.probe(net, x, S.ProbeConfig())
    assert [r.channel for r in responses] == [0, 1, 2]
    trace = N.forward(net, x)
    for r in responses:
        assert (r.class_index, r.score) == trace.prediction
        assert r.max_gain_db == r.amplitude_db.max()
        npt.assert_array_equal(r.windowed, r.derivative * S.hann2d(8, 8))


def test_probe_window_off(rng):
    net = N.Network(
        layers=(L.fc(rng.normal(size=(16, 3))),),
        input_shape=(4, 4, 1), num_classes=3,
    )
    x = rng.normal(size=(4, 4, 1))
    resp = S.probe(net, x, S.ProbeConfig(window=False))[0]
    npt.assert_array_equal(resp.windowed, resp.derivative)


def test_projection_scale_shifts_gain_exactly():
    """Scaling p by c shifts max_gain_db by exactly 20*log10(c)."""
    net = N.toy_network(48, 48)
    rng = np.random.default_rng(11)
    x = (rng.normal(size=(48, 48)) + 2.5)[:, :, None]
    trace = N.forward(net, x)
    p = np.zeros_like(trace.output)
    p[24, 24, 0] = 1.0
    cfg = S.ProbeConfig()
    for c in (2.0, 10.0, 0.125):
        g1 = S.response_from_derivative(
            N.backward_projected(net, trace, p).input_derivative[:, :, 0], cfg).max_gain_db
        g2 = S.response_from_derivative(
            N.backward_projected(net, trace, c * p).input_derivative[:, :, 0], cfg).max_gain_db
        assert g2 - g1 == pytest.approx(20.0 * np.log10(c), abs=1e-9)


def test_shift_covariance_without_window():
    """|FFT| is exactly shift-invariant, so probing different interior live
    units gives identical surfaces when no window is applied."""
    net = N.toy_network(64, 64)
    x = np.full((64, 64, 1), 1.5)
    trace = N.forward(net, x)
    cfg = S.ProbeConfig(window=False)
    surfaces = []
    for (r, c) in [(20, 20), (32, 40), (44, 25)]:
        p = np.zeros_like(trace.output)
        p[r, c, 0] = 1.0
        d = N.backward_projected(net, trace, p).input_derivative[:, :, 0]
        surfaces.append(S.response_from_derivative(d, cfg).amplitude_db)
    npt.assert_allclose(surfaces[0], surfaces[1], atol=1e-9)
    npt.assert_allclose(surfaces[0], surfaces[2], atol=1e-9)


def test_shift_covariance_with_window_near_center():
    net = N.toy_network(64, 64)
    x = np.full((64, 64, 1), 1.5)
    trace = N.forward(net, x)
    cfg = S.ProbeConfig()
    gains = []
    for (r, c) in [(30, 30), (32, 35), (35, 29)]:
        p = np.zeros_like(trace.output)
        p[r, c, 0] = 1.0
        d = N.backward_projected(net, trace, p).input_derivative[:, :, 0]
        gains.append(S.response_from_derivative(d, cfg).max_gain_db)
    assert max(gains) - min(gains) < 0.5


# ---------------------------------------------------------------------------
# mean gain


def test_mean_gain_average():
    rs = [S.SpectralResponse(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), g)
          for g in (-10.0, -20.0, -30.0)]
    assert S.mean_gain(rs) == -20.0


def test_mean_gain_single():
    r = S.SpectralResponse(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), -7.5)
    assert S.mean_gain([r]) == -7.5


def test_mean_gain_empty():
    with pytest.raises(ValueError):
        S.mean_gain([])
