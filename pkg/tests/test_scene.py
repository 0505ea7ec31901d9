import math

import numpy as np
import pytest

from clusterckm.harmonics import music_freq, steering
from clusterckm.scene import (
    SPEED_OF_LIGHT,
    ArrayConfig,
    Environment,
    OfdmConfig,
    PilotConfig,
    SceneError,
    ScattererCluster,
    assemble_channel,
    first_arrival,
    path_geometry,
    path_params,
    perturb_channel,
    pilot_indices,
    pilot_matrix,
    sample_environment,
    snr_to_noise_var,
    transmit,
)
from clusterckm.tensor import frobenius, mode_n_product

RX = ArrayConfig(16, 0.05, 0.1, (0.0, -1.0))
TX = ArrayConfig(3, 0.05, 0.1, (0.0, -1.0))
OFDM = OfdmConfig.from_bandwidth(210, 100e6)


def single(point, gain=1.0):
    return Environment([ScattererCluster(np.array([point]), np.array([gain]))])


def test_angle_convention_roundtrip():
    arr = ArrayConfig(8, axis=(0.6, 0.8))
    for theta in np.linspace(-1.4, 1.4, 9):
        d = arr.direction_of(theta)
        assert abs(np.linalg.norm(d) - 1) < 1e-12
        assert abs(arr.angle_of(d) - theta) < 1e-12
    # broadside is angle 0
    assert abs(arr.angle_of(arr.broadside)) < 1e-12


def test_single_path_channel_matches_steering_vectors():
    p_tx, p_rx, s = np.array([20.0, 10.0]), np.array([-150.0, 0.0]), np.array([0.0, 200.0])
    env = single(s, 2.0 - 1.0j)
    h = assemble_channel(env, p_tx, p_rx, TX, RX, OFDM)
    pp = path_params(p_tx, p_rx, s, TX, RX)
    length = np.linalg.norm(s - p_rx) + np.linalg.norm(s - p_tx)
    want = np.einsum(
        "i,j,k->ijk",
        steering(16, 0.5 * math.sin(pp.aoa)),
        steering(3, 0.5 * math.sin(pp.aod)),
        steering(210, OFDM.delta_f * pp.delay),
    ) * (2.0 - 1.0j) / length
    assert frobenius(h - want) < 1e-12 * frobenius(want)
    assert abs(pp.delay * SPEED_OF_LIGHT - length) < 1e-9


def test_geometry_angles_point_at_the_scatterer():
    p_tx, p_rx = np.array([0.0, 0.0]), np.array([-150.0, 0.0])
    pts = np.array([[0.0, 200.0], [150.0, -100.0]])
    aoa, aod, tau, length = path_geometry(p_tx, p_rx, pts, TX, RX)
    for k in range(2):
        u = RX.direction_of(aoa[k])
        r = np.linalg.norm(pts[k] - p_rx)
        np.testing.assert_allclose(p_rx + r * u, pts[k], atol=1e-9)
        v = TX.direction_of(aod[k])
        np.testing.assert_allclose(p_tx + np.linalg.norm(pts[k] - p_tx) * v, pts[k], atol=1e-9)


def test_pilot_grid_delay_frequency_scales_with_period():
    # on every p_f-th subcarrier the delay phase advances by p_f * delta_f * tau per sample
    p_tx, p_rx, s = np.array([0.0, 0.0]), np.array([-150.0, 0.0]), np.array([10.0, 150.0])
    env = single(s)
    ofdm = OfdmConfig.from_bandwidth(1680, 100e6)
    ref = first_arrival(env, p_tx, p_rx) - 40.0 / SPEED_OF_LIGHT
    h = assemble_channel(env, p_tx, p_rx, TX, RX, ofdm, ref)
    p_f = 12
    vec = h[0, 0, pilot_indices(1680, p_f)]
    pp = path_params(p_tx, p_rx, s, TX, RX)
    want = p_f * ofdm.delta_f * (pp.delay - ref)
    got = music_freq(vec, 1 << 14)
    assert abs((got - want + 0.5) % 1 - 0.5) < 1e-4


def test_pilot_matrix_row_orthogonal_with_unit_power():
    X = pilot_matrix(3, 3, seed=1)
    assert abs(np.linalg.norm(X) ** 2 - 3) < 1e-12
    np.testing.assert_allclose(X @ X.conj().T, np.eye(3), atol=1e-12)
    X5 = pilot_matrix(3, 5, seed=2)
    np.testing.assert_allclose(X5 @ X5.conj().T, (5 / 3) * np.eye(3), atol=1e-12)
    with pytest.raises(SceneError):
        pilot_matrix(3, 2, seed=0)


def test_transmit_noiseless_and_noise_level():
    env = sample_environment([[0.0, 200.0]], 20, 10.0, seed=3)
    h = assemble_channel(env, [0.0, 0.0], [-150.0, 0.0], TX, RX, OFDM)
    X = pilot_matrix(3, 3, seed=4)
    y, hbar = transmit(h, PilotConfig(X, 5), 0.0, seed=0)
    assert hbar.shape == (16, 3, 42)
    assert frobenius(y - mode_n_product(hbar, X.T, 2)) < 1e-12
    var = snr_to_noise_var(h, 10.0)
    y2, _ = transmit(h, PilotConfig(X, 1), var, seed=5)
    noise = y2 - mode_n_product(h, X.T, 2)
    measured = np.mean(np.abs(noise) ** 2)
    assert abs(measured / var - 1) < 0.05


def test_perturb_channel_error_level():
    env = sample_environment([[0.0, 200.0]], 20, 10.0, seed=3)
    h = assemble_channel(env, [0.0, 0.0], [-150.0, 0.0], TX, RX, OFDM)
    e = perturb_channel(h, 10.0, seed=1) - h
    ratio = frobenius(e) ** 2 / frobenius(h) ** 2
    assert abs(10 * math.log10(ratio) + 10.0) < 0.2
    assert frobenius(perturb_channel(h, math.inf, seed=1) - h) == 0


def test_environment_sampling_reproducible():
    a = sample_environment([[0, 0], [10, 10]], 5, 2.0, seed=9)
    b = sample_environment([[0, 0], [10, 10]], 5, 2.0, seed=9)
    np.testing.assert_array_equal(a.positions(), b.positions())
    np.testing.assert_array_equal(a.gains(), b.gains())
    assert a.K == 2 and a.positions().shape == (10, 2)


def test_invalid_configs():
    with pytest.raises(SceneError):
        ArrayConfig(0)
    with pytest.raises(SceneError):
        ArrayConfig(4, axis=(1.0, 1.0))
    with pytest.raises(SceneError):
        OfdmConfig(10, -1.0)
    with pytest.raises(SceneError):
        pilot_indices(10, 0)
