import math

import numpy as np
import pytest

from csicodec.channel import (
    ChannelGenConfig,
    Dataset,
    DatasetFormatError,
    channel_from_paths,
    dataset_from_bytes,
    desk_config,
    generate_channel,
    generate_channels,
    read_dataset,
    spacing_preserving_fs,
    ula_response,
    write_dataset,
)


def test_ula_examples():
    np.testing.assert_array_equal(ula_response(0.0, 5), np.ones(5))
    np.testing.assert_allclose(ula_response(math.pi / 2, 2, 0.5), [1, -1], atol=1e-15)
    phis = np.random.default_rng(0).uniform(-1.5, 1.5, 20)
    np.testing.assert_allclose(np.abs(ula_response(phis, 16)), 1.0, atol=1e-15)
    assert ula_response(phis, 16).shape == (20, 16)
    with pytest.raises(ValueError):
        ula_response(0.0, 0)


def test_single_forced_path():
    h = channel_from_paths([1.0], [0.0], [0.0], n_c=8, n_t=4, f_s=20e6)
    np.testing.assert_allclose(h, np.full((8, 4), 2.0), atol=1e-15)


def test_row_formula_with_one_based_subcarriers():
    alpha, tau, phi = [0.3 - 0.4j, 1j], [2e-7, 5e-7], [0.2, -0.7]
    n_c, n_t, f_s = 16, 4, 10e6
    h = channel_from_paths(alpha, tau, phi, n_c, n_t, f_s)
    for n in (1, 7, 16):
        row = sum(a * np.exp(-2j * np.pi * t * f_s * n / n_c) * ula_response(p, n_t)
                  for a, t, p in zip(alpha, tau, phi))
        np.testing.assert_allclose(h[n - 1], math.sqrt(n_t / 2) * row, atol=1e-12)


def test_monte_carlo_row_power():
    cfg = ChannelGenConfig(n_c=16, n_t=16, paths=8, seed=3)
    h = generate_channels(cfg, 10_000)
    power = np.mean(np.sum(np.abs(h) ** 2, axis=-1))
    assert abs(power / (cfg.n_t**2 * cfg.sigma_alpha_sq) - 1) < 0.05


def test_power_scales_with_path_gain():
    a = generate_channels(ChannelGenConfig(n_c=16, n_t=8, seed=4), 4000)
    b = generate_channels(ChannelGenConfig(n_c=16, n_t=8, sigma_alpha_sq=2.0, seed=4), 4000)
    ratio = np.mean(np.abs(b) ** 2) / np.mean(np.abs(a) ** 2)
    assert abs(ratio - 2) < 0.02  # same draws, only alpha is rescaled


def test_adjacent_subcarriers_more_correlated():
    cfg = ChannelGenConfig(n_c=64, n_t=8, seed=5)
    h = generate_channels(cfg, 1000)

    def corr(i, j):
        a, b = h[:, i, :].ravel(), h[:, j, :].ravel()
        return abs(np.vdot(a, b)) / (np.linalg.norm(a) * np.linalg.norm(b))

    adjacent = np.mean([corr(n, n + 1) for n in range(0, 32)])
    far = np.mean([corr(n, n + 32) for n in range(0, 32)])
    assert adjacent > far


def test_single_path_is_rank_one():
    h = generate_channels(ChannelGenConfig(n_c=32, n_t=8, paths=1, seed=6), 20)
    for m in h.astype(np.complex128):
        # all 2x2 minors vanish
        minors = m[:-1, None, :-1] * m[1:, None, 1:] - m[:-1, None, 1:] * m[1:, None, :-1]
        assert np.abs(minors).max() <= 1e-5 * np.abs(m).max() ** 2


def test_seed_determinism():
    cfg = desk_config(seed=7)
    a = generate_channels(cfg, 50)
    b = generate_channels(cfg, 50)
    assert a.tobytes() == b.tobytes()
    assert generate_channels(desk_config(seed=8), 50).tobytes() != a.tobytes()
    one = generate_channel(cfg, np.random.default_rng(7))
    assert one.shape == (64, 16)
    assert one.tobytes() == generate_channel(cfg, np.random.default_rng(7)).tobytes()


def test_desk_config_keeps_subcarrier_spacing():
    ref = ChannelGenConfig()
    cfg = desk_config()
    assert (cfg.n_c, cfg.n_t) == (64, 16)
    assert cfg.f_s / cfg.n_c == ref.f_s / ref.n_c
    assert desk_config(n_c=128).f_s == spacing_preserving_fs(128) == 10e6
    assert desk_config(f_s=1e6).f_s == 1e6


@pytest.mark.parametrize("kwargs", [{"paths": 0}, {"f_s": 0}, {"delay_spread": -1},
                                    {"d_over_lambda": 0}, {"aod_range": (-2.0, 0.0)},
                                    {"n_c": 0}, {"sigma_alpha_sq": -1}])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        ChannelGenConfig(**kwargs)


def test_dataset_io(tmp_path):
    ds = Dataset(generate_channels(desk_config(seed=9), 100))
    path = tmp_path / "d.csid"
    write_dataset(ds, path)
    back = read_dataset(path)
    assert back.header == (64, 16, 100)
    assert back.samples.tobytes() == ds.samples.tobytes()


def test_entry_encoding(tmp_path):
    path = tmp_path / "one.csid"
    write_dataset(Dataset(np.array([[[1 + 2j]]])), path)
    raw = path.read_bytes()
    assert raw[:4] == b"CSID"
    assert raw[-8:].hex().upper() == "0000803F00000040"


def test_dataset_errors(tmp_path):
    path = tmp_path / "d.csid"
    write_dataset(Dataset(np.zeros((2, 16, 16), np.complex64)), path)
    raw = path.read_bytes()
    with pytest.raises(DatasetFormatError, match="magic"):
        dataset_from_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DatasetFormatError, match="version"):
        dataset_from_bytes(raw[:4] + b"\x09\x00" + raw[6:])
    with pytest.raises(DatasetFormatError, match="expected"):
        dataset_from_bytes(raw[:-3])
    with pytest.raises(DatasetFormatError, match="truncated"):
        dataset_from_bytes(raw[:5])
    with pytest.raises(ValueError):
        Dataset(np.full((1, 2, 2), np.nan, np.complex64))
