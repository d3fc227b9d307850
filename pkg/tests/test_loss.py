import numpy as np
import pytest
from hypothesis import given, strategies as st

from nsfkit import autograd as ag
from nsfkit.dsp import StftConfig, Waveform, is_conjugate_symmetric
from nsfkit.gradcheck import spectral_fd_gradient
from nsfkit.loss import (DEFAULT_STFT_CONFIGS, MultiResLossConfig, gradient_half_spectrum,
                         gradient_spectrum, loss_report, mse_op, multi_res_loss,
                         spectral_distance, spectral_distance_backward, spectral_loss_op,
                         waveform_mse)
from oracles import mse_loop, spectral_distance_direct

L2 = StftConfig(128, 80, 40)
REDUCED = [StftConfig(128, 80, 20), StftConfig(32, 20, 10), StftConfig(256, 240, 80)]


def _pair(seed, T=400):
    rng = np.random.default_rng(seed)
    return rng.normal(size=T), rng.normal(size=T)


def test_identical_waveforms_give_zero():
    x, _ = _pair(0)
    assert spectral_distance(x, x, L2) == 0.0
    total, grad = multi_res_loss(x, x)
    assert total == 0.0 and not np.any(grad)


def test_impulse_against_silence():
    o = np.array([0.0, 1.0, 0.0, 0.0])
    cfg = StftConfig(4, 4, 4)
    assert spectral_distance(np.zeros(4), o, cfg) == pytest.approx(59.815318259073464, rel=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_matches_direct_sum(seed):
    gen, nat = _pair(seed)
    want = spectral_distance_direct(gen, nat, 128, 80, 40)
    assert spectral_distance(gen, nat, L2) == pytest.approx(want, rel=1e-6)


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        spectral_distance(np.zeros(10), np.zeros(11), L2)
    with pytest.raises(ValueError):
        waveform_mse(np.zeros(3), np.zeros(4))


def test_accepts_waveform_objects():
    gen, nat = _pair(1)
    a = spectral_distance(Waveform(gen, 16000), Waveform(nat, 16000), L2)
    assert a == spectral_distance(gen, nat, L2)


@pytest.mark.parametrize("cfg", [L2] + REDUCED, ids=str)
def test_backward_matches_finite_differences(cfg):
    gen, nat = _pair(11)
    analytic = spectral_distance_backward(gen, nat, cfg)
    numeric = spectral_fd_gradient(gen, nat, cfg)
    err = np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-8))
    assert err <= 1e-4


def test_backward_on_plain_float64_differences():
    # coarse check with an ordinary double-precision stencil on large entries
    gen, nat = _pair(12, T=200)
    cfg = StftConfig(64, 40, 20)
    analytic = spectral_distance_backward(gen, nat, cfg)
    for i in np.argsort(-np.abs(analytic))[:10]:
        up, down = gen.copy(), gen.copy()
        up[i] += 1e-6
        down[i] -= 1e-6
        numeric = (spectral_distance(up, nat, cfg) - spectral_distance(down, nat, cfg)) / 2e-6
        assert analytic[i] == pytest.approx(numeric, rel=1e-5)


def test_identical_inputs_have_zero_gradient():
    x, _ = _pair(2)
    assert not np.any(spectral_distance_backward(x, x, L2))


def test_gradient_spectrum_is_conjugate_symmetric():
    gen, nat = _pair(3)
    g = gradient_spectrum(gen, nat, L2)
    K = L2.dft_bins
    k = np.arange(1, K // 2)
    np.testing.assert_array_equal(g[:, k].real, g[:, K - k].real)
    np.testing.assert_array_equal(g[:, k].imag, -g[:, K - k].imag)
    assert not np.any(g[:, 0].imag) and not np.any(g[:, K // 2].imag)
    assert is_conjugate_symmetric(g)
    half = gradient_half_spectrum(gen, nat, L2)
    np.testing.assert_array_equal(half, g[:, :K // 2 + 1])


def test_single_config_multires_equals_distance():
    gen, nat = _pair(4)
    total, grad = multi_res_loss(gen, nat, MultiResLossConfig((L2,)))
    assert total == spectral_distance(gen, nat, L2)
    np.testing.assert_array_equal(grad, spectral_distance_backward(gen, nat, L2))


def test_duplicated_config_doubles():
    gen, nat = _pair(5)
    one, g1 = multi_res_loss(gen, nat, MultiResLossConfig((L2,)))
    two, g2 = multi_res_loss(gen, nat, MultiResLossConfig((L2, L2)))
    assert two == 2 * one
    np.testing.assert_array_equal(g2, 2 * g1)


def test_default_configs_and_parse():
    mcfg = MultiResLossConfig()
    assert mcfg.configs == DEFAULT_STFT_CONFIGS and mcfg.eta == 1e-5
    assert str(mcfg) == "512/320/80,128/80/40,2048/1920/640"
    assert MultiResLossConfig.parse(" 512/320/80 ; 128/80/40 ").configs == DEFAULT_STFT_CONFIGS[:2]
    with pytest.raises(ValueError):
        MultiResLossConfig(())
    with pytest.raises(ValueError):
        MultiResLossConfig(eta=0.0)


def test_report_sums_parts():
    gen, nat = _pair(6)
    rep = loss_report(gen, nat)
    assert rep.total == pytest.approx(sum(rep.per_config.values()))
    assert set(rep.per_config) == {str(c) for c in DEFAULT_STFT_CONFIGS}


@given(st.integers(0, 10_000))
def test_nonnegative_and_symmetric(seed):
    rng = np.random.default_rng(seed)
    gen, nat = rng.normal(size=120), rng.normal(size=120)
    cfg = StftConfig(32, 20, 10)
    a, b = spectral_distance(gen, nat, cfg), spectral_distance(nat, gen, cfg)
    assert a >= 0
    assert a == pytest.approx(b, rel=1e-12)


def test_time_reversal_keeps_single_frame_loss():
    # with a symmetric window, reversing a one-frame signal only changes phases
    rng = np.random.default_rng(7)
    cfg = StftConfig(64, 64, 64)
    x, target = rng.normal(size=64), rng.normal(size=64)
    assert spectral_distance(x[::-1].copy(), target, cfg) == pytest.approx(
        spectral_distance(x, target, cfg), rel=1e-10)


def test_mse_values():
    x, y = _pair(8, T=50)
    assert waveform_mse(x, x) == 0.0
    assert waveform_mse(x + 0.1, x) == pytest.approx(0.01)
    assert waveform_mse(x, y) == pytest.approx(mse_loop(x, y), rel=1e-12)


def test_graph_ops_carry_gradients():
    gen, nat = _pair(9, T=160)
    with ag.double_precision():
        x = ag.variable(gen)
        node = spectral_loss_op(x, nat)
        ag.backward(node)
        np.testing.assert_allclose(x.grad, multi_res_loss(gen, nat)[1], rtol=1e-12)
        x = ag.variable(gen)
        ag.backward(mse_op(x, nat))
        np.testing.assert_allclose(x.grad, 2 * (gen - nat) / gen.size, rtol=1e-12)
