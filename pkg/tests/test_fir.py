import numpy as np
import pytest
from hypothesis import given, strategies as st

from nsfkit import autograd as ag
from nsfkit.fir import (FirCoefficients, FirSpec, apply_fir, design_bank, design_equiripple,
                        frequency_response, measure, meets, merge_branches,
                        voiced_unvoiced_specs)


@pytest.fixture(scope="module")
def bank():
    return design_bank()


def test_bank_meets_specs(bank):
    specs = voiced_unvoiced_specs()
    assert set(bank) == set(specs)
    for name, c in bank.items():
        m = measure(c, specs[name], grid=4096)
        assert m["stop_max_db"] <= -40.0, name
        assert m["pass_deviation_db"] <= 5.0, name
        assert meets(c, specs[name])


def test_orders_are_small(bank):
    for c in bank.values():
        assert 6 <= c.order <= 20


def test_taps_are_symmetric(bank):
    for c in bank.values():
        np.testing.assert_array_equal(c.taps, c.taps[::-1])


def test_relaxed_spec_needs_low_order():
    spec = FirSpec("loose", (0, 1000), (4000, 8000), min_attenuation_db=20.0)
    assert design_equiripple(spec).order <= 10


def test_invalid_specs():
    with pytest.raises(ValueError):
        FirSpec("bad", (0, 5000), (4000, 8000))
    with pytest.raises(ValueError):
        FirSpec("bad", (0, 9000), (9500, 10000))


def test_single_tap_response_is_flat():
    _, db = frequency_response([1.0], grid=64)
    np.testing.assert_allclose(db, 0.0, atol=1e-12)


def test_two_tap_average_has_null_at_nyquist():
    _, db = frequency_response([0.5, 0.5], grid=64)
    assert db[0] == pytest.approx(0.0, abs=1e-12)
    assert db[-1] < -200


def test_delta_filter_is_identity():
    x = np.random.default_rng(0).normal(size=50)
    np.testing.assert_array_equal(apply_fir(x, [0.0, 0.0, 1.0, 0.0, 0.0]), x)


def test_lowpass_keeps_passband_sine(bank):
    t = np.arange(4000)
    x = np.sin(2 * np.pi * 500 * t / 16000)
    y = apply_fir(x, bank["lp_unvoiced"])
    inner = slice(200, -200)
    gain_db = 20 * np.log10(np.std(y[inner]) / np.std(x[inner]))
    assert abs(gain_db) <= 5.0


def test_merge_all_voiced_and_all_unvoiced(bank):
    rng = np.random.default_rng(1)
    h, n = rng.normal(size=300), rng.normal(size=300)
    voiced = merge_branches(h, n, np.ones(300, bool), bank)
    want = apply_fir(h, bank["lp_voiced"]) + apply_fir(n, bank["hp_voiced"])
    np.testing.assert_allclose(voiced, want, rtol=1e-12)
    unvoiced = merge_branches(h, n, np.zeros(300, bool), bank)
    want = apply_fir(h, bank["lp_unvoiced"]) + apply_fir(n, bank["hp_unvoiced"])
    np.testing.assert_allclose(unvoiced, want, rtol=1e-12)


def test_voiced_merge_passes_1khz_harmonic_and_blocks_noise_branch(bank):
    t = np.arange(4000)
    s = np.sin(2 * np.pi * 1000 * t / 16000)
    out = merge_branches(s, s, np.ones(4000, bool), bank)
    lp = apply_fir(s, bank["lp_voiced"])
    hp = apply_fir(s, bank["hp_voiced"])
    inner = slice(100, -100)
    assert np.std(lp[inner]) / np.std(s[inner]) >= 10 ** (-5 / 20)
    assert np.std(hp[inner]) / np.std(s[inner]) <= 10 ** (-40 / 20)
    np.testing.assert_allclose(out, lp + hp)


def test_merge_shape_mismatch(bank):
    with pytest.raises(ValueError):
        merge_branches(np.zeros(10), np.zeros(11), np.ones(10, bool), bank)


def test_merge_graph_matches_arrays_and_gradient(bank):
    rng = np.random.default_rng(2)
    flags = rng.random(120) > 0.5
    hv, nv = rng.normal(size=120), rng.normal(size=120)
    proj = rng.normal(size=120)
    with ag.double_precision():
        h, n = ag.variable(hv), ag.variable(nv)
        out = merge_branches(h, n, flags, bank)
        np.testing.assert_allclose(out.value, merge_branches(hv, nv, flags, bank), rtol=1e-12)
        err = ag.grad_check(
            lambda: ag.sum_all(ag.mul(merge_branches(h, n, flags, bank), proj)), [h, n])
    assert err <= 1e-6


@given(st.integers(1, 200), st.integers(0, 10_000))
def test_fir_is_linear_and_length_preserving(T, seed):
    rng = np.random.default_rng(seed)
    taps = FirCoefficients(rng.normal(size=9))
    a, b = rng.normal(size=T), rng.normal(size=T)
    ya = apply_fir(a, taps)
    assert ya.shape == (T,)
    np.testing.assert_allclose(apply_fir(2 * a + b, taps), 2 * ya + apply_fir(b, taps),
                               atol=1e-10)
