import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mwnet import tensor as T
from mwnet.tensor import Tensor, grad_check
from mwnet.wavelet import (FIXED_BASES, LiftingParams, Subbands, awt2, get_basis, iawt2, iwt2,
                           lift_forward_1d, lift_inverse_1d, lift_merge, lift_split, wt2)


def row(values):
    return Tensor(np.asarray(values, dtype=float).reshape(1, 1, 1, -1))


def test_haar_patch_convention(f64):
    s = wt2(Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]])), "haar")
    got = [b.data.item() for b in s]
    np.testing.assert_allclose(got, [5.0, -1.0, -2.0, 0.0], atol=1e-12)


def test_haar_constant_has_no_detail(f64):
    s = wt2(Tensor(np.full((1, 2, 6, 6), 3.0)), "haar")
    np.testing.assert_allclose(s.ll.data, 6.0)
    for band in (s.lh, s.hl, s.hh):
        np.testing.assert_allclose(band.data, 0.0, atol=1e-12)


@pytest.mark.parametrize("basis", FIXED_BASES)
def test_fixed_round_trip_and_linearity(f64, rng, basis):
    x = Tensor(rng.standard_normal((1, 2, 8, 8)))
    np.testing.assert_allclose(iwt2(wt2(x, basis), basis).data, x.data, atol=1e-10)
    s1 = Subbands(*(Tensor(rng.standard_normal((1, 2, 4, 4))) for _ in range(4)))
    s2 = Subbands(*(Tensor(rng.standard_normal((1, 2, 4, 4))) for _ in range(4)))
    summed = Subbands(*(a + b for a, b in zip(s1, s2)))
    np.testing.assert_allclose(iwt2(s1, basis).data + iwt2(s2, basis).data,
                               iwt2(summed, basis).data, atol=1e-10)


@pytest.mark.parametrize("basis", FIXED_BASES)
def test_orthonormal_energy(f64, rng, basis):
    x = rng.standard_normal((2, 1, 8, 12))
    s = wt2(Tensor(x), basis)
    energy = sum(float((b.data ** 2).sum()) for b in s)
    assert energy == pytest.approx(float((x ** 2).sum()), rel=1e-12)


def test_zero_subbands_give_zero_image(f64):
    z = Subbands(*(Tensor(np.zeros((1, 1, 3, 3))) for _ in range(4)))
    assert not iwt2(z).data.any()


def test_symlet2_equals_db2():
    assert get_basis("symlet2").lowpass == get_basis("daubechies2").lowpass


def test_wavelet_rejects_bad_input():
    with pytest.raises(ValueError, match="even"):
        wt2(Tensor(np.zeros((1, 1, 5, 4))))
    with pytest.raises(ValueError, match="unknown"):
        get_basis("coif1")
    bad = Subbands(*(Tensor(np.zeros((1, 1, s, s))) for s in (2, 2, 2, 3)))
    with pytest.raises(ValueError, match="differ"):
        iwt2(bad)


def test_fixed_transform_gradient(f64, rng):
    x = Tensor(rng.standard_normal((1, 2, 4, 4)))
    r = [Tensor(rng.standard_normal((1, 2, 2, 2))) for _ in range(4)]

    def f(t):
        s = wt2(t, "daubechies2")
        return T.sum_all(s.ll * r[0]) + T.sum_all(s.lh * r[1]) + T.sum_all(s.hh * r[3])

    assert grad_check(f, x) < 1e-6


def test_lift_split_and_merge(f64):
    even, odd = lift_split(row([1, 2, 3, 4]))
    assert even.data.ravel().tolist() == [1, 3]
    assert odd.data.ravel().tolist() == [2, 4]
    e2, o2 = lift_split(row([7, 9]))
    assert e2.shape[-1] == o2.shape[-1] == 1
    x = row(np.arange(10.0))
    np.testing.assert_array_equal(lift_merge(*lift_split(x)).data, x.data)
    with pytest.raises(ValueError, match="even"):
        lift_split(row([1, 2, 3]))


def test_lifting_haar_example(f64):
    p = LiftingParams.from_taps([1.0], [0.5])
    low, high = lift_forward_1d(row([1, 2, 3, 4]), p)
    np.testing.assert_allclose(high.data.ravel(), [1, 1])
    np.testing.assert_allclose(low.data.ravel(), [1.5, 3.5])
    back = lift_inverse_1d(row([1.5, 3.5]), row([1, 1]), p)
    np.testing.assert_allclose(back.data.ravel(), [1, 2, 3, 4])


def test_lifting_constant_is_predicted_exactly(f64):
    _, high = lift_forward_1d(row(np.full(8, 2.5)), LiftingParams(1))
    np.testing.assert_allclose(high.data, 0.0, atol=1e-12)


def test_zero_detail_zero_updater(f64):
    p = LiftingParams.from_taps([0.3, 0.2, -0.1], [0.0, 0.0, 0.0])
    out = lift_inverse_1d(row([1.0, -2.0, 4.0]), row([0.0, 0.0, 0.0]), p)
    np.testing.assert_allclose(out.data.ravel()[::2], [1.0, -2.0, 4.0])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from([1, 3, 5]), st.sampled_from([1, 3, 5]),
       st.integers(2, 8))
def test_lifting_round_trip_any_taps(seed, kp, ku, half):
    rng = np.random.default_rng(seed)
    with T.precision(np.float64):
        p = LiftingParams.from_taps(rng.standard_normal((1, kp)), rng.standard_normal((1, ku)))
        x = Tensor(rng.standard_normal((1, 1, 2, 2 * half)))
        back = lift_inverse_1d(*lift_forward_1d(x, p), p)
    np.testing.assert_allclose(back.data, x.data, atol=1e-6)


def test_adaptive_2d(f64, rng):
    ph, pv = LiftingParams(3), LiftingParams(3)
    s = awt2(Tensor(np.full((1, 3, 4, 6), 1.7)), ph, pv)
    for band in (s.lh, s.hl, s.hh):
        np.testing.assert_allclose(band.data, 0.0, atol=1e-12)
    for p in (ph, pv):
        p.predictor.data = rng.standard_normal(p.predictor.shape)
        p.updater.data = rng.standard_normal(p.updater.shape)
    x = Tensor(rng.standard_normal((2, 3, 8, 6)))
    np.testing.assert_allclose(iawt2(awt2(x, ph, pv), ph, pv).data, x.data, atol=1e-9)
    r = [Tensor(rng.standard_normal((2, 3, 4, 3))) for _ in range(4)]

    def f(_):
        return sum((T.sum_all(b * w) for b, w in zip(awt2(x, ph, pv), r)), Tensor(0.0))

    assert grad_check(f, ph.predictor, directions=3) < 1e-5
    assert grad_check(f, pv.updater, directions=3) < 1e-5


def test_adaptive_inverse_zero_input(f64):
    ph = LiftingParams.from_taps(np.zeros((1, 3)), np.zeros((1, 3)))
    z = Subbands(*(Tensor(np.zeros((1, 1, 2, 2))) for _ in range(4)))
    assert not iawt2(z, ph, ph).data.any()


def test_editing_ll_leaves_haar_detail_unchanged(f64, rng):
    ph, pv = LiftingParams(1), LiftingParams(1)
    x = Tensor(rng.standard_normal((1, 1, 8, 8)))
    s = awt2(x, ph, pv)
    edited = Subbands(s.ll + Tensor(rng.standard_normal(s.ll.shape)), s.lh, s.hl, s.hh)
    a, b = iawt2(s, ph, pv), iawt2(edited, ph, pv)
    assert abs(a.data.mean() - b.data.mean()) > 1e-3
    for da, db in zip(list(wt2(a))[1:], list(wt2(b))[1:]):
        np.testing.assert_allclose(da.data, db.data, atol=1e-6)
