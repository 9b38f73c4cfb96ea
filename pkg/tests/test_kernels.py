import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from helpers import make_grid, rel_err
from intkernels.grid import Axis
from intkernels.kernels import (
    STABILITY, ExponentialParams, GaussianParams, Kernel, KernelError, KernelSpec, MixtureParams, TopHatParams,
    alpha_inv, alpha_map, eval_exponential, eval_gaussian, eval_mixture, eval_tophat, exponential_distance,
    init_nonparametric, kernel_gradients, mix_sigma_inv, mix_sigma_map, normalize, soft_clamp_width, tau_inv,
    tau_map, uniform_kernel)

# frozen oracles (30-digit mpmath)
EXP_M_HALF = 0.606530659712633423603799534991
MIX_AT_ZERO = 0.0439369436234074173267476817014  # exp(-0.25/0.08) + 1e-8
SIG_M10 = 4.53978687024343945047762327635e-05


class TestGaussian:
    def test_center(self):
        assert eval_gaussian(GaussianParams(0.0, 1.0), np.array([0.0]))[0] == 1.0

    def test_unit_offset(self):
        assert eval_gaussian(GaussianParams(0.0, 1.0), np.array([1.0]))[0] == pytest.approx(EXP_M_HALF, rel=1e-15)

    def test_horizontal_euclidean(self):
        v = eval_gaussian(GaussianParams(np.zeros(2), 1.0), np.array([[0.6, 0.8]]))
        assert v[0] == pytest.approx(EXP_M_HALF, rel=1e-14)

    def test_two_point_1d_axis_not_mistaken_for_2d(self):
        v = eval_gaussian(GaussianParams(0.0, 1.0), np.array([0.0, 1.0]))
        assert v.shape == (2,)

    def test_nonpositive_sigma(self):
        with pytest.raises(KernelError):
            GaussianParams(0.0, 0.0)


class TestMixture:
    s = np.linspace(-1, 1, 9)

    def test_null_second_component(self):
        m = eval_mixture(MixtureParams(1.0, 0.2, 0.4, 0.0, -0.3, 0.7), self.s)
        g = eval_gaussian(GaussianParams(0.2, 0.4), self.s)
        np.testing.assert_allclose(m, g + STABILITY, rtol=0, atol=1e-16)

    def test_exact_cancellation(self):
        m = eval_mixture(MixtureParams(1.0, 0.1, 0.5, -1.0, 0.1, 0.5), self.s)
        assert np.all(m == STABILITY)

    def test_symmetric_pair_at_zero(self):
        m = eval_mixture(MixtureParams(0.5, -0.5, 0.2, 0.5, 0.5, 0.2), np.array([0.0]))
        assert m[0] == pytest.approx(MIX_AT_ZERO, rel=1e-14)

    def test_widths_clamped(self):
        lo = eval_mixture(MixtureParams(1.0, 0.0, 0.01, 0.0, 0.0, 1.0), self.s)
        ref = eval_mixture(MixtureParams(1.0, 0.0, 0.1, 0.0, 0.0, 1.0), self.s)
        np.testing.assert_array_equal(lo, ref)


class TestTopHat:
    def test_midpoint_saturates(self):
        v = eval_tophat(TopHatParams(-0.5, 0.5), np.array([0.0]))
        assert abs(v[0] - 1.0) < 1e-6

    def test_at_lower_edge(self):
        v = eval_tophat(TopHatParams(-0.5, 0.5), np.array([-0.5]))
        assert v[0] == pytest.approx(0.5 + STABILITY, abs=1e-12)

    def test_outside_tail(self):
        p = TopHatParams(-0.5, 0.5)
        out = eval_tophat(p, np.array([-0.5 - 10 * p.eps, 0.5 + 10 * p.eps, -0.9, 0.95]))
        assert np.all(out < 1e-4)
        assert out[0] == pytest.approx(SIG_M10 + STABILITY, rel=1e-9)

    def test_swapped_bounds_same_window(self):
        s = np.linspace(-1, 1, 21)
        np.testing.assert_array_equal(eval_tophat(TopHatParams(0.4, -0.2), s),
                                      eval_tophat(TopHatParams(-0.2, 0.4), s))

    def test_horizontal_product(self):
        p = TopHatParams(np.array([-0.5, -0.2]), np.array([0.5, 0.2]))
        pts = np.array([[0.0, 0.0], [0.0, 0.6]])
        v = eval_tophat(p, pts)
        assert v[0] > 0.99 and v[1] < 1e-4

    def test_soft_clamp_verbatim(self):
        assert soft_clamp_width(1.5) == 1.5
        assert soft_clamp_width(1.0) == 1.0
        # beyond 1.5 the tanh branch applies, giving a jump at 1.5
        assert soft_clamp_width(1.5 + 1e-12) == pytest.approx(1.5 * math.tanh(1.0), rel=1e-9)

    @given(st.floats(0, 1e6))
    def test_soft_clamp_bounded(self, w):
        assert soft_clamp_width(w) <= 1.5


class TestExponential:
    def test_time_prediction_point(self):
        k = eval_exponential(ExponentialParams(2.0), Axis("time", np.arange(-6.0, 1.0)), "time")
        assert k[-1] == 1.0
        np.testing.assert_allclose(k, np.exp(-np.arange(6, -1, -1) / 2.0))

    def test_surface_anchor(self):
        ax = Axis("pressure", np.linspace(500, 1000, 16))
        k = eval_exponential(ExponentialParams(3.0, 1.0 - 1e-12), ax, "pressure")
        assert k[-1] == pytest.approx(1.0, abs=1e-10)

    def test_midway_anchor_is_uniform(self):
        d = exponential_distance("pressure", (16,), 0.5)
        assert np.all(d == 7.5)
        ax = Axis("pressure", np.linspace(500, 1000, 16))
        k = eval_exponential(ExponentialParams(3.0, 0.5), ax, "pressure")
        assert np.all(k == k[0])

    def test_horizontal_euclidean_index_distance(self):
        ax = Axis("horizontal-x", [-1.0, 0.0, 1.0])
        k = eval_exponential(ExponentialParams(1.0), (ax, ax), "horizontal")
        assert k[1, 1] == 1.0
        assert k[0, 0] == pytest.approx(math.exp(-math.sqrt(2)))

    def test_alpha_out_of_range(self):
        with pytest.raises(KernelError):
            eval_exponential(ExponentialParams(3.0, 1.0), Axis("pressure", [1.0, 2.0]), "pressure")

    def test_upper_clamp_nearly_uniform(self):
        # tau0 clamps to 100, so over d in [0, 15] the ratio is at most exp(15 / 100)
        ax = Axis("pressure", np.linspace(500, 1000, 16))
        k = eval_exponential(ExponentialParams(1e6, 1e-12), ax, "pressure")
        assert k.max() / k.min() <= math.exp(0.15) * (1 + 1e-12)
        assert k.max() / k.min() == pytest.approx(math.exp(0.15), rel=1e-9)


class TestBoundedMaps:
    @given(st.floats(-30, 30))
    def test_ranges(self, r):
        assert 0.1 <= mix_sigma_map(r)[0] <= 2.0
        assert 1e-4 <= tau_map(r)[0] <= 100.0
        assert 0.0 <= alpha_map(r)[0] <= 1.0

    @given(st.floats(0.11, 1.99), st.floats(2e-4, 99.0), st.floats(0.01, 0.99))
    def test_inverses(self, s, t, a):
        assert mix_sigma_map(mix_sigma_inv(s))[0] == pytest.approx(s, rel=1e-9)
        assert tau_map(tau_inv(t))[0] == pytest.approx(t, rel=1e-9)
        assert alpha_map(alpha_inv(a))[0] == pytest.approx(a, rel=1e-9)


class TestNormalize:
    def test_uniform_on_16_levels(self):
        q = np.full(16, 500.0 / 15)
        kw = normalize(np.ones(16), q)
        np.testing.assert_allclose(kw.normalized, 1.0 / (16 * q[0]), rtol=1e-15)

    def test_fixpoint(self):
        raw = np.array([0.25, 0.5, 0.25])
        kw = normalize(raw, np.ones(3))
        np.testing.assert_array_equal(kw.normalized, raw)

    def test_hand_case(self):
        kw = normalize(np.array([2.0, 2.0]), np.array([0.5, 0.5]))
        assert kw.normalized.tolist() == [1.0, 1.0]

    def test_degenerate_guard(self):
        kw = normalize(np.array([1.0, -1.0]), np.ones(2))
        assert kw.degenerate
        assert kw.denominator == 1e-8
        assert np.all(np.isfinite(kw.normalized))
        neg = normalize(np.array([1.0, -1.0 - 1e-10]), np.ones(2))
        assert neg.degenerate and neg.denominator < 0

    @given(hnp.arrays(np.float64, st.integers(1, 30), elements=st.floats(0.01, 10.0)), st.floats(1e-3, 1e3),
           st.integers(0, 2 ** 32 - 1))
    def test_scale_invariance_and_idempotence(self, raw, c, seed):
        q = np.random.default_rng(seed).uniform(0.1, 2.0, raw.size)
        a = normalize(raw, q).normalized
        np.testing.assert_allclose(normalize(c * raw, q).normalized, a, rtol=1e-12)
        np.testing.assert_allclose(normalize(a, q).normalized, a, rtol=1e-12)
        assert abs(np.sum(a * q) - 1.0) < 1e-12


class TestNonparametricInit:
    def test_zero_variance_is_uniform(self):
        g = make_grid(n_p=16)
        raw = init_nonparametric((16,), 3, scale=0.0)
        kw = normalize(raw.reshape(g.shape), g.weight_tensor())
        np.testing.assert_allclose(kw.normalized, uniform_kernel(g), rtol=1e-14)

    def test_seeded(self):
        assert np.array_equal(init_nonparametric((4, 3), 11), init_nonparametric((4, 3), 11))
        assert not np.array_equal(init_nonparametric((4, 3), 11), init_nonparametric((4, 3), 12))


class TestKernelSpec:
    def test_dims_canonical_order(self):
        assert KernelSpec("gaussian", ("time", "pressure")).dims == ("pressure", "time")

    @pytest.mark.parametrize("dims", [(), ("depth",), ("pressure", "pressure")])
    def test_bad_dims(self, dims):
        with pytest.raises(KernelError):
            KernelSpec("gaussian", dims)

    def test_unknown_family(self):
        with pytest.raises(KernelError):
            KernelSpec("cauchy", ("pressure",))

    def test_local_dim_rejected(self):
        with pytest.raises(KernelError):
            Kernel.create(KernelSpec("gaussian", ("time",)), make_grid(n_t=1))


def test_separable_product():
    g = make_grid(nx=3, n_p=6, n_t=4)
    k = Kernel.create(KernelSpec("gaussian", ("pressure", "time"),
                                 params={"pressure": {"mu": 0.2, "sigma": 0.4}, "time": {"mu": 0.8, "sigma": 0.6}}), g)
    raw, _ = k.raw()
    kp = eval_gaussian(GaussianParams(0.2, 0.4), g.normalized["pressure"])
    kt = eval_gaussian(GaussianParams(0.8, 0.6), g.normalized["time"])
    expect = np.broadcast_to(np.multiply.outer(kp, kt)[None, None], g.shape)
    np.testing.assert_allclose(raw, expect, rtol=1e-14)


def test_gradient_zero_at_gaussian_center():
    g = make_grid(n_p=5)  # normalized coords include 0
    k = Kernel.create(KernelSpec("gaussian", ("pressure",), params={"pressure": {"mu": 0.0, "sigma": 0.5}}), g)
    jac = kernel_gradients(k, normalized=False)
    centre = (0, 0, 2, 0)
    assert jac["pressure.mu"][centre][0] == 0.0
    assert jac["pressure.sigma"][centre] == 0.0


PARAMS = {
    "gaussian": {"mu": 0.1, "sigma": 0.45},
    "mixture": {"w1": 0.8, "mu1": -0.3, "sigma1": 0.4, "w2": -0.4, "mu2": 0.5, "sigma2": 0.3},
    "tophat": {"lower": -0.35, "upper": 0.42},
    "exponential": {"tau0": 4.0, "alpha": 0.3},
}


@pytest.mark.parametrize("family", ["gaussian", "mixture", "tophat", "exponential", "nonparametric"])
@pytest.mark.parametrize("normalized", [False, True])
def test_kernel_gradients_match_finite_differences(family, normalized):
    g = make_grid(n_p=16)
    params = None if family == "nonparametric" else {"pressure": PARAMS[family]}
    k = Kernel.create(KernelSpec(family, ("pressure",), params=params), g, rng_seed=5, init_scale=0.3)
    jac = kernel_gradients(k, normalized)

    def value():
        return k.weights().normalized if normalized else k.raw()[0].copy()

    h = 1e-6
    for name, theta in k.theta.items():
        for idx in np.ndindex(theta.shape):
            old = theta[idx]
            theta[idx] = old + h
            fp = value()
            theta[idx] = old - h
            fm = value()
            theta[idx] = old
            fd = (fp - fm) / (2 * h)
            assert rel_err(jac[name][(...,) + idx], fd) < 1e-6, (name, idx)


@pytest.mark.parametrize("family", ["gaussian", "mixture", "exponential", "tophat"])
def test_multidim_vjp_matches_jacobian(family, rng):
    g = make_grid(nx=3, n_p=6, n_t=4)
    dims = ("horizontal", "pressure", "time") if family != "tophat" else ("pressure", "time")
    k = Kernel.create(KernelSpec(family, dims), g)
    kw, comps = k.forward()
    gn = rng.standard_normal(g.shape)
    grads = k.vjp(kw, comps, gn)
    jac = kernel_gradients(k)
    for name, j in jac.items():
        expect = np.tensordot(gn, j, axes=(tuple(range(4)), tuple(range(4))))
        np.testing.assert_allclose(grads[name], expect, rtol=1e-10, atol=1e-14)


def test_mixture_components_sum_to_kernel():
    g = make_grid(n_p=16)
    k = Kernel.create(KernelSpec("mixture", ("pressure",), params={"pressure": PARAMS["mixture"]}), g)
    c1, c2 = k.mixture_components()
    kw = k.weights()
    np.testing.assert_allclose(c1 + c2 + STABILITY / kw.denominator, kw.normalized, rtol=1e-12)


def test_constrained_roundtrip():
    g = make_grid(n_p=16)
    k = Kernel.create(KernelSpec("mixture", ("pressure",), params={"pressure": PARAMS["mixture"]}), g)
    c = k.constrained()["pressure"]
    for key, v in PARAMS["mixture"].items():
        assert np.ravel(c[key])[0] == pytest.approx(v, rel=1e-9)
