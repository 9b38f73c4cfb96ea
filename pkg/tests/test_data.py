import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import tiny_dataset
from intkernels.data import (DataError, Dataset, SplitError, StandardizerError, SyntheticSpec, chronological_split,
                             extract_windows, fit_standardizer, generate, load_dataset, sample_index, save_dataset)
from intkernels.grid import cell_widths


def small_spec(**kw):
    base = dict(n_years=3, steps_per_year=4, n_x=5, n_y=5, pressure=np.linspace(500, 1000, 8).tolist(),
                min_valid_levels=4, masked_fraction=0.4, snr=None, noise_std=0.0, seed=11)
    base.update(kw)
    return SyntheticSpec(**base)


def _gaussian_oracle(pressure, mu, sigma):
    """Normalized Gaussian on rectangle-rule widths, written out from scratch."""
    p = np.asarray(pressure, dtype=float)
    s = [-1.0 + 2.0 * (v - p[0]) / (p[-1] - p[0]) for v in p]
    w = []
    for m in range(len(p)):
        left = p[m] - p[m - 1] if m > 0 else p[1] - p[0]
        right = p[m + 1] - p[m] if m < len(p) - 1 else p[-1] - p[-2]
        w.append(0.5 * (left + right))
    raw = [math.exp(-(x - mu) ** 2 / (2 * sigma ** 2)) for x in s]
    z = sum(r * q for r, q in zip(raw, w))
    return [r / z for r in raw], w


class TestGenerate:
    def test_same_seed_identical(self):
        a, b = generate(small_spec()), generate(small_spec())
        for name in ("predictors", "mask", "locals", "target"):
            assert np.array_equal(getattr(a.dataset, name), getattr(b.dataset, name), equal_nan=True)

    def test_different_seed_differs(self):
        assert not np.array_equal(generate(small_spec()).dataset.predictors,
                                  generate(small_spec(seed=12)).dataset.predictors)

    def test_gaussian_targets_match_loop_oracle(self):
        planted = [{"family": "gaussian", "dims": ["pressure"], "params": {"pressure": {"mu": 0.3, "sigma": 0.25}}}]
        spec = small_spec(predictor_names=["a"], planted=planted, coefficients=[1.7], offsets=[0.0], scales=[1.0],
                          local_names=["l"], local_coefficients=[0.4], passthrough=[False])
        g = generate(spec)
        ds = g.dataset
        k, w = _gaussian_oracle(spec.pressure, 0.3, 0.25)
        np.testing.assert_allclose(g.planted_weights[0].ravel(), k, rtol=1e-13)
        n_t, nx, ny, n_p = ds.mask.shape
        for t in range(n_t):
            for x in range(nx):
                for y in range(ny):
                    acc = 0.0
                    for m in range(n_p):
                        if ds.mask[t, x, y, m]:
                            acc += k[m] * g.latent[0, t, x, y, m] * w[m]
                    expect = 1.7 * acc + 0.4 * ds.locals[0, t, x, y]
                    assert abs(ds.target[t, x, y] - expect) <= 1e-10 * max(1.0, abs(expect))

    def test_uniform_planted_kernel_gives_quadrature_mean(self):
        planted = [{"family": "nonparametric", "dims": ["pressure"], "params": {"weights": np.ones(8).tolist()}}]
        spec = small_spec(predictor_names=["a"], planted=planted, coefficients=[1.0], offsets=[0.0], scales=[1.0],
                          local_names=[], local_coefficients=[], passthrough=[], masked_fraction=0.0)
        g = generate(spec)
        q = cell_widths(spec.pressure)
        mean = (g.latent[0] * q).sum(-1) / q.sum()
        np.testing.assert_allclose(g.dataset.target, mean, rtol=1e-12, atol=1e-14)

    def test_planted_weights_are_normalized(self):
        g = generate(small_spec())
        q = g.planted_grid.weight_tensor()
        for w in g.planted_weights:
            assert abs(np.sum(w * q) - 1.0) < 1e-12

    def test_masking_keeps_min_levels_and_is_bottom_up(self):
        ds = generate(small_spec()).dataset
        assert ds.mask.sum(-1).min() >= 4
        # valid levels form a prefix from the top of the column
        assert np.all(np.diff(ds.mask.astype(int), axis=-1) <= 0)
        assert not ds.mask.all()

    def test_snr_sets_noise_amplitude(self):
        clean = generate(small_spec(n_years=10, snr=None)).dataset.target
        noisy = generate(small_spec(n_years=10, snr=5.0)).dataset.target
        ratio = np.std(clean) / np.std(noisy - clean)
        assert 4.0 < ratio < 6.25

    def test_degenerate_grid(self):
        with pytest.raises(DataError):
            generate(small_spec(n_years=1, steps_per_year=3, planted_window=7,
                                planted=[{"family": "gaussian", "dims": ["time"]}] * 3))

    def test_mismatched_lists(self):
        with pytest.raises(DataError):
            generate(small_spec(coefficients=[1.0]))

    def test_unknown_spec_key(self):
        with pytest.raises(DataError):
            SyntheticSpec.from_json({"n_years": 2, "bogus": 1})

    def test_spec_json_roundtrip(self):
        s = small_spec()
        assert SyntheticSpec.from_json(s.to_json()) == s


class TestSplit:
    def test_fifteen_three_three(self):
        s = chronological_split(21, (15, 3, 3), window=1)
        assert s.boundaries == {"train": (0, 15), "validation": (15, 18), "test": (18, 21)}

    def test_years_of_steps(self):
        s = chronological_split(21 * 12, (15, 3, 3), window=7, steps_per_year=12)
        assert s.boundaries["validation"] == (180, 216)

    def test_window_drops_first_steps(self):
        s = chronological_split(21 * 12, window=7, steps_per_year=12)
        for part, (start, end) in s.boundaries.items():
            t = s.times(part)
            assert t[0] == start + 6 and t[-1] == end - 1 and len(t) == end - start - 6

    def test_explicit_boundaries(self):
        s = chronological_split(30, boundaries=(20, 25), window=3)
        assert s.boundaries["test"] == (25, 30)

    @pytest.mark.parametrize("bounds", [(0, 5), (5, 5), (5, 30), (25, 20)])
    def test_boundary_outside_range(self, bounds):
        with pytest.raises(SplitError):
            chronological_split(30, boundaries=bounds)

    def test_empty_validation(self):
        with pytest.raises(SplitError):
            chronological_split(21, (15, 0, 3))

    def test_window_longer_than_partition(self):
        with pytest.raises(SplitError):
            chronological_split(21, (15, 3, 3), window=4)

    @given(st.integers(3, 40), st.integers(1, 12), st.integers(1, 6))
    def test_causality_and_disjointness(self, n_years, spy, window):
        try:
            s = chronological_split(n_years * spy, (15, 3, 3), window, spy)
        except SplitError:
            return
        seen = set()
        for part, (start, end) in s.boundaries.items():
            for t in s.times(part):
                ctx = t + np.arange(-(window - 1), 1)
                assert ctx.min() >= start and ctx.max() == t < end
            assert seen.isdisjoint(s.times(part))
            seen.update(s.times(part))
        b = s.boundaries
        assert b["train"][1] == b["validation"][0] and b["validation"][1] == b["test"][0]


class TestStandardizer:
    def setup_method(self):
        self.ds = tiny_dataset(np.random.default_rng(0), n_t=21)
        self.split = chronological_split(21, (15, 3, 3), window=1)

    def test_train_moments(self):
        st_ = fit_standardizer(self.ds, self.split)
        z = st_.apply(self.ds)
        m = self.ds.mask[:15]
        for i in range(self.ds.n_predictors):
            v = z.predictors[i, :15][m]
            assert abs(v.mean()) < 1e-12 and abs(v.std() - 1) < 1e-12
        s = sample_index(self.ds, self.split.times("train"), 1)
        y = z.target[s[:, 0], s[:, 1], s[:, 2]]
        assert abs(y.mean()) < 1e-12 and abs(y.std() - 1) < 1e-12

    def test_masked_points_zero(self):
        z = fit_standardizer(self.ds, self.split).apply(self.ds)
        assert np.all(z.predictors[:, ~self.ds.mask] == 0.0)

    def test_no_leakage(self):
        a = fit_standardizer(self.ds, self.split)
        poked = Dataset(self.ds.predictors.copy(), self.ds.mask, self.ds.locals.copy(), self.ds.target.copy(),
                        self.ds.pressure, self.ds.times, self.ds.x, self.ds.y)
        poked.predictors[:, 15:] = 1e6
        poked.locals[:, 15:] = -3.0
        poked.target[15:] = 99.0
        b = fit_standardizer(poked, self.split)
        assert a.to_json() == b.to_json()

    def test_target_e_minus_one(self):
        st_ = fit_standardizer(self.ds, self.split)
        assert np.log1p(math.e - 1) == pytest.approx(1.0, abs=1e-15)
        assert st_.transform_target(math.e - 1) == pytest.approx((1.0 - st_.target_mean) / st_.target_std, rel=1e-14)
        assert st_.transform_target(0.0) == -st_.target_mean / st_.target_std

    @given(st.lists(st.floats(0.0, 1e3), min_size=1, max_size=50))
    def test_target_roundtrip(self, ys):
        st_ = fit_standardizer(self.ds, self.split)
        y = np.array(ys)
        assert np.max(np.abs(st_.invert_target(st_.transform_target(y)) - y)) < 1e-10 * max(1.0, y.max())

    def test_inverse_clamps_at_zero(self):
        st_ = fit_standardizer(self.ds, self.split)
        assert st_.invert_target(-50.0) == 0.0

    def test_zero_variance_named(self):
        ds = tiny_dataset(np.random.default_rng(1), n_t=21)
        ds.locals[1] = 4.0
        with pytest.raises(StandardizerError, match="local_1"):
            fit_standardizer(ds, self.split)

    def test_passthrough_untouched(self):
        ds = tiny_dataset(np.random.default_rng(1), n_t=21)
        ds.locals[1] = 0.25
        ds.passthrough = [False, True]
        z = fit_standardizer(ds, self.split).apply(ds)
        assert np.all(z.locals[1] == 0.25)

    def test_json_roundtrip(self):
        from intkernels.data import Standardizer
        st_ = fit_standardizer(self.ds, self.split)
        back = Standardizer.from_json(st_.to_json())
        assert np.array_equal(back.transform_target([0.5, 2.0]), st_.transform_target([0.5, 2.0]))

    def test_negative_target_rejected(self):
        ds = tiny_dataset(np.random.default_rng(1), n_t=21)
        ds.target[3, 2, 2] = -1.0
        with pytest.raises(StandardizerError):
            fit_standardizer(ds, self.split)


class TestWindows:
    def test_full_column_window_layout(self, rng):
        ds = tiny_dataset(rng, n_t=8)
        s = np.array([[7, 2, 2], [3, 1, 3]])
        v, m = extract_windows(ds.predictors[0], ds.mask, s, 1, 3, True)
        assert v.shape == (2, 3, 3, ds.mask.shape[-1], 3)
        for n, (t, x, y) in enumerate(s):
            for dx in range(3):
                for dy in range(3):
                    for r in range(3):
                        np.testing.assert_array_equal(v[n, dx, dy, :, r], ds.predictors[0, t - 2 + r, x - 1 + dx,
                                                                                         y - 1 + dy])

    def test_window_never_reads_future(self, rng):
        ds = tiny_dataset(rng, n_t=8)
        s = np.array([[5, 2, 2]])
        a = extract_windows(ds.predictors[0], ds.mask, s, 1, 4, True)[0]
        ds.predictors[0, 6:] = np.nan
        b = extract_windows(ds.predictors[0], ds.mask, s, 1, 4, True)[0]
        assert np.array_equal(a, b)


class TestDatasetIO:
    def test_roundtrip(self, tmp_path):
        g = generate(small_spec())
        save_dataset(tmp_path, g.dataset, {"note": 1})
        ds, manifest = load_dataset(tmp_path)
        assert manifest["note"] == 1
        for name in ("predictors", "mask", "locals", "target", "pressure", "times"):
            assert np.array_equal(getattr(ds, name), getattr(g.dataset, name), equal_nan=True)
        assert ds.passthrough == g.dataset.passthrough and ds.steps_per_year == 4

    def test_not_a_manifest(self, tmp_path):
        (tmp_path / "manifest.json").write_text('{"format": "other"}')
        with pytest.raises(DataError):
            load_dataset(tmp_path)


def test_dataset_rejects_empty_column(rng):
    ds = tiny_dataset(rng)
    mask = ds.mask.copy()
    mask[0, 0, 0] = False
    with pytest.raises(DataError):
        Dataset(ds.predictors, mask, ds.locals, ds.target, ds.pressure, ds.times, ds.x, ds.y)


@settings(max_examples=25)
@given(st.integers(0, 2 ** 32 - 1))
def test_surface_index_is_deepest_valid(seed):
    ds = tiny_dataset(np.random.default_rng(seed))
    surf = ds.surface_index()
    for idx in np.ndindex(surf.shape):
        assert surf[idx] == np.flatnonzero(ds.mask[idx]).max()
