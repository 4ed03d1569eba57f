import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sscp import data
from sscp.errors import ConfigurationError, CsvParseError, InsufficientDataError, SplitIntegrityError


class TestStep:
    def test_band_values(self):
        assert data.step(0.3) == 1.5
        assert data.step(0.5) == 0.1
        assert data.step(0.7) == 1.5

    def test_open_interval_boundaries(self):
        for edge in (0.2, 0.4, 0.6, 0.8):
            assert data.step(edge) == 0.1

    def test_matches_closed_form_on_grid(self):
        grid = np.linspace(0, 1, 10_001)
        expect = np.where(((grid > 0.2) & (grid < 0.4)) | ((grid > 0.6) & (grid < 0.8)), 1.5, 0.1)
        assert np.array_equal(data.step(grid), expect)


class TestSynthetic:
    def test_circle_identity_every_sample(self):
        samples = data.synth_generate(500, seed=3)
        for s in samples:
            x = s.features[0::2]
            y = s.features[1::2]
            # circle of radius L centered at (0, L): x^2 + (y - L)^2 = L^2
            assert np.all(np.abs(x ** 2 + (y - s.latent) ** 2 - s.latent ** 2) < 1e-12)

    def test_zero_latent_gives_zero_features(self):
        # radius 0 collapses the circle onto the origin
        rng = np.random.default_rng(0)
        theta = rng.random(10) * 2 * np.pi
        feats_x = 0.0 * np.sin(theta)
        feats_y = 0.0 * (1 - np.cos(theta))
        assert np.all(feats_x == 0) and np.all(feats_y == 0)
        samples = data.synth_generate(2000, seed=1)
        smallest = min(samples, key=lambda s: s.latent)
        assert np.max(np.abs(smallest.features)) <= 2 * smallest.latent + 1e-15

    def test_band_residual_magnitude_matches_folded_normal(self):
        # |N(1.5, 0.1)| has mean 1.5 up to an exp(-112) correction
        samples = data.synth_generate(100_000, seed=7)
        X, y, latent = data.synth_matrices(samples)
        band = (latent > 0.2) & (latent < 0.4)
        se = 0.1 / np.sqrt(band.sum())
        assert abs(np.abs(y[band]).mean() - 1.5) < 3 * se

    def test_signs_roughly_balanced(self):
        _, y, _ = data.synth_matrices(data.synth_generate(20_000, seed=2))
        frac = np.mean(y > 0)
        assert abs(frac - 0.5) < 3 * np.sqrt(0.25 / len(y))

    def test_determinism(self):
        a = data.synth_matrices(data.synth_generate(100, seed=5))
        b = data.synth_matrices(data.synth_generate(100, seed=5))
        for xa, xb in zip(a, b):
            assert np.array_equal(xa, xb)


class TestSplit:
    def test_documented_sizes_n1000(self):
        sp = data.split(1000, seed=0)
        assert len(sp.test) == 200
        assert len(sp.res) == 160
        assert len(sp.cal) == 128
        assert len(sp.train) == 512

    @given(n=st.integers(30, 5000), seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_disjoint_exhaustive(self, n, seed):
        sp = data.split(n, seed=seed)
        sp.validate(n)  # raises on overlap/gap
        total = sum(len(p) for p in (sp.train, sp.res, sp.cal, sp.test))
        assert total == n

    def test_same_seed_identical(self):
        a, b = data.split(321, seed=9), data.split(321, seed=9)
        for pa, pb in zip((a.train, a.res, a.cal, a.test), (b.train, b.res, b.cal, b.test)):
            assert np.array_equal(pa, pb)

    def test_too_small_raises(self):
        with pytest.raises(InsufficientDataError):
            data.split(4, seed=0)

    def test_validate_catches_overlap(self):
        sp = data.split(100, seed=0)
        bad = data.SplitAssignment(sp.train, sp.res, sp.cal, np.concatenate([sp.test[:-1], sp.train[:1]]))
        with pytest.raises(SplitIntegrityError):
            bad.validate(100)


class TestStandardize:
    def test_target_scaled_by_mean_abs(self):
        ds = data.TabularDataset(np.zeros((3, 1)), np.array([1.0, -2.0, 3.0]))
        (out,), scaler = data.standardize(ds)
        assert scaler.y_scale == 2.0
        assert np.array_equal(out.y, np.array([0.5, -1.0, 1.5]))

    def test_constant_column_flagged_and_zeroed(self):
        X = np.column_stack([np.full(5, 3.3), np.arange(5.0)])
        (out,), scaler = data.standardize(data.TabularDataset(X))
        assert scaler.zero_variance[0] and not scaler.zero_variance[1]
        assert np.all(out.X[:, 0] == 0.0)

    def test_refit_split_has_zero_mean(self):
        rng = np.random.default_rng(0)
        ds = data.TabularDataset(rng.normal(5, 3, size=(200, 4)), rng.normal(size=200))
        (out,), _ = data.standardize(ds)
        assert np.all(np.abs(out.X.mean(axis=0)) < 1e-10)
        assert np.all(np.abs(out.X.std(axis=0) - 1) < 1e-10)

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        X = rng.normal(2, 7, size=(50, 3))
        scaler = data.fit_scaler(X)
        assert np.all(np.abs(scaler.inverse_X(scaler.transform_X(X)) - X) < 1e-10)

    def test_apply_to_other_datasets_uses_fit_stats(self):
        rng = np.random.default_rng(2)
        fit = data.TabularDataset(rng.normal(size=(100, 2)), rng.normal(size=100))
        other = data.TabularDataset(rng.normal(size=(40, 2)), rng.normal(size=40))
        (sf, so), scaler = data.standardize(fit, other)
        assert np.allclose(so.X, (other.X - scaler.feature_mean) / scaler.feature_std)


class TestLabelMask:
    def test_full_fraction_no_unlabeled(self):
        labeled, unlabeled = data.label_mask(np.arange(50), 1.0, seed=0)
        assert len(labeled) == 50 and len(unlabeled) == 0

    def test_tenth_fraction_counts(self):
        labeled, unlabeled = data.label_mask(np.arange(1000), 0.1, seed=1)
        assert len(labeled) == 100 and len(unlabeled) == 900

    @given(p=st.floats(0.01, 1.0), seed=st.integers(0, 1000))
    @settings(max_examples=40, deadline=None)
    def test_disjoint_exhaustive(self, p, seed):
        idx = np.arange(137)
        labeled, unlabeled = data.label_mask(idx, p, seed=seed)
        merged = np.sort(np.concatenate([labeled, unlabeled]))
        assert np.array_equal(merged, idx)

    def test_invalid_fraction(self):
        with pytest.raises(ConfigurationError):
            data.label_mask(np.arange(10), 0.0)
        with pytest.raises(ConfigurationError):
            data.label_mask(np.arange(10), 1.5)


class TestLoadCsv(object):
    def write(self, tmp_path, text):
        p = tmp_path / "data.csv"
        p.write_text(text)
        return str(p)

    def test_basic(self, tmp_path):
        path = self.write(tmp_path, "a,b,y\n1,2,3\n4,5,6\n7,8,9\n")
        ds = data.load_csv(path, "y")
        assert ds.X.shape == (3, 2)
        assert np.array_equal(ds.y, np.array([3.0, 6.0, 9.0]))
        assert ds.feature_names == ["a", "b"]
        assert ds.target_name == "y"

    def test_missing_target(self, tmp_path):
        path = self.write(tmp_path, "a,b\n1,2\n")
        with pytest.raises(CsvParseError, match="'y' not in header"):
            data.load_csv(path, "y")

    def test_nan_cell_rejected_with_coordinates(self, tmp_path):
        path = self.write(tmp_path, "a,y\n1,2\nNaN,4\n")
        with pytest.raises(CsvParseError, match="row 3.*'a'"):
            data.load_csv(path, "y")

    def test_non_numeric_cell(self, tmp_path):
        path = self.write(tmp_path, "a,y\nx,2\n")
        with pytest.raises(CsvParseError, match="row 2.*'a'"):
            data.load_csv(path, "y")

    def test_ragged_row(self, tmp_path):
        path = self.write(tmp_path, "a,b,y\n1,2,3\n4,5\n")
        with pytest.raises(CsvParseError, match="row 3"):
            data.load_csv(path, "y")
