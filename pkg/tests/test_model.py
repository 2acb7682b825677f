import numpy as np
import pytest

from scsa.exceptions import (
    DegenerateModelError,
    InsufficientDataError,
    StabilityError,
)
from scsa.model import (
    FilterBank,
    MvarCoefficients,
    SourceModel,
    TimeSeriesMatrix,
    filter_bank_to_source_model,
    innovations,
    sample_sech,
    simulate_sources,
    source_model_to_filter_bank,
    spectral_radius,
)


def random_model(rng, d, p, scale=0.3):
    b = rng.standard_normal((d, d)) + 2 * np.eye(d)
    lags = [scale * rng.standard_normal((d, d)) for _ in range(p)]
    return SourceModel(b=b, h=MvarCoefficients(lags))


def stable_random_mvar(rng, d, p, target=0.8):
    lags = [0.3 * rng.standard_normal((d, d)) for _ in range(p)]
    h = MvarCoefficients(lags)
    rho = spectral_radius(h)
    if rho > target:
        c = target / rho
        lags = [c ** (i + 1) * hp for i, hp in enumerate(lags)]
        h = MvarCoefficients(lags)
    return h


class TestTransforms:
    def test_identity_model_maps_to_identity_filter(self):
        model = SourceModel(b=np.eye(3), h=MvarCoefficients([np.zeros((3, 3))] * 2))
        fb = source_model_to_filter_bank(model)
        assert np.array_equal(fb.w[0], np.eye(3))
        assert all(np.array_equal(wp, np.zeros((3, 3))) for wp in fb.w[1:])

    def test_single_lag_sign_flip(self):
        a = np.array([[0.5, 0.1], [0.0, -0.3]])
        model = SourceModel(b=np.eye(2), h=MvarCoefficients([a]))
        fb = source_model_to_filter_bank(model)
        np.testing.assert_allclose(fb.w[1], -a)

    def test_filter_to_model_hand_case(self):
        fb = FilterBank([2 * np.eye(2), np.eye(2)])
        model = filter_bank_to_source_model(fb)
        np.testing.assert_allclose(model.b, 2 * np.eye(2))
        np.testing.assert_allclose(model.h.lags[0], -0.5 * np.eye(2))

    def test_round_trip_random(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            d = int(rng.integers(1, 9))
            p = int(rng.integers(0, 8))
            model = random_model(rng, d, p)
            back = filter_bank_to_source_model(source_model_to_filter_bank(model))
            np.testing.assert_allclose(back.b, model.b, rtol=1e-12, atol=1e-12)
            for hp, hp0 in zip(back.h.lags, model.h.lags):
                np.testing.assert_allclose(hp, hp0, rtol=1e-12, atol=1e-12)

    def test_round_trip_other_direction(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            d, p = 3, 2
            w = [rng.standard_normal((d, d)) + 2 * np.eye(d)]
            w += [0.3 * rng.standard_normal((d, d)) for _ in range(p)]
            fb = FilterBank(w)
            back = source_model_to_filter_bank(filter_bank_to_source_model(fb))
            for wp, wp0 in zip(back.w, fb.w):
                np.testing.assert_allclose(wp, wp0, rtol=1e-12, atol=1e-12)

    def test_singular_zero_lag_rejected(self):
        with pytest.raises(DegenerateModelError):
            FilterBank([np.zeros((2, 2)), np.eye(2)])


class TestInnovations:
    def test_identity_filter_drops_leading_columns(self):
        rng = np.random.default_rng(3)
        x = TimeSeriesMatrix(rng.standard_normal((2, 10)))
        fb = FilterBank([np.eye(2), np.zeros((2, 2)), np.zeros((2, 2))])
        eps = innovations(fb, x)
        np.testing.assert_array_equal(eps.data, x.data[:, 2:])

    def test_scalar_hand_case(self):
        fb = FilterBank([np.array([[1.0]]), np.array([[-0.5]])])
        x = TimeSeriesMatrix(np.array([[1.0, 2.0, 3.0]]))
        eps = innovations(fb, x)
        np.testing.assert_allclose(eps.data, [[1.5, 2.0]])

    def test_recovers_recorded_innovations(self):
        rng = np.random.default_rng(4)
        h = stable_random_mvar(rng, 3, 2)
        s, eps = simulate_sources(h, T=500, seed=7)
        m = rng.standard_normal((3, 3)) + 2 * np.eye(3)
        x = TimeSeriesMatrix(m @ s.data)
        model = SourceModel(b=np.linalg.inv(m), h=h)
        rec = innovations(source_model_to_filter_bank(model), x)
        np.testing.assert_allclose(rec.data, eps.data[:, 2:], atol=1e-10)

    def test_too_short_series(self):
        fb = FilterBank([np.eye(2), np.eye(2), np.eye(2)])
        with pytest.raises(InsufficientDataError):
            innovations(fb, TimeSeriesMatrix(np.ones((2, 2))))


class TestSimulateSources:
    def test_no_dynamics_returns_innovations(self):
        h = MvarCoefficients([np.zeros((3, 3))] * 2)
        s, eps = simulate_sources(h, T=100, seed=0)
        np.testing.assert_array_equal(s.data, eps.data)

    def test_ar1_autocorrelation(self):
        h = MvarCoefficients([np.array([[0.9]])])
        s, _ = simulate_sources(h, T=50000, seed=11)
        z = s.data[0]
        z = z - z.mean()
        r1 = np.dot(z[1:], z[:-1]) / np.dot(z, z)
        assert abs(r1 - 0.9) < 0.02

    def test_deterministic_given_seed(self):
        h = MvarCoefficients([0.4 * np.eye(2)])
        s1, e1 = simulate_sources(h, T=200, seed=5)
        s2, e2 = simulate_sources(h, T=200, seed=5)
        np.testing.assert_array_equal(s1.data, s2.data)
        np.testing.assert_array_equal(e1.data, e2.data)

    def test_unstable_model_rejected(self):
        h = MvarCoefficients([1.1 * np.eye(2)])
        with pytest.raises(StabilityError):
            simulate_sources(h, T=100, seed=0)

    def test_burn_in_invariance_in_distribution(self):
        h = MvarCoefficients([np.array([[0.8]])])
        # Average over independent realizations; sech innovations are heavy
        # tailed, so single-run variance estimates are noisy.
        stats = {}
        for burn, seeds in [(10, range(30)), (500, range(100, 130))]:
            runs = [simulate_sources(h, T=20000, seed=s, burn_in=burn)[0] for s in seeds]
            stats[burn] = (
                np.mean([r.data.mean() for r in runs]),
                np.mean([r.data.var() for r in runs]),
            )
        assert abs(stats[10][0] - stats[500][0]) < 0.05
        assert abs(stats[10][1] - stats[500][1]) / stats[500][1] < 0.05


class TestSechSampler:
    def test_matches_numerical_cdf(self):
        # Oracle: CDF by quadrature of the sech density on a grid.
        from scipy.integrate import quad

        rng = np.random.default_rng(42)
        draws = sample_sech(rng, 200000)
        for q in [-2.0, -0.5, 0.0, 0.5, 2.0]:
            # integrand written overflow-safe: sech(v) = 2 e^{-|v|} / (1 + e^{-2|v|})
            cdf, _ = quad(
                lambda v: 2 * np.exp(-abs(v)) / (1 + np.exp(-2 * abs(v))) / np.pi,
                -np.inf,
                q,
            )
            emp = np.mean(draws <= q)
            assert abs(emp - cdf) < 0.005
