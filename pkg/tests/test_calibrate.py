import numpy as np
import pytest
from scipy.stats import multivariate_normal, norm

from emucal.calibrate import (Calibrator, McmcConfig, PriorSpec, invgamma_logpdf,
                              log_prior, posterior_density, reduce_observation,
                              reduced_loglik, run_mcmc, silverman_bandwidth)
from emucal.discrepancy import DiscrepancyBasis, KnotSet
from emucal.errors import NumericalError
from tests.test_emulator import toy_emulator


def orthogonal_discrepancy(basis, n_disc, seed=0):
    """Discrepancy columns orthogonal to the emulator basis (test-only)."""
    rng = np.random.default_rng(seed)
    n = basis.components_.shape[0]
    raw = rng.normal(size=(n, n_disc))
    k_y = basis.components_
    proj = k_y @ np.linalg.solve(k_y.T @ k_y, k_y.T @ raw)
    columns, _ = np.linalg.qr(raw - proj)
    knots = KnotSet(np.zeros((n_disc, 3)), 1.0, 1.0, 1.0)
    return DiscrepancyBasis(knots, 1.0, 1.0, columns, columns)


class TestReduceObservation:
    def test_recovers_scores_when_bases_orthogonal(self):
        est = toy_emulator(p=12, n=40, n_comp=5)
        basis = est.basis_
        disc = orthogonal_discrepancy(basis, 3)
        scores = np.array([0.5, -1.0, 2.0, 0.0, 0.3])
        z = basis.reconstruct(scores)  # includes column means
        zr = reduce_observation(z, basis, disc)
        assert np.allclose(zr.z_reduced[:5], scores, atol=1e-10)
        assert np.allclose(zr.z_reduced[5:], 0.0, atol=1e-10)

    def test_mean_field_reduces_to_zero(self):
        est = toy_emulator()
        zr = reduce_observation(est.basis_.column_means_, est.basis_, None)
        assert np.allclose(zr.z_reduced, 0.0, atol=1e-12)

    def test_matches_normal_equations(self):
        est = toy_emulator(p=14, n=50, n_comp=6, seed=3)
        basis = est.basis_
        disc = orthogonal_discrepancy(basis, 4, seed=4)
        k = np.hstack([basis.components_, disc.components])
        rng = np.random.default_rng(5)
        for _ in range(25):
            z = rng.normal(size=50)
            zr = reduce_observation(z, basis, disc)
            oracle = np.linalg.solve(k.T @ k, k.T @ (z - basis.column_means_))
            assert np.allclose(zr.z_reduced, oracle, atol=1e-10)
            assert np.allclose(zr.ktk_inv, np.linalg.inv(k.T @ k), atol=1e-10)

    def test_collinear_columns_error_names_offenders(self):
        est = toy_emulator(p=10, n=30, n_comp=4)
        basis = est.basis_
        dup = basis.components_[:, [0]] * 0.5  # collinear with emulator column 0
        knots = KnotSet(np.zeros((1, 3)), 1.0, 1.0, 1.0)
        disc = DiscrepancyBasis(knots, 1.0, 1.0, dup, dup)
        with pytest.raises(NumericalError, match="emulator|discrepancy"):
            reduce_observation(np.zeros(30), basis, disc)


class TestReducedLoglik:
    def test_variance_inflation_weights(self):
        # no discrepancy, orthogonal basis: the density factorizes into
        # independent Gaussians with variance var_j + sigma2 / lambda_j, so
        # small-eigenvalue components get down-weighted
        est = toy_emulator(p=12, n=40, n_comp=5, zeta=0.05)
        zr = reduce_observation(np.random.default_rng(6).normal(size=40), est.basis_, None)
        theta = np.array([0.43])
        sigma2 = 0.8
        mu, var = est.predict_scores(theta)
        expected = sum(
            norm.logpdf(zr.z_reduced[j], mu[j],
                        np.sqrt(var[j] + sigma2 / est.basis_.eigenvalues_[j]))
            for j in range(5))
        got = reduced_loglik(zr, est, theta, sigma2, kappa_d=1.0)
        assert got == pytest.approx(expected, rel=1e-9)

    def test_matches_full_space_likelihood_up_to_offset(self):
        # with the basis at full rank the reduction is a sufficient linear
        # transform: pointwise in theta the two log densities differ by a
        # theta-independent constant
        p, n = 8, 30
        est = toy_emulator(p=p, n=n, n_comp=p - 1, zeta=1e-8, seed=7)
        basis = est.basis_
        rng = np.random.default_rng(8)
        z = basis.column_means_ + rng.normal(size=n)
        zr = reduce_observation(z, basis, None)
        sigma2 = 0.05
        k_y = basis.components_
        grid = np.linspace(0.05, 0.95, 7)
        diffs = []
        for theta in grid:
            mu, var = est.predict_scores(np.array([theta]))
            full_cov = k_y @ np.diag(var) @ k_y.T + sigma2 * np.eye(n)
            full = multivariate_normal.logpdf(z - basis.column_means_, k_y @ mu, full_cov)
            red = reduced_loglik(zr, est, np.array([theta]), sigma2, kappa_d=1.0)
            diffs.append(full - red)
        diffs = np.asarray(diffs)
        spread = np.ptp([multivariate_normal.logpdf(
            z - basis.column_means_,
            k_y @ est.predict_scores(np.array([t]))[0],
            k_y @ np.diag(est.predict_scores(np.array([t]))[1]) @ k_y.T
            + sigma2 * np.eye(n)) for t in grid])
        assert np.ptp(diffs) <= 1e-6 * max(spread, 1.0)

    def test_doubling_sigma2_at_mode_decreases_density(self):
        est = toy_emulator(p=10, n=30, n_comp=4, zeta=0.02)
        theta = np.array([0.37])
        mu, _ = est.predict_scores(theta)
        disc = orthogonal_discrepancy(est.basis_, 3, seed=9)
        z = est.basis_.reconstruct(mu)
        zr = reduce_observation(z, est.basis_, disc)
        ll1 = reduced_loglik(zr, est, theta, sigma2=0.5, kappa_d=0.7)
        ll2 = reduced_loglik(zr, est, theta, sigma2=1.0, kappa_d=0.7)
        assert ll2 < ll1

    def test_invariant_under_discrepancy_permutation(self):
        from emucal.calibrate import ReducedObservation
        est = toy_emulator(p=10, n=30, n_comp=4, zeta=0.02)
        disc = orthogonal_discrepancy(est.basis_, 4, seed=10)
        rng = np.random.default_rng(11)
        z = rng.normal(size=30)
        zr = reduce_observation(z, est.basis_, disc)
        perm = np.concatenate([np.arange(4), 4 + rng.permutation(4)])
        zr_perm = ReducedObservation(zr.z_reduced[perm], zr.ktk_inv[np.ix_(perm, perm)],
                                     4, 4, zr.condition_number)
        theta = np.array([0.6])
        args = dict(sigma2=0.4, kappa_d=1.3)
        assert reduced_loglik(zr, est, theta, **args) == pytest.approx(
            reduced_loglik(zr_perm, est, theta, **args), rel=1e-12)

    def test_kappa_y_overrides_change_value(self):
        est = toy_emulator(p=10, n=30, n_comp=4, zeta=0.02)
        zr = reduce_observation(np.random.default_rng(12).normal(size=30),
                                est.basis_, None)
        theta = np.array([0.5])
        base = reduced_loglik(zr, est, theta, 0.3, 1.0)
        scaled = reduced_loglik(zr, est, theta, 0.3, 1.0,
                                kappa_y=3.0 * est._kappa)
        assert base != scaled

    def test_invalid_variances_rejected(self):
        est = toy_emulator()
        zr = reduce_observation(est.basis_.column_means_, est.basis_, None)
        with pytest.raises(ValueError):
            reduced_loglik(zr, est, np.array([0.5]), sigma2=-1.0, kappa_d=1.0)

    def test_small_sigma2_argmax_matches_mahalanobis(self):
        # sills at their fitted values, no discrepancy, sigma2 -> 0: the theta
        # maximizing the reduced log likelihood is the theta minimizing the
        # Mahalanobis distance of the scores under the predictive covariance
        est = toy_emulator(p=15, n=40, n_comp=4, zeta=0.03, seed=13)
        rng = np.random.default_rng(14)
        z = est.basis_.reconstruct(rng.normal(size=4))
        zr = reduce_observation(z, est.basis_, None)
        grid = np.linspace(0.02, 0.98, 50)
        loglik = []
        mahalanobis = []
        for theta in grid:
            loglik.append(reduced_loglik(zr, est, np.array([theta]), 1e-12, 1.0))
            mu, var = est.predict_scores(np.array([theta]))
            mahalanobis.append(np.sum((zr.z_reduced - mu) ** 2 / var))
        assert int(np.argmax(loglik)) == int(np.argmin(mahalanobis))


class TestPriors:
    def test_invgamma_mode(self):
        # mode = scale / (shape + 1), checked by a density scan
        for shape, scale in ((2.0, 2.0), (2.0, 100.0), (5.0, 6.0)):
            xs = np.linspace(1e-3, 3.0 * scale, 200000)
            dens = [invgamma_logpdf(x, shape, scale) for x in xs]
            assert xs[int(np.argmax(dens))] == pytest.approx(
                scale / (shape + 1.0), rel=1e-3)

    def test_outside_bounds_minus_inf(self):
        priors = PriorSpec(np.array([[0.05, 0.55]]), kappa_y_scales=np.array([1.0]))
        assert log_prior(np.array([0.6]), 1.0, 1.0, np.array([1.0]), priors) == -np.inf
        assert np.isfinite(log_prior(np.array([0.3]), 1.0, 1.0, np.array([1.0]), priors))

    def test_four_standard_scale_pairs_representable(self):
        for b_nu in (2.0, 100.0):
            for b_z in (2.0, 100.0):
                priors = PriorSpec(np.array([[0.0, 1.0]]), kappa_d_scale=b_nu,
                                   sigma2_scale=b_z, kappa_y_scales=np.array([1.0]))
                value = log_prior(np.array([0.5]), 1.0, 1.0, np.array([1.0]), priors)
                assert np.isfinite(value)

    def test_mode_anchored_sill_scales(self):
        est = toy_emulator(p=10, n=30, n_comp=3)
        priors = PriorSpec(np.array([[0.0, 1.0]]), kappa_y_shape=5.0)
        anchored = priors.with_emulator_scales(est)
        mles = np.array([h.kappa for h in est.hyperparams_])
        assert np.allclose(anchored.kappa_y_scales, 6.0 * mles)
        # and the prior mode equals the MLE: scan the density
        for j in range(3):
            xs = np.linspace(1e-3, 5.0 * mles[j], 100000)
            dens = [invgamma_logpdf(x, 5.0, anchored.kappa_y_scales[j]) for x in xs]
            assert xs[int(np.argmax(dens))] == pytest.approx(mles[j], rel=1e-3)

    def test_fixed_parameter_via_equal_bounds(self):
        priors = PriorSpec(np.array([[0.05, 0.55], [1.0, 1.0]]),
                           kappa_y_scales=np.array([1.0]))
        assert priors.free_mask.tolist() == [True, False]


class TestRunMcmc:
    def test_prior_only_inverse_gamma_moments(self):
        # disable the likelihood; the sigma2 marginal must match IG(4, 6):
        # mean = 2, var = 2; batch means give the MC standard error
        priors = PriorSpec(np.array([[0.0, 1.0]]), sigma2_shape=4.0, sigma2_scale=6.0,
                           kappa_d_shape=4.0, kappa_d_scale=3.0,
                           kappa_y_scales=np.empty(0))
        config = McmcConfig(n_iter=40000, seed=13, burn_in_fraction=0.2,
                            prior_only=True, step_log_sigma2=1.2, step_log_kappa_d=1.2)
        post = run_mcmc(None, None, priors, config)
        draws = post.sigma2[post.n_burn:]
        batches = np.array_split(draws, 40)
        batch_means = np.array([b.mean() for b in batches])
        se = batch_means.std(ddof=1) / np.sqrt(len(batches))
        assert draws.mean() == pytest.approx(2.0, abs=3.0 * se)
        kd = post.kappa_d[post.n_burn:]
        kd_batches = np.array([b.mean() for b in np.array_split(kd, 40)])
        kd_se = kd_batches.std(ddof=1) / np.sqrt(40)
        assert kd.mean() == pytest.approx(1.0, abs=3.0 * kd_se)

    def test_reproducible_per_seed(self):
        est = toy_emulator(p=10, n=30, n_comp=3, zeta=0.05)
        z = est.basis_.reconstruct(np.array([0.2, -0.1, 0.4]))
        zr = reduce_observation(z, est.basis_, None)
        priors = PriorSpec(np.array([[0.0, 1.0]]))
        config = McmcConfig(n_iter=400, seed=21)
        a = run_mcmc(zr, est, priors.with_emulator_scales(est), config)
        b = run_mcmc(zr, est, priors.with_emulator_scales(est), config)
        assert np.array_equal(a.thetas, b.thetas)
        assert np.array_equal(a.sigma2, b.sigma2)
        assert np.array_equal(a.kappa_y, b.kappa_y)
        assert np.array_equal(a.log_post, b.log_post)

    def test_zero_acceptance_raises(self):
        priors = PriorSpec(np.array([[0.0, 1.0]]), kappa_y_scales=np.empty(0))
        config = McmcConfig(n_iter=400, seed=2, prior_only=True, adapt=False,
                            step_theta=1e7)  # essentially every proposal oob
        with pytest.raises(NumericalError, match="proposal"):
            run_mcmc(None, None, priors, config)

    def test_chain_respects_bounds_and_positivity(self):
        est = toy_emulator(p=10, n=30, n_comp=3, zeta=0.05)
        z = est.basis_.reconstruct(np.array([0.2, -0.1, 0.4]))
        zr = reduce_observation(z, est.basis_, None)
        priors = PriorSpec(np.array([[0.1, 0.9]]))
        post = run_mcmc(zr, est, priors.with_emulator_scales(est),
                        McmcConfig(n_iter=500, seed=3))
        assert post.thetas.min() >= 0.1 and post.thetas.max() <= 0.9
        assert post.sigma2.min() > 0 and post.kappa_d.min() > 0
        assert post.kappa_y.min() > 0
        assert post.n_iter == 500

    def test_split_half_summary_present(self):
        est = toy_emulator(p=10, n=30, n_comp=3, zeta=0.05)
        z = est.basis_.reconstruct(np.array([0.2, -0.1, 0.4]))
        zr = reduce_observation(z, est.basis_, None)
        priors = PriorSpec(np.array([[0.0, 1.0]]))
        post = run_mcmc(zr, est, priors.with_emulator_scales(est),
                        McmcConfig(n_iter=300, seed=4))
        assert "first_part" in post.split_half and "full" in post.split_half
        assert "sigma2" in post.split_half["full"]

    def test_chain_csv_roundtrip_columns(self, tmp_path):
        est = toy_emulator(p=10, n=30, n_comp=2, zeta=0.05)
        z = est.basis_.reconstruct(np.array([0.2, -0.1]))
        zr = reduce_observation(z, est.basis_, None)
        priors = PriorSpec(np.array([[0.0, 1.0]]))
        post = run_mcmc(zr, est, priors.with_emulator_scales(est),
                        McmcConfig(n_iter=50, seed=5))
        path = tmp_path / "chain.csv"
        post.to_csv(path)
        header = path.read_text().splitlines()[0].split(",")
        assert header[:4] == ["theta.kbg", "sigma2", "kappa_d", "kappa_y.1"]
        assert "log_post" in header
        assert any(h.startswith("accepted.") for h in header)
        assert len(path.read_text().splitlines()) == 51


class TestPosteriorDensity:
    def test_constant_chain_spikes_at_value(self):
        grid, dens = posterior_density(np.full(100, 0.37), bounds=(0.0, 1.0), n_grid=101)
        assert grid[int(np.argmax(dens))] == pytest.approx(0.37, abs=0.01)

    def test_integrates_to_one(self):
        rng = np.random.default_rng(14)
        grid, dens = posterior_density(rng.normal(0.5, 0.05, size=5000),
                                       bounds=(0.0, 1.0))
        assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-3)

    def test_standard_normal_kde_mean(self):
        rng = np.random.default_rng(15)
        samples = rng.normal(size=10000)
        grid, dens = posterior_density(samples, bounds=(-5.0, 5.0), n_grid=512)
        mean = np.trapezoid(grid * dens, grid)
        assert abs(mean) < 0.05

    def test_silverman_bandwidth_formula(self):
        rng = np.random.default_rng(16)
        x = rng.normal(size=400)
        sd = x.std(ddof=1)
        iqr = np.subtract(*np.percentile(x, [75, 25]))
        expected = 0.9 * min(sd, iqr / 1.34) * 400 ** (-0.2)
        assert silverman_bandwidth(x) == pytest.approx(expected, rel=1e-12)

    def test_empty_chain_rejected(self):
        with pytest.raises(ValueError):
            posterior_density(np.array([]))


class TestCalibratorEstimator:
    def test_fit_produces_posterior(self):
        est = toy_emulator(p=10, n=30, n_comp=3, zeta=0.05)
        z = est.basis_.reconstruct(np.array([0.5, 0.0, -0.2]))
        cal = Calibrator(emulator=est, n_iter=200, seed=6)
        cal.fit(z)
        assert cal.posterior_.n_iter == 200
        grid, dens = cal.posterior_density()
        assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-3)

    def test_get_params_roundtrip(self):
        cal = Calibrator(n_iter=123, seed=9)
        params = cal.get_params()
        assert params["n_iter"] == 123
        cal.set_params(seed=11)
        assert cal.seed == 11
