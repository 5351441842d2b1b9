import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from emucal.pca import PrincipalComponentBasis, center_columns


class TestCenterColumns:
    def test_constant_column(self):
        m, means = center_columns(np.full((4, 2), 3.0))
        assert np.allclose(m, 0.0)
        assert np.allclose(means, 3.0)

    def test_already_centered_unchanged(self):
        raw = np.array([[1.0, -2.0], [-1.0, 2.0]])
        m, means = center_columns(raw)
        assert np.allclose(m, raw)
        assert np.allclose(means, 0.0)

    def test_two_by_one(self):
        m, means = center_columns(np.array([[1.0], [3.0]]))
        assert np.allclose(m, [[-1.0], [1.0]])
        assert means[0] == pytest.approx(2.0)

    def test_single_row_rejected(self):
        with pytest.raises(ValueError):
            center_columns(np.ones((1, 3)))


def random_ensemble(p=12, n=40, seed=0):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(p, n)) * rng.uniform(0.5, 3.0, size=n)


class TestBasisConstruction:
    def test_columns_orthogonal_with_eigenvalue_norms(self):
        basis = PrincipalComponentBasis(variance_fraction=1.0).fit(random_ensemble())
        gram = basis.components_.T @ basis.components_
        assert np.allclose(gram, np.diag(basis.eigenvalues_),
                           atol=1e-8 * basis.eigenvalues_[0])

    def test_eigenvalues_sorted_descending(self):
        basis = PrincipalComponentBasis(variance_fraction=1.0).fit(random_ensemble())
        assert np.all(np.diff(basis.eigenvalues_) <= 0)

    def test_trace_identity(self):
        # sum of eigenvalues over all components == total column variance
        raw = random_ensemble(p=10, n=50, seed=4)
        basis = PrincipalComponentBasis(variance_fraction=1.0).fit(raw)
        total_var = np.var(raw, axis=0, ddof=1).sum()
        assert basis.eigenvalues_.sum() == pytest.approx(total_var, rel=1e-10)

    def test_rank_one_matrix(self):
        u = np.array([1.0, -1.0, 2.0, -2.0])
        raw = np.outer(u, np.ones(6))
        basis = PrincipalComponentBasis(variance_fraction=0.5).fit(raw)
        assert basis.n_components_ == 1
        assert basis.explained_fraction_ == pytest.approx(1.0)

    def test_threshold_selects_smallest_count(self):
        # spectrum fractions 0.6, 0.3, 0.1: threshold 0.89 -> 2, 0.91 -> 3
        rng = np.random.default_rng(7)
        q, _ = np.linalg.qr(rng.normal(size=(30, 3)))
        p = 20
        scores = rng.normal(size=(p, 3))
        scores -= scores.mean(axis=0)
        scores, _ = np.linalg.qr(scores)  # orthogonal, still zero-mean
        scores *= np.sqrt((p - 1) * np.array([0.6, 0.3, 0.1]))
        raw = scores @ q.T
        for frac, expected in ((0.59, 1), (0.89, 2), (0.91, 3), (1.0, 3)):
            basis = PrincipalComponentBasis(variance_fraction=frac).fit(raw)
            assert basis.n_components_ == expected, frac

    def test_components_beyond_rank_rejected(self):
        raw = np.outer(np.array([1.0, -1.0, 0.5, -0.5]), np.ones(6))
        with pytest.raises(ValueError, match="rank"):
            PrincipalComponentBasis(n_components=2).fit(raw)

    def test_scores_zero_mean_unit_variance(self):
        basis = PrincipalComponentBasis(variance_fraction=1.0).fit(random_ensemble(p=30))
        assert np.allclose(basis.scores_.mean(axis=0), 0.0, atol=1e-12)
        assert np.allclose(basis.scores_.var(axis=0, ddof=1), 1.0, rtol=1e-8)

    def test_both_truncations_rejected(self):
        with pytest.raises(ValueError):
            PrincipalComponentBasis(n_components=2, variance_fraction=0.9).fit(
                random_ensemble())


class TestProjection:
    @pytest.fixture()
    def basis(self):
        return PrincipalComponentBasis(variance_fraction=1.0).fit(random_ensemble(seed=2))

    def test_basis_column_projects_to_unit_coordinate(self, basis):
        for j in range(basis.n_components_):
            scores = basis.project(basis.components_[:, j])
            expected = np.zeros(basis.n_components_)
            expected[j] = 1.0
            assert np.allclose(scores, expected, atol=1e-10)

    def test_zero_vector(self, basis):
        assert np.allclose(basis.project(np.zeros(basis.components_.shape[0])), 0.0)

    def test_matches_normal_equations(self, basis):
        rng = np.random.default_rng(9)
        k = basis.components_
        for _ in range(100):
            y = rng.normal(size=k.shape[0])
            oracle = np.linalg.solve(k.T @ k, k.T @ y)
            assert np.allclose(basis.project(y), oracle, atol=1e-10)

    def test_dimension_mismatch(self, basis):
        with pytest.raises(ValueError):
            basis.project(np.zeros(3))

    def test_linear_in_input(self, basis):
        rng = np.random.default_rng(10)
        y1, y2 = rng.normal(size=(2, basis.components_.shape[0]))
        lhs = basis.project(2.0 * y1 - 3.0 * y2)
        rhs = 2.0 * basis.project(y1) - 3.0 * basis.project(y2)
        assert np.allclose(lhs, rhs, atol=1e-10)


class TestReconstruction:
    def test_zero_scores_give_column_means(self):
        basis = PrincipalComponentBasis(variance_fraction=1.0).fit(random_ensemble(seed=3))
        assert np.allclose(basis.reconstruct(np.zeros(basis.n_components_)),
                           basis.column_means_)

    def test_full_rank_recovers_ensemble_rows(self):
        raw = random_ensemble(p=8, n=20, seed=5)
        basis = PrincipalComponentBasis(variance_fraction=1.0).fit(raw)
        recon = basis.inverse_transform(basis.transform(raw))
        assert np.allclose(recon, raw, atol=1e-8)

    def test_truncation_error_matches_discarded_spectrum(self):
        raw = random_ensemble(p=10, n=30, seed=6)
        full = PrincipalComponentBasis(variance_fraction=1.0).fit(raw)
        j = 3
        truncated = PrincipalComponentBasis(n_components=j).fit(raw)
        recon = truncated.inverse_transform(truncated.transform(raw))
        err_sq = np.sum((recon - raw) ** 2)
        # SVD optimality: total squared error equals the discarded s^2 mass
        discarded = (raw.shape[0] - 1) * full.eigenvalues_[j:].sum()
        assert err_sq == pytest.approx(discarded, rel=1e-8)

    def test_unfitted_raises(self):
        with pytest.raises(NotFittedError):
            PrincipalComponentBasis().project(np.zeros(4))
