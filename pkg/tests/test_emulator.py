import hashlib

import numpy as np
import pytest

from emucal.emulator import EnsembleDesign, PcEmulator
from emucal.gp import GpHyperparams
from emucal.pca import PrincipalComponentBasis
from tests.conftest import synthetic_pc_ensemble


@pytest.fixture(scope="module")
def design():
    return synthetic_pc_ensemble(p=40, n=120, n_modes=5, seed=12)


@pytest.fixture(scope="module")
def fitted(design):
    return PcEmulator(n_components=5, n_restarts=4, seed=0).fit(design)


def toy_emulator(p=10, n=30, n_comp=None, zeta=1e-10, seed=0, phi=0.3):
    """Emulator with hand-set hyperparameters (no fitting)."""
    rng = np.random.default_rng(seed)
    thetas = np.linspace(0.0, 1.0, p)[:, None]
    m_raw = rng.normal(size=(p, n))
    design = EnsembleDesign.from_matrix(thetas, m_raw, ("kbg",))
    n_comp = n_comp or min(p - 1, 6)
    basis = PrincipalComponentBasis(n_components=n_comp).fit(m_raw)
    hypers = [GpHyperparams(max(np.var(basis.scores_[:, j], ddof=1), 0.1),
                            zeta, np.array([phi]))
              for j in range(n_comp)]
    return PcEmulator.from_parts(design, basis, hypers)


class TestEnsembleDesign:
    def test_centering_invariant(self, design):
        assert np.max(np.abs(design.M.sum(axis=0))) < 1e-8

    def test_duplicate_thetas_rejected(self):
        thetas = np.array([[0.1], [0.1], [0.5]])
        with pytest.raises(ValueError, match="distinct"):
            EnsembleDesign.from_matrix(thetas, np.random.default_rng(0).normal(size=(3, 4)))


class TestFit:
    def test_one_hyper_per_component(self, fitted):
        assert len(fitted.hyperparams_) == fitted.basis_.n_components_ == 5

    def test_teaches_variance_threshold(self, design):
        est = PcEmulator(variance_fraction=0.9, n_restarts=2, seed=0).fit(design)
        assert est.basis_.explained_fraction_ >= 0.9

    def test_threads_do_not_change_results(self, design):
        a = PcEmulator(n_components=4, n_restarts=3, seed=1, n_jobs=1).fit(design)
        b = PcEmulator(n_components=4, n_restarts=3, seed=1, n_jobs=3).fit(design)
        for ha, hb in zip(a.hyperparams_, b.hyperparams_):
            assert ha.kappa == hb.kappa and ha.zeta == hb.zeta
            assert np.array_equal(ha.phis, hb.phis)


class TestPredictScores:
    def test_interpolates_design_scores_with_tiny_nugget(self):
        est = toy_emulator(zeta=1e-12)
        scores = est.basis_.scores_
        for i in (0, 4, 9):
            mu, var = est.predict_scores(est.design_.thetas[i])
            assert np.allclose(mu, scores[i], atol=1e-6)
            assert np.all(var <= 1e-6 * (est._kappa + est._zeta))

    def test_reverts_to_prior_far_from_design(self):
        est = toy_emulator(zeta=0.05, phi=0.05)
        with pytest.warns(UserWarning, match="extrapolates"):
            mu, var = est.predict_scores(np.array([30.0]))
        assert np.allclose(mu, 0.0, atol=1e-10)
        assert np.allclose(var, est._kappa + est._zeta, rtol=1e-10)

    def test_matches_componentwise_prediction(self, fitted):
        theta = np.array([0.37])
        mu, var = fitted.predict_scores(theta)
        for j, comp in enumerate(fitted.components_):
            mu_j, var_j = comp.predict(theta)
            assert mu[j] == pytest.approx(mu_j, rel=1e-10, abs=1e-12)
            assert var[j] == pytest.approx(var_j, rel=1e-10, abs=1e-12)

    def test_sill_overrides_flow_through(self, fitted):
        theta = np.array([0.6])
        sills = np.array([h.kappa for h in fitted.hyperparams_]) * 1.7
        mu, var = fitted.predict_scores(theta, sill_overrides=sills)
        for j, comp in enumerate(fitted.components_):
            mu_j, var_j = comp.predict(theta, sill=sills[j])
            assert mu[j] == pytest.approx(mu_j, rel=1e-10, abs=1e-12)
            assert var[j] == pytest.approx(var_j, rel=1e-10, abs=1e-12)

    def test_field_prediction_reconstructs(self, fitted, design):
        theta = design.thetas[3]
        field = fitted.predict(theta)
        mu, _ = fitted.predict_scores(theta)
        assert np.allclose(field[0], fitted.basis_.reconstruct(mu))


class TestPersistence:
    def test_roundtrip(self, tmp_path, fitted):
        fitted.save(tmp_path / "emu")
        loaded = PcEmulator.load(tmp_path / "emu")
        theta = np.array([0.41])
        mu_a, var_a = fitted.predict_scores(theta)
        mu_b, var_b = loaded.predict_scores(theta)
        assert np.allclose(mu_a, mu_b, atol=1e-12)
        assert np.allclose(var_a, var_b, atol=1e-12)

    def test_saved_bytes_deterministic(self, tmp_path, design):
        digests = []
        for run in ("a", "b"):
            est = PcEmulator(n_components=3, n_restarts=3, seed=7,
                             n_jobs=2 if run == "b" else None).fit(design)
            est.save(tmp_path / run)
            payload = ((tmp_path / run / "emulator.json").read_bytes()
                       + (tmp_path / run / "arrays.npz").read_bytes())
            digests.append(hashlib.sha256(payload).hexdigest())
        assert digests[0] == digests[1]

    def test_version_checked(self, tmp_path, fitted):
        import json
        fitted.save(tmp_path / "emu")
        manifest = json.loads((tmp_path / "emu" / "emulator.json").read_text())
        manifest["format_version"] = 99
        (tmp_path / "emu" / "emulator.json").write_text(json.dumps(manifest))
        with pytest.raises(ValueError, match="version"):
            PcEmulator.load(tmp_path / "emu")
