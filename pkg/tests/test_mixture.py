import numpy as np
import pytest

from hsilabel import mixture


# ---------------------------------------------------------------- PCA

def test_pca_rank1_line():
    rng = np.random.default_rng(0)
    t = rng.normal(size=200)
    X = np.stack([t, t], axis=1)  # samples on the line y = x
    model = mixture.fit_pca(X, 2)
    np.testing.assert_allclose(np.abs(model.components[0]),
                               [1 / np.sqrt(2), 1 / np.sqrt(2)], atol=1e-8)
    assert model.components[0][np.argmax(np.abs(model.components[0]))] > 0
    assert model.eigenvalues[1] < 1e-8


def test_pca_identity_covariance_spectrum():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(5000, 4))
    model = mixture.fit_pca(X, 4)
    # compare against the independently computed sample covariance spectrum
    cov = np.cov(X - X.mean(axis=0), rowvar=False)
    expected = np.sort(np.linalg.eigvalsh(cov))[::-1]
    np.testing.assert_allclose(model.eigenvalues, expected, atol=1e-8)
    np.testing.assert_allclose(model.eigenvalues, 1.0, atol=0.15)


def test_pca_orthonormal_rows():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(300, 6)) @ rng.normal(size=(6, 6))
    model = mixture.fit_pca(X, 4)
    gram = model.components @ model.components.T
    np.testing.assert_allclose(gram, np.eye(4), atol=1e-6)
    assert np.all(np.diff(model.eigenvalues) <= 1e-12)


def test_pca_full_basis_isometry():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(50, 5))
    model = mixture.fit_pca(X, 5)
    Y = mixture.project(model, X)
    for i in range(0, 50, 7):
        for j in range(1, 50, 11):
            d0 = np.linalg.norm(X[i] - X[j])
            d1 = np.linalg.norm(Y[i] - Y[j])
            assert abs(d0 - d1) < 1e-5


def test_pca_insufficient_samples():
    with pytest.raises(ValueError):
        mixture.fit_pca(np.zeros((3, 5)), 4)
    with pytest.raises(ValueError):
        mixture.fit_pca(np.zeros((10, 3)), 4)


def test_project_reference_points():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(100, 4))
    model = mixture.fit_pca(X, 3)
    np.testing.assert_allclose(mixture.project(model, model.mean), 0.0, atol=1e-9)
    x = model.mean + model.components[0]
    out = mixture.project(model, x)
    np.testing.assert_allclose(out, [1.0, 0.0, 0.0], atol=1e-9)


def test_project_matches_naive_matvec():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(60, 5))
    model = mixture.fit_pca(X, 3)
    x = rng.normal(size=5)
    naive = np.array([sum(model.components[i, j] * (x[j] - model.mean[j])
                          for j in range(5)) for i in range(3)])
    np.testing.assert_allclose(mixture.project(model, x), naive, atol=1e-9)


def test_project_dim_mismatch():
    model = mixture.fit_pca(np.random.default_rng(6).normal(size=(20, 4)), 2)
    with pytest.raises(ValueError):
        mixture.project(model, np.zeros(3))


def test_pca_projection_zero_mean():
    rng = np.random.default_rng(7)
    X = rng.normal(3.0, 2.0, size=(500, 6))
    model = mixture.fit_pca(X, 4)
    Y = mixture.project(model, X)
    assert np.max(np.abs(Y.mean(axis=0))) < 1e-6


# ---------------------------------------------------------------- EM

def test_gmm_single_component_closed_form():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(50, 3))
    reg = 1e-4
    gmm = mixture.fit_gmm_em(X, 1, np.random.default_rng(0), reg=reg)
    np.testing.assert_allclose(gmm.means[0], X.mean(axis=0), atol=1e-12)
    expected_cov = np.cov(X, rowvar=False, bias=True) + reg * np.eye(3)
    np.testing.assert_allclose(gmm.covs[0], expected_cov, atol=1e-12)
    assert gmm.weights[0] == pytest.approx(1.0)


def test_gmm_two_cluster_recovery():
    rng = np.random.default_rng(9)
    X = np.concatenate([rng.normal(-5.0, 1.0, 1000), rng.normal(5.0, 1.0, 1000)])[:, None]
    gmm = mixture.fit_gmm_em(X, 2, np.random.default_rng(1))
    means = np.sort(gmm.means[:, 0])
    # oracle: per-cluster sample statistics after a midpoint split
    lo, hi = X[X < 0].mean(), X[X >= 0].mean()
    assert abs(means[0] - lo) < 0.2 and abs(means[1] - hi) < 0.2
    assert abs(means[0] + 5.0) < 0.2 and abs(means[1] - 5.0) < 0.2
    np.testing.assert_allclose(gmm.weights, [0.5, 0.5], atol=0.05)


def test_gmm_duplication_invariance():
    rng = np.random.default_rng(10)
    X = np.concatenate([rng.normal(-3.0, 0.5, 100), rng.normal(3.0, 0.5, 100)])[:, None]
    a = mixture.fit_gmm_em(X, 2, np.random.default_rng(2))
    b = mixture.fit_gmm_em(np.concatenate([X, X]), 2, np.random.default_rng(2))
    np.testing.assert_allclose(np.sort(a.means[:, 0]), np.sort(b.means[:, 0]), atol=1e-9)
    np.testing.assert_allclose(np.sort(a.weights), np.sort(b.weights), atol=1e-9)


def test_gmm_loglikelihood_monotone():
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(120, 2)) + rng.integers(0, 3, size=(120, 1)) * 3.0
        lls = _em_trajectory(X, 3, np.random.default_rng(seed))
        diffs = np.diff(lls)
        assert np.all(diffs >= -1e-9), f"seed {seed}: ll decreased by {diffs.min()}"


def _em_trajectory(X, M, rng, iters=40):
    """Record the EM log-likelihood trajectory via repeated short fits."""
    # run full EM but capture likelihood per iteration using the public fit
    # on a fresh generator each prefix would re-seed differently, so compute
    # the trajectory directly from mixture internals instead
    lls = []
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    means = mixture._kmeanspp_means(X, M, rng)
    q = X.shape[1]
    base_cov = np.cov(X, rowvar=False, bias=True).reshape(q, q) + 1e-4 * np.eye(q)
    covs = np.repeat(base_cov[None], M, axis=0)
    weights = np.full(M, 1.0 / M)
    for _ in range(iters):
        log_comp = np.stack([np.log(weights[m]) + mixture._log_gauss(X, means[m], covs[m])
                             for m in range(M)], axis=1)
        lse = mixture._logsumexp(log_comp, axis=1)
        lls.append(float(lse.sum()))
        resp = np.exp(log_comp - lse[:, None])
        nm = resp.sum(axis=0)
        if np.any(nm < 1e-10):
            break
        weights = nm / len(X)
        means = (resp.T @ X) / nm[:, None]
        for m in range(M):
            diff = X - means[m]
            covs[m] = (resp[:, m][:, None] * diff).T @ diff / nm[m] + 1e-4 * np.eye(q)
    return lls


def test_gmm_validation():
    with pytest.raises(ValueError):
        mixture.fit_gmm_em(np.zeros((1, 2)), 2, np.random.default_rng(0))
    with pytest.raises(ValueError):
        mixture.fit_gmm_em(np.zeros((5, 2)), 0, np.random.default_rng(0))


def test_gmm_weights_normalized_and_spd():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(200, 3))
    gmm = mixture.fit_gmm_em(X, 3, np.random.default_rng(3))
    assert abs(gmm.weights.sum() - 1.0) < 1e-9
    for cov in gmm.covs:
        assert np.min(np.linalg.eigvalsh(cov)) >= 1e-4 * 0.99


# ---------------------------------------------------------------- confidence split

def test_split_bimodal():
    rng = np.random.default_rng(12)
    n = 500
    vals = np.concatenate([np.clip(rng.normal(0.1, 0.03, n), 0, 1),
                           np.clip(rng.normal(0.9, 0.03, n), 0, 1)])
    idx = np.arange(2 * n)
    split = mixture.split_confidence({0: (idx, vals)}, np.random.default_rng(4))
    # oracle: 0.5-threshold split on this bimodal sample
    oracle_conf = set(idx[vals >= 0.5])
    got_conf = set(split.confident[0])
    crossover = len(oracle_conf ^ got_conf) / (2 * n)
    assert crossover <= 0.02
    # partition property
    union = np.sort(np.concatenate([split.confident[0], split.hard[0]]))
    assert np.array_equal(union, idx)
    assert len(np.intersect1d(split.confident[0], split.hard[0])) == 0


def test_split_degenerate_all_equal():
    idx = np.arange(100)
    vals = np.full(100, 0.4)
    split = mixture.split_confidence({1: (idx, vals)}, np.random.default_rng(5))
    assert np.array_equal(split.confident[1], idx)
    assert len(split.hard[1]) == 0


def test_split_single_pixel_fallback():
    split = mixture.split_confidence({2: (np.array([7]), np.array([0.3]))},
                                     np.random.default_rng(6))
    assert np.array_equal(split.confident[2], [7])
    assert len(split.hard[2]) == 0


def test_split_rejects_out_of_range():
    with pytest.raises(ValueError):
        mixture.split_confidence({0: (np.arange(10), np.linspace(-0.1, 0.5, 10))},
                                 np.random.default_rng(0))


# ---------------------------------------------------------------- class bank + soft labels

def _bank_1d(mus, sigma2=1.0):
    models = {k: mixture.Gmm(weights=np.array([1.0]),
                             means=np.array([[mu]]),
                             covs=np.array([[[sigma2]]]))
              for k, mu in enumerate(mus)}
    return mixture.ClassGmmBank(models=models, num_classes=len(mus), q=1)


def test_soft_labels_single_class():
    bank = _bank_1d([0.0])
    out = mixture.soft_labels(bank, np.array([[5.0], [-2.0]]))
    np.testing.assert_allclose(out, [[1.0], [1.0]])


def test_soft_labels_symmetric_midpoint():
    bank = _bank_1d([0.0, 2.0])
    out = mixture.soft_labels(bank, np.array([[1.0]]))
    np.testing.assert_allclose(out[0], [0.5, 0.5], atol=1e-6)


def test_soft_labels_reference_value():
    # N(0|0,1)=0.39894, N(0|2,1)=0.05399 -> normalized (0.8808, 0.1192)
    bank = _bank_1d([0.0, 2.0])
    out = mixture.soft_labels(bank, np.array([[0.0]]))
    np.testing.assert_allclose(out[0], [0.8808, 0.1192], atol=1e-3)


def test_soft_labels_outlier_uniform_fallback():
    bank = _bank_1d([0.0, 2.0])
    out = mixture.soft_labels(bank, np.array([[1e6]]))
    np.testing.assert_allclose(out[0], [0.5, 0.5], atol=1e-9)


def test_soft_labels_random_bank_distributions():
    rng = np.random.default_rng(13)
    models = {}
    for k in range(4):
        X = rng.normal(size=(60, 3)) + k
        models[k] = mixture.fit_gmm_em(X, 2, np.random.default_rng(k))
    bank = mixture.ClassGmmBank(models=models, num_classes=4, q=3)
    xs = rng.normal(size=(50, 3)) * 3.0
    out = mixture.soft_labels(bank, xs)
    assert np.all(out >= 0.0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)


def test_soft_labels_translation_equivariance():
    rng = np.random.default_rng(14)
    bank = _bank_1d([0.0, 2.0, -1.0])
    xs = rng.normal(size=(20, 1))
    base = mixture.soft_labels(bank, xs)
    shift = 3.7
    shifted = mixture.ClassGmmBank(
        models={k: mixture.Gmm(g.weights, g.means + shift, g.covs)
                for k, g in bank.models.items()},
        num_classes=3, q=1)
    out = mixture.soft_labels(shifted, xs + shift)
    np.testing.assert_allclose(out, base, atol=1e-9)


def test_fit_class_bank_excludes_empty_class():
    rng = np.random.default_rng(15)
    spectra = rng.normal(size=(100, 4))
    split = mixture.ConfidenceSplit(
        confident={0: np.arange(50), 1: np.empty(0, dtype=np.int64)},
        hard={0: np.empty(0, dtype=np.int64), 1: np.arange(50, 100)})
    pca = mixture.fit_pca(spectra, 2)
    with pytest.warns(UserWarning):
        bank = mixture.fit_class_bank(spectra, split, pca, 2, M=2,
                                      rng=np.random.default_rng(7))
    assert 1 not in bank.models and 0 in bank.models
    out = mixture.soft_labels(bank, mixture.project(pca, spectra[:5]))
    np.testing.assert_allclose(out[:, 1], 0.0)
    np.testing.assert_allclose(out[:, 0], 1.0)


def test_fit_class_bank_small_class_falls_back_to_one_component():
    rng = np.random.default_rng(16)
    spectra = rng.normal(size=(40, 4))
    split = mixture.ConfidenceSplit(confident={0: np.arange(4)}, hard={0: np.arange(0)})
    pca = mixture.fit_pca(spectra, 3)
    bank = mixture.fit_class_bank(spectra, split, pca, 1, M=2,
                                  rng=np.random.default_rng(8))
    assert bank.models[0].n_components == 1


def test_fit_class_bank_determinism():
    rng = np.random.default_rng(17)
    spectra = rng.normal(size=(80, 4))
    idx = np.arange(40)
    split = mixture.ConfidenceSplit(confident={0: idx, 1: idx.copy()},
                                    hard={0: idx[:0], 1: idx[:0]})
    pca = mixture.fit_pca(spectra, 2)
    bank = mixture.fit_class_bank(spectra, split, pca, 2, M=2,
                                  rng=np.random.default_rng(9))
    # identical confident sets with a shared generator stream still yield
    # identical per-class models because seeding is data-driven
    np.testing.assert_allclose(bank.models[0].means, bank.models[1].means, atol=1e-12)


def test_bank_density_integrates_to_one():
    rng = np.random.default_rng(18)
    spectra = rng.normal(size=(200, 3))
    split = mixture.ConfidenceSplit(confident={0: np.arange(200)}, hard={0: np.arange(0)})
    pca = mixture.fit_pca(spectra, 1)
    bank = mixture.fit_class_bank(spectra, split, pca, 1, M=2,
                                  rng=np.random.default_rng(10))
    # numerical quadrature of the fitted 1-D density
    xs = np.linspace(-30, 30, 20001)[:, None]
    dens = np.exp(mixture.gmm_log_density(bank.models[0], xs))
    integral = np.trapezoid(dens, xs[:, 0])
    assert abs(integral - 1.0) < 1e-4


def test_bank_recovers_generating_means():
    rng = np.random.default_rng(19)
    centers = {0: -4.0, 1: 4.0}
    spectra = np.concatenate([rng.normal(centers[0], 0.5, size=(300, 2)),
                              rng.normal(centers[1], 0.5, size=(300, 2))])
    split = mixture.ConfidenceSplit(confident={0: np.arange(300),
                                               1: np.arange(300, 600)},
                                    hard={0: np.arange(0), 1: np.arange(0)})
    pca = mixture.fit_pca(spectra, 2)
    bank = mixture.fit_class_bank(spectra, split, pca, 2, M=1,
                                  rng=np.random.default_rng(11))
    for k in (0, 1):
        back = bank.models[k].means[0] @ pca.components + pca.mean
        np.testing.assert_allclose(back, centers[k], atol=0.2)


def test_bank_serialization_roundtrip(tmp_path):
    rng = np.random.default_rng(20)
    spectra = rng.normal(size=(100, 4))
    split = mixture.ConfidenceSplit(confident={0: np.arange(50), 1: np.arange(50, 100)},
                                    hard={0: np.arange(0), 1: np.arange(0)})
    pca = mixture.fit_pca(spectra, 2)
    bank = mixture.fit_class_bank(spectra, split, pca, 2, M=2,
                                  rng=np.random.default_rng(12))
    mixture.save_bank(bank, pca, tmp_path / "bank")
    loaded, pca2 = mixture.load_bank(tmp_path / "bank")
    assert loaded.num_classes == 2 and loaded.q == 2
    xs = mixture.project(pca, spectra[:10])
    a = mixture.soft_labels(bank, xs)
    b = mixture.soft_labels(loaded, xs)
    np.testing.assert_allclose(a, b, atol=1e-5)
