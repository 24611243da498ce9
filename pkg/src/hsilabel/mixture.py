"""PCA reduction, EM-fitted Gaussian mixtures, and soft-label generation.

The class-conditional density model: spectra are projected to a shared PCA
space, per-class mixtures are fitted on each class's confident pixels, and
soft labels are the class-normalized mixture densities.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from hsilabel.ptf import load_ptf, save_ptf

DEFAULT_PCA_Q = 8
DEFAULT_GMM_M = 2
DEFAULT_REG = 1e-4
DEFAULT_MAX_ITER = 200
DEFAULT_TOL = 1e-6

#: Below this log-density (every class), soft labels fall back to uniform.
LOG_DENSITY_FLOOR = -700.0

#: Minimum pixels per class before the confidence split is attempted.
MIN_SPLIT_COUNT = 8

#: Component-mean gap below which the confidence split is degenerate.
MIN_SPLIT_GAP = 0.02


@dataclass
class PcaModel:
    """Mean, orthonormal component rows (descending eigenvalue), eigenvalues."""

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray


def fit_pca(samples: np.ndarray, q: int) -> PcaModel:
    """Top-q eigendecomposition of the mean-centered sample covariance.

    Component signs are fixed so the largest-magnitude entry of each row is
    positive.
    """
    X = np.asarray(samples, dtype=np.float64)
    n, b = X.shape
    if q > b:
        raise ValueError(f"q={q} exceeds dimensionality {b}")
    if n < q + 1:
        raise ValueError(f"need at least {q + 1} samples, got {n}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:q]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T
    for i in range(q):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    return PcaModel(mean=mean, components=comps, eigenvalues=evals)


def project(pca: PcaModel, x: np.ndarray) -> np.ndarray:
    """Project vectors into the reduced space: components @ (x - mean)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != pca.mean.shape[0]:
        raise ValueError(f"dimension {x.shape[-1]} does not match model ({pca.mean.shape[0]})")
    return (x - pca.mean) @ pca.components.T


@dataclass
class Gmm:
    """Gaussian mixture: weights [M], means [M][q], covariances [M][q][q]."""

    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    @property
    def n_components(self) -> int:
        return len(self.weights)


def _log_gauss(X: np.ndarray, mean: np.ndarray, cov: np.ndarray) -> np.ndarray:
    q = len(mean)
    chol = np.linalg.cholesky(cov)
    diff = X - mean
    z = np.linalg.solve(chol, diff.T).T
    maha = np.sum(z**2, axis=1)
    logdet = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (q * np.log(2.0 * np.pi) + logdet + maha)


def gmm_log_density(gmm: Gmm, X: np.ndarray) -> np.ndarray:
    """Per-sample log of the weighted mixture density, via log-sum-exp."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    comp = np.empty((X.shape[0], gmm.n_components))
    for m in range(gmm.n_components):
        comp[:, m] = np.log(max(gmm.weights[m], 1e-300)) + _log_gauss(X, gmm.means[m], gmm.covs[m])
    return _logsumexp(comp, axis=1)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    mx = np.max(a, axis=axis, keepdims=True)
    out = mx.squeeze(axis) + np.log(np.sum(np.exp(a - mx), axis=axis))
    return out


def _seed_order(X: np.ndarray) -> np.ndarray:
    # Lexicographic order makes seeding invariant to sample duplication.
    return np.lexsort(X.T[::-1])


def _kmeanspp_means(X: np.ndarray, M: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    order = _seed_order(X)
    Xs = X[order]
    means = []
    weights = np.full(n, 1.0 / n)
    for _ in range(M):
        if means:
            d2 = np.min([np.sum((Xs - m) ** 2, axis=1) for m in means], axis=0)
            total = d2.sum()
            probs = d2 / total if total > 0 else weights
        else:
            probs = weights
        cdf = np.cumsum(probs)
        cdf[-1] = 1.0
        idx = int(np.searchsorted(cdf, rng.random(), side="right"))
        means.append(Xs[min(idx, n - 1)].copy())
    return np.array(means)


def fit_gmm_em(samples: np.ndarray, M: int, rng: np.random.Generator,
               max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
               reg: float = DEFAULT_REG) -> Gmm:
    """Fit an M-component full-covariance mixture by EM.

    Responsibilities use log-sum-exp; every covariance update adds reg * I.
    Initialization is k-means++-style seeding from the given generator. An
    empty component is re-seeded once from the farthest sample (Mahalanobis);
    if it empties again the component count is reduced with a warning.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if X.ndim == 1:
        X = X[:, None]
    n, q = X.shape
    if M < 1:
        raise ValueError("M must be at least 1")
    if n < M:
        raise ValueError(f"need at least {M} samples, got {n}")

    means = _kmeanspp_means(X, M, rng)
    base_cov = np.cov(X, rowvar=False, bias=True).reshape(q, q) + reg * np.eye(q)
    covs = np.repeat(base_cov[None], M, axis=0)
    weights = np.full(M, 1.0 / M)
    reseeded = np.zeros(M, dtype=bool)

    prev_ll = -np.inf
    for _ in range(max_iter):
        log_comp = np.empty((n, M))
        for m in range(M):
            log_comp[:, m] = np.log(max(weights[m], 1e-300)) + _log_gauss(X, means[m], covs[m])
        lse = _logsumexp(log_comp, axis=1)
        ll = float(lse.sum())
        resp = np.exp(log_comp - lse[:, None])

        nm = resp.sum(axis=0)
        empty = np.where(nm < 1e-10)[0]
        if len(empty) > 0:
            drop = []
            for m in empty:
                if reseeded[m]:
                    drop.append(m)
                    continue
                reseeded[m] = True
                maha = np.full(n, np.inf)
                for mm in range(M):
                    if mm in empty:
                        continue
                    chol = np.linalg.cholesky(covs[mm])
                    z = np.linalg.solve(chol, (X - means[mm]).T).T
                    maha = np.minimum(maha, np.sum(z**2, axis=1))
                order = _seed_order(X)
                far = order[int(np.argmax(maha[order]))]
                means[m] = X[far]
                covs[m] = base_cov
                weights[m] = 1.0 / n
            if drop:
                warnings.warn(f"dropping {len(drop)} empty mixture component(s)")
                keep = np.array([m for m in range(M) if m not in drop])
                means, covs = means[keep], covs[keep]
                weights = weights[keep] / weights[keep].sum()
                reseeded = reseeded[keep]
                M = len(keep)
            weights = weights / weights.sum()
            prev_ll = -np.inf
            continue

        weights = nm / n
        means = (resp.T @ X) / nm[:, None]
        for m in range(M):
            diff = X - means[m]
            covs[m] = (resp[:, m][:, None] * diff).T @ diff / nm[m] + reg * np.eye(q)

        if ll - prev_ll < tol and np.isfinite(prev_ll):
            prev_ll = ll
            break
        prev_ll = ll

    return Gmm(weights=weights.copy(), means=means.copy(), covs=covs.copy())


@dataclass
class ConfidenceSplit:
    """Per-class partitions of predicted pixels into confident and hard."""

    confident: dict[int, np.ndarray] = field(default_factory=dict)
    hard: dict[int, np.ndarray] = field(default_factory=dict)


def split_confidence(bvsb_by_class: dict[int, tuple[np.ndarray, np.ndarray]],
                     rng: np.random.Generator) -> ConfidenceSplit:
    """Split each class's pixels by a 2-component mixture over margin values.

    ``bvsb_by_class`` maps class index to (pixel indices, margin values).
    A pixel is confident iff its responsibility for the higher-mean component
    exceeds 0.5. Classes with fewer than 8 pixels or a near-degenerate fit
    fall back to all-confident.
    """
    split = ConfidenceSplit()
    for k in sorted(bvsb_by_class):
        idx, vals = bvsb_by_class[k]
        idx = np.asarray(idx)
        vals = np.asarray(vals, dtype=np.float64)
        if np.any(vals < 0) or np.any(vals > 1):
            raise ValueError("margin values must lie in [0, 1]")
        if len(idx) < MIN_SPLIT_COUNT:
            split.confident[k] = idx.copy()
            split.hard[k] = idx[:0].copy()
            continue
        gmm = fit_gmm_em(vals[:, None], 2, rng, reg=1e-6)
        if gmm.n_components < 2 or abs(gmm.means[0, 0] - gmm.means[1, 0]) < MIN_SPLIT_GAP:
            split.confident[k] = idx.copy()
            split.hard[k] = idx[:0].copy()
            continue
        hi = int(np.argmax(gmm.means[:, 0]))
        log_comp = np.stack([
            np.log(max(gmm.weights[m], 1e-300)) + _log_gauss(vals[:, None], gmm.means[m], gmm.covs[m])
            for m in range(2)
        ], axis=1)
        resp_hi = np.exp(log_comp[:, hi] - _logsumexp(log_comp, axis=1))
        conf_mask = resp_hi > 0.5
        split.confident[k] = idx[conf_mask]
        split.hard[k] = idx[~conf_mask]
    return split


@dataclass
class ClassGmmBank:
    """Per-class mixtures over a shared reduced spectral space."""

    models: dict[int, Gmm]
    num_classes: int
    q: int


def fit_class_bank(spectra: np.ndarray, split: ConfidenceSplit, pca: PcaModel,
                   num_classes: int, M: int = DEFAULT_GMM_M,
                   rng: np.random.Generator | None = None,
                   max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
                   reg: float = DEFAULT_REG) -> ClassGmmBank:
    """Fit one mixture per class on the PCA projection of its confident pixels.

    ``spectra`` is the flat [N][B] pixel array the split indices refer to.
    Classes with too few confident pixels for M components fall back to
    M = 1; classes with none are excluded with a warning.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    # one sub-seed shared by all per-class fits: identical confident sets
    # yield identical models, and fits may run in parallel
    sub_seed = int(rng.integers(0, 2**63))
    q = pca.components.shape[0]
    models: dict[int, Gmm] = {}
    for k in sorted(split.confident):
        idx = split.confident[k]
        if len(idx) == 0:
            warnings.warn(f"class {k} has no confident pixels; excluded from the density bank")
            continue
        Xk = project(pca, spectra[idx])
        mk = M if len(idx) >= M * (q + 1) else 1
        mk = min(mk, len(idx))
        models[k] = fit_gmm_em(Xk, mk, np.random.default_rng(sub_seed),
                               max_iter=max_iter, tol=tol, reg=reg)
    return ClassGmmBank(models=models, num_classes=num_classes, q=q)


def soft_labels(bank: ClassGmmBank, xs: np.ndarray) -> np.ndarray:
    """Normalized class-conditional densities as [n][K] soft labels.

    Computed entirely in log space. Classes missing from the bank get zero
    mass; samples below the log-density floor under every class fall back to
    a uniform distribution over the fitted classes.
    """
    if not bank.models:
        raise ValueError("empty density bank")
    X = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if X.shape[1] != bank.q:
        raise ValueError(f"sample dim {X.shape[1]} does not match bank dim {bank.q}")
    n = X.shape[0]
    fitted = sorted(bank.models)
    logd = np.full((n, len(fitted)), -np.inf)
    for j, k in enumerate(fitted):
        logd[:, j] = gmm_log_density(bank.models[k], X)
    out = np.zeros((n, bank.num_classes), dtype=np.float64)
    fallback = logd.max(axis=1) < LOG_DENSITY_FLOOR
    norm = np.exp(logd - _logsumexp(logd, axis=1)[:, None])
    norm[fallback] = 1.0 / len(fitted)
    for j, k in enumerate(fitted):
        out[:, k] = norm[:, j]
    return out


def save_bank(bank: ClassGmmBank, pca: PcaModel, out_dir) -> None:
    """Checkpoint the bank and its PCA space as PTF tensors plus a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"num_classes = {bank.num_classes}", f"q = {bank.q}",
             f"classes = {','.join(str(k) for k in sorted(bank.models))}"]
    save_ptf(pca.mean.astype(np.float32), out / "pca_mean.ptf")
    save_ptf(pca.components.astype(np.float32), out / "pca_components.ptf")
    save_ptf(pca.eigenvalues.astype(np.float32), out / "pca_eigenvalues.ptf")
    for k in sorted(bank.models):
        g = bank.models[k]
        lines.append(f"components.{k} = {g.n_components}")
        save_ptf(g.weights.astype(np.float32), out / f"class{k}_weights.ptf")
        save_ptf(g.means.astype(np.float32), out / f"class{k}_means.ptf")
        save_ptf(g.covs.astype(np.float32), out / f"class{k}_covs.ptf")
    (out / "bank.txt").write_text("\n".join(lines) + "\n")


def load_bank(in_dir) -> tuple[ClassGmmBank, PcaModel]:
    src = Path(in_dir)
    meta = {}
    for line in (src / "bank.txt").read_text().splitlines():
        if "=" in line:
            key, val = line.split("=", 1)
            meta[key.strip()] = val.strip()
    pca = PcaModel(mean=load_ptf(src / "pca_mean.ptf").astype(np.float64),
                   components=load_ptf(src / "pca_components.ptf").astype(np.float64),
                   eigenvalues=load_ptf(src / "pca_eigenvalues.ptf").astype(np.float64))
    models = {}
    classes = [int(c) for c in meta["classes"].split(",") if c]
    for k in classes:
        models[k] = Gmm(weights=load_ptf(src / f"class{k}_weights.ptf").astype(np.float64),
                        means=load_ptf(src / f"class{k}_means.ptf").astype(np.float64),
                        covs=load_ptf(src / f"class{k}_covs.ptf").astype(np.float64))
    return ClassGmmBank(models=models, num_classes=int(meta["num_classes"]), q=int(meta["q"])), pca
