"""Bayesian zero-shot classification with DNA embeddings as side information.

Every class gets a multivariate Student-t posterior predictive over (PCA
reduced) image features under a normal-inverse-Wishart model. Unseen classes
have no images; their prior mean is borrowed from the K seen classes whose
DNA embeddings lie closest.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence, TextIO

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln

from barcodemlm.corpus import largest_remainder
from barcodemlm.evaluation import EvalReport, harmonic_mean

PAPER_GRID = {
    "k0": [0.1, 1.0],
    "k1": [10.0, 25.0],
    "m": [2500, 12500, 50000, 250000],
    "s": [1.0, 5.0, 10.0],
    "K": [1, 2, 3],
}

SMALL_GRID = {"k0": [0.1, 1.0], "k1": [10.0], "m": [50, 500], "s": [1.0, 5.0], "K": [1, 2]}

GRID_COLUMNS = ["k0", "k1", "m", "s", "K", "seen_acc", "unseen_acc", "harmonic_mean", "valid"]


class InvalidHyperparameters(ValueError):
    pass


# ---------------------------------------------------------------------------
# PCA


@dataclass
class PCA:
    mean: np.ndarray
    components: np.ndarray  # (target_dim, D), rows orthonormal
    eigenvalues: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray, target_dim: int) -> "PCA":
        x = np.asarray(x, dtype=np.float64)
        n, d = x.shape
        if not 1 <= target_dim <= min(n - 1, d):
            raise ValueError(f"target_dim={target_dim} must be in [1, min(n-1, D)] = [1, {min(n - 1, d)}]")
        mean = x.mean(axis=0)
        cov = np.cov(x - mean, rowvar=False).reshape(d, d)
        values, vectors = np.linalg.eigh(cov)
        order = np.argsort(values)[::-1][:target_dim]
        comps = vectors[:, order].T
        # sign convention: the largest-magnitude entry of each component is positive
        pivots = np.argmax(np.abs(comps), axis=1)
        comps *= np.sign(comps[np.arange(target_dim), pivots])[:, None]
        return cls(mean, comps, values[order])

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) @ self.components.T

    def inverse_transform(self, z: np.ndarray) -> np.ndarray:
        return z @ self.components + self.mean


# ---------------------------------------------------------------------------
# statistics and priors


@dataclass
class ClassStatistics:
    mean: np.ndarray
    scatter: np.ndarray
    count: int


def compute_class_statistics(features: np.ndarray, class_ids: Sequence[int]) -> dict[int, ClassStatistics]:
    features = np.asarray(features, dtype=np.float64)
    class_ids = np.asarray(class_ids)
    if features.shape[0] != class_ids.shape[0]:
        raise ValueError("features and class ids differ in length")
    stats = {}
    for cls in np.unique(class_ids):
        pts = features[class_ids == cls]
        mean = pts.mean(axis=0)
        centred = pts - mean
        stats[int(cls)] = ClassStatistics(mean, centred.T @ centred, pts.shape[0])
    return stats


def surrogate_prior(
    unseen_dna_mean: np.ndarray,
    seen_dna_means: Mapping[int, np.ndarray],
    seen_image_means: Mapping[int, np.ndarray],
    K: int,
) -> tuple[list[int], np.ndarray]:
    """K nearest seen classes in DNA space and the mean of their image means."""
    if K < 1:
        raise ValueError("K must be >= 1")
    ids = sorted(seen_dna_means)
    if K > len(ids):
        raise ValueError(f"K={K} exceeds the {len(ids)} seen classes")
    dna = np.stack([seen_dna_means[c] for c in ids])
    dist = np.sqrt(((dna - np.asarray(unseen_dna_mean)) ** 2).sum(axis=1))
    order = np.lexsort((np.array(ids), dist))[:K]
    neighbours = [ids[i] for i in order]
    return neighbours, np.mean([seen_image_means[c] for c in neighbours], axis=0)


@dataclass(frozen=True)
class BZSLHyperparameters:
    k0: float
    k1: float
    m: int
    s: float
    K: int

    @property
    def kappa(self) -> float:
        """Single prior pseudo-count from the two dispersion constants."""
        return self.k0 * self.k1 / (self.k0 + self.k1)

    def as_row(self) -> dict:
        return {"k0": self.k0, "k1": self.k1, "m": self.m, "s": self.s, "K": self.K}


@dataclass
class StudentT:
    loc: np.ndarray
    scale: np.ndarray
    dof: float


def posterior_predictive_params(
    stats: ClassStatistics | None,
    prior_mean: np.ndarray,
    hyper: BZSLHyperparameters,
    sigma_bar: np.ndarray,
) -> StudentT:
    """Normal-inverse-Wishart posterior predictive for one class.

    Prior: Sigma ~ IW(m, s (m - D - 1) sigma_bar), mu | Sigma ~ N(prior_mean, Sigma / kappa)
    with kappa = k0 k1 / (k0 + k1). ``stats=None`` means no observations.
    """
    prior_mean = np.asarray(prior_mean, dtype=np.float64)
    d = prior_mean.shape[0]
    if hyper.m <= d + 1:
        raise InvalidHyperparameters(f"m={hyper.m} must exceed D + 1 = {d + 1}; increase m")
    kappa = hyper.kappa
    psi = hyper.s * (hyper.m - d - 1) * np.asarray(sigma_bar, dtype=np.float64)
    n = 0 if stats is None else stats.count
    if n == 0:
        loc, psi_n = prior_mean.copy(), psi
    else:
        diff = stats.mean - prior_mean
        loc = (kappa * prior_mean + n * stats.mean) / (kappa + n)
        psi_n = psi + stats.scatter + (kappa * n / (kappa + n)) * np.outer(diff, diff)
    kappa_n = kappa + n
    dof = hyper.m + n - d + 1
    if dof <= 0:
        raise InvalidHyperparameters(f"predictive degrees of freedom {dof} <= 0; increase m")
    scale = psi_n * (kappa_n + 1) / (kappa_n * dof)
    return StudentT(loc, 0.5 * (scale + scale.T), float(dof))


def _cholesky(scale: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(scale)
    except np.linalg.LinAlgError:
        d = scale.shape[0]
        jitter = 1e-8 * np.trace(scale) / d
        try:
            return np.linalg.cholesky(scale + jitter * np.eye(d))
        except np.linalg.LinAlgError:
            raise InvalidHyperparameters("predictive scale matrix is not positive definite") from None


def student_t_logpdf(x: np.ndarray, dist: StudentT) -> np.ndarray:
    """Multivariate Student-t log density of each row of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d = dist.loc.shape[0]
    chol = _cholesky(dist.scale)
    sol = solve_triangular(chol, (x - dist.loc).T, lower=True)
    maha = (sol ** 2).sum(axis=0)
    nu = dist.dof
    log_det = 2.0 * np.log(np.diag(chol)).sum()
    return (
        gammaln((nu + d) / 2) - gammaln(nu / 2) - 0.5 * d * math.log(nu * math.pi)
        - 0.5 * log_det - 0.5 * (nu + d) * np.log1p(maha / nu)
    )


def bzsl_classify(features: np.ndarray, predictives: Mapping[int, StudentT]) -> tuple[np.ndarray, np.ndarray]:
    """Arg-max predictive density over classes; returns (predicted ids, log densities)."""
    class_ids = sorted(predictives)
    logdens = np.column_stack([student_t_logpdf(features, predictives[c]) for c in class_ids])
    bad = ~np.isfinite(logdens).all(axis=0)
    if bad.any():
        raise FloatingPointError(f"non-finite density for class {class_ids[int(np.argmax(bad))]}")
    return np.array(class_ids)[np.argmax(logdens, axis=1)], logdens


# ---------------------------------------------------------------------------
# model fitting over a partition


@dataclass
class ZSLDataset:
    """Image features, class labels, DNA class means, and the index partitions.

    ``train`` is what the validation-stage model is fitted on; ``val_seen`` is
    held out from seen classes and ``val_unseen`` covers the validation-only
    unseen classes. The test-stage model is fitted on ``train + val_seen +
    val_unseen`` and scored on ``test_seen`` / ``test_unseen``.
    """

    features: np.ndarray
    labels: np.ndarray
    dna_means: dict[int, np.ndarray]
    train: np.ndarray
    val_seen: np.ndarray
    val_unseen: np.ndarray
    test_seen: np.ndarray
    test_unseen: np.ndarray
    class_names: list[str] = field(default_factory=list)

    def stage(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if name == "validation":
            return self.train, self.val_seen, self.val_unseen
        if name == "test":
            fit = np.concatenate([self.train, self.val_seen, self.val_unseen])
            return fit, self.test_seen, self.test_unseen
        raise ValueError(f"unknown stage {name!r}")


def build_predictives(
    features: np.ndarray,
    labels: np.ndarray,
    unseen_classes: Iterable[int],
    dna_means: Mapping[int, np.ndarray],
    hyper: BZSLHyperparameters,
) -> dict[int, StudentT]:
    """Predictive distributions for every class seen in ``labels`` plus ``unseen_classes``.

    Seen classes use the global mean of seen class means as prior mean; the
    prior scale is built from the average within-class covariance of seen
    classes that have at least two samples.
    """
    stats = compute_class_statistics(features, labels)
    seen = sorted(stats)
    if hyper.K > len(seen):
        raise InvalidHyperparameters(f"K={hyper.K} exceeds the {len(seen)} seen classes")
    d = features.shape[1]
    covs = [s.scatter / (s.count - 1) for s in stats.values() if s.count > 1]
    sigma_bar = np.mean(covs, axis=0) if covs else np.eye(d)
    mu0 = np.mean([stats[c].mean for c in seen], axis=0)
    predictives = {c: posterior_predictive_params(stats[c], mu0, hyper, sigma_bar) for c in seen}
    seen_dna = {c: dna_means[c] for c in seen}
    seen_img = {c: stats[c].mean for c in seen}
    for c in sorted(unseen_classes):
        _, prior = surrogate_prior(dna_means[c], seen_dna, seen_img, hyper.K)
        predictives[c] = posterior_predictive_params(None, prior, hyper, sigma_bar)
    return predictives


def zsl_dataset_from_split(
    features: np.ndarray,
    specimen_ids: Sequence[str],
    species: Sequence[str],
    split,
    dna_means: Mapping[str, np.ndarray],
    val_seen_frac: float = 0.2,
    seed: int = 0,
) -> ZSLDataset:
    """Index a :class:`~barcodemlm.corpus.ZSLSplit` against feature rows.

    ``val_seen`` is a per-species holdout of ``val_seen_frac`` drawn from the
    seen training specimens; the rest of them form ``train``.
    """
    row_of = {sid: i for i, sid in enumerate(specimen_ids)}
    names = sorted(set(species))
    missing = [n for n in names if n not in dna_means]
    if missing:
        raise ValueError(f"no DNA embedding for species {missing[:5]}")
    class_of = {n: i for i, n in enumerate(names)}
    labels = np.array([class_of[s] for s in species])
    rows = lambda ids: np.array([row_of[i] for i in ids], dtype=np.int64)

    rng = np.random.default_rng(seed)
    seen_train = rows(split.seen_train_ids)
    train, val_seen = [], []
    for cls in sorted(set(labels[seen_train].tolist())):
        members = seen_train[labels[seen_train] == cls]
        members = members[rng.permutation(len(members))]
        n_fit, _ = largest_remainder(len(members), (1 - val_seen_frac, val_seen_frac))
        train.extend(sorted(members[:n_fit].tolist()))
        val_seen.extend(sorted(members[n_fit:].tolist()))
    return ZSLDataset(
        np.asarray(features, dtype=np.float64), labels,
        {class_of[n]: np.asarray(dna_means[n], dtype=np.float64) for n in names},
        np.array(train, dtype=np.int64), np.array(val_seen, dtype=np.int64),
        rows(split.unseen_val_ids), rows(split.seen_test_ids), rows(split.unseen_test_ids), names,
    )


def bzsl_metrics(
    predictions: Sequence[int], truth: Sequence[int], seen: Iterable[int], unseen: Iterable[int]
) -> EvalReport:
    """Macro (per-class averaged) seen and unseen accuracy plus their harmonic mean."""
    predictions, truth = np.asarray(predictions), np.asarray(truth)
    seen, unseen = set(seen), set(unseen)

    def macro(classes: set) -> float:
        present = sorted(c for c in classes if np.any(truth == c))
        if not present:
            raise ValueError("partition has no test samples")
        return float(np.mean([np.mean(predictions[truth == c] == c) for c in present]))

    seen_acc, unseen_acc = macro(seen), macro(unseen)
    hm = harmonic_mean(seen_acc, unseen_acc)
    return EvalReport(
        "bzsl", "species", hm,
        metrics={"seen_acc": seen_acc, "unseen_acc": unseen_acc, "harmonic_mean": hm},
    )


def evaluate_stage(dataset: ZSLDataset, hyper: BZSLHyperparameters, stage: str,
                   pca_dim: int | None = None) -> EvalReport:
    fit, seen_idx, unseen_idx = dataset.stage(stage)
    x = dataset.features
    if pca_dim is not None:
        pca = PCA.fit(x[dataset.train], pca_dim)
        x = pca.transform(x)
    unseen_classes = sorted(set(dataset.labels[unseen_idx].tolist()))
    predictives = build_predictives(x[fit], dataset.labels[fit], unseen_classes, dataset.dna_means, hyper)
    eval_idx = np.concatenate([seen_idx, unseen_idx])
    pred, _ = bzsl_classify(x[eval_idx], predictives)
    seen_classes = set(dataset.labels[fit].tolist())
    report = bzsl_metrics(pred, dataset.labels[eval_idx], seen_classes, unseen_classes)
    report.config = {**hyper.as_row(), "stage": stage}
    return report


def enumerate_grid(grid: Mapping[str, Sequence]) -> list[BZSLHyperparameters]:
    """All combinations in (k0, k1, m, s, K) nested order."""
    keys = ["k0", "k1", "m", "s", "K"]
    return [BZSLHyperparameters(*combo) for combo in itertools.product(*(grid[k] for k in keys))]


@dataclass
class GridRow:
    hyper: BZSLHyperparameters
    seen_acc: float
    unseen_acc: float
    harmonic_mean: float
    valid: bool


def grid_search(
    dataset: ZSLDataset, grid: Mapping[str, Sequence], pca_dim: int | None = None
) -> tuple[BZSLHyperparameters, EvalReport, list[GridRow]]:
    """Select by validation harmonic mean (first wins on ties), then score on test."""
    if len(dataset.val_unseen) == 0 or len(dataset.val_seen) == 0:
        raise ValueError("validation partition is empty")
    x = dataset.features
    if pca_dim is not None:
        x = PCA.fit(x[dataset.train], pca_dim).transform(x)
    reduced = ZSLDataset(x, dataset.labels, dataset.dna_means, dataset.train, dataset.val_seen,
                         dataset.val_unseen, dataset.test_seen, dataset.test_unseen, dataset.class_names)
    rows = []
    for hyper in enumerate_grid(grid):
        try:
            rep = evaluate_stage(reduced, hyper, "validation")
        except InvalidHyperparameters:
            rows.append(GridRow(hyper, math.nan, math.nan, math.nan, False))
            continue
        m = rep.metrics
        rows.append(GridRow(hyper, m["seen_acc"], m["unseen_acc"], m["harmonic_mean"], True))
    valid = [r for r in rows if r.valid]
    if not valid:
        raise InvalidHyperparameters("no grid combination is valid for this feature dimension")
    best = max(valid, key=lambda r: r.harmonic_mean)  # max keeps the first on ties
    test = evaluate_stage(reduced, best.hyper, "test")
    test.config["pca_dim"] = pca_dim if pca_dim is not None else "none"
    return best.hyper, test, rows


def write_grid_csv(rows: Sequence[GridRow], sink: TextIO) -> None:
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(GRID_COLUMNS)
    fmt = lambda v: "" if math.isnan(v) else f"{v:.9g}"
    for r in rows:
        h = r.hyper
        writer.writerow([h.k0, h.k1, h.m, h.s, h.K, fmt(r.seen_acc), fmt(r.unseen_acc),
                         fmt(r.harmonic_mean), int(r.valid)])
