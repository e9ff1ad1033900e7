"""Episode sampling and the synthetic mixture-of-Gaussians feature generator.

A :class:`FeatureStore` is the labeled universe episodes are drawn from:
per-class matrices of m-dimensional feature vectors, either loaded from a
file or produced by :func:`generate_mog_store`.  :func:`sample_episode`
draws one n-way k-shot task with a query set, optional unlabeled set, and
optional distractor-class pollution of the unlabeled set, fully determined
by the seed in its :class:`EpisodeSpec`.

The synthetic generator models each feature dimension as a two-component
Gaussian mixture: "signal" dimensions fire from a class-specific mean with
probability ``rho_signal`` and otherwise emit noise; the remaining
dimensions are pure class-independent noise.  Signal dimensions come first
in the layout.  Per-class signal means are drawn once per (class, dim) from
a zero-centered normal with spread ``sigma_between``, the minimal structure
that makes signal dimensions class-discriminative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from tafssl.linalg import as_matrix

__all__ = [
    "Episode",
    "EpisodeSpec",
    "FeatureStore",
    "MoGSpec",
    "REFERENCE_CLASSES",
    "REFERENCE_PER_CLASS",
    "REFERENCE_STORE_SEED",
    "generate_mog_store",
    "mutual_information_diagnostic",
    "reference_mog_spec",
    "reference_store",
    "sample_episode",
]

DISTRACTOR_LABEL = -1


@dataclass(frozen=True)
class FeatureStore:
    """Labeled pool of feature vectors grouped by class id."""

    classes: dict[int, np.ndarray]

    def __post_init__(self):
        if not self.classes:
            raise ValueError("feature store has no classes")
        validated: dict[int, np.ndarray] = {}
        dims = set()
        for cid, X in self.classes.items():
            X = as_matrix(X, f"class {cid}")
            if X.shape[0] < 1:
                raise ValueError(f"class {cid} has no samples")
            validated[int(cid)] = X
            dims.add(X.shape[1])
        if len(dims) != 1:
            raise ValueError(f"classes disagree on feature dimension: {sorted(dims)}")
        object.__setattr__(self, "classes", validated)

    @property
    def m(self) -> int:
        return next(iter(self.classes.values())).shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """All features stacked with their class labels, ordered by class id."""
        ids = sorted(self.classes)
        X = np.vstack([self.classes[c] for c in ids])
        y = np.concatenate([np.full(self.classes[c].shape[0], c) for c in ids])
        return X, y


@dataclass(frozen=True)
class EpisodeSpec:
    """Shape of one few-shot task.

    ``unbalanced_r`` adds a per-class uniform[0, R] extra query count.  In
    transductive mode the queries double as the unlabeled pool, so
    ``unlabeled_per_class`` and ``distractor_classes`` must be zero there.
    """

    n_way: int = 5
    k_shot: int = 1
    queries_per_class: int = 15
    unlabeled_per_class: int = 0
    distractor_classes: int = 0
    unbalanced_r: int = 0
    mode: str = "transductive"
    seed: int | tuple = 0

    def __post_init__(self):
        if self.n_way < 2:
            raise ValueError("n_way must be >= 2")
        if self.k_shot < 1 or self.queries_per_class < 1:
            raise ValueError("k_shot and queries_per_class must be >= 1")
        if self.mode not in ("transductive", "semi"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "transductive" and (self.unlabeled_per_class or self.distractor_classes):
            raise ValueError("transductive mode uses queries as the unlabeled pool; unlabeled_per_class and distractor_classes must be 0")
        if self.mode == "semi" and self.unlabeled_per_class < 1:
            raise ValueError("semi mode needs unlabeled_per_class >= 1")


@dataclass(frozen=True)
class Episode:
    """One sampled task.  ``query_labels`` exist for scoring only and must
    never reach a classifier; ``unlabeled_labels`` track provenance of the
    unlabeled rows (distractors carry -1) for diagnostics."""

    support: np.ndarray
    support_labels: np.ndarray
    query: np.ndarray
    query_labels: np.ndarray
    unlabeled: np.ndarray
    unlabeled_labels: np.ndarray
    class_ids: list[int]


@dataclass(frozen=True)
class MoGSpec:
    """Per-dimension two-Gaussian mixture parameters for synthetic features.

    Dimensions 0..signal_dims-1 are signal: with probability ``rho_signal``
    a sample draws from N(class_mean, sigma_signal^2) where class_mean was
    drawn once per (class, dim) from N(0, sigma_between^2); otherwise, and
    on every pure-noise dimension, it draws from N(mu_noise, sigma_noise^2).
    """

    m: int
    signal_dims: int
    rho_signal: float = 0.8
    mu_noise: float = 0.0
    sigma_noise: float = 1.0
    sigma_between: float = 3.0
    sigma_signal: float = 1.0

    def __post_init__(self):
        if not 0 <= self.signal_dims <= self.m:
            raise ValueError("signal_dims must lie in [0, m]")
        if not 0.0 <= self.rho_signal <= 1.0:
            raise ValueError("rho_signal must lie in [0, 1]")
        if min(self.sigma_noise, self.sigma_between, self.sigma_signal) <= 0:
            raise ValueError("all sigmas must be positive")


# Desk-scale reference benchmark: a store calibrated so the subspace methods
# separate cleanly from the raw-feature baselines at 1-shot 5-way.
REFERENCE_CLASSES = 20
REFERENCE_PER_CLASS = 100
REFERENCE_STORE_SEED = 7


def reference_mog_spec() -> MoGSpec:
    return MoGSpec(m=64, signal_dims=8, rho_signal=0.8, mu_noise=0.0, sigma_noise=1.0, sigma_between=3.0, sigma_signal=1.0)


def reference_store() -> FeatureStore:
    return generate_mog_store(reference_mog_spec(), REFERENCE_CLASSES, REFERENCE_PER_CLASS, REFERENCE_STORE_SEED)


def generate_mog_store(
    spec: MoGSpec,
    n_classes: int,
    per_class: int,
    seed: int = 0,
    return_class_means: bool = False,
):
    """Draw a synthetic FeatureStore from the mixture model, deterministically.

    With ``return_class_means`` the realized (class x signal_dim) mean matrix
    is returned alongside the store, which lets variance checks compare the
    empirical moments against the exact generating parameters.
    """
    if n_classes < 1 or per_class < 1:
        raise ValueError("n_classes and per_class must be >= 1")
    rng = np.random.default_rng(seed)
    s = spec.signal_dims
    class_means = rng.normal(0.0, spec.sigma_between, size=(n_classes, s))
    classes: dict[int, np.ndarray] = {}
    for c in range(n_classes):
        X = np.empty((per_class, spec.m))
        if s:
            fired = rng.random((per_class, s)) < spec.rho_signal
            on_signal = rng.normal(class_means[c], spec.sigma_signal, size=(per_class, s))
            off_signal = rng.normal(spec.mu_noise, spec.sigma_noise, size=(per_class, s))
            X[:, :s] = np.where(fired, on_signal, off_signal)
        if s < spec.m:
            X[:, s:] = rng.normal(spec.mu_noise, spec.sigma_noise, size=(per_class, spec.m - s))
        classes[c] = X
    store = FeatureStore(classes=classes)
    return (store, class_means) if return_class_means else store


def sample_episode(store: FeatureStore, spec: EpisodeSpec) -> Episode:
    """Draw one episode from the store, bit-reproducible per spec.seed.

    The seed feeds two independent streams: one for class choice and
    per-class sample permutations, one for the unbalanced extra-query
    draws.  Runs differing only in ``unbalanced_r`` therefore share classes
    and support samples, and their per-class query sets are nested.
    """
    structure, unbalance = [np.random.default_rng(s) for s in np.random.SeedSequence(spec.seed).spawn(2)]
    all_ids = sorted(store.classes)
    total_needed = spec.n_way + spec.distractor_classes
    if len(all_ids) < total_needed:
        raise ValueError(f"store has {len(all_ids)} classes, episode needs {total_needed}")
    chosen = structure.choice(len(all_ids), size=total_needed, replace=False)
    task_ids = [all_ids[i] for i in chosen[: spec.n_way]]
    distractor_ids = [all_ids[i] for i in chosen[spec.n_way :]]

    sup, squery, unlab = [], [], []
    sup_y, query_y, unlab_y = [], [], []
    for local, cid in enumerate(task_ids):
        X = store.classes[cid]
        perm = structure.permutation(X.shape[0])
        n_q = spec.queries_per_class
        if spec.unbalanced_r:
            n_q += int(unbalance.integers(0, spec.unbalanced_r + 1))
        need = spec.k_shot + n_q + (spec.unlabeled_per_class if spec.mode == "semi" else 0)
        if X.shape[0] < need:
            raise ValueError(f"class {cid}: episode needs {need} samples, class has {X.shape[0]}")
        sup.append(X[perm[: spec.k_shot]])
        sup_y.append(np.full(spec.k_shot, local))
        squery.append(X[perm[spec.k_shot : spec.k_shot + n_q]])
        query_y.append(np.full(n_q, local))
        if spec.mode == "semi":
            unlab.append(X[perm[spec.k_shot + n_q : need]])
            unlab_y.append(np.full(spec.unlabeled_per_class, local))
    for cid in distractor_ids:
        X = store.classes[cid]
        perm = structure.permutation(X.shape[0])
        if X.shape[0] < spec.unlabeled_per_class:
            raise ValueError(f"class {cid}: episode needs {spec.unlabeled_per_class} samples, class has {X.shape[0]}")
        unlab.append(X[perm[: spec.unlabeled_per_class]])
        unlab_y.append(np.full(spec.unlabeled_per_class, DISTRACTOR_LABEL))

    empty = np.empty((0, store.m))
    return Episode(
        support=np.vstack(sup),
        support_labels=np.concatenate(sup_y),
        query=np.vstack(squery),
        query_labels=np.concatenate(query_y),
        unlabeled=np.vstack(unlab) if unlab else empty,
        unlabeled_labels=np.concatenate(unlab_y) if unlab_y else np.empty(0, dtype=int),
        class_ids=task_ids,
    )


def _entropy(counts: np.ndarray) -> float:
    p = counts[counts > 0].astype(float)
    p /= p.sum()
    return float(-(p * np.log(p)).sum())


def mutual_information_diagnostic(features, labels=None, bins: int = 32) -> np.ndarray:
    """Per-dimension normalized mutual information between label and feature.

    Each dimension is discretized into equal-width bins over its observed
    range; MI(label; bin) is normalized by min(H(label), H(bin)), giving
    values in [0, 1].  A constant dimension scores 0.  Accepts either a
    FeatureStore or an explicit (features, labels) pair.
    """
    if isinstance(features, FeatureStore):
        features, labels = features.stacked()
    X = as_matrix(features, "features")
    y = np.asarray(labels)
    if y.shape[0] != X.shape[0]:
        raise ValueError("labels length must match feature rows")
    if bins < 2:
        raise ValueError("bins must be >= 2")

    _, y_idx = np.unique(y, return_inverse=True)
    n_labels = y_idx.max() + 1
    h_label = _entropy(np.bincount(y_idx))
    n = X.shape[0]

    out = np.zeros(X.shape[1])
    if h_label == 0.0:
        return out
    for d in range(X.shape[1]):
        x = X[:, d]
        lo, hi = x.min(), x.max()
        if hi == lo:
            continue
        b = np.minimum(((x - lo) / (hi - lo) * bins).astype(int), bins - 1)
        joint = np.bincount(y_idx * bins + b, minlength=n_labels * bins).reshape(n_labels, bins) / n
        p_l = joint.sum(axis=1)
        p_b = joint.sum(axis=0)
        nz = joint > 0
        mi = float((joint[nz] * np.log(joint[nz] / np.outer(p_l, p_b)[nz])).sum())
        h_bin = _entropy(p_b)
        if h_bin > 0.0:
            out[d] = min(1.0, max(0.0, mi / min(h_label, h_bin)))
    return out
