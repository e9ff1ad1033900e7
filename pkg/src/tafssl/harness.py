"""Benchmark harness: pipelines, the episode loop, statistics, and sweeps.

A method pipeline is "projection -> preprocessing -> inference" assembled
from a CLI name such as ``ica-msp``.  The harness samples episodes from a
feature store, runs every requested pipeline on each episode, scores the
query predictions against the held-back labels (classifiers never see
them), and aggregates per-episode accuracies into a mean with a 0.95
normal-approximation confidence interval.

Determinism contract: (config, seed) fully determines every number in the
reports and in the CSV output, independent of the worker count.  Episode i
draws its randomness from (seed, i) alone, per-episode results are sorted
by episode index before aggregation, and wall-clock timings stay out of the
CSV.
"""

from __future__ import annotations

import csv
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np

from tafssl.classify import build_prototypes, center_and_normalize, l2_normalize_rows, nn_classify
from tafssl.cluster import BKM_DEFAULT_CLUSTERS, MSP_DEFAULT_ITERATIONS, MSP_DEFAULT_THRESHOLD, bkm, msp
from tafssl.episodes import Episode, EpisodeSpec, FeatureStore, MoGSpec, generate_mog_store, reference_store, sample_episode
from tafssl.features_io import load_features
from tafssl.subspace import ICA_DEFAULT_DIM, PCA_DEFAULT_DIM, fit_ica, fit_pca

__all__ = [
    "BenchmarkConfig",
    "MethodPipeline",
    "RunReport",
    "SWEEP_VALUES",
    "evaluate_episode",
    "format_reports",
    "load_store",
    "parse_config_file",
    "parse_method",
    "run_ablation",
    "run_benchmark",
    "write_csv",
]

METHOD_NAMES = [
    "nn",
    "sub",
    "sub-star",
    "pca-nn",
    "ica-nn",
    "pca-bkm",
    "ica-bkm",
    "pca-msp",
    "ica-msp",
    "bkm",
    "msp",
]

SWEEP_VALUES = {
    "queries": [2, 5, 10, 15, 20, 30, 50],
    "noise": [0, 1, 2, 3, 4, 5, 6, 7],
    "dim": [2, 3, 4, 5, 6, 8, 10, 12, 15, 20],
    "unbalance": [0, 10, 20, 30, 40, 50],
}


@dataclass(frozen=True)
class MethodPipeline:
    """One classification pipeline: projection, preprocessing, inference."""

    name: str
    projection: str = "none"  # none | pca | ica
    r: int | None = None
    preproc: str = "none"  # none | sub | sub_star
    inference: str = "nn"  # nn | bkm | msp
    temperature: float = 1.0
    msp_threshold: float = MSP_DEFAULT_THRESHOLD
    msp_iterations: int = MSP_DEFAULT_ITERATIONS
    bkm_clusters: int = BKM_DEFAULT_CLUSTERS
    sub_normalize_first: bool = True


def parse_method(name: str, dim: int | None = None, sub_normalize_first: bool = True) -> MethodPipeline:
    """Build a pipeline from a CLI method name like ``pca-bkm``."""
    if name not in METHOD_NAMES:
        raise ValueError(f"unknown method {name!r}; choose from {', '.join(METHOD_NAMES)}")
    projection, preproc, inference = "none", "none", "nn"
    if name == "sub":
        preproc = "sub"
    elif name == "sub-star":
        preproc = "sub_star"
    elif "-" in name:
        projection, inference = name.split("-")
    else:
        inference = name  # bare nn / bkm / msp
    r = None
    if projection == "pca":
        r = dim if dim is not None else PCA_DEFAULT_DIM
    elif projection == "ica":
        r = dim if dim is not None else ICA_DEFAULT_DIM
    return MethodPipeline(
        name=name,
        projection=projection,
        r=r,
        preproc=preproc,
        inference=inference,
        sub_normalize_first=sub_normalize_first,
    )


@dataclass
class BenchmarkConfig:
    """Flat run configuration; every field is mirrored by a CLI flag."""

    method: str = "nn"
    mode: str = "transductive"
    ways: int = 5
    shots: int = 1
    queries: int = 15
    unlabeled: int = 0
    distractors: int = 0
    unbalanced_r: int = 0
    episodes: int = 10000
    seed: int = 0
    dim: int | None = None
    features: str | None = None
    synthetic: str | None = None
    sweep: str | None = None
    out: str | None = None
    workers: int = 1
    sub_normalize_first: bool = True

    def methods(self) -> list[str]:
        return [m.strip() for m in self.method.split(",") if m.strip()]

    def pipelines(self) -> list[MethodPipeline]:
        pipes = [parse_method(m, self.dim, self.sub_normalize_first) for m in self.methods()]
        for p in pipes:
            if p.preproc != "none" and self.mode != "transductive":
                raise ValueError(f"method {p.name!r} is defined on the support+query pool and requires transductive mode")
        if self.mode == "semi" and self.unlabeled < 1:
            raise ValueError("semi mode needs --unlabeled >= 1")
        if self.mode == "transductive" and (self.unlabeled or self.distractors):
            raise ValueError("transductive mode uses queries as the pool; --unlabeled/--distractors must be 0")
        if not pipes:
            raise ValueError("no method given")
        return pipes

    def episode_spec(self, index: int) -> EpisodeSpec:
        return EpisodeSpec(
            n_way=self.ways,
            k_shot=self.shots,
            queries_per_class=self.queries,
            unlabeled_per_class=self.unlabeled if self.mode == "semi" else 0,
            distractor_classes=self.distractors if self.mode == "semi" else 0,
            unbalanced_r=self.unbalanced_r,
            mode=self.mode,
            seed=(self.seed, index),
        )


@dataclass(frozen=True)
class RunReport:
    """Aggregated accuracy of one method over one episode batch."""

    method: str
    mode: str
    episodes: int
    accuracy: float  # percent
    ci95: float  # percent, half-width 1.96 * std / sqrt(episodes)
    seconds_per_episode: float
    metadata: dict = field(default_factory=dict)


def _confidence_interval(per_episode: np.ndarray) -> tuple[float, float]:
    """Mean accuracy and 0.95 CI half-width, in percent.

    The spread estimate is the population std of per-episode accuracies, so
    a single episode reports a zero-width interval.
    """
    mean = float(per_episode.mean()) * 100.0
    half = float(1.96 * per_episode.std(ddof=0) / np.sqrt(len(per_episode)) * 100.0)
    return mean, half


def evaluate_episode(episode: Episode, pipeline: MethodPipeline, seed=0) -> np.ndarray:
    """Run one pipeline on one episode; returns query predictions.

    Query labels are deliberately absent from this path: scoring happens in
    the caller.  ``seed`` feeds the seeded stages (ICA init, k-means init).
    """
    S, y_s, Q = episode.support, episode.support_labels, episode.query
    transductive = episode.unlabeled.shape[0] == 0

    if pipeline.preproc != "none":
        if pipeline.projection != "none" or pipeline.inference != "nn":
            raise ValueError("sub/sub-star preprocessing pairs only with plain nearest-prototype inference")
        mode = "joint" if pipeline.preproc == "sub" else "separate"
        if pipeline.sub_normalize_first:
            S, Q = center_and_normalize(S, Q, mode)
        else:
            # Toggle: average prototypes before normalizing. Centering still
            # happens per set here; normalization moves to the prototypes.
            if mode == "joint":
                mu = np.vstack([S, Q]).mean(axis=0)
                S, Q = S - mu, Q - mu
            else:
                S, Q = S - S.mean(axis=0), Q - Q.mean(axis=0)
            protos = build_prototypes(S, y_s)
            protos = replace(protos, vectors=l2_normalize_rows(protos.vectors))
            predictions, _ = nn_classify(l2_normalize_rows(Q), protos, pipeline.temperature)
            return predictions

    pool = np.vstack([S, Q]) if transductive else np.vstack([S, episode.unlabeled])

    if pipeline.projection != "none":
        fit = fit_pca(pool, pipeline.r) if pipeline.projection == "pca" else fit_ica(pool, pipeline.r, seed=_derive_seed(seed, 1))
        S, Q, pool = fit.apply(S), fit.apply(Q), fit.apply(pool)

    if pipeline.inference == "nn":
        predictions, _ = nn_classify(Q, build_prototypes(S, y_s), pipeline.temperature)
    elif pipeline.inference == "bkm":
        posterior = bkm(S, y_s, Q, pool, k=pipeline.bkm_clusters, seed=_derive_seed(seed, 2))
        predictions = np.unique(y_s)[np.argmax(posterior, axis=1)]
    elif pipeline.inference == "msp":
        result = msp(S, y_s, Q, pool, threshold=pipeline.msp_threshold, iterations=pipeline.msp_iterations)
        predictions = result.predictions
    else:
        raise ValueError(f"unknown inference {pipeline.inference!r}")
    return predictions


def _derive_seed(seed, salt: int):
    if isinstance(seed, tuple):
        return (*seed, salt)
    return (seed, salt)


def _run_one_episode(store, config: BenchmarkConfig, pipelines, index: int):
    """Sample episode ``index`` and score every pipeline on it."""
    episode = sample_episode(store, config.episode_spec(index))
    accs, times = [], []
    n_warn = 0
    for pipeline in pipelines:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            t0 = time.perf_counter()
            predictions = evaluate_episode(episode, pipeline, seed=(config.seed, index))
            times.append(time.perf_counter() - t0)
        n_warn += len(caught)
        accs.append(float((predictions == episode.query_labels).mean()))
    return index, accs, times, n_warn


_POOL_STATE: dict = {}


def _pool_init(store, config, pipelines):
    _POOL_STATE["args"] = (store, config, pipelines)


def _pool_eval(index: int):
    store, config, pipelines = _POOL_STATE["args"]
    return _run_one_episode(store, config, pipelines, index)


def load_store(config: BenchmarkConfig) -> FeatureStore:
    """Resolve the configured feature source into a FeatureStore."""
    if config.features and config.synthetic:
        raise ValueError("give either --features or --synthetic, not both")
    if config.features:
        return load_features(config.features)
    if config.synthetic:
        if config.synthetic == "reference":
            return reference_store()
        return _store_from_mog_config(config.synthetic)
    raise ValueError("no feature source: pass --features <path> or --synthetic <config|reference>")


def run_benchmark(config: BenchmarkConfig, store: FeatureStore | None = None) -> list[RunReport]:
    """Run every configured method over the episode batch; one report each.

    All methods see the same episodes (episode i is determined by (seed, i)
    alone), so cross-method comparisons are paired.
    """
    pipelines = config.pipelines()
    if store is None:
        store = load_store(config)
    if config.episodes < 1:
        raise ValueError("episodes must be >= 1")

    indices = range(config.episodes)
    if config.workers > 1:
        with ProcessPoolExecutor(
            max_workers=config.workers,
            initializer=_pool_init,
            initargs=(store, config, pipelines),
        ) as pool:
            results = list(pool.map(_pool_eval, indices, chunksize=max(1, config.episodes // (4 * config.workers))))
    else:
        results = [_run_one_episode(store, config, pipelines, i) for i in indices]

    results.sort(key=lambda r: r[0])
    acc = np.array([r[1] for r in results])  # episodes x methods
    times = np.array([r[2] for r in results])
    n_warn = int(sum(r[3] for r in results))

    reports = []
    for j, pipeline in enumerate(pipelines):
        mean, half = _confidence_interval(acc[:, j])
        reports.append(
            RunReport(
                method=pipeline.name,
                mode=config.mode,
                episodes=config.episodes,
                accuracy=mean,
                ci95=half,
                seconds_per_episode=float(times[:, j].mean()),
                metadata={
                    "seed": config.seed,
                    "ways": config.ways,
                    "shots": config.shots,
                    "queries": config.queries,
                    "unlabeled": config.unlabeled,
                    "distractors": config.distractors,
                    "unbalanced_r": config.unbalanced_r,
                    "dim": pipeline.r,
                    "warnings": n_warn,
                },
            )
        )
    return reports


def run_ablation(
    config: BenchmarkConfig,
    sweep: str | None = None,
    values=None,
    store: FeatureStore | None = None,
) -> list[tuple[int, list[RunReport]]]:
    """Sweep one protocol knob, running the full benchmark per value.

    Episode randomness is derived per episode index from the base seed, so
    sweep values share classes and supports where the protocol permits
    (notably the unbalance sweep, whose query sets are nested).
    """
    sweep = sweep or config.sweep
    if sweep not in SWEEP_VALUES:
        raise ValueError(f"unknown sweep {sweep!r}; choose from {', '.join(SWEEP_VALUES)}")
    if values is None:
        values = SWEEP_VALUES[sweep]
    if sweep == "noise" and config.mode != "semi":
        raise ValueError("the noise sweep varies distractor classes and requires --mode semi")
    if sweep == "dim":
        bad = [p.name for p in config.pipelines() if p.projection == "none"]
        if bad:
            raise ValueError(f"the dim sweep needs a projection method; {', '.join(bad)} has none")

    if store is None:
        store = load_store(config)
    table = []
    for value in values:
        if sweep == "queries":
            cfg = replace(config, queries=int(value))
        elif sweep == "noise":
            cfg = replace(config, distractors=int(value))
        elif sweep == "dim":
            cfg = replace(config, dim=int(value))
        else:
            cfg = replace(config, unbalanced_r=int(value))
        table.append((int(value), run_benchmark(cfg, store=store)))
    return table


def parse_config_file(path) -> dict:
    """Parse a flat ``key=value`` config file (``#`` starts a comment)."""
    known = {f.name: f for f in fields(BenchmarkConfig)}
    out: dict = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in known:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _coerce(key, value)
    return out


def _coerce(key: str, value: str):
    if key in ("method", "mode", "features", "synthetic", "sweep", "out"):
        return value
    if key == "sub_normalize_first":
        if value.lower() in ("true", "1", "yes"):
            return True
        if value.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"bad boolean {value!r} for {key}")
    return int(value)


MOG_CONFIG_KEYS = {
    "m": int,
    "signal_dims": int,
    "rho_signal": float,
    "mu_noise": float,
    "sigma_noise": float,
    "sigma_between": float,
    "sigma_signal": float,
    "classes": int,
    "per_class": int,
    "seed": int,
}


def _store_from_mog_config(path) -> FeatureStore:
    """Build a synthetic store from a key=value mixture config file."""
    raw: dict = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in MOG_CONFIG_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            raw[key] = MOG_CONFIG_KEYS[key](value)
    for required in ("m", "signal_dims", "classes", "per_class"):
        if required not in raw:
            raise ValueError(f"{path}: missing required key {required!r}")
    n_classes = raw.pop("classes")
    per_class = raw.pop("per_class")
    seed = raw.pop("seed", 0)
    return generate_mog_store(MoGSpec(**raw), n_classes, per_class, seed)


def format_reports(table: list[tuple[int | None, list[RunReport]]], sweep: str | None = None) -> str:
    """Human-readable aligned table; one row per (sweep value, method)."""
    rows = [("sweep", "value", "method", "mode", "episodes", "accuracy", "ci95", "s/episode")]
    for value, reports in table:
        for rep in reports:
            rows.append(
                (
                    sweep or "-",
                    "-" if value is None else str(value),
                    rep.method,
                    rep.mode,
                    str(rep.episodes),
                    f"{rep.accuracy:.2f}",
                    f"±{rep.ci95:.2f}",
                    f"{rep.seconds_per_episode:.4f}",
                )
            )
    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    if sweep == "dim":
        best = max(((rep.accuracy, value) for value, reports in table for rep in reports), default=None)
        if best is not None:
            lines.append(f"best dim by accuracy: {best[1]} ({best[0]:.2f}%)")
    return "\n".join(lines)


CSV_COLUMNS = [
    "sweep",
    "value",
    "method",
    "mode",
    "ways",
    "shots",
    "queries",
    "unlabeled",
    "distractors",
    "unbalanced_r",
    "episodes",
    "seed",
    "dim",
    "accuracy",
    "ci95",
]


def write_csv(path, table: list[tuple[int | None, list[RunReport]]], sweep: str | None = None) -> None:
    """Machine-readable results.  Contains only deterministic fields, so two
    runs with the same config and seed produce byte-identical files
    regardless of the worker count."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(CSV_COLUMNS)
        for value, reports in table:
            for rep in reports:
                md = rep.metadata
                writer.writerow(
                    [
                        sweep or "",
                        "" if value is None else value,
                        rep.method,
                        rep.mode,
                        md["ways"],
                        md["shots"],
                        md["queries"],
                        md["unlabeled"],
                        md["distractors"],
                        md["unbalanced_r"],
                        rep.episodes,
                        md["seed"],
                        "" if md["dim"] is None else md["dim"],
                        f"{rep.accuracy:.6f}",
                        f"{rep.ci95:.6f}",
                    ]
                )
