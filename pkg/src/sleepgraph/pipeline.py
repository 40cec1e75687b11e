"""Cohort datasets and their preprocessing: sparse-column drop, two-pass kNN
imputation, z-score outlier scrubbing, and train-only standardization.

Preprocessing operates on the full cohort list so every cohort keeps the same
feature columns and cross-user imputation can draw on the whole pool. The
standardizer is a separate fit/transform estimator because its parameters must
come from training rows only — it is refit inside every evaluation trial.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .graphs import WeightedGraph
from .models import ModelGraphBundle
from .partition import gedd_partition

MODALITIES = ("physiology", "phone", "weather", "survey")

SLEEP_LABEL_THRESHOLD_MIN = 480.0
MAX_SLEEP_MIN = 1440.0


class PipelineError(ValueError):
    pass


@dataclass
class CohortDataset:
    """Per-participant, per-day features and sleep labels plus daily graphs."""

    cohort_id: str
    participants: list
    features: np.ndarray        # (P, D, m), NaN marks missing
    sleep_minutes: np.ndarray   # (P, D), NaN marks missing
    graphs: list[WeightedGraph]  # one per day, roster == participants
    feature_names: list[str]

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.sleep_minutes = np.asarray(self.sleep_minutes, dtype=np.float64)
        p, d, m = self.features.shape
        if len(self.participants) != p:
            raise PipelineError("participant roster does not match feature rows")
        if self.sleep_minutes.shape != (p, d):
            raise PipelineError("sleep matrix shape mismatch")
        if len(self.graphs) != d:
            raise PipelineError(f"need one graph per day: {len(self.graphs)} != {d}")
        if len(self.feature_names) != m:
            raise PipelineError("feature name count mismatch")
        with np.errstate(invalid="ignore"):
            if np.any(self.sleep_minutes >= MAX_SLEEP_MIN) or np.any(self.sleep_minutes < 0):
                raise PipelineError("sleep minutes out of [0, 1440)")

    @property
    def n_participants(self) -> int:
        return self.features.shape[0]

    @property
    def days(self) -> int:
        return self.features.shape[1]

    @property
    def n_features(self) -> int:
        return self.features.shape[2]

    def feature_rows(self) -> np.ndarray:
        """All (participant, day) rows as a 2-D matrix."""
        return self.features.reshape(-1, self.n_features)


def modality_of(feature_name: str) -> str:
    tag = feature_name.split("_", 1)[0]
    if tag not in MODALITIES:
        raise PipelineError(f"feature {feature_name!r} has no known modality tag")
    return tag


# ---------------------------------------------------------------------------
# Missing data
# ---------------------------------------------------------------------------

def drop_sparse_features(datasets: Sequence[CohortDataset],
                         threshold: float = 0.5) -> list[CohortDataset]:
    """Drop feature columns whose pooled missing fraction exceeds `threshold`.

    Strictly "more than": a column exactly at the threshold is kept.
    """
    pooled = np.concatenate([ds.feature_rows() for ds in datasets], axis=0)
    missing_frac = np.isnan(pooled).mean(axis=0)
    keep = missing_frac <= threshold
    if not keep.any():
        raise PipelineError("all feature columns exceed the missing threshold")
    if keep.all():
        return list(datasets)
    return [
        replace(
            ds,
            features=ds.features[:, :, keep],
            feature_names=[n for n, k in zip(ds.feature_names, keep) if k],
        )
        for ds in datasets
    ]


def _nan_sq_dists(queries: np.ndarray, pool: np.ndarray) -> np.ndarray:
    """Pairwise squared distances over co-observed dimensions; inf when none."""
    qm = ~np.isnan(queries)
    pm = ~np.isnan(pool)
    q0 = np.where(qm, queries, 0.0)
    p0 = np.where(pm, pool, 0.0)
    d2 = (
        (q0 * q0) @ pm.T
        - 2.0 * (q0 @ p0.T)
        + qm @ (p0 * p0).T
    )
    d2 = np.maximum(d2, 0.0)  # guard tiny negatives from cancellation
    shared = qm.astype(np.float64) @ pm.T.astype(np.float64)
    d2[shared == 0] = np.inf
    return d2

def _knn_fill_block(block: np.ndarray, pool: np.ndarray, k: int,
                    pool_offset_of_block: int | None = None) -> tuple[np.ndarray, int]:
    """Fill NaNs in `block` from the k nearest pool rows per missing column.

    A pool row is a candidate for a cell only if it observes that column.
    `pool_offset_of_block` marks block rows inside the pool so a row never
    imputes from itself. Returns the filled block and the count of cells that
    had no usable neighbor (left NaN).
    """
    out = block.copy()
    need = np.isnan(block).any(axis=1)
    if not need.any():
        return out, 0
    d2 = _nan_sq_dists(block[need], pool)
    if pool_offset_of_block is not None:
        rows = np.flatnonzero(need)
        d2[np.arange(len(rows)), pool_offset_of_block + rows] = np.inf
    pool_obs = ~np.isnan(pool)
    unfilled = 0
    for qi, row in enumerate(np.flatnonzero(need)):
        dists = d2[qi]
        for col in np.flatnonzero(np.isnan(block[row])):
            cand = np.flatnonzero(pool_obs[:, col] & np.isfinite(dists))
            if cand.size == 0:
                unfilled += 1
                continue
            order = cand[np.lexsort((cand, dists[cand]))][:k]
            out[row, col] = pool[order, col].mean()
    return out, unfilled


def knn_impute(datasets: Sequence[CohortDataset], k: int = 5) -> list[CohortDataset]:
    """Two-pass kNN imputation: within each participant's rows, then across users.

    Pass two pools all rows from all cohorts. Cells no pass can fill (e.g. a
    row sharing no observed dimension with anyone) fall back to the pooled
    column mean, with a warning.
    """
    if k < 1:
        raise PipelineError("k must be >= 1")
    staged = []
    for ds in datasets:
        feats = ds.features.copy()
        for pi in range(ds.n_participants):
            block = feats[pi]
            filled, _ = _knn_fill_block(block, block, k, pool_offset_of_block=0)
            feats[pi] = filled
        staged.append(feats)

    pool = np.concatenate([f.reshape(-1, f.shape[-1]) for f in staged], axis=0)
    out = []
    offset = 0
    fallback_cells = 0
    col_means = None
    for ds, feats in zip(datasets, staged):
        rows = feats.reshape(-1, feats.shape[-1])
        filled, unfilled = _knn_fill_block(rows, pool, k, pool_offset_of_block=offset)
        if unfilled:
            if col_means is None:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", RuntimeWarning)
                    col_means = np.nanmean(pool, axis=0)
            nan_r, nan_c = np.nonzero(np.isnan(filled))
            filled[nan_r, nan_c] = col_means[nan_c]
            fallback_cells += unfilled
        offset += rows.shape[0]
        out.append(replace(ds, features=filled.reshape(ds.features.shape)))
    if fallback_cells:
        warnings.warn(f"{fallback_cells} cells imputed with pooled column means")
    return out


# ---------------------------------------------------------------------------
# Outliers
# ---------------------------------------------------------------------------

def column_stats(datasets: Sequence[CohortDataset]) -> tuple[np.ndarray, np.ndarray]:
    """Pooled per-column mean and (population) standard deviation."""
    pooled = np.concatenate([ds.feature_rows() for ds in datasets], axis=0)
    return pooled.mean(axis=0), pooled.std(axis=0)


def remove_outliers(datasets: Sequence[CohortDataset], cutoff: float = 4.0,
                    k: int = 5) -> list[CohortDataset]:
    """Mark cells with |z| > cutoff as missing and re-impute them (one pass).

    Zero-variance columns cannot have outliers and are skipped. Expects fully
    imputed input.
    """
    pooled = np.concatenate([ds.feature_rows() for ds in datasets], axis=0)
    if np.isnan(pooled).any():
        raise PipelineError("remove_outliers expects no missing cells")
    mu, sd = column_stats(datasets)
    live = sd > 0
    flagged_any = False
    out = []
    for ds in datasets:
        z = np.zeros_like(ds.features)
        z[:, :, live] = (ds.features[:, :, live] - mu[live]) / sd[live]
        bad = np.abs(z) > cutoff
        if bad.any():
            flagged_any = True
            feats = ds.features.copy()
            feats[bad] = np.nan
            out.append(replace(ds, features=feats))
        else:
            out.append(ds)
    if not flagged_any:
        return list(datasets)
    return knn_impute(out, k=k)


def preprocess(datasets: Sequence[CohortDataset], k: int = 5,
               cutoff: float = 4.0) -> list[CohortDataset]:
    """Full hygiene chain: drop sparse columns, impute, scrub outliers."""
    datasets = drop_sparse_features(datasets)
    datasets = knn_impute(datasets, k=k)
    return remove_outliers(datasets, cutoff=cutoff, k=k)


# ---------------------------------------------------------------------------
# Standardization
# ---------------------------------------------------------------------------

class Standardizer(BaseEstimator, TransformerMixin):
    """Column-wise (x - mu) / sigma with parameters learned from training rows.

    Constant columns pass through centered. Population sigma, so transforming
    the fit rows yields exactly zero mean and unit standard deviation.
    """

    def fit(self, rows: np.ndarray, y=None) -> "Standardizer":
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] == 0:
            raise PipelineError("standardizer needs a non-empty 2-D row matrix")
        self.mu_ = rows.mean(axis=0)
        sd = rows.std(axis=0)
        self.scale_ = np.where(sd > 0, sd, 1.0)
        return self

    def transform(self, rows: np.ndarray) -> np.ndarray:
        if not hasattr(self, "mu_"):
            raise PipelineError("standardizer is not fitted")
        rows = np.asarray(rows, dtype=np.float64)
        return (rows - self.mu_) / self.scale_


# ---------------------------------------------------------------------------
# Labels and bundles
# ---------------------------------------------------------------------------

def make_label(sleep_minutes: float) -> int:
    """1 iff the night reached 8 hours (480 minutes, boundary inclusive)."""
    if not 0 <= sleep_minutes < MAX_SLEEP_MIN:
        raise PipelineError(f"sleep minutes out of range: {sleep_minutes}")
    return int(sleep_minutes >= SLEEP_LABEL_THRESHOLD_MIN)


def make_labels(sleep_minutes: np.ndarray) -> np.ndarray:
    """Vectorized make_label keeping NaN where the duration is missing."""
    s = np.asarray(sleep_minutes, dtype=np.float64)
    with np.errstate(invalid="ignore"):
        if np.any(s >= MAX_SLEEP_MIN) or np.any(s < 0):
            raise PipelineError("sleep minutes out of range")
        labels = (s >= SLEEP_LABEL_THRESHOLD_MIN).astype(np.float64)
    labels[np.isnan(s)] = np.nan
    return labels


def make_bundles(datasets: Sequence[CohortDataset], seq_len: int,
                 eta: int) -> tuple[list[ModelGraphBundle], int]:
    """Build (X_day, S_seq, A, y_next) samples for every day with full history.

    Day k qualifies when the L-day window ending at k fits and day k+1 exists;
    that day's graph goes through fixed-size partitioning, and each output
    graph yields one bundle. Participants missing the day-k+1 label stay in
    the graph but are masked from scoring, as are repeated padding slots.
    Returns the bundles and the number of skipped (day, cohort) pairs.
    """
    if seq_len < 1:
        raise PipelineError("sequence length must be >= 1")
    bundles: list[ModelGraphBundle] = []
    skipped = 0
    for ds in datasets:
        if np.isnan(ds.features).any():
            raise PipelineError(
                f"cohort {ds.cohort_id}: features contain missing cells; preprocess first"
            )
        labels = make_labels(ds.sleep_minutes)
        row_of = {pid: i for i, pid in enumerate(ds.participants)}
        for k in range(ds.days):
            if k < seq_len - 1 or k == ds.days - 1:
                skipped += 1
                continue
            y_next = labels[:, k + 1]
            if np.all(np.isnan(y_next)):
                skipped += 1
                continue
            parts = gedd_partition(ds.graphs[k], eta)
            for gi, graph in enumerate(parts.graphs):
                slots = parts.slots(gi)
                rows = [row_of[p.src_node] for p in slots]
                dup = np.array([p.duplicated for p in slots])
                bundles.append(
                    ModelGraphBundle(
                        X_day=ds.features[rows, k, :],
                        S_seq=ds.features[rows, k - seq_len + 1 : k + 1, :],
                        A=graph.adj,
                        y_next=y_next[rows],
                        node_ids=[p.src_node for p in slots],
                        duplicated=dup,
                        cohort_id=ds.cohort_id,
                        day=k,
                    )
                )
    return bundles, skipped


def standardize_bundles(bundles: Sequence[ModelGraphBundle],
                        standardizer: Standardizer) -> list[ModelGraphBundle]:
    """Apply a fitted standardizer to copies of the bundles' feature tensors."""
    out = []
    for b in bundles:
        s_shape = b.S_seq.shape
        out.append(
            replace_bundle(
                b,
                X_day=standardizer.transform(b.X_day),
                S_seq=standardizer.transform(b.S_seq.reshape(-1, s_shape[-1])).reshape(s_shape),
            )
        )
    return out


def replace_bundle(b: ModelGraphBundle, **changes) -> ModelGraphBundle:
    fields = dict(
        X_day=b.X_day, S_seq=b.S_seq, A=b.A, y_next=b.y_next,
        node_ids=b.node_ids, duplicated=b.duplicated,
        cohort_id=b.cohort_id, day=b.day, score_mask=b.score_mask,
    )
    fields.update(changes)
    return ModelGraphBundle(**fields)


def bundle_feature_rows(bundles: Sequence[ModelGraphBundle]) -> np.ndarray:
    """Day-k feature rows across bundles; what the standardizer fits on."""
    return np.concatenate([b.X_day for b in bundles], axis=0)
