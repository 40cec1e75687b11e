"""Experiment harness: splits, bootstrapped trials, statistics, saliency, sweeps.

Every trial derives its randomness from (base seed XOR trial index) through
named sub-streams, trains all requested model kinds on byte-identical data,
and scores them on byte-identical test bundles; that shared footing is what
makes the cross-model comparisons fair.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special

from .graphs import WeightedGraph, categorize_centrality, degree_centrality, eigenvalue_centrality
from .models import BundleBatch, ModelGraphBundle, SleepLabelModel
from .pipeline import Standardizer, bundle_feature_rows, standardize_bundles
from .seeding import substream, trial_seed

CENTRALITY_METRICS = ("degree", "eigen")
CATEGORIES = ("alone", "small", "large")


class EvalError(ValueError):
    pass


@dataclass
class SplitPlan:
    kind: str = "random"                  # "random" | "loco"
    fractions: tuple = (0.5, 0.1, 0.4)    # train/val/test for random splits
    held_cohort: object = None            # for loco
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("random", "loco"):
            raise EvalError(f"unknown split kind {self.kind!r}")
        if self.kind == "random":
            if len(self.fractions) != 3 or abs(sum(self.fractions) - 1.0) > 1e-9:
                raise EvalError("random split fractions must sum to 1")
            if any(f <= 0 for f in self.fractions):
                raise EvalError("split fractions must be positive")


@dataclass
class TrialReport:
    model_kind: str
    split: str
    trial: int
    seed: int
    accuracy: float
    category_accuracy: dict      # metric -> category -> {"accuracy", "scored"}
    epochs_trained: int
    wall_time_s: float = field(default=0.0, compare=False)

    def to_dict(self, include_timing: bool = False) -> dict:
        d = {
            "model_kind": self.model_kind,
            "split": self.split,
            "trial": self.trial,
            "seed": self.seed,
            "accuracy": self.accuracy,
            "category_accuracy": self.category_accuracy,
            "epochs_trained": self.epochs_trained,
        }
        if include_timing:
            d["wall_time_s"] = self.wall_time_s
        return d


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

def _apportion(n: int, fractions: Sequence[float]) -> list[int]:
    """Integer sizes within one of n*f, largest fractional remainders first."""
    raw = [n * f for f in fractions]
    sizes = [int(np.floor(r)) for r in raw]
    rem = n - sum(sizes)
    order = sorted(range(len(raw)), key=lambda i: raw[i] - sizes[i], reverse=True)
    for i in order[:rem]:
        sizes[i] += 1
    return sizes


def split_random(bundles: Sequence[ModelGraphBundle],
                 fractions: Sequence[float] = (0.5, 0.1, 0.4),
                 seed: int = 0):
    """Disjoint train/val/test cover with sizes within 1 of the exact fractions."""
    n = len(bundles)
    if n < 3:
        raise EvalError(f"need at least 3 bundles to split, got {n}")
    sizes = _apportion(n, fractions)
    if any(s == 0 for s in sizes):
        raise EvalError("too few bundles for the requested fractions")
    order = substream(seed, "split").permutation(n)
    a, b = sizes[0], sizes[0] + sizes[1]
    pick = lambda ids: [bundles[i] for i in ids]
    return pick(order[:a]), pick(order[a:b]), pick(order[b:])


def split_loco(bundles: Sequence[ModelGraphBundle], held_cohort,
               val_fraction: float = 0.1, seed: int = 0):
    """Hold one cohort out entirely; val is a fraction of the remainder."""
    cohorts = {b.cohort_id for b in bundles}
    if held_cohort not in cohorts:
        raise EvalError(f"unknown cohort {held_cohort!r}; have {sorted(map(str, cohorts))}")
    if len(cohorts) < 2:
        raise EvalError("leave-one-cohort-out needs at least 2 cohorts")
    test = [b for b in bundles if b.cohort_id == held_cohort]
    rest = [b for b in bundles if b.cohort_id != held_cohort]
    n_val = max(1, int(round(val_fraction * len(rest))))
    order = substream(seed, "split").permutation(len(rest))
    val = [rest[i] for i in order[:n_val]]
    train = [rest[i] for i in order[n_val:]]
    train_ids = {pid for b in train for pid in b.node_ids}
    test_ids = {pid for b in test for pid in b.node_ids}
    if train_ids & test_ids:
        raise EvalError("participant overlap between LOCO train and test")
    return train, val, test


def accuracy(preds: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Masked-correct over masked-total."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    mask = np.asarray(mask, dtype=bool)
    if preds.shape != labels.shape or preds.shape != mask.shape:
        raise EvalError("accuracy inputs disagree on shape")
    scored = int(mask.sum())
    if scored == 0:
        raise EvalError("no scored predictions")
    return float(((preds == labels) & mask).sum() / scored)


# ---------------------------------------------------------------------------
# Stratified scoring
# ---------------------------------------------------------------------------

def bundle_categories(bundle: ModelGraphBundle) -> dict[str, list[str]]:
    g = WeightedGraph(list(range(bundle.eta)), bundle.A)
    return {
        "degree": categorize_centrality(degree_centrality(g), "degree"),
        "eigen": categorize_centrality(eigenvalue_centrality(g), "eigen"),
    }


def stratified_accuracy(preds: np.ndarray, batch: BundleBatch) -> dict:
    """Overall and per-centrality-category accuracy over a bundle batch."""
    correct = (preds == batch.y) & batch.mask
    out = {"overall": {"accuracy": float(correct.sum() / batch.mask.sum()),
                       "scored": int(batch.mask.sum())}}
    cats = [bundle_categories(b) for b in batch.bundles]
    for metric in CENTRALITY_METRICS:
        table = {}
        labels = np.array([c[metric] for c in cats])  # (B, eta)
        for cat in CATEGORIES:
            sel = (labels == cat) & batch.mask
            scored = int(sel.sum())
            acc = float((correct & sel).sum() / scored) if scored else None
            table[cat] = {"accuracy": acc, "scored": scored}
        out[metric] = table
    return out


# ---------------------------------------------------------------------------
# Bootstrapped evaluation
# ---------------------------------------------------------------------------

def _batch_sha256(batch: BundleBatch) -> str:
    h = hashlib.sha256()
    for arr in (batch.x, batch.s, batch.a, batch.y, batch.mask):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


def run_bootstrap(bundles: Sequence[ModelGraphBundle], model_kinds: Sequence[str],
                  split_kind: str = "random", trials: int = 25, base_seed: int = 0,
                  model_params: dict | None = None,
                  fractions: Sequence[float] = (0.5, 0.1, 0.4),
                  standardize: bool = True,
                  trial_indices: Sequence[int] | None = None) -> list[TrialReport]:
    """Repeat split+train+test; every kind sees identical data each trial.

    Random splits resample per trial; LOCO holds a different cohort each trial
    (never repeating one). The standardizer refits on each trial's training
    rows only. `trial_indices` restricts the run to a subset of trial numbers
    (for parallel workers) without changing any per-trial seed.
    """
    if trials < 1:
        raise EvalError("need at least one trial")
    cohort_order = None
    if split_kind == "loco":
        cohorts = sorted({str(b.cohort_id) for b in bundles})
        if trials > len(cohorts):
            raise EvalError(
                f"LOCO without replacement supports at most {len(cohorts)} trials"
            )
        order = substream(base_seed, "loco").permutation(len(cohorts))
        cohort_order = [cohorts[i] for i in order]
    elif split_kind != "random":
        raise EvalError(f"unknown split kind {split_kind!r}")

    reports = []
    for t in (range(trials) if trial_indices is None else trial_indices):
        seed_t = trial_seed(base_seed, t)
        if split_kind == "random":
            train, val, test = split_random(bundles, fractions, seed=seed_t)
            split_desc = "random"
        else:
            held = cohort_order[t]
            by_id = {str(b.cohort_id): b.cohort_id for b in bundles}
            train, val, test = split_loco(bundles, by_id[held], seed=seed_t)
            split_desc = f"loco:{held}"
        if standardize:
            scaler = Standardizer().fit(bundle_feature_rows(train))
            train = standardize_bundles(train, scaler)
            val = standardize_bundles(val, scaler)
            test = standardize_bundles(test, scaler)
        train_b, val_b, test_b = BundleBatch(train), BundleBatch(val), BundleBatch(test)
        test_hash = _batch_sha256(test_b)

        for kind in model_kinds:
            t0 = time.perf_counter()
            params = dict(model_params or {})
            params.update(kind=kind, seed=substream(seed_t, f"init:{kind}").integers(2**31))
            sample = train[0]
            params.setdefault("n_features", sample.n_features)
            params.setdefault("eta", sample.eta)
            params.setdefault("seq_len", sample.seq_len)
            model = SleepLabelModel(**params)
            try:
                model.fit(train_b, val_b)
            except Exception as exc:
                raise EvalError(f"trial {t} ({kind}): training failed: {exc}") from exc
            preds = model.predict(test_b)
            strat = stratified_accuracy(preds, test_b)
            reports.append(
                TrialReport(
                    model_kind=kind,
                    split=split_desc,
                    trial=t,
                    seed=seed_t,
                    accuracy=strat["overall"]["accuracy"],
                    category_accuracy={m: strat[m] for m in CENTRALITY_METRICS},
                    epochs_trained=model.epochs_trained_,
                    wall_time_s=time.perf_counter() - t0,
                )
            )
            reports[-1].category_accuracy["test_sha256"] = test_hash
    return reports


def summarize_reports(reports: Sequence[TrialReport]) -> list[dict]:
    """Mean/std accuracy per (model kind, split kind), Table-1 shaped."""
    rows = []
    keys = sorted({(r.model_kind, r.split.split(":")[0]) for r in reports})
    for kind, split in keys:
        accs = [r.accuracy for r in reports
                if r.model_kind == kind and r.split.startswith(split)]
        rows.append({
            "model": kind,
            "split": split,
            "mean_accuracy": float(np.mean(accs)),
            "std_accuracy": float(np.std(accs, ddof=1)) if len(accs) > 1 else 0.0,
            "trials": len(accs),
        })
    return rows


# ---------------------------------------------------------------------------
# Statistics
# ---------------------------------------------------------------------------

def anova_oneway(groups: Sequence[Sequence[float]]) -> tuple[float, float]:
    """Classic one-way F test; p via the regularized incomplete beta.

    Degenerate case (no within- or between-group variance) returns F=0, p=1.
    """
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(groups) < 2 or any(len(g) < 2 for g in groups):
        raise EvalError("need >= 2 groups with >= 2 values each")
    all_vals = np.concatenate(groups)
    grand = all_vals.mean()
    k = len(groups)
    n = len(all_vals)
    ssb = sum(len(g) * (g.mean() - grand) ** 2 for g in groups)
    ssw = sum(((g - g.mean()) ** 2).sum() for g in groups)
    dfb, dfw = k - 1, n - k
    if ssw == 0.0 and ssb == 0.0:
        return 0.0, 1.0
    if ssw == 0.0:
        return np.inf, 0.0
    f = (ssb / dfb) / (ssw / dfw)
    p = float(special.fdtrc(dfb, dfw, f))
    return float(f), p


def kruskal_wallis(groups: Sequence[Sequence[float]]) -> tuple[float, float]:
    """Rank-based H with tie correction; p via the chi-squared tail."""
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(groups) < 2 or any(len(g) < 2 for g in groups):
        raise EvalError("need >= 2 groups with >= 2 values each")
    all_vals = np.concatenate(groups)
    n = len(all_vals)
    ranks = _midranks(all_vals)
    start = 0
    h = 0.0
    for g in groups:
        r = ranks[start : start + len(g)]
        h += r.sum() ** 2 / len(g)
        start += len(g)
    h = 12.0 / (n * (n + 1)) * h - 3 * (n + 1)
    _, counts = np.unique(all_vals, return_counts=True)
    tie_term = float((counts ** 3 - counts).sum())
    denom = 1.0 - tie_term / (n ** 3 - n)
    if denom <= 0:
        return 0.0, 1.0  # every observation tied
    h /= denom
    h = max(h, 0.0)
    p = float(special.chdtrc(len(groups) - 1, h))
    return float(h), p


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def welch_ttest(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sided Welch test (unequal variances)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    va, vb = a.var(ddof=1), b.var(ddof=1)
    na, nb = len(a), len(b)
    se2 = va / na + vb / nb
    if se2 == 0.0:
        return 0.0, 1.0 if a.mean() == b.mean() else 0.0
    t = (a.mean() - b.mean()) / np.sqrt(se2)
    df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = 2.0 * float(special.stdtr(df, -abs(t)))
    return float(t), min(p, 1.0)


def pairwise_posthoc(groups: dict[str, Sequence[float]],
                     pairs: Sequence[tuple[str, str]]) -> list[dict]:
    """Bonferroni-adjusted Welch tests for the requested pairs.

    Stands in for Tukey's HSD (which needs the studentized-range
    distribution); rows are labeled accordingly.
    """
    for x, y in pairs:
        if x not in groups or y not in groups:
            raise EvalError(f"pair ({x}, {y}) references unknown group")
    n_pairs = len(pairs)
    rows = []
    for x, y in pairs:
        t, p = welch_ttest(groups[x], groups[y])
        rows.append({
            "a": x,
            "b": y,
            "t": t,
            "p_raw": p,
            "p_adjusted": min(1.0, p * n_pairs),
            "method": "welch-bonferroni (Tukey-substitute)",
        })
    return rows


def paired_onesided_p(diffs: Sequence[float]) -> float:
    """One-sided paired t test that the mean difference is > 0."""
    d = np.asarray(diffs, dtype=np.float64)
    if len(d) < 2:
        raise EvalError("need >= 2 paired differences")
    sd = d.std(ddof=1)
    if sd == 0.0:
        return 0.0 if d.mean() > 0 else 1.0
    t = d.mean() / (sd / np.sqrt(len(d)))
    return float(special.stdtr(len(d) - 1, -t))


def t_interval(values: Sequence[float], confidence: float = 0.95) -> tuple[float, float, float]:
    """(mean, low, high) t-interval; collapses to the mean for n < 2."""
    v = np.asarray(values, dtype=np.float64)
    mean = float(v.mean())
    if len(v) < 2:
        return mean, mean, mean
    se = v.std(ddof=1) / np.sqrt(len(v))
    tq = float(special.stdtrit(len(v) - 1, 0.5 + confidence / 2.0))
    return mean, mean - tq * se, mean + tq * se


# ---------------------------------------------------------------------------
# Saliency feature importance
# ---------------------------------------------------------------------------

def saliency_importance(model: SleepLabelModel,
                        bundles: Sequence[ModelGraphBundle]) -> np.ndarray:
    """Per-feature importance from input gradients, normalized to sum 1.

    For each test input: |d(mean output)/d(X_day)|, normalized per input, then
    averaged over inputs, collapsed over the node axis by mean, and
    renormalized.
    """
    grads = np.abs(model.input_gradients(bundles))     # (B, eta, m)
    sums = grads.sum(axis=(1, 2), keepdims=True)
    sums[sums == 0] = 1.0
    per_input = grads / sums
    collapsed = per_input.mean(axis=0).mean(axis=0)     # (m,)
    total = collapsed.sum()
    return collapsed / total if total > 0 else collapsed


def saliency_by_modality(importance: np.ndarray, feature_names: Sequence[str],
                         top_k: int = 10) -> dict[str, list[dict]]:
    """Top-k features per modality tag, descending importance."""
    from .pipeline import modality_of

    by_tag: dict[str, list[dict]] = {}
    for idx, name in enumerate(feature_names):
        by_tag.setdefault(modality_of(name), []).append(
            {"feature": name, "importance": float(importance[idx])}
        )
    return {
        tag: sorted(rows, key=lambda r: -r["importance"])[:top_k]
        for tag, rows in sorted(by_tag.items())
    }


# ---------------------------------------------------------------------------
# Parameter sweeps and the temporal-module ablation
# ---------------------------------------------------------------------------

def sweep(datasets, parameter: str, values: Sequence[int], model_kinds: Sequence[str],
          trials: int, base_seed: int, eta: int = 15, seq_len: int = 3,
          model_params: dict | None = None) -> list[dict]:
    """Bootstrap mean/std accuracy per grid value of eta or sequence length."""
    from .pipeline import make_bundles

    if parameter not in ("eta", "L"):
        raise EvalError("sweep parameter must be 'eta' or 'L'")
    curves = []
    for value in values:
        e = value if parameter == "eta" else eta
        l = value if parameter == "L" else seq_len
        bundles, _ = make_bundles(datasets, seq_len=l, eta=e)
        reports = run_bootstrap(bundles, model_kinds, "random", trials, base_seed,
                                model_params=model_params)
        for row in summarize_reports(reports):
            curves.append({
                "param": parameter,
                "value": value,
                "model": row["model"],
                "mean_acc": row["mean_accuracy"],
                "std_acc": row["std_accuracy"],
            })
    return curves


def temporal_ablation(bundles: Sequence[ModelGraphBundle], kind: str,
                      split_plan: SplitPlan, trials: int, base_seed: int,
                      model_params: dict | None = None) -> dict:
    """Accuracy drop (percent of the full model's) when the LSTM branch is removed.

    Full and ablated models train on the same split each trial.
    """
    if kind not in ("gan_lstm", "gcn_lstm"):
        raise EvalError("temporal ablation applies to the graph-LSTM models")
    drops = []
    cohort_order = None
    if split_plan.kind == "loco":
        cohorts = sorted({str(b.cohort_id) for b in bundles})
        order = substream(base_seed, "loco").permutation(len(cohorts))
        cohort_order = [cohorts[i] for i in order]
        trials = min(trials, len(cohorts))
    for t in range(trials):
        seed_t = trial_seed(base_seed, t)
        if split_plan.kind == "random":
            train, val, test = split_random(bundles, split_plan.fractions, seed=seed_t)
        else:
            by_id = {str(b.cohort_id): b.cohort_id for b in bundles}
            train, val, test = split_loco(bundles, by_id[cohort_order[t]], seed=seed_t)
        scaler = Standardizer().fit(bundle_feature_rows(train))
        train = standardize_bundles(train, scaler)
        val = standardize_bundles(val, scaler)
        test = standardize_bundles(test, scaler)
        sample = train[0]
        params = dict(model_params or {})
        params.update(kind=kind, seed=substream(seed_t, f"init:{kind}").integers(2**31),
                      n_features=sample.n_features, eta=sample.eta,
                      seq_len=sample.seq_len)
        full = SleepLabelModel(**params).fit(train, val)
        ablated = SleepLabelModel(**params, ablate_lstm=True).fit(train, val)
        acc_full = full.score(test)
        acc_abl = ablated.score(test)
        drops.append(100.0 * (acc_full - acc_abl) / acc_full)
    return {
        "model": kind,
        "trials": trials,
        "mean_drop_pct": float(np.mean(drops)),
        "std_drop_pct": float(np.std(drops, ddof=1)) if len(drops) > 1 else 0.0,
        "drops_pct": [float(d) for d in drops],
    }
