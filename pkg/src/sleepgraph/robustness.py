"""Perturbation robustness: learned noise distributions, the three perturbation
scenarios, and the retrain/perturb trial grid with centrality stratification.

Perturbations replace chosen cells with draws from per-feature Gaussians fitted
on training data (MLE) whose variance is inflated 3x, so injected values look
plausible enough to survive preprocessing. Models are always trained clean;
only test inputs are perturbed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import (
    EvalError,
    split_random,
    stratified_accuracy,
    t_interval,
)
from .models import BundleBatch, ModelGraphBundle, SleepLabelModel
from .pipeline import Standardizer, bundle_feature_rows, replace_bundle, standardize_bundles
from .seeding import substream, trial_seed

SCENARIOS = ("features_all_users", "features_user_subset", "temporal_subset")

VARIANCE_INFLATION = 3.0
SIGMA_FLOOR = 1e-9


@dataclass
class FeatureGaussian:
    """Per-feature mean and inflated standard deviation."""

    mu: np.ndarray
    sigma: np.ndarray
    floored: np.ndarray  # columns whose variance was zero before the floor

    @property
    def n_features(self) -> int:
        return len(self.mu)


@dataclass
class PerturbationPlan:
    scenario: str
    n_features: int = 0      # perturbed feature count (scenarios 1-3)
    n_users: int = 0         # perturbed participant count (scenario 2)
    n_days: int = 0          # perturbed sequence days (scenario 3)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise EvalError(f"unknown scenario {self.scenario!r}")
        if min(self.n_features, self.n_users, self.n_days) < 0:
            raise EvalError("perturbation counts must be >= 0")

    def validate_for(self, bundle: ModelGraphBundle):
        if self.n_features > bundle.n_features:
            raise EvalError(
                f"cannot perturb {self.n_features} of {bundle.n_features} features"
            )
        if self.scenario == "features_user_subset" and self.n_users > bundle.eta:
            raise EvalError(f"cannot perturb {self.n_users} of {bundle.eta} users")
        if self.scenario == "temporal_subset" and self.n_days > bundle.seq_len:
            raise EvalError(f"cannot perturb {self.n_days} of {bundle.seq_len} days")


def fit_feature_gaussians(train_rows: np.ndarray) -> FeatureGaussian:
    """MLE Gaussian per feature column, variance inflated by 3.

    Population (1/V) variance; constant columns get a tiny sigma floor and are
    flagged.
    """
    rows = np.asarray(train_rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise EvalError("need a non-empty 2-D training row matrix")
    mu = rows.mean(axis=0)
    var = rows.var(axis=0) * VARIANCE_INFLATION
    floored = var <= 0
    sigma = np.sqrt(np.where(floored, SIGMA_FLOOR ** 2, var))
    return FeatureGaussian(mu=mu, sigma=sigma, floored=floored)


def perturb(bundle: ModelGraphBundle, plan: PerturbationPlan,
            gaussians: FeatureGaussian, rng: np.random.Generator) -> ModelGraphBundle:
    """Resample the planned cells from the learned distributions.

    Scenarios 1 and 2 touch only the current-day matrix (past memory stays
    intact); scenario 3 resamples the chosen features on randomly chosen
    sequence days for all users. Every unplanned cell is bitwise unchanged.
    """
    plan.validate_for(bundle)
    if gaussians.n_features != bundle.n_features:
        raise EvalError("gaussian table width does not match bundle features")
    if plan.n_features == 0:
        return bundle
    eta, m = bundle.X_day.shape
    cols = rng.choice(m, size=plan.n_features, replace=False)

    if plan.scenario == "features_all_users":
        x = bundle.X_day.copy()
        x[:, cols] = gaussians.mu[cols] + gaussians.sigma[cols] * rng.standard_normal(
            (eta, plan.n_features)
        )
        return replace_bundle(bundle, X_day=x)

    if plan.scenario == "features_user_subset":
        if plan.n_users == 0:
            return bundle
        users = rng.choice(eta, size=plan.n_users, replace=False)
        x = bundle.X_day.copy()
        draws = gaussians.mu[cols] + gaussians.sigma[cols] * rng.standard_normal(
            (plan.n_users, plan.n_features)
        )
        x[np.ix_(users, cols)] = draws
        return replace_bundle(bundle, X_day=x)

    # temporal_subset
    if plan.n_days == 0:
        return bundle
    days = rng.choice(bundle.seq_len, size=plan.n_days, replace=False)
    s = bundle.S_seq.copy()
    draws = gaussians.mu[cols] + gaussians.sigma[cols] * rng.standard_normal(
        (eta, plan.n_days, plan.n_features)
    )
    s[np.ix_(np.arange(eta), days, cols)] = draws
    return replace_bundle(bundle, S_seq=s)


def default_feature_count_grid(n_features: int, step: int = 25) -> list[int]:
    """Perturbation counts in increments of `step`, capped at the feature count."""
    return list(range(0, n_features + 1, step))


def _collect_cells(bundles, model_kinds, plans, h_p, base_seed, model_params,
                   fractions, outer_indices):
    """Train clean models and score perturbed test sets for the given outer trials."""
    cells: dict[tuple[int, str], list] = {}
    clean: dict[str, list[float]] = {k: [] for k in model_kinds}
    for t in outer_indices:
        seed_t = trial_seed(base_seed, t)
        train, val, test = split_random(bundles, fractions, seed=seed_t)
        scaler = Standardizer().fit(bundle_feature_rows(train))
        train_b = BundleBatch(standardize_bundles(train, scaler))
        val_b = BundleBatch(standardize_bundles(val, scaler))
        test_std = standardize_bundles(test, scaler)
        gaussians = fit_feature_gaussians(bundle_feature_rows(train_b.bundles))

        models = {}
        for kind in model_kinds:
            params = dict(model_params or {})
            sample = train_b.bundles[0]
            params.update(kind=kind,
                          seed=substream(seed_t, f"init:{kind}").integers(2**31),
                          n_features=sample.n_features, eta=sample.eta,
                          seq_len=sample.seq_len)
            models[kind] = SleepLabelModel(**params).fit(train_b, val_b)
            clean[kind].append((t, models[kind].score(BundleBatch(test_std))))

        for pi, plan in enumerate(plans):
            for p in range(h_p):
                rng = substream(seed_t, "perturb", pi, p)
                perturbed = BundleBatch(
                    [perturb(b, plan, gaussians, rng) for b in test_std]
                )
                for kind in model_kinds:  # every model sees the same cell draw
                    preds = models[kind].predict(perturbed)
                    cells.setdefault((pi, kind), []).append(
                        (t, p, stratified_accuracy(preds, perturbed))
                    )
    return cells, clean


def _collect_worker(args):
    return _collect_cells(*args)


def run_robustness(bundles: list[ModelGraphBundle], model_kinds: list[str],
                   plans: list[PerturbationPlan], h_t: int = 10, h_p: int = 50,
                   base_seed: int = 0, model_params: dict | None = None,
                   fractions=(0.5, 0.1, 0.4), jobs: int = 1) -> list[dict]:
    """The H_t x H_p grid: retrain on fresh splits, perturb test data repeatedly.

    Returns one row per (model, plan) with mean accuracy, a 95% t-interval
    over all H_t*H_p cells, the clean baseline, and per-centrality-category
    accuracies averaged over trials. `jobs` > 1 spreads the outer retrain
    trials over worker processes; results are identical either way.
    """
    if h_t < 1 or h_p < 1:
        raise EvalError("H_t and H_p must be >= 1")
    if jobs > 1 and h_t > 1:
        from concurrent.futures import ProcessPoolExecutor

        chunks = [c for c in (list(range(h_t))[i::jobs] for i in range(jobs)) if c]
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(
                _collect_worker,
                [(bundles, list(model_kinds), plans, h_p, base_seed,
                  model_params, fractions, c) for c in chunks],
            ))
        cells = {}
        clean = {k: [] for k in model_kinds}
        for part_cells, part_clean in parts:
            for key, vals in part_cells.items():
                cells.setdefault(key, []).extend(vals)
            for kind, vals in part_clean.items():
                clean[kind].extend(vals)
        # re-establish the t-then-p order so float reductions match jobs=1
        for key in cells:
            cells[key].sort(key=lambda cell: (cell[0], cell[1]))
        for kind in clean:
            clean[kind].sort(key=lambda cell: cell[0])
    else:
        cells, clean = _collect_cells(bundles, model_kinds, plans, h_p, base_seed,
                                      model_params, fractions, list(range(h_t)))

    n_features = bundles[0].n_features
    rows = []
    for pi, plan in enumerate(plans):
        for kind in model_kinds:
            trials = [strat for _, _, strat in cells[(pi, kind)]]
            accs = [s["overall"]["accuracy"] for s in trials]
            mean, lo, hi = t_interval(accs)
            row = {
                "model": kind,
                "scenario": plan.scenario,
                "x": _plan_axis_value(plan, n_features),
                "mean_acc": mean,
                "ci_low": lo,
                "ci_high": hi,
                "n_trials": len(accs),
                "clean_mean_acc": float(np.mean([a for _, a in clean[kind]])),
            }
            for metric in ("degree", "eigen"):
                for cat in ("alone", "small", "large"):
                    vals = [s[metric][cat]["accuracy"] for s in trials
                            if s[metric][cat]["accuracy"] is not None]
                    row[f"{metric}_{cat}"] = float(np.mean(vals)) if vals else None
            rows.append(row)
    return rows


def _plan_axis_value(plan: PerturbationPlan, n_features: int):
    """Curve x-coordinate: percent of features, user count, or day count."""
    if plan.scenario == "features_all_users":
        return 100.0 * plan.n_features / n_features
    if plan.scenario == "features_user_subset":
        return plan.n_users
    return plan.n_days
