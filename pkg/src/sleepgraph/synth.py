"""Synthetic cohorts with planted sleep contagion.

Each cohort gets weekly-resampled geometric social graphs, AR(1) feature
streams with modality-tagged blocks, and a latent sleep propensity that mixes
its own history, the neighborhood's previous-day feature-driven state, and
its own feature-driven term:

    z_i[k] = rho * z_i[k-1] + beta * mean_{j in N(i)} (w . x_j[k-1])
             + (1 - rho - beta) * (w . x_i[k]) + noise

The social channel transmits the neighbors' observable propensity w.x rather
than their full latent state: with mutual latent coupling, a participant's own
feature history predicts the neighborhood state through the influence echo,
which silently hands the no-graph baselines most of the social signal. Driving
contagion off the previous-day observables keeps the planted advantage of
graph models clean and seed-stable.

Sleep minutes come from a logistic squash of the (cohort-standardized) latent,
so the 8-hour label stays roughly balanced across configurations. beta = 0
severs the social channel entirely, which the evaluation suite uses as a
negative control.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np

from .graphs import WeightedGraph
from .pipeline import MAX_SLEEP_MIN, MODALITIES, CohortDataset, PipelineError
from .seeding import substream

FEATURE_AUTOCORR = 0.7
LATENT_SCALE = 2.0
SLEEP_BASE_MIN = 300.0
SLEEP_SPAN_MIN = 300.0
SLEEP_NOISE_MIN = 20.0
PHYSIOLOGY_WEIGHT_BOOST = 2.0
DAYS_PER_WEEK = 7


@dataclass
class SynthConfig:
    n_cohorts: int = 6
    participants_per_cohort: int = 31
    days: int = 110
    m: int = 32
    contagion_strength: float = 0.6
    temporal_coeff: float = 0.2
    graph_density: float = 0.18
    noise_sd: float = 0.05
    missing_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_cohorts < 1 or self.participants_per_cohort < 1:
            raise PipelineError("need at least one cohort and one participant")
        if self.days < 2:
            raise PipelineError("need at least two days")
        if self.m < len(MODALITIES):
            raise PipelineError(f"need at least {len(MODALITIES)} features")
        if not 0.0 <= self.contagion_strength <= 1.0:
            raise PipelineError("contagion_strength must be in [0, 1]")
        if not 0.0 <= self.temporal_coeff < 1.0:
            raise PipelineError("temporal_coeff must be in [0, 1)")
        if self.contagion_strength + self.temporal_coeff >= 1.0:
            raise PipelineError(
                "contagion_strength + temporal_coeff must stay below 1 "
                "(the latent recursion diverges otherwise)"
            )
        if not 0.0 < self.graph_density <= 1.0:
            raise PipelineError("graph_density must be in (0, 1]")
        if self.noise_sd < 0:
            raise PipelineError("noise_sd must be >= 0")
        if not 0.0 <= self.missing_rate < 1.0:
            raise PipelineError("missing_rate must be in [0, 1)")


def config_keys() -> list[str]:
    return [f.name for f in fields(SynthConfig)]


def feature_names(m: int) -> list[str]:
    """Modality-tagged names, m split into four near-equal contiguous blocks."""
    sizes = [m // len(MODALITIES)] * len(MODALITIES)
    for i in range(m % len(MODALITIES)):
        sizes[i] += 1
    names = []
    for tag, size in zip(MODALITIES, sizes):
        names.extend(f"{tag}_f{j:03d}" for j in range(size))
    return names


def _driver_weights(m: int, names: Sequence[str], seed: int) -> np.ndarray:
    """Unit-norm map from features to the latent, tilted toward physiology."""
    rng = substream(seed, "featweights")
    w = rng.normal(size=m)
    phys = np.array([n.startswith("physiology") for n in names])
    w[phys] *= PHYSIOLOGY_WEIGHT_BOOST
    return w / np.linalg.norm(w)


def _geometric_graph(n: int, density: float, rng: np.random.Generator,
                     roster: list) -> WeightedGraph:
    """Random geometric graph; weights grow as pairs get closer."""
    radius = np.sqrt(density / np.pi)
    pts = rng.random((n, 2))
    adj = np.zeros((n, n))
    strength = rng.uniform(0.5, 1.5, size=(n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d = np.hypot(*(pts[i] - pts[j]))
            if d < radius:
                w = (1.0 - d / radius) * strength[i, j]
                adj[i, j] = adj[j, i] = max(w, 1e-6)
    return WeightedGraph(roster, adj)


def generate_synthetic(cfg: SynthConfig) -> list[CohortDataset]:
    names = feature_names(cfg.m)
    w = _driver_weights(cfg.m, names, cfg.seed)
    datasets = []
    for c in range(cfg.n_cohorts):
        datasets.append(_generate_cohort(cfg, c, names, w))
    return datasets


def _generate_cohort(cfg: SynthConfig, c: int, names: list[str],
                     w: np.ndarray) -> CohortDataset:
    p, d, m = cfg.participants_per_cohort, cfg.days, cfg.m
    cohort_id = f"cohort{c}"
    roster = [f"{cohort_id}_p{idx:03d}" for idx in range(p)]

    graph_rng = substream(cfg.seed, "graphs", c)
    n_weeks = (d + DAYS_PER_WEEK - 1) // DAYS_PER_WEEK
    weekly = [_geometric_graph(p, cfg.graph_density, graph_rng, roster)
              for _ in range(n_weeks)]
    graphs = [weekly[k // DAYS_PER_WEEK] for k in range(d)]

    feat_rng = substream(cfg.seed, "features", c)
    x = np.empty((p, d, m))
    x[:, 0, :] = feat_rng.normal(size=(p, m))
    innov = np.sqrt(1.0 - FEATURE_AUTOCORR ** 2)
    for k in range(1, d):
        x[:, k, :] = (FEATURE_AUTOCORR * x[:, k - 1, :]
                      + innov * feat_rng.normal(size=(p, m)))

    z_rng = substream(cfg.seed, "latent", c)
    rho, beta = cfg.temporal_coeff, cfg.contagion_strength
    drive = x @ w                                     # (p, d)
    z = np.empty((p, d))
    z[:, 0] = drive[:, 0] + cfg.noise_sd * z_rng.normal(size=p)
    neighbor_means = _neighbor_mean_operators(graphs)
    for k in range(1, d):
        nbr = neighbor_means[k] @ drive[:, k - 1]
        z[:, k] = (rho * z[:, k - 1] + beta * nbr
                   + (1.0 - rho - beta) * drive[:, k]
                   + cfg.noise_sd * z_rng.normal(size=p))

    z_std = z.std()
    z_tilde = (z - z.mean()) / (z_std if z_std > 0 else 1.0)
    sleep_rng = substream(cfg.seed, "sleep", c)
    logistic = 1.0 / (1.0 + np.exp(-LATENT_SCALE * z_tilde))
    sleep = (SLEEP_BASE_MIN + SLEEP_SPAN_MIN * logistic
             + SLEEP_NOISE_MIN * sleep_rng.normal(size=(p, d)))
    sleep = np.clip(sleep, 0.0, MAX_SLEEP_MIN - 1.0)

    feats = x
    if cfg.missing_rate > 0:
        miss_rng = substream(cfg.seed, "missing", c)
        feats = x.copy()
        feats[miss_rng.random((p, d, m)) < cfg.missing_rate] = np.nan
        sleep = sleep.copy()
        sleep[miss_rng.random((p, d)) < cfg.missing_rate] = np.nan

    return CohortDataset(
        cohort_id=cohort_id,
        participants=roster,
        features=feats,
        sleep_minutes=sleep,
        graphs=graphs,
        feature_names=list(names),
    )


def _neighbor_mean_operators(graphs: list[WeightedGraph]) -> list[np.ndarray]:
    """Per-day row-normalized neighbor indicator; zero rows for isolated nodes."""
    ops = []
    cache = {}
    for g in graphs:
        key = id(g)
        if key not in cache:
            ind = (g.adj > 0).astype(np.float64)
            deg = ind.sum(axis=1, keepdims=True)
            cache[key] = np.divide(ind, deg, out=np.zeros_like(ind), where=deg > 0)
        ops.append(cache[key])
    return ops
