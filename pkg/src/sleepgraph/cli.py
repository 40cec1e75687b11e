"""Command-line entry point wiring the whole lab into reproducible runs.

Every subcommand reads a flat key=value config, echoes the resolved config
into the output directory, writes its artifacts atomically, and finishes with
a manifest listing content hashes. Reruns with identical configs produce
byte-identical files.

Exit codes: 0 success, 2 config error, 3 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .configfile import (
    BOOL,
    FLOAT,
    INT,
    INT_LIST,
    STR,
    STR_LIST,
    ConfigError,
    Field,
    Schema,
    echo_config,
    read_config,
)
from .evaluation import (
    EvalError,
    SplitPlan,
    anova_oneway,
    kruskal_wallis,
    pairwise_posthoc,
    run_bootstrap,
    saliency_by_modality,
    saliency_importance,
    split_random,
    summarize_reports,
    sweep,
    temporal_ablation,
)
from .graphs import (
    GraphError,
    build_call_graph,
    build_sms_graph,
    centrality_profile,
    graph_to_dict,
    read_events_csv,
    symmetrize,
)
from .models import MODEL_KINDS, BundleBatch, SleepLabelModel
from .pipeline import (
    PipelineError,
    Standardizer,
    bundle_feature_rows,
    make_bundles,
    preprocess,
    standardize_bundles,
)
from .robustness import PerturbationPlan, run_robustness
from .seeding import substream
from .synth import SynthConfig, generate_synthetic

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3


class DataError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Output directory plumbing
# ---------------------------------------------------------------------------

def _prepare_out(out_dir: Path, force: bool) -> Path:
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise ConfigError(
                f"output directory {out_dir} is not empty (use --force to overwrite)"
            )
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _write_atomic(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_json(path: Path, obj) -> Path:
    _write_atomic(path, json.dumps(obj, sort_keys=True, indent=1))
    return path


def _write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join("" if v is None else str(v) for v in row))
    _write_atomic(path, "\n".join(lines) + "\n")
    return path


def _finish(out_dir: Path, command: str, resolved: dict, files: list[Path]):
    echo_path = out_dir / "config_echo.txt"
    echo_config(resolved, echo_path)
    hashes = {}
    for f in sorted(set(files) | {echo_path}):
        hashes[f.name] = hashlib.sha256(f.read_bytes()).hexdigest()
    manifest = {"command": command, "seed": resolved.get("seed"), "files": hashes}
    _write_json(out_dir / "manifest.json", manifest)
    print(f"{command}: wrote {len(hashes) + 1} files to {out_dir}")


# ---------------------------------------------------------------------------
# Shared schema fragments
# ---------------------------------------------------------------------------

def _train_fields() -> list[Field]:
    return [
        Field("eta", INT, default=15),
        Field("seq_len", INT, default=3),
        Field("models", STR_LIST, default=list(MODEL_KINDS)),
        Field("lr", FLOAT, default=0.001),
        Field("patience", INT, default=30),
        Field("min_delta", FLOAT, default=0.01),
        Field("max_epochs", INT, default=200),
        Field("dropout_rate", FLOAT, default=0.2),
        Field("hidden_graph", INT, default=32),
        Field("hidden_lstm", INT, default=32),
        Field("head_hidden", INT, default=16),
        Field("graph_layers", INT, default=2),
        Field("batch_size", INT, default=0),  # 0 = full batch
        Field("loss", STR, default="bce"),
        Field("threshold", FLOAT, default=0.5),
        Field("knn_k", INT, default=5),
        Field("z_cutoff", FLOAT, default=4.0),
        Field("seed", INT, default=0),
    ]


def _model_params(cfg: dict) -> dict:
    return {
        "lr": cfg["lr"],
        "patience": cfg["patience"],
        "min_delta": cfg["min_delta"],
        "max_epochs": cfg["max_epochs"],
        "dropout_rate": cfg["dropout_rate"],
        "hidden_graph": cfg["hidden_graph"],
        "hidden_lstm": cfg["hidden_lstm"],
        "head_hidden": cfg["head_hidden"],
        "graph_layers": cfg["graph_layers"],
        "batch_size": cfg["batch_size"] or None,
        "loss": cfg["loss"],
        "threshold": cfg["threshold"],
    }


def _check_models(kinds: list[str]):
    bad = [k for k in kinds if k not in MODEL_KINDS]
    if bad:
        raise ConfigError(f"unknown model kinds: {', '.join(bad)}")


def _load_bundles(cfg: dict):
    data_dir = Path(cfg["data_dir"])
    if not data_dir.exists():
        raise DataError(f"data directory {data_dir} does not exist")
    datasets = dataio.load_dataset(data_dir)
    datasets = preprocess(datasets, k=cfg["knn_k"], cutoff=cfg["z_cutoff"])
    bundles, skipped = make_bundles(datasets, seq_len=cfg["seq_len"], eta=cfg["eta"])
    if not bundles:
        raise DataError("no bundles could be built from the dataset")
    return datasets, bundles, skipped


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

SYNTH_SCHEMA = Schema("synth", [
    Field("n_cohorts", INT, default=SynthConfig.n_cohorts),
    Field("participants_per_cohort", INT, default=SynthConfig.participants_per_cohort),
    Field("days", INT, default=SynthConfig.days),
    Field("m", INT, default=SynthConfig.m),
    Field("contagion_strength", FLOAT, default=SynthConfig.contagion_strength),
    Field("temporal_coeff", FLOAT, default=SynthConfig.temporal_coeff),
    Field("graph_density", FLOAT, default=SynthConfig.graph_density),
    Field("noise_sd", FLOAT, default=SynthConfig.noise_sd),
    Field("missing_rate", FLOAT, default=SynthConfig.missing_rate),
    Field("seed", INT, default=SynthConfig.seed),
])


def cmd_synth(cfg: dict, out_dir: Path) -> list[Path]:
    try:
        synth_cfg = SynthConfig(**cfg)
    except PipelineError as exc:
        raise ConfigError(str(exc)) from exc
    datasets = generate_synthetic(synth_cfg)
    return dataio.write_dataset(out_dir, datasets)


GRAPHS_SCHEMA = Schema("graphs", [
    Field("events", STR, required=True),
    Field("roster", STR_LIST, required=True),
    Field("window_start", INT, required=True),
    Field("window_end", INT, required=True),
    Field("kind", STR, required=True),
    Field("w1", FLOAT, default=1.0),
    Field("w2", FLOAT, default=0.5),
    Field("seed", INT, default=0),
])


def cmd_graphs(cfg: dict, out_dir: Path) -> list[Path]:
    if cfg["kind"] not in ("call", "sms"):
        raise ConfigError(f"kind must be 'call' or 'sms', got {cfg['kind']!r}")
    events_path = Path(cfg["events"])
    if not events_path.exists():
        raise DataError(f"events file {events_path} does not exist")
    events = read_events_csv(events_path)
    events = [e for e in events if e.kind == cfg["kind"]]
    window = (cfg["window_start"], cfg["window_end"])
    if cfg["kind"] == "call":
        directed = build_call_graph(events, window, cfg["roster"])
    else:
        directed = build_sms_graph(events, window, cfg["roster"], cfg["w1"], cfg["w2"])
    undirected = symmetrize(directed)
    profile = centrality_profile(undirected)
    files = [
        _write_json(out_dir / "graph_directed.json", graph_to_dict(directed)),
        _write_json(out_dir / "graph.json", graph_to_dict(undirected)),
        _write_json(out_dir / "centrality.json", {
            "node_ids": list(undirected.node_ids),
            "degree": [int(v) for v in profile.degree],
            "eigen": [float(v) for v in profile.eigen],
            "category_degree": profile.category_degree,
            "category_eigen": profile.category_eigen,
            "degenerate": profile.degenerate,
        }),
    ]
    return files


TRAIN_SCHEMA = Schema("train", [Field("data_dir", STR, required=True),
                                Field("split_seed", INT, default=0)] + _train_fields())


def cmd_train(cfg: dict, out_dir: Path) -> list[Path]:
    _check_models(cfg["models"])
    _, bundles, skipped = _load_bundles(cfg)
    train, val, test = split_random(bundles, seed=cfg["split_seed"])
    scaler = Standardizer().fit(bundle_feature_rows(train))
    train_b = BundleBatch(standardize_bundles(train, scaler))
    val_b = BundleBatch(standardize_bundles(val, scaler))
    test_b = BundleBatch(standardize_bundles(test, scaler))
    files = []
    report = {"skipped_days": skipped, "models": {}}
    sample = train[0]
    for kind in cfg["models"]:
        params = _model_params(cfg)
        params.update(kind=kind, n_features=sample.n_features, eta=sample.eta,
                      seq_len=sample.seq_len,
                      seed=int(substream(cfg["seed"], f"init:{kind}").integers(2**31)))
        model = SleepLabelModel(**params).fit(train_b, val_b)
        mdir = out_dir / f"model_{kind}"
        model.save(mdir)
        files.extend([mdir / "params.json", mdir / "manifest.json"])
        report["models"][kind] = {
            "train_accuracy": model.score(train_b),
            "test_accuracy": model.score(test_b),
            "epochs_trained": model.epochs_trained_,
        }
    files.append(_write_json(out_dir / "train_report.json", report))
    return files


EVALUATE_SCHEMA = Schema("evaluate", [
    Field("data_dir", STR, required=True),
    Field("splits", STR_LIST, default=["random"]),
    Field("trials", INT, default=25),
    Field("loco_trials", INT, default=0),  # 0 = one per cohort
] + _train_fields())


def cmd_evaluate(cfg: dict, out_dir: Path, jobs: int = 1) -> list[Path]:
    _check_models(cfg["models"])
    for s in cfg["splits"]:
        if s not in ("random", "loco"):
            raise ConfigError(f"unknown split {s!r}")
    datasets, bundles, _ = _load_bundles(cfg)
    reports = []
    for split in cfg["splits"]:
        trials = cfg["trials"]
        if split == "loco":
            n_cohorts = len({b.cohort_id for b in bundles})
            trials = cfg["loco_trials"] or n_cohorts
        reports.extend(
            _bootstrap_jobs(bundles, cfg["models"], split, trials, cfg["seed"],
                            _model_params(cfg), jobs)
        )

    summary = summarize_reports(reports)
    files = [
        _write_json(out_dir / "reports.json",
                    [r.to_dict() for r in reports]),
        _write_json(out_dir / "summary.json", summary),
        _write_csv(out_dir / "summary.csv",
                   ["model", "split", "mean_acc", "std_acc", "trials"],
                   [[r["model"], r["split"], repr(r["mean_accuracy"]),
                     repr(r["std_accuracy"]), r["trials"]] for r in summary]),
    ]

    stats = {}
    posthoc_rows = []
    for split in cfg["splits"]:
        groups = {
            kind: [r.accuracy for r in reports
                   if r.model_kind == kind and r.split.startswith(split)]
            for kind in cfg["models"]
        }
        if len(cfg["models"]) >= 2 and all(len(g) >= 2 for g in groups.values()):
            f, p_a = anova_oneway(list(groups.values()))
            h, p_k = kruskal_wallis(list(groups.values()))
            stats[split] = {"anova_F": f, "anova_p": p_a,
                            "kruskal_H": h, "kruskal_p": p_k}
            proposed = [k for k in ("gan_lstm", "gcn_lstm") if k in groups]
            benchmarks = [k for k in ("lstm_only", "conv_lstm") if k in groups]
            pairs = [(a, b) for a in proposed for b in benchmarks]
            if pairs:
                for row in pairwise_posthoc(groups, pairs):
                    row["split"] = split
                    posthoc_rows.append(row)
    files.append(_write_json(out_dir / "stats.json", stats))
    files.append(_write_json(out_dir / "posthoc.json", posthoc_rows))
    return files


def _bootstrap_jobs(bundles, kinds, split, trials, seed, params, jobs):
    if jobs <= 1 or trials <= 1:
        return run_bootstrap(bundles, kinds, split, trials, seed, params)
    from concurrent.futures import ProcessPoolExecutor

    chunks = [c for c in (list(range(trials))[i::jobs] for i in range(jobs)) if c]
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        parts = pool.map(
            _bootstrap_worker,
            [(bundles, kinds, split, trials, seed, params, chunk) for chunk in chunks],
        )
    merged = [r for part in parts for r in part]
    kind_order = {k: i for i, k in enumerate(kinds)}
    merged.sort(key=lambda r: (r.trial, kind_order[r.model_kind]))
    return merged


def _bootstrap_worker(args):
    bundles, kinds, split, trials, seed, params, chunk = args
    return run_bootstrap(bundles, kinds, split, trials, seed, params,
                         trial_indices=chunk)


SWEEP_SCHEMA = Schema("sweep", [
    Field("data_dir", STR, required=True),
    Field("parameter", STR, required=True),
    Field("values", INT_LIST, required=True),
    Field("trials", INT, default=5),
] + _train_fields())


def cmd_sweep(cfg: dict, out_dir: Path) -> list[Path]:
    _check_models(cfg["models"])
    if cfg["parameter"] not in ("eta", "L"):
        raise ConfigError("sweep parameter must be 'eta' or 'L'")
    datasets, _, _ = _load_bundles(cfg)
    curves = sweep(datasets, cfg["parameter"], cfg["values"], cfg["models"],
                   cfg["trials"], cfg["seed"], eta=cfg["eta"], seq_len=cfg["seq_len"],
                   model_params=_model_params(cfg))
    files = [
        _write_json(out_dir / "curves.json", curves),
        _write_csv(out_dir / "curves.csv",
                   ["param", "model", "mean_acc", "std_acc"],
                   [[c["value"], c["model"], repr(c["mean_acc"]), repr(c["std_acc"])]
                    for c in curves]),
    ]
    return files


ROBUSTNESS_SCHEMA = Schema("robustness", [
    Field("data_dir", STR, required=True),
    Field("scenarios", STR_LIST,
          default=["features_all_users", "features_user_subset", "temporal_subset"]),
    Field("feature_counts", INT_LIST, default=[0]),
    Field("user_counts", INT_LIST, default=[0]),
    Field("day_counts", INT_LIST, default=[0]),
    Field("subset_feature_count", INT, default=0),  # features per user in scenario 2
    Field("h_t", INT, default=10),
    Field("h_p", INT, default=50),
] + _train_fields())


def cmd_robustness(cfg: dict, out_dir: Path, jobs: int = 1) -> list[Path]:
    _check_models(cfg["models"])
    _, bundles, _ = _load_bundles(cfg)
    m = bundles[0].n_features
    files = []
    for scenario in cfg["scenarios"]:
        if scenario == "features_all_users":
            plans = [PerturbationPlan(scenario, n_features=c)
                     for c in cfg["feature_counts"]]
        elif scenario == "features_user_subset":
            n_feat = cfg["subset_feature_count"] or m // 2
            plans = [PerturbationPlan(scenario, n_features=n_feat, n_users=c)
                     for c in cfg["user_counts"]]
        elif scenario == "temporal_subset":
            n_feat = cfg["subset_feature_count"] or m // 2
            plans = [PerturbationPlan(scenario, n_features=n_feat, n_days=c)
                     for c in cfg["day_counts"]]
        else:
            raise ConfigError(f"unknown scenario {scenario!r}")
        rows = run_robustness(bundles, cfg["models"], plans, cfg["h_t"], cfg["h_p"],
                              cfg["seed"], _model_params(cfg), jobs=jobs)
        files.append(_write_json(out_dir / f"robustness_{scenario}.json", rows))
        header = ["model", "scenario", "x", "mean_acc", "ci_low", "ci_high",
                  "clean_mean_acc", "n_trials",
                  "degree_alone", "degree_small", "degree_large",
                  "eigen_alone", "eigen_small", "eigen_large"]
        files.append(_write_csv(
            out_dir / f"robustness_{scenario}.csv", header,
            [[r["model"], r["scenario"], repr(float(r["x"])), repr(r["mean_acc"]),
              repr(r["ci_low"]), repr(r["ci_high"]), repr(r["clean_mean_acc"]),
              r["n_trials"]] +
             [None if r[k] is None else repr(r[k]) for k in header[8:]]
             for r in rows]))
    return files


SALIENCY_SCHEMA = Schema("saliency", [
    Field("data_dir", STR, required=True),
    Field("model", STR, default="gan_lstm"),
    Field("trials", INT, default=0),  # 0 = one per cohort
    Field("top_k", INT, default=10),
] + [f for f in _train_fields() if f.name != "models"])


def cmd_saliency(cfg: dict, out_dir: Path) -> list[Path]:
    _check_models([cfg["model"]])
    datasets, bundles, _ = _load_bundles(cfg)
    feature_names = datasets[0].feature_names
    cohorts = sorted({str(b.cohort_id) for b in bundles})
    trials = cfg["trials"] or len(cohorts)
    if trials > len(cohorts):
        raise ConfigError("saliency LOCO trials cannot exceed the cohort count")
    order = substream(cfg["seed"], "loco").permutation(len(cohorts))
    held = [cohorts[i] for i in order[:trials]]

    from .evaluation import split_loco, t_interval

    by_id = {str(b.cohort_id): b.cohort_id for b in bundles}
    importances = []
    for t, cohort in enumerate(held):
        seed_t = cfg["seed"] ^ t
        train, val, test = split_loco(bundles, by_id[cohort], seed=seed_t)
        scaler = Standardizer().fit(bundle_feature_rows(train))
        train_b = BundleBatch(standardize_bundles(train, scaler))
        val_b = BundleBatch(standardize_bundles(val, scaler))
        test_std = standardize_bundles(test, scaler)
        sample = train_b.bundles[0]
        params = _model_params(cfg)
        params.update(kind=cfg["model"], n_features=sample.n_features,
                      eta=sample.eta, seq_len=sample.seq_len,
                      seed=int(substream(seed_t, "init").integers(2**31)))
        model = SleepLabelModel(**params).fit(train_b, val_b)
        importances.append(saliency_importance(model, test_std))

    imp = np.stack(importances)  # (trials, m)
    mean_imp = imp.mean(axis=0)
    table = saliency_by_modality(mean_imp, feature_names, top_k=cfg["top_k"])
    for tag, rows in table.items():
        for row in rows:
            idx = feature_names.index(row["feature"])
            _, lo, hi = t_interval(imp[:, idx])
            row["ci_low"], row["ci_high"] = lo, hi
    files = [
        _write_json(out_dir / "saliency.json",
                    {"model": cfg["model"], "trials": trials, "by_modality": table}),
        _write_csv(out_dir / "saliency.csv",
                   ["modality", "feature", "importance", "ci_low", "ci_high"],
                   [[tag, r["feature"], repr(r["importance"]),
                     repr(r["ci_low"]), repr(r["ci_high"])]
                    for tag, rows in table.items() for r in rows]),
    ]
    return files


ABLATE_SCHEMA = Schema("ablate", [
    Field("data_dir", STR, required=True),
    Field("split", STR, default="loco"),
    Field("trials", INT, default=0),  # 0 = one per cohort for loco
] + _train_fields())


def cmd_ablate(cfg: dict, out_dir: Path) -> list[Path]:
    kinds = [k for k in cfg["models"] if k in ("gan_lstm", "gcn_lstm")]
    if not kinds:
        raise ConfigError("ablate needs gan_lstm and/or gcn_lstm in models")
    _, bundles, _ = _load_bundles(cfg)
    n_cohorts = len({b.cohort_id for b in bundles})
    trials = cfg["trials"] or (n_cohorts if cfg["split"] == "loco" else 5)
    plan = SplitPlan(kind=cfg["split"], seed=cfg["seed"])
    results = [
        temporal_ablation(bundles, kind, plan, trials, cfg["seed"],
                          model_params=_model_params(cfg))
        for kind in kinds
    ]
    return [_write_json(out_dir / "ablation.json", results)]


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

COMMANDS = {
    "synth": (SYNTH_SCHEMA, cmd_synth),
    "graphs": (GRAPHS_SCHEMA, cmd_graphs),
    "train": (TRAIN_SCHEMA, cmd_train),
    "evaluate": (EVALUATE_SCHEMA, cmd_evaluate),
    "sweep": (SWEEP_SCHEMA, cmd_sweep),
    "robustness": (ROBUSTNESS_SCHEMA, cmd_robustness),
    "saliency": (SALIENCY_SCHEMA, cmd_saliency),
    "ablate": (ABLATE_SCHEMA, cmd_ablate),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sleepgraph",
        description="Graph-temporal sleep label prediction lab",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat key=value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--force", action="store_true",
                       help="allow writing into a non-empty output directory")
        p.add_argument("--jobs", type=int, default=1,
                       help="worker processes for trial loops")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    schema, runner = COMMANDS[args.command]
    try:
        raw = read_config(args.config)
        resolved = schema.resolve(raw, overrides={"seed": args.seed})
        out_dir = _prepare_out(Path(args.out), args.force)
        if args.command in ("evaluate", "robustness"):
            files = runner(resolved, out_dir, jobs=max(1, args.jobs))
        else:
            files = runner(resolved, out_dir)
        _finish(out_dir, args.command, resolved, files)
        return EXIT_OK
    except (ConfigError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, GraphError, PipelineError, EvalError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
