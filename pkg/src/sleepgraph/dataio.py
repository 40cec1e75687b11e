"""Dataset files on disk: feature/label CSVs and per-day graph JSON per cohort.

Layout under a dataset directory:

    dataset.json            cohort index, feature names, day counts
    features_<cohort>.csv   participant_id,date,<feature columns>
    labels_<cohort>.csv     participant_id,date,sleep_minutes
    graphs_<cohort>.json    {"days": [graph dict per day]}

Dates are integer day indices. Missing values are empty cells. Floats are
written with repr so a load/save round trip is exact.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .graphs import graph_from_dict, graph_to_dict
from .pipeline import CohortDataset, PipelineError


def _fmt(value: float) -> str:
    return "" if np.isnan(value) else repr(float(value))


def write_dataset(out_dir: str | Path, datasets: list[CohortDataset]) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    meta = {
        "cohorts": [
            {
                "cohort_id": ds.cohort_id,
                "participants": list(ds.participants),
                "days": ds.days,
            }
            for ds in datasets
        ],
        "feature_names": datasets[0].feature_names,
    }
    meta_path = out_dir / "dataset.json"
    meta_path.write_text(json.dumps(meta, sort_keys=True, indent=1))
    written.append(meta_path)

    for ds in datasets:
        fpath = out_dir / f"features_{ds.cohort_id}.csv"
        with open(fpath, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["participant_id", "date"] + list(ds.feature_names))
            for pi, pid in enumerate(ds.participants):
                for day in range(ds.days):
                    writer.writerow(
                        [pid, day] + [_fmt(v) for v in ds.features[pi, day]]
                    )
        written.append(fpath)

        lpath = out_dir / f"labels_{ds.cohort_id}.csv"
        with open(lpath, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["participant_id", "date", "sleep_minutes"])
            for pi, pid in enumerate(ds.participants):
                for day in range(ds.days):
                    writer.writerow([pid, day, _fmt(ds.sleep_minutes[pi, day])])
        written.append(lpath)

        gpath = out_dir / f"graphs_{ds.cohort_id}.json"
        gpath.write_text(
            json.dumps({"days": [graph_to_dict(g) for g in ds.graphs]}, sort_keys=True)
        )
        written.append(gpath)
    return written


def load_dataset(in_dir: str | Path) -> list[CohortDataset]:
    in_dir = Path(in_dir)
    meta_path = in_dir / "dataset.json"
    if not meta_path.exists():
        raise PipelineError(f"no dataset.json in {in_dir}")
    meta = json.loads(meta_path.read_text())
    names = meta["feature_names"]
    datasets = []
    for entry in meta["cohorts"]:
        cid = entry["cohort_id"]
        participants = entry["participants"]
        days = entry["days"]
        row_of = {str(pid): i for i, pid in enumerate(participants)}
        m = len(names)

        features = np.full((len(participants), days, m), np.nan)
        fpath = in_dir / f"features_{cid}.csv"
        with open(fpath, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["participant_id", "date"] + list(names):
                raise PipelineError(f"{fpath}: unexpected header")
            for lineno, row in enumerate(reader, start=2):
                try:
                    pi = row_of[row[0]]
                    day = int(row[1])
                    for j, cell in enumerate(row[2:]):
                        if cell:
                            features[pi, day, j] = float(cell)
                except (KeyError, ValueError, IndexError) as exc:
                    raise PipelineError(f"{fpath}:{lineno}: bad row: {exc}") from exc

        sleep = np.full((len(participants), days), np.nan)
        lpath = in_dir / f"labels_{cid}.csv"
        with open(lpath, newline="") as fh:
            reader = csv.reader(fh)
            if next(reader) != ["participant_id", "date", "sleep_minutes"]:
                raise PipelineError(f"{lpath}: unexpected header")
            for lineno, row in enumerate(reader, start=2):
                try:
                    if row[2]:
                        sleep[row_of[row[0]], int(row[1])] = float(row[2])
                except (KeyError, ValueError, IndexError) as exc:
                    raise PipelineError(f"{lpath}:{lineno}: bad row: {exc}") from exc

        gdoc = json.loads((in_dir / f"graphs_{cid}.json").read_text())
        graphs = [graph_from_dict(d) for d in gdoc["days"]]
        datasets.append(
            CohortDataset(
                cohort_id=cid,
                participants=participants,
                features=features,
                sleep_minutes=sleep,
                graphs=graphs,
                feature_names=list(names),
            )
        )
    return datasets
