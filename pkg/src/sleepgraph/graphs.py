"""Weighted social graphs from communication events, plus node-importance metrics.

Call graphs accumulate call seconds per directed pair; SMS graphs accumulate
class-weighted message counts. Downstream spectral layers need undirected
graphs, so directed aggregates are symmetrized (A + A^T) before use.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

CALL = "call"
SMS = "sms"

EVENT_CSV_HEADER = ["kind", "src", "dst", "timestamp", "duration_s", "sms_class"]


class GraphError(ValueError):
    pass


class ConvergenceError(RuntimeError):
    """Power iteration failed; carries the last iterate for inspection."""

    def __init__(self, msg: str, iterate: np.ndarray):
        super().__init__(msg)
        self.iterate = iterate


@dataclass(frozen=True)
class CommEvent:
    """One call or SMS metadata record."""

    kind: str
    src: str
    dst: str
    timestamp: int
    duration_s: float | None = None
    sms_class: int | None = None

    def __post_init__(self):
        if self.kind not in (CALL, SMS):
            raise GraphError(f"unknown event kind {self.kind!r}")
        if self.src == self.dst:
            raise GraphError(f"self-event {self.src!r} -> {self.dst!r}")
        if self.kind == CALL:
            if self.duration_s is None or self.sms_class is not None:
                raise GraphError("call events carry duration_s and no sms_class")
            if self.duration_s < 0:
                raise GraphError(f"negative call duration {self.duration_s}")
        else:
            if self.sms_class is None or self.duration_s is not None:
                raise GraphError("sms events carry sms_class and no duration_s")
            if self.sms_class not in (0, 1):
                raise GraphError(f"sms_class must be 0 or 1, got {self.sms_class}")


@dataclass
class WeightedGraph:
    """Node roster plus a dense non-negative weighted adjacency."""

    node_ids: list
    adj: np.ndarray

    def __post_init__(self):
        self.adj = np.asarray(self.adj, dtype=np.float64)
        n = len(self.node_ids)
        if len(set(self.node_ids)) != n:
            raise GraphError("duplicate node ids")
        if self.adj.shape != (n, n):
            raise GraphError(f"adjacency shape {self.adj.shape} != ({n}, {n})")
        if np.any(self.adj < 0):
            raise GraphError("negative edge weight")
        if np.any(np.diag(self.adj) != 0):
            raise GraphError("nonzero diagonal")

    @property
    def n(self) -> int:
        return len(self.node_ids)

    def is_symmetric(self) -> bool:
        return bool(np.array_equal(self.adj, self.adj.T))


@dataclass
class CentralityProfile:
    """Degree and eigenvalue centrality with alone/small/large categories."""

    degree: np.ndarray
    eigen: np.ndarray
    category_degree: list[str]
    category_eigen: list[str]
    degenerate: bool = field(default=False)


def _window_mask(events: Sequence[CommEvent], t0: int, t1: int) -> Iterable[CommEvent]:
    return (e for e in events if t0 <= e.timestamp <= t1)


def build_call_graph(
    events: Sequence[CommEvent], window: tuple[int, int], roster: Sequence
) -> WeightedGraph:
    """Directed call graph: adj[i][j] = total call seconds i -> j in the window.

    Events naming participants outside the roster are dropped with one warning
    carrying the rejected count.
    """
    t0, t1 = window
    if t0 > t1:
        raise GraphError(f"window start {t0} after end {t1}")
    index = {pid: i for i, pid in enumerate(roster)}
    adj = np.zeros((len(roster), len(roster)))
    rejected = 0
    for ev in _window_mask(events, t0, t1):
        if ev.kind != CALL:
            raise GraphError(f"non-call event in call graph build: {ev.kind}")
        if ev.duration_s < 0:
            raise GraphError(f"negative call duration {ev.duration_s}")
        si, di = index.get(ev.src), index.get(ev.dst)
        if si is None or di is None:
            rejected += 1
            continue
        adj[si, di] += ev.duration_s
    if rejected:
        warnings.warn(f"rejected {rejected} call events naming unknown participants")
    return WeightedGraph(list(roster), adj)


def build_sms_graph(
    events: Sequence[CommEvent],
    window: tuple[int, int],
    roster: Sequence,
    w1: float = 1.0,
    w2: float = 0.5,
) -> WeightedGraph:
    """Directed SMS graph: adj[i][j] = w1 * (#class-1 msgs) + w2 * (#class-0 msgs)."""
    t0, t1 = window
    if t0 > t1:
        raise GraphError(f"window start {t0} after end {t1}")
    if not (w1 > w2 > 0):
        raise GraphError(f"need w1 > w2 > 0, got w1={w1}, w2={w2}")
    index = {pid: i for i, pid in enumerate(roster)}
    adj = np.zeros((len(roster), len(roster)))
    rejected = 0
    for ev in _window_mask(events, t0, t1):
        if ev.kind != SMS:
            raise GraphError(f"non-sms event in sms graph build: {ev.kind}")
        si, di = index.get(ev.src), index.get(ev.dst)
        if si is None or di is None:
            rejected += 1
            continue
        adj[si, di] += w1 if ev.sms_class == 1 else w2
    if rejected:
        warnings.warn(f"rejected {rejected} sms events naming unknown participants")
    return WeightedGraph(list(roster), adj)


def symmetrize(g: WeightedGraph) -> WeightedGraph:
    """Undirected view: adj + adj^T (diagonal stays zero)."""
    return WeightedGraph(list(g.node_ids), g.adj + g.adj.T)


def degree_centrality(g: WeightedGraph) -> np.ndarray:
    """Neighbor count per node: weight-blind indicator sum over incident edges."""
    _require_symmetric(g.adj)
    return (g.adj > 0).sum(axis=0).astype(np.int64)


def eigenvalue_centrality(
    g: WeightedGraph, tol: float = 1e-10, max_iter: int = 10000
) -> np.ndarray:
    """Principal eigenvector of the adjacency, unit L2 norm, entries >= 0.

    Computed per connected component by power iteration (deterministic
    all-ones start, spectrum shifted by +I so bipartite components converge);
    only the component with the largest eigenvalue carries mass, every other
    node — isolated ones in particular — gets exactly 0.
    """
    _require_symmetric(g.adj)
    n = g.n
    if n == 0:
        return np.zeros(0)
    if not g.adj.any():
        return np.zeros(n)

    best_val = -np.inf
    best_vec = np.zeros(n)
    best_key = None
    for comp in connected_components(g):
        idx = sorted(comp)
        if len(idx) == 1:
            continue
        sub = g.adj[np.ix_(idx, idx)]
        vec, lam = _power_iterate(sub, tol, max_iter)
        if lam > best_val + 1e-12 or (
            abs(lam - best_val) <= 1e-12 and (best_key is None or idx[0] < best_key)
        ):
            best_val = lam
            best_key = idx[0]
            best_vec = np.zeros(n)
            best_vec[idx] = vec
    return best_vec


def _power_iterate(sub: np.ndarray, tol: float, max_iter: int) -> tuple[np.ndarray, float]:
    m = sub + np.eye(sub.shape[0])
    x = np.ones(sub.shape[0])
    x /= np.linalg.norm(x)
    for _ in range(max_iter):
        y = m @ x
        y /= np.linalg.norm(y)
        if np.max(np.abs(y - x)) < tol:
            x = y
            break
        x = y
    else:
        raise ConvergenceError(
            f"power iteration did not converge within {max_iter} iterations", x
        )
    lam = float(x @ sub @ x)  # Rayleigh quotient on the unshifted matrix
    return x, lam


EIGEN_ALONE_MAX = 1e-4
EIGEN_SMALL_MAX = 0.3
DEGREE_SMALL_MAX = 4

ALONE, SMALL, LARGE = "alone", "small", "large"


def categorize_centrality(values: np.ndarray, metric: str) -> list[str]:
    """Map centrality scores to alone/small/large connectivity categories."""
    values = np.asarray(values)
    cats = []
    if metric == "eigen":
        for v in values:
            if v < EIGEN_ALONE_MAX:
                cats.append(ALONE)
            elif v < EIGEN_SMALL_MAX:
                cats.append(SMALL)
            else:
                cats.append(LARGE)
    elif metric == "degree":
        for v in values:
            if v == 0:
                cats.append(ALONE)
            elif v < DEGREE_SMALL_MAX:
                cats.append(SMALL)
            else:
                cats.append(LARGE)
    else:
        raise GraphError(f"unknown centrality metric {metric!r}")
    return cats


def centrality_profile(g: WeightedGraph) -> CentralityProfile:
    deg = degree_centrality(g)
    eig = eigenvalue_centrality(g)
    return CentralityProfile(
        degree=deg,
        eigen=eig,
        category_degree=categorize_centrality(deg, "degree"),
        category_eigen=categorize_centrality(eig, "eigen"),
        degenerate=not g.adj.any(),
    )


def connected_components(g: WeightedGraph) -> list[set]:
    """Partition of node indices into maximal mutually-reachable sets (BFS)."""
    _require_symmetric(g.adj)
    n = g.n
    seen = np.zeros(n, dtype=bool)
    comps = []
    for start in range(n):
        if seen[start]:
            continue
        comp = {start}
        seen[start] = True
        frontier = [start]
        while frontier:
            nxt = []
            for u in frontier:
                for v in np.flatnonzero(g.adj[u] > 0):
                    v = int(v)
                    if not seen[v]:
                        seen[v] = True
                        comp.add(v)
                        nxt.append(v)
            frontier = nxt
        comps.append(comp)
    return comps


def _require_symmetric(adj: np.ndarray):
    if not np.array_equal(adj, adj.T):
        raise GraphError("operation requires a symmetric adjacency; call symmetrize() first")


# ---------------------------------------------------------------------------
# Serialization: events CSV and graph JSON
# ---------------------------------------------------------------------------

def read_events_csv(path: str | Path) -> list[CommEvent]:
    """Parse `kind,src,dst,timestamp,duration_s,sms_class` rows.

    Empty cells mark inapplicable fields. Malformed rows raise with the
    1-based line number.
    """
    events = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != EVENT_CSV_HEADER:
            raise GraphError(
                f"{path}: expected header {','.join(EVENT_CSV_HEADER)}, "
                f"got {reader.fieldnames}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                kind = row["kind"]
                dur = float(row["duration_s"]) if row["duration_s"] else None
                cls = int(row["sms_class"]) if row["sms_class"] else None
                events.append(
                    CommEvent(
                        kind=kind,
                        src=row["src"],
                        dst=row["dst"],
                        timestamp=int(row["timestamp"]),
                        duration_s=dur,
                        sms_class=cls,
                    )
                )
            except (GraphError, KeyError, TypeError, ValueError) as exc:
                raise GraphError(f"{path}:{lineno}: bad event row: {exc}") from exc
    return events


def write_events_csv(path: str | Path, events: Sequence[CommEvent]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVENT_CSV_HEADER)
        for ev in events:
            writer.writerow(
                [
                    ev.kind,
                    ev.src,
                    ev.dst,
                    ev.timestamp,
                    "" if ev.duration_s is None else repr(float(ev.duration_s)),
                    "" if ev.sms_class is None else ev.sms_class,
                ]
            )


def graph_to_dict(g: WeightedGraph) -> dict:
    """JSON form: node ids plus sparse [i, j, w] triplets of nonzero weights."""
    rows, cols = np.nonzero(g.adj)
    triplets = [[int(i), int(j), float(g.adj[i, j])] for i, j in zip(rows, cols)]
    return {"node_ids": list(g.node_ids), "triplets": triplets}


def graph_from_dict(d: dict) -> WeightedGraph:
    node_ids = d["node_ids"]
    adj = np.zeros((len(node_ids), len(node_ids)))
    for i, j, w in d["triplets"]:
        adj[i, j] = w
    return WeightedGraph(node_ids, adj)


def save_graph_json(path: str | Path, g: WeightedGraph):
    Path(path).write_text(json.dumps(graph_to_dict(g), sort_keys=True))


def load_graph_json(path: str | Path) -> WeightedGraph:
    return graph_from_dict(json.loads(Path(path).read_text()))
