"""Repackage an arbitrary-size graph into fixed-size-`eta` graphs, losing no node.

Connected components route three ways: exactly-eta components pass through,
smaller ones pool into a residue, larger ones are carved into eta-sized pieces
(cutting the weakest ties) whose remainder joins the residue. Residue
fragments pack into eta-sized bins; whatever is left at the end (< eta nodes)
is padded by repeating nodes. All output graphs are induced subgraphs, so no
edge is ever fabricated; repeated slots get no edges at all.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graphs import GraphError, WeightedGraph, connected_components


@dataclass(frozen=True)
class ProvenanceEntry:
    """Where one output slot came from, and whether it is a repeat."""

    out_graph: int
    out_slot: int
    src_node: object
    duplicated: bool

    def to_dict(self) -> dict:
        return {
            "out_graph": self.out_graph,
            "out_slot": self.out_slot,
            "src_node": self.src_node,
            "duplicated": self.duplicated,
        }


@dataclass
class GeddOutput:
    graphs: list[WeightedGraph]
    provenance: list[ProvenanceEntry]
    duplicated: set = field(default_factory=set)
    degenerate: bool = False

    def slots(self, out_graph: int) -> list[ProvenanceEntry]:
        return [p for p in self.provenance if p.out_graph == out_graph]

    def provenance_json(self) -> list[dict]:
        return [p.to_dict() for p in self.provenance]


def gedd_partition(g: WeightedGraph, eta: int) -> GeddOutput:
    """Partition `g` into graphs of exactly `eta` nodes with provenance."""
    if eta <= 0:
        raise GraphError(f"eta must be >= 1, got {eta}")
    if not g.is_symmetric():
        raise GraphError("gedd_partition requires a symmetric graph")
    n = g.n
    if n == 0:
        return GeddOutput(graphs=[], provenance=[], degenerate=True)

    main_parts: list[list[int]] = []
    residue_fragments: list[list[int]] = []
    for comp in connected_components(g):
        idx = sorted(comp)
        q = len(idx)
        if q == eta:
            main_parts.append(idx)
        elif q < eta:
            residue_fragments.append(idx)
        else:
            pieces = _split_indices(g.adj, idx, eta)
            for piece in pieces:
                if len(piece) == eta:
                    main_parts.append(piece)
                else:
                    residue_fragments.append(piece)

    # Pack residue fragments into eta-sized bins, largest first; a fragment
    # that overflows its bin spills into the next, so only the final bin can
    # come up short.
    residue_fragments.sort(key=lambda frag: (-len(frag), frag[0]))
    sequence = [v for frag in residue_fragments for v in frag]
    leftover: list[int] = []
    for start in range(0, len(sequence), eta):
        chunk = sequence[start : start + eta]
        if len(chunk) == eta:
            main_parts.append(chunk)
        else:
            leftover = chunk

    graphs: list[WeightedGraph] = []
    provenance: list[ProvenanceEntry] = []
    duplicated: set = set()
    for part in main_parts:
        gi = len(graphs)
        graphs.append(_induced(g, part))
        provenance.extend(
            ProvenanceEntry(gi, slot, g.node_ids[v], False)
            for slot, v in enumerate(part)
        )

    if leftover:
        gi = len(graphs)
        graphs.append(_padded(g, leftover, eta))
        for slot in range(eta):
            v = leftover[slot % len(leftover)]
            dup = slot >= len(leftover)
            if dup:
                duplicated.add(g.node_ids[v])
            provenance.append(ProvenanceEntry(gi, slot, g.node_ids[v], dup))

    return GeddOutput(
        graphs=graphs,
        provenance=provenance,
        duplicated=duplicated,
        degenerate=eta > n,
    )


def split_component(component: WeightedGraph, eta: int) -> list[WeightedGraph]:
    """Carve a connected component larger than `eta` into induced pieces.

    All pieces have exactly `eta` nodes except a final remainder of size
    (n mod eta) when the size does not divide evenly.
    """
    if component.n <= eta:
        raise GraphError(f"component of size {component.n} needs no split at eta={eta}")
    pieces = _split_indices(component.adj, list(range(component.n)), eta)
    return [_induced(component, piece) for piece in pieces]


def _split_indices(adj: np.ndarray, comp: list[int], eta: int) -> list[list[int]]:
    """Greedy eta-piece extraction keeping strong ties internal.

    Each piece seeds at the remaining node of maximum weighted degree and
    absorbs whichever remaining node connects most strongly to the piece;
    ties break on the smaller node index, so the result is deterministic.
    """
    remaining = sorted(comp)
    pieces = []
    while len(remaining) > eta:
        sub = adj[np.ix_(remaining, remaining)]
        wdeg = sub.sum(axis=1)
        seed_pos = int(np.argmax(wdeg))  # argmax takes the first (smallest id) on ties
        piece = [remaining.pop(seed_pos)]
        conn = {v: adj[v, piece[0]] for v in remaining}
        while len(piece) < eta:
            best = max(remaining, key=lambda v: (conn[v], -v))
            if conn[best] <= 0:
                rem_sub = adj[np.ix_(remaining, remaining)]
                best = remaining[int(np.argmax(rem_sub.sum(axis=1)))]
            remaining.remove(best)
            piece.append(best)
            for v in remaining:
                conn[v] += adj[v, best]
        pieces.append(sorted(piece))
    pieces.append(remaining)
    return pieces


def _induced(g: WeightedGraph, indices: list[int]) -> WeightedGraph:
    ids = [g.node_ids[v] for v in indices]
    return WeightedGraph(ids, g.adj[np.ix_(indices, indices)])


def _padded(g: WeightedGraph, leftover: list[int], eta: int) -> WeightedGraph:
    """Pad `leftover` to eta slots by round-robin repetition.

    Repeated slots keep the node's identity in provenance but carry no edges,
    and get a disambiguated id so the roster stays unique.
    """
    r = len(leftover)
    adj = np.zeros((eta, eta))
    adj[:r, :r] = g.adj[np.ix_(leftover, leftover)]
    ids = [g.node_ids[v] for v in leftover]
    for slot in range(r, eta):
        src = leftover[slot % r]
        ids.append(f"{g.node_ids[src]}__rep{slot // r}")
    return WeightedGraph(ids, adj)


def save_provenance_json(path: str | Path, out: GeddOutput):
    Path(path).write_text(json.dumps(out.provenance_json(), sort_keys=True))
