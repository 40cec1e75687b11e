from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sleepgraph.graphs import GraphError, WeightedGraph, connected_components
from sleepgraph.partition import gedd_partition, split_component

from conftest import random_symmetric_graph


def expected_count_oracle(component_sizes, eta):
    """Output-count identity computed from sizes alone, independent of the code."""
    full = sum(1 for q in component_sizes if q == eta)
    full += sum(q // eta for q in component_sizes if q > eta)
    residue = sum(q for q in component_sizes if q < eta)
    residue += sum(q % eta for q in component_sizes if q > eta)
    return full + -(-residue // eta)


def graph_with_components(sizes, rng, extra_edges=0.3):
    """Block-diagonal random graph with one connected component per size."""
    n = sum(sizes)
    adj = np.zeros((n, n))
    start = 0
    for size in sizes:
        idx = np.arange(start, start + size)
        # spanning path guarantees connectivity
        for a, b in zip(idx, idx[1:]):
            w = rng.uniform(0.5, 3.0)
            adj[a, b] = adj[b, a] = w
        for a in idx:
            for b in idx:
                if a < b and rng.random() < extra_edges:
                    w = rng.uniform(0.1, 3.0)
                    adj[a, b] = adj[b, a] = w
        start += size
    return WeightedGraph([f"n{i}" for i in range(n)], adj)


class TestWorkedExamples:
    def test_mixed_sizes_no_duplication(self):
        rng = np.random.default_rng(0)
        g = graph_with_components([7, 3, 2, 2, 1], rng)
        out = gedd_partition(g, eta=5)
        assert len(out.graphs) == 3
        assert all(gr.n == 5 for gr in out.graphs)
        assert not out.duplicated
        srcs = [p.src_node for p in out.provenance]
        assert Counter(srcs) == Counter(g.node_ids)  # each node exactly once

    def test_all_components_exact_size(self):
        rng = np.random.default_rng(1)
        g = graph_with_components([4, 4, 4], rng)
        out = gedd_partition(g, eta=4)
        assert len(out.graphs) == 3
        assert not out.duplicated
        # whole components pass through: every original edge survives
        total_weight = sum(gr.adj.sum() for gr in out.graphs)
        assert total_weight == pytest.approx(g.adj.sum())

    def test_single_small_component_pads_with_repetition(self):
        rng = np.random.default_rng(2)
        g = graph_with_components([4], rng)
        out = gedd_partition(g, eta=5)
        assert len(out.graphs) == 1
        assert out.graphs[0].n == 5
        assert len(out.duplicated) == 1
        dups = [p for p in out.provenance if p.duplicated]
        assert len(dups) == 1 and dups[0].out_slot == 4

    def test_eta_larger_than_graph_degenerate(self):
        rng = np.random.default_rng(3)
        g = graph_with_components([3], rng)
        out = gedd_partition(g, eta=7)
        assert out.degenerate
        assert len(out.graphs) == 1 and out.graphs[0].n == 7
        assert len(out.duplicated) >= 1

    def test_eta_nonpositive_rejected(self):
        g = graph_with_components([3], np.random.default_rng(4))
        with pytest.raises(GraphError):
            gedd_partition(g, eta=0)

    def test_asymmetric_rejected(self):
        g = WeightedGraph(["a", "b"], np.array([[0.0, 1.0], [0.0, 0.0]]))
        with pytest.raises(GraphError):
            gedd_partition(g, eta=1)


class TestSplitComponent:
    def test_path_breaks_at_weak_tie(self):
        adj = np.zeros((4, 4))
        adj[0, 1] = adj[1, 0] = 5.0
        adj[1, 2] = adj[2, 1] = 1.0
        adj[2, 3] = adj[3, 2] = 5.0
        g = WeightedGraph(list("abcd"), adj)
        pieces = split_component(g, eta=2)
        sets = sorted(sorted(p.node_ids) for p in pieces)
        assert sets == [["a", "b"], ["c", "d"]]

    def test_equal_clique_deterministic(self):
        adj = np.ones((4, 4)) - np.eye(4)
        g = WeightedGraph(list("abcd"), adj)
        first = [p.node_ids for p in split_component(g, eta=2)]
        second = [p.node_ids for p in split_component(g, eta=2)]
        assert first == second
        assert sorted(len(p) for p in first) == [2, 2]

    def test_even_division_no_residue(self):
        rng = np.random.default_rng(5)
        g = graph_with_components([10], rng)
        pieces = split_component(g, eta=5)
        assert [p.n for p in pieces] == [5, 5]
        all_ids = sorted(i for p in pieces for i in p.node_ids)
        assert all_ids == sorted(g.node_ids)

    def test_cut_weight_never_beats_exhaustive_on_paths(self):
        # A line of 6 with one clearly weakest interior tie at an even offset:
        # the greedy split must cut there.
        adj = np.zeros((6, 6))
        weights = [4.0, 3.0, 0.1, 5.0, 6.0]
        for i, w in enumerate(weights):
            adj[i, i + 1] = adj[i + 1, i] = w
        g = WeightedGraph(list(range(6)), adj)
        pieces = split_component(g, eta=3)
        sets = sorted(sorted(p.node_ids) for p in pieces)
        assert sets == [[0, 1, 2], [3, 4, 5]]

    def test_rejects_small_component(self):
        g = graph_with_components([3], np.random.default_rng(6))
        with pytest.raises(GraphError):
            split_component(g, eta=3)


class TestRandomGraphProperties:
    def test_soundness_over_random_graphs(self):
        rng = np.random.default_rng(42)
        for trial in range(200):
            n = int(rng.integers(1, 61))
            eta = int(rng.choice([5, 10, 15]))
            adj = random_symmetric_graph(n, rng, density=float(rng.uniform(0.03, 0.3)))
            g = WeightedGraph([f"v{i}" for i in range(n)], adj)
            out = gedd_partition(g, eta)

            # size exactness
            assert all(gr.n == eta for gr in out.graphs)

            # node conservation: every original node appears at least once
            srcs = {p.src_node for p in out.provenance}
            assert srcs == set(g.node_ids)

            # count identity vs the arithmetic oracle
            sizes = [len(c) for c in connected_components(g)]
            assert len(out.graphs) == expected_count_oracle(sizes, eta)

            # edge soundness: every output edge exists in the original graph
            index = {nid: i for i, nid in enumerate(g.node_ids)}
            for gi, gr in enumerate(out.graphs):
                slots = out.slots(gi)
                for a in range(eta):
                    for b in range(eta):
                        w = gr.adj[a, b]
                        if w == 0:
                            continue
                        ia = index[slots[a].src_node]
                        ib = index[slots[b].src_node]
                        assert g.adj[ia, ib] == w

            # non-duplicated slots cover each node exactly once
            primary = [p.src_node for p in out.provenance if not p.duplicated]
            assert Counter(primary) == Counter(g.node_ids)

    def test_duplicates_have_no_edges(self):
        rng = np.random.default_rng(9)
        g = graph_with_components([3], rng)
        out = gedd_partition(g, eta=5)
        gr = out.graphs[0]
        for p in out.provenance:
            if p.duplicated:
                assert not gr.adj[p.out_slot].any()
                assert not gr.adj[:, p.out_slot].any()

    @given(st.lists(st.integers(1, 12), min_size=1, max_size=6),
           st.integers(2, 8), st.integers(0, 2**31 - 1))
    @settings(max_examples=40, deadline=None)
    def test_provenance_is_complete_partition(self, sizes, eta, seed):
        rng = np.random.default_rng(seed)
        g = graph_with_components(sizes, rng)
        out = gedd_partition(g, eta)
        for gi, gr in enumerate(out.graphs):
            slots = out.slots(gi)
            assert [p.out_slot for p in slots] == list(range(eta))

    def test_determinism(self):
        rng = np.random.default_rng(11)
        g = graph_with_components([9, 4, 2], rng)
        a = gedd_partition(g, eta=5)
        b = gedd_partition(g, eta=5)
        assert [gr.node_ids for gr in a.graphs] == [gr.node_ids for gr in b.graphs]
        assert a.provenance == b.provenance


class TestProvenanceJson:
    def test_schema(self):
        rng = np.random.default_rng(12)
        g = graph_with_components([4, 2], rng)
        out = gedd_partition(g, eta=3)
        doc = out.provenance_json()
        assert all(set(e) == {"out_graph", "out_slot", "src_node", "duplicated"}
                   for e in doc)
