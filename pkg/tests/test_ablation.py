"""Triplet drops and magnification masks."""

import numpy as np
import pytest

import pyragraph as pg
from pyragraph.ablation import (
    MonteCarloPlan,
    _dropped_dataset,
    mask_levels,
    mask_name,
    parse_mask,
)
from pyragraph.dataio import GraphDataset
from pyragraph.errors import ConfigError, ValidationError

from conftest import random_pyramid


class TestDropTriplets:
    def test_counts_match_published_grid(self):
        g = pg.build_graph(random_pyramid(400, 2, seed=0))
        assert pg.drop_triplets(g, range(10)).n_nodes == 1170
        assert pg.drop_triplets(g, range(200)).n_nodes == 600

    def test_empty_drop_is_identity(self):
        g = pg.build_graph(random_pyramid(5, 3, seed=1))
        assert pg.drop_triplets(g, set()) is g

    def test_result_satisfies_topology_invariants(self):
        g = pg.build_graph(random_pyramid(12, 3, seed=2))
        out = pg.drop_triplets(g, {0, 5, 11})
        m2 = 9
        assert out.m == m2
        assert out.n_nodes == 3 * m2
        assert len(pg.explicit_edges(out)) == m2 * (3 * m2 + 1) // 2
        deg = out.topology.degrees()
        assert set(deg[:m2]) == {m2} and set(deg[m2 : 2 * m2]) == {m2 + 1}

    def test_rows_kept_in_order(self):
        pyr = random_pyramid(5, 2, seed=3)
        g = pg.build_graph(pyr)
        out = pg.drop_triplets(g, {1, 3})
        keep = [0, 2, 4]
        np.testing.assert_array_equal(out.level_feats(1), pyr.feats_m1[keep])
        np.testing.assert_array_equal(out.level_feats(3), pyr.feats_m3[keep])

    def test_composition(self):
        g = pg.build_graph(random_pyramid(10, 2, seed=4))
        combined = pg.drop_triplets(g, {1, 2, 7})
        # sequential drops with index remapping: after dropping {1,2}, original
        # triplet 7 sits at position 5
        step1 = pg.drop_triplets(g, {1, 2})
        step2 = pg.drop_triplets(step1, {5})
        np.testing.assert_array_equal(combined.node_feats, step2.node_feats)
        assert combined.topology == step2.topology

    def test_dropping_all_rejected(self):
        g = pg.build_graph(random_pyramid(3, 2, seed=5))
        with pytest.raises(ValidationError, match="every triplet"):
            pg.drop_triplets(g, {0, 1, 2})

    def test_out_of_range_rejected(self):
        g = pg.build_graph(random_pyramid(3, 2, seed=6))
        with pytest.raises(ValidationError, match="outside"):
            pg.drop_triplets(g, {0, 3})

    def test_per_slide_independent_drops(self):
        graphs = [pg.build_graph(random_pyramid(30, 2, seed=s)) for s in range(4)]
        ds = GraphDataset(graphs, classes=2)
        dropped = _dropped_dataset(ds, count=10, drop_seed=0, rep=0)
        kept_sets = []
        for g, d in zip(ds.graphs, dropped.graphs):
            kept = {tuple(row) for row in d.level_feats(1)}
            kept_sets.append(frozenset(
                i for i, row in enumerate(g.level_feats(1)) if tuple(row) in kept
            ))
        assert len(set(kept_sets)) > 1  # different slides lose different triplets
        again = _dropped_dataset(ds, count=10, drop_seed=0, rep=0)
        for a, b in zip(dropped.graphs, again.graphs):
            np.testing.assert_array_equal(a.node_feats, b.node_feats)


class TestMaskLevels:
    def test_full_mask_is_identity_topology(self):
        g = pg.build_graph(random_pyramid(4, 3, seed=7))
        masked = mask_levels(g, (1, 2, 3))
        assert masked is g

    def test_single_level_clique(self):
        g = pg.build_graph(random_pyramid(4, 3, seed=8))
        masked = mask_levels(g, (1,))
        assert masked.n_nodes == 4
        assert len(pg.explicit_edges(masked)) == 6  # m(m-1)/2
        assert set(masked.topology.degrees()) == {3}

    def test_m1_m3_mask_loses_chains(self):
        g = pg.build_graph(random_pyramid(4, 3, seed=9))
        masked = mask_levels(g, (1, 3))
        assert masked.n_nodes == 8
        assert len(pg.explicit_edges(masked)) == 12  # two cliques, no bridge
        assert masked.topology.links == ()

    def test_m1_m2_mask_keeps_bridge(self):
        g = pg.build_graph(random_pyramid(3, 2, seed=10))
        masked = mask_levels(g, (1, 2))
        assert len(pg.explicit_edges(masked)) == 2 * 3 + 3  # cliques + chains
        assert masked.topology.links == ((1, 2),)

    def test_isolated_nodes_forward_cleanly(self):
        # m=1 with M1&M3: two isolated nodes; empty neighbor sum -> relu(bias)
        g = pg.build_graph(random_pyramid(1, 4, seed=11))
        masked = mask_levels(g, (1, 3))
        assert list(masked.topology.degrees()) == [0, 0]
        cfg = pg.ModelConfig(input_dim=4, classes=2, gcn_widths=(5, 5), cls_hidden=4)
        params = pg.init_params(cfg, 0)
        params.gcn_biases[0][:] = (0.3, -0.2, 0.1, 0.0, 0.5)
        trace = pg.forward(masked, params)
        expected = np.maximum(params.gcn_biases[0], 0.0)
        np.testing.assert_array_equal(trace.acts[0][0], expected)
        np.testing.assert_array_equal(trace.acts[0][1], expected)

    def test_masked_aggregate_matches_dense(self):
        for levels in ((1,), (2,), (3,), (1, 2), (1, 3), (2, 3)):
            g = mask_levels(pg.build_graph(random_pyramid(5, 4, seed=12)), levels)
            dense = g.topology.dense_operator() @ g.node_feats
            structured = g.topology.aggregate(g.node_feats)
            np.testing.assert_allclose(structured, dense, rtol=1e-12, atol=1e-14)

    def test_features_preserved(self):
        pyr = random_pyramid(3, 2, seed=13)
        g = pg.build_graph(pyr)
        masked = mask_levels(g, (2,))
        np.testing.assert_array_equal(masked.node_feats, pyr.feats_m2)

    def test_parse_and_name(self):
        assert parse_mask("M1&M3") == (1, 3)
        assert parse_mask("m2") == (2,)
        assert mask_name((3, 1)) == "M1&M3"
        with pytest.raises(ConfigError):
            parse_mask("M4")
        with pytest.raises(ConfigError):
            parse_mask("")


class TestMonteCarloPlan:
    def test_defaults_are_desk_scale(self):
        plan = MonteCarloPlan()
        assert plan.counts == (50, 150, 250, 350)
        assert plan.repetitions == 3

    def test_full_grid(self):
        plan = MonteCarloPlan.full_grid()
        assert plan.counts == tuple(range(10, 391, 10))
        assert plan.repetitions == 10
        assert len(plan.counts) == 39

    def test_count_zero_allowed(self):
        plan = MonteCarloPlan(base_m=10, counts=(0, 5), repetitions=1)
        assert 0 in plan.counts

    def test_invalid_counts(self):
        with pytest.raises(ConfigError):
            MonteCarloPlan(base_m=10, counts=(10,))
        with pytest.raises(ConfigError):
            MonteCarloPlan(base_m=10, counts=(3, 3))


def small_planted_dataset(seed=31, m=24):
    spec = pg.SynthSpec(classes=2, m=m, d=8, signal_levels=((2,), (2,)),
                        snr=4.0, fraction=0.3, slides_per_class=8,
                        groups_per_class=4, seed=seed)
    return pg.build_dataset(pg.generate_synthetic(spec), classes=2)


SMALL_ARCH = pg.ModelConfig(input_dim=8, classes=2, gcn_widths=(12, 8), cls_hidden=6)
FAST = pg.TrainConfig(epochs=4, seeds=(0,), folds=2)


class TestHarnessIntegration:
    def test_monte_carlo_no_drop_equals_plain_cv(self):
        ds = small_planted_dataset()
        plan = MonteCarloPlan(base_m=24, counts=(0,), repetitions=1)
        rows = pg.monte_carlo_test(ds, plan, FAST, SMALL_ARCH)
        plain = pg.cross_validate(ds, FAST, SMALL_ARCH).aggregate()
        assert rows[0].mean_bacc == pytest.approx(plain["balanced_accuracy_mean"])
        assert rows[0].nodes == 72

    def test_monte_carlo_deterministic_and_jobs_invariant(self):
        ds = small_planted_dataset()
        plan = MonteCarloPlan(base_m=24, counts=(4, 12), repetitions=2)
        a = pg.monte_carlo_test(ds, plan, FAST, SMALL_ARCH, drop_seed=1, jobs=1)
        b = pg.monte_carlo_test(ds, plan, FAST, SMALL_ARCH, drop_seed=1, jobs=2)
        assert a == b

    def test_monte_carlo_rejects_small_graphs(self):
        ds = small_planted_dataset(m=24)
        plan = MonteCarloPlan(base_m=400, counts=(50,), repetitions=1)
        with pytest.raises(ConfigError, match="m <= max drop count"):
            pg.monte_carlo_test(ds, plan, FAST, SMALL_ARCH)

    def test_magnification_full_mask_matches_main_pipeline(self):
        ds = small_planted_dataset()
        reports = pg.magnification_test(ds, [(1, 2, 3)], FAST, SMALL_ARCH)
        plain = pg.cross_validate(ds, FAST, SMALL_ARCH)
        assert reports["M1&M2&M3"].to_json() == plain.to_json()

    def test_magnification_full_row_appended(self):
        ds = small_planted_dataset()
        reports = pg.magnification_test(ds, [(2,)], FAST, SMALL_ARCH)
        assert list(reports) == ["M2", "M1&M2&M3"]
