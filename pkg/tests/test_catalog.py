import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from converse_mcts.catalog import (
    Catalog,
    CatalogError,
    SyntheticSpec,
    build_global_graph,
    dumps_catalog,
    generate_synthetic,
    load_catalog,
    loads_catalog,
    save_catalog,
    split_interactions,
)

MINIMAL = """\
#types
0\tprice
#values
0\t0\tcheap
#items
0\t0
#interactions
0\t0
"""


def small_spec(**kw) -> SyntheticSpec:
    base = dict(
        n_users=6, n_items=20, n_types=4, n_values_per_type=3,
        values_per_item=4, interactions_per_user=5, seed=3,
    )
    base.update(kw)
    return SyntheticSpec(**base)


class TestLoad:
    def test_minimal_instance(self):
        cat = loads_catalog(MINIMAL)
        assert cat.n_users == 1 and cat.n_items == 1 and cat.n_values == 1

    def test_dangling_item_reference_names_id(self):
        bad = MINIMAL[: MINIMAL.index("#interactions")] + "#interactions\n0\t5\n"
        with pytest.raises(CatalogError, match="5"):
            loads_catalog(bad)

    def test_value_with_unknown_type(self):
        bad = MINIMAL.replace("0\t0\tcheap", "0\t9\tcheap")
        with pytest.raises(CatalogError, match="line"):
            loads_catalog(bad)

    def test_parse_failure_reports_line_number(self):
        bad = MINIMAL.replace("0\t0\tcheap", "zero\tzero")
        with pytest.raises(CatalogError, match=r"line 4"):
            loads_catalog(bad)

    def test_comments_and_blank_lines_ignored(self):
        text = "; a comment\n\n" + MINIMAL
        assert loads_catalog(text).n_items == 1

    def test_round_trip(self, tmp_path):
        cat = generate_synthetic(small_spec())
        p = tmp_path / "cat.tsv"
        save_catalog(cat, p)
        again = load_catalog(p)
        assert dumps_catalog(again) == dumps_catalog(cat)
        assert again.item_values == cat.item_values
        assert again.interactions == cat.interactions
        assert again.fingerprint() == cat.fingerprint()


class TestSynthetic:
    def test_determinism(self):
        a = generate_synthetic(small_spec(seed=1))
        b = generate_synthetic(small_spec(seed=1))
        assert dumps_catalog(a) == dumps_catalog(b)

    def test_different_seeds_differ(self):
        a = generate_synthetic(small_spec(seed=1))
        b = generate_synthetic(small_spec(seed=2))
        assert dumps_catalog(a) != dumps_catalog(b)

    def test_every_user_has_shared_value(self):
        cat = generate_synthetic(
            SyntheticSpec(30, 100, 8, 4, values_per_item=8,
                          interactions_per_user=12, seed=0)
        )
        for u in cat.users:
            assert cat.shared_values(cat.interactions[u])

    def test_zero_users_rejected(self):
        with pytest.raises(CatalogError):
            SyntheticSpec(0, 10, 2, 2, 2, 2).check()

    def test_infeasible_values_per_item(self):
        with pytest.raises(CatalogError):
            SyntheticSpec(1, 10, 2, 2, values_per_item=5, interactions_per_user=2).check()


class TestGlobalGraph:
    def test_tiny_counts(self):
        text = (
            "#types\n0\tt\n#values\n0\t0\ta\n1\t0\tb\n"
            "#items\n0\t0\n1\t1\n#interactions\n0\t0,1\n"
        )
        cat = loads_catalog(text)
        g = build_global_graph(cat)
        assert len(g.user_item_edges) == 2
        assert len(g.value_item_edges) == 2

    def test_edge_count_matches_brute_force(self):
        cat = generate_synthetic(small_spec())
        g = build_global_graph(cat)
        assert len(g.user_item_edges) == sum(len(s) for s in cat.interactions)
        assert len(g.value_item_edges) == sum(len(s) for s in cat.item_values)

    def test_neighborhoods_reproduce_catalog(self):
        cat = generate_synthetic(small_spec(seed=9))
        g = build_global_graph(cat)
        by_user: dict[int, set[int]] = {u: set() for u in cat.users}
        for u, v in g.user_item_edges:
            by_user[u].add(v)
        assert all(by_user[u] == set(cat.interactions[u]) for u in cat.users)
        by_item: dict[int, set[int]] = {v: set() for v in cat.items}
        for p, v in g.value_item_edges:
            by_item[v].add(p)
        for local, vals in enumerate(cat.item_values):
            assert by_item[cat.item_offset + local] == set(vals)

    def test_tripartite(self):
        cat = generate_synthetic(small_spec())
        g = build_global_graph(cat)
        for u, v in g.user_item_edges:
            assert cat.is_user(u) and cat.is_item(v)
        for p, v in g.value_item_edges:
            assert cat.is_value(p) and cat.is_item(v)


class TestSplit:
    def test_100_interactions_split_70_15_15(self):
        # a single user with 100 interactions
        items = "\n".join(f"{i}\t0" for i in range(100))
        text = (
            "#types\n0\tt\n#values\n0\t0\ta\n#items\n" + items +
            "\n#interactions\n0\t" + ",".join(str(i) for i in range(100)) + "\n"
        )
        cat = loads_catalog(text)
        tr, va, te = split_interactions(cat, seed=0)
        assert len(tr.interactions[0]) == 70
        assert len(va.interactions[0]) == 15
        assert len(te.interactions[0]) == 15

    def test_single_interaction_goes_to_train(self):
        cat = loads_catalog(MINIMAL)
        tr, va, te = split_interactions(cat, seed=0)
        assert len(tr.interactions[0]) == 1
        assert not va.interactions[0] and not te.interactions[0]

    @given(seed=st.integers(0, 10_000))
    @settings(max_examples=25, deadline=None)
    def test_partition_property(self, seed):
        cat = generate_synthetic(small_spec(seed=seed % 7))
        tr, va, te = split_interactions(cat, seed=seed)
        for u in cat.users:
            parts = [tr.interactions[u], va.interactions[u], te.interactions[u]]
            assert parts[0] | parts[1] | parts[2] == cat.interactions[u]
            assert not (parts[0] & parts[1])
            assert not (parts[0] & parts[2])
            assert not (parts[1] & parts[2])
            if len(cat.interactions[u]) >= 3:
                assert parts[0]

    def test_universe_shared(self):
        cat = generate_synthetic(small_spec())
        tr, va, te = split_interactions(cat, seed=1)
        for c in (tr, va, te):
            assert c.item_values == cat.item_values
            assert c.value_names == cat.value_names
