import numpy as np
import pytest

from _oracles import oracle_extract, oracle_path_exists
from mifn.data import HybridSequence
from mifn.kg import (
    KnowledgeStore,
    build_adjacency,
    extract_subgraph,
    is_connected,
    load_triples,
    read_subgraph_cache,
    select_triples,
    store_from_triples,
    write_subgraph_cache,
)
from mifn.synthetic import SyntheticConfig, generate_synthetic, write_triples_tsv


def make_seq(seq_id, items, domains):
    return HybridSequence(
        seq_id=seq_id,
        user_id="u",
        item_ids=list(items),
        item_domains=list(domains),
        gt_a_id="gtA",
        gt_b_id="gtB",
    )


def random_instance(rng, n_entities=40, n_items=10, n_triples=60, relations=("r1", "r2")):
    names = [f"e{k:03d}" for k in range(n_entities)]
    items_a = names[: n_items // 2]
    items_b = names[n_items // 2: n_items]
    triples = set()
    while len(triples) < n_triples:
        h, t = rng.choice(n_entities, size=2, replace=False)
        r = relations[int(rng.integers(len(relations)))]
        triples.add((names[h], r, names[t]))
    triples = sorted(triples)
    k_a = int(rng.integers(1, 4))
    k_b = int(rng.integers(1, 4))
    seq_items = [items_a[i] for i in rng.choice(len(items_a), k_a, replace=False)]
    seq_items += [items_b[i] for i in rng.choice(len(items_b), k_b, replace=False)]
    seq_domains = ["A"] * k_a + ["B"] * k_b
    order = rng.permutation(len(seq_items))
    seq_items = [seq_items[i] for i in order]
    seq_domains = [seq_domains[i] for i in order]
    return triples, items_a, items_b, seq_items, seq_domains


class TestLoadTriples:
    def test_five_distinct_triples(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text(
            "x1\tAlso_buy\tx2\nx1\tAlso_view\tx3\nx2\tAlso_buy\tx3\n"
            "x3\tBuy_together\tx4\nx4\tAlso_buy\tx1\n"
        )
        store = load_triples(p)
        total = sum(len(ts) for table in store.adj for ts in table.values())
        assert total == 5

    def test_duplicates_collapse(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("x1\tAlso_buy\tx2\n" * 4)
        store = load_triples(p)
        total = sum(len(ts) for table in store.adj for ts in table.values())
        assert total == 1

    def test_self_loops_dropped(self, tmp_path, caplog):
        p = tmp_path / "t.tsv"
        p.write_text("x1\tAlso_buy\tx1\nx1\tAlso_buy\tx2\n")
        with caplog.at_level("WARNING"):
            store = load_triples(p)
        total = sum(len(ts) for table in store.adj for ts in table.values())
        assert total == 1
        assert any("self-loop" in r.message for r in caplog.records)

    def test_unknown_relation_indexed_dynamically(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("x1\tWeird_relation\tx2\n")
        store = load_triples(p)
        assert "Weird_relation" in store.relation_index

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(IOError):
            load_triples(tmp_path / "absent.tsv")

    def test_generator_file_matches_manifest(self, tmp_path):
        config = SyntheticConfig(n_users=5, items_a=12, items_b=12, p_link=0.5)
        _, triples = generate_synthetic(config, seed=3)
        path = tmp_path / "triples.tsv"
        write_triples_tsv(path, triples)
        items_a = [f"a{k:05d}" for k in range(config.items_a)]
        items_b = [f"b{k:05d}" for k in range(config.items_b)]
        store = load_triples(path, items_a, items_b)
        assert store.n_entities == config.items_a + config.items_b
        plant = store.relation_index["Is_the_same_category"]
        assert sum(len(ts) for ts in store.adj[plant].values()) == config.items_a
        assert all(store.is_item)

    def test_item_domain_tags(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text("a1\tAlso_buy\tmid\nmid\tAlso_buy\tb1\n")
        store = load_triples(p, items_a=["a1"], items_b=["b1"])
        assert store.domain_tag[store.entity_index["a1"]] == "A"
        assert store.domain_tag[store.entity_index["b1"]] == "B"
        # connector picks up a tag from its tagged neighborhood
        assert store.domain_tag[store.entity_index["mid"]] in ("A", "B")


class TestIsConnected:
    def test_disjoint_false(self):
        assert not is_connected({1, 2, 3}, {4, 5})

    def test_shared_entity_true(self):
        assert is_connected({1, 8}, {8, 9})

    def test_matches_bfs_oracle_on_random_instances(self):
        rng = np.random.default_rng(42)
        agree = 0
        for _ in range(100):
            triples, items_a, items_b, seq_items, seq_domains = random_instance(rng)
            store = store_from_triples(triples, items_a, items_b)
            seq = make_seq("s", seq_items, seq_domains)
            sg = extract_subgraph(seq, store, max_hops=2, budget=100)
            # replay the accumulation to collect the union of extracted triples
            res = oracle_extract(triples, seq_items, seq_domains, 2, 10_000)
            path = oracle_path_exists(
                res["edges"],
                [i for i, d in zip(seq_items, seq_domains) if d == "A"],
                [i for i, d in zip(seq_items, seq_domains) if d == "B"],
            )
            assert sg.connected == path
            agree += 1
        assert agree == 100


class TestSelectTriples:
    def test_under_budget_is_identity(self):
        f1 = {(0, 0, 5), (5, 0, 6)}
        f2 = {(1, 0, 6)}
        kept, items, connectors = select_triples(f1, f2, [0], [1], budget=10)
        assert kept == f1 | f2
        assert items == [0, 1]
        assert set(connectors) == {5, 6}

    def test_nearest_connector_survives(self):
        # connectors 5 (distance 1) and 6 (distance 2); one open slot
        f1 = {(0, 0, 5), (5, 0, 6)}
        f2 = {(1, 0, 6)}
        kept, items, connectors = select_triples(
            f1, f2, [0], [1], budget=3, entry_hop={0: 0, 1: 0, 5: 1, 6: 2}
        )
        assert items == [0, 1]
        assert connectors == [5]
        assert kept == {(0, 0, 5)}

    def test_budget_below_items_truncates_with_warning(self, caplog):
        with caplog.at_level("WARNING"):
            kept, items, connectors = select_triples(
                {(0, 0, 1)}, set(), [0, 1, 2], [3], budget=2
            )
        assert items == [0, 1]
        assert connectors == []
        assert any("truncating" in r.message for r in caplog.records)


class TestExtract:
    def test_directly_linked_seeds_stop_at_hop_one(self):
        store = store_from_triples(
            [("a1", "Also_buy", "b1")], items_a=["a1"], items_b=["b1"]
        )
        seq = make_seq("s", ["a1", "b1"], ["A", "B"])
        sg = extract_subgraph(seq, store, max_hops=3, budget=10)
        assert sg.connected
        assert set(sg.entity_names) == {"a1", "b1"}
        assert sg.edge_count() == 1
        assert max(sg.hops) <= 1

    def test_far_apart_seeds_not_connected(self):
        # a1 -> x1 -> x2 -> x3 -> b1 is 4 hops; H=2 cannot bridge it
        chain = [
            ("a1", "Also_buy", "x1"),
            ("x1", "Also_buy", "x2"),
            ("x2", "Also_buy", "x3"),
            ("x3", "Also_buy", "b1"),
        ]
        store = store_from_triples(chain, items_a=["a1"], items_b=["b1"])
        seq = make_seq("s", ["a1", "b1"], ["A", "B"])
        sg = extract_subgraph(seq, store, max_hops=2, budget=50)
        assert not sg.connected
        assert {"a1", "x1", "x2", "b1"} <= set(sg.entity_names)

    def test_empty_when_no_item_in_store(self, caplog):
        store = store_from_triples([("x", "Also_buy", "y")])
        seq = make_seq("s", ["q1", "q2"], ["A", "B"])
        with caplog.at_level("WARNING"):
            sg = extract_subgraph(seq, store)
        assert sg.empty and not sg.connected

    def test_matches_brute_force_oracle_on_random_stores(self):
        rng = np.random.default_rng(7)
        for case in range(60):
            budget = int(rng.integers(4, 20))
            hops = int(rng.integers(1, 4))
            triples, items_a, items_b, seq_items, seq_domains = random_instance(
                rng, n_entities=30, n_triples=50
            )
            store = store_from_triples(triples, items_a, items_b)
            seq = make_seq(f"s{case}", seq_items, seq_domains)
            sg = extract_subgraph(seq, store, max_hops=hops, budget=budget)
            expected = oracle_extract(triples, seq_items, seq_domains, hops, budget)
            assert set(sg.entity_names) == expected["entities"], f"case {case}"
            assert sg.entity_names == expected["order"], f"case {case}"
            assert sg.connected == expected["connected"], f"case {case}"
            got_edges = {
                (sg.entity_names[h], store.relations[r], sg.entity_names[t])
                for r, h, t in zip(*np.nonzero(sg.adjacency))
            }
            assert got_edges == expected["edges"], f"case {case}"

    def test_connected_flag_implies_bfs_path(self):
        rng = np.random.default_rng(17)
        found = 0
        for _ in range(80):
            triples, items_a, items_b, seq_items, seq_domains = random_instance(
                rng, n_entities=20, n_triples=60
            )
            store = store_from_triples(triples, items_a, items_b)
            seq = make_seq("s", seq_items, seq_domains)
            sg = extract_subgraph(seq, store, max_hops=2, budget=500)
            if sg.connected:
                found += 1
                local_triples = {
                    (sg.entity_names[h], r, sg.entity_names[t])
                    for r, h, t in zip(*np.nonzero(sg.adjacency))
                }
                assert oracle_path_exists(
                    local_triples,
                    [i for i, d in zip(seq_items, seq_domains) if d == "A"],
                    [i for i, d in zip(seq_items, seq_domains) if d == "B"],
                )
        assert found > 5

    def test_monotone_in_budget(self):
        rng = np.random.default_rng(23)
        triples, items_a, items_b, seq_items, seq_domains = random_instance(
            rng, n_entities=30, n_triples=80
        )
        store = store_from_triples(triples, items_a, items_b)
        seq = make_seq("s", seq_items, seq_domains)
        previous: set[str] = set()
        for budget in (4, 6, 9, 14, 25, 60):
            sg = extract_subgraph(seq, store, max_hops=2, budget=budget)
            assert previous <= set(sg.entity_names)
            previous = set(sg.entity_names)

    def test_deterministic(self):
        rng = np.random.default_rng(31)
        triples, items_a, items_b, seq_items, seq_domains = random_instance(rng)
        store = store_from_triples(triples, items_a, items_b)
        seq = make_seq("s", seq_items, seq_domains)
        a = extract_subgraph(seq, store, max_hops=2, budget=12)
        b = extract_subgraph(seq, store, max_hops=2, budget=12)
        assert a.entity_names == b.entity_names
        assert np.array_equal(a.adjacency, b.adjacency)
        assert a.connected == b.connected


class TestAdjacency:
    def test_single_triple(self):
        adj = build_adjacency({(7, 1, 9)}, [7, 9], n_relations=3)
        assert adj.shape == (3, 2, 2)
        assert adj.sum() == 1
        assert adj[1, 0, 1]

    def test_no_triples(self):
        adj = build_adjacency(set(), [1, 2, 3], n_relations=2)
        assert adj.sum() == 0

    def test_counts_match_on_generator_subgraphs(self, tmp_path):
        config = SyntheticConfig(n_users=8, items_a=10, items_b=10, p_link=1.0)
        events, triples = generate_synthetic(config, seed=5)
        from mifn.data import build_hybrid_sequences

        seqs, _ = build_hybrid_sequences(
            events, config.period_seconds, min_user_interactions=1, min_item_freq=1
        )
        items_a = [f"a{k:05d}" for k in range(config.items_a)]
        items_b = [f"b{k:05d}" for k in range(config.items_b)]
        store = store_from_triples(triples, items_a, items_b)
        for seq in seqs[:10]:
            sg = extract_subgraph(seq, store, max_hops=2, budget=200)
            expected = oracle_extract(
                [t for t in triples], seq.item_ids, seq.item_domains, 2, 200
            )
            assert sg.edge_count() == len(expected["edges"])


class TestCache:
    def test_round_trip_lossless(self, tmp_path):
        rng = np.random.default_rng(3)
        triples, items_a, items_b, seq_items, seq_domains = random_instance(rng)
        store = store_from_triples(triples, items_a, items_b)
        subgraphs = []
        for k in range(5):
            _, _, _, si, sd = random_instance(rng)
            si = [s for s in si if s in store.entity_index]
            sd = sd[: len(si)]
            subgraphs.append(extract_subgraph(make_seq(f"s{k}", si, sd), store, 2, 15))
        path = tmp_path / "cache.txt"
        write_subgraph_cache(path, subgraphs, store)
        loaded = read_subgraph_cache(path, store)
        assert set(loaded) == {sg.seq_id for sg in subgraphs}
        for sg in subgraphs:
            back = loaded[sg.seq_id]
            assert back.entity_names == sg.entity_names
            assert back.entity_ids == sg.entity_ids
            assert back.domain_tags == sg.domain_tags
            assert back.item_flags == sg.item_flags
            assert back.hops == sg.hops
            assert back.connected == sg.connected
            assert np.array_equal(back.adjacency, sg.adjacency)

    def test_cache_bytes_stable(self, tmp_path):
        rng = np.random.default_rng(9)
        triples, items_a, items_b, seq_items, seq_domains = random_instance(rng)
        store = store_from_triples(triples, items_a, items_b)
        sg = extract_subgraph(make_seq("s0", seq_items, seq_domains), store, 2, 12)
        p1, p2 = tmp_path / "c1.txt", tmp_path / "c2.txt"
        write_subgraph_cache(p1, [sg], store)
        write_subgraph_cache(p2, [sg], store)
        assert p1.read_bytes() == p2.read_bytes()
