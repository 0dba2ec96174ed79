"""Knowledge store plus per-sequence subgraph extraction.

The full graph is an indexed set of directed triples.  For each hybrid
sequence, frontier expansion runs from the domain-A and domain-B item
seeds in parallel, stops as soon as the two accumulated frontiers share an
entity (or the hop budget is exhausted), prunes connector entities by hop
distance from the nearest item entity down to the entity budget, and
materializes one boolean adjacency matrix per relation over the surviving
local entity list.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .data import DOMAINS, HybridSequence

log = logging.getLogger(__name__)

# relation inventory always present in the index; files may add more
BASE_RELATIONS = (
    "Also_buy",
    "Also_view",
    "Buy_together",
    "Buy_after_viewing",
    "Adapted_from",
    "Is_the_same_category",
)

Triple = tuple[int, int, int]  # (head, relation, tail) as store indices


class KnowledgeStore:
    """Immutable-after-load triple index with per-entity domain tags."""

    def __init__(self):
        self.entities: list[str] = []
        self.entity_index: dict[str, int] = {}
        self.relations: list[str] = list(BASE_RELATIONS)
        self.relation_index: dict[str, int] = {r: i for i, r in enumerate(BASE_RELATIONS)}
        self.domain_tag: list[str] = []
        self.is_item: list[bool] = []
        # per relation: head index -> sorted tuple of tail indices
        self.adj: list[dict[int, tuple[int, ...]]] = [dict() for _ in BASE_RELATIONS]

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def _ensure_entity(self, name: str, domain: str | None, is_item: bool) -> int:
        idx = self.entity_index.get(name)
        if idx is None:
            idx = len(self.entities)
            self.entities.append(name)
            self.entity_index[name] = idx
            self.domain_tag.append(domain or "")
            self.is_item.append(is_item)
        else:
            if domain and not self.domain_tag[idx]:
                self.domain_tag[idx] = domain
            self.is_item[idx] = self.is_item[idx] or is_item
        return idx

    def _ensure_relation(self, name: str) -> int:
        idx = self.relation_index.get(name)
        if idx is None:
            idx = len(self.relations)
            self.relations.append(name)
            self.relation_index[name] = idx
            self.adj.append(dict())
        return idx

    def outgoing(self, head: int) -> list[tuple[int, int]]:
        """All (relation, tail) pairs for a head entity."""
        out = []
        for r, table in enumerate(self.adj):
            for tail in table.get(head, ()):
                out.append((r, tail))
        return out

    def neighbors_undirected(self, idx: int) -> set[int]:
        out: set[int] = set()
        for table in self.adj:
            out.update(table.get(idx, ()))
            for head, tails in table.items():
                if idx in tails:
                    out.add(head)
        return out


def store_from_triples(
    name_triples,
    items_a=(),
    items_b=(),
    domains=DOMAINS,
) -> KnowledgeStore:
    """Build a store from (head, relation, tail) name triples.

    Item universes pre-register item entities so every catalog item is an
    entity (possibly isolated) and graph-mode heads always have an
    embedding row to address.  Self-loops are dropped with a warning,
    duplicates collapse, unknown relations are indexed dynamically.
    Entities that are not items inherit a domain tag from their nearest
    tagged neighbor; anything still untagged defaults to the first domain
    with a warning.
    """
    store = KnowledgeStore()
    for item in sorted(items_a):
        store._ensure_entity(item, domains[0], True)
    for item in sorted(items_b):
        store._ensure_entity(item, domains[1], True)

    raw: dict[int, set[tuple[int, int]]] = {}
    self_loops = 0
    for head_name, rel_name, tail_name in name_triples:
        if head_name == tail_name:
            self_loops += 1
            continue
        head = store._ensure_entity(head_name, None, False)
        tail = store._ensure_entity(tail_name, None, False)
        rel = store._ensure_relation(rel_name)
        raw.setdefault(rel, set()).add((head, tail))
    if self_loops:
        log.warning("triples: dropped %d self-loop triple(s)", self_loops)

    for rel, pairs in raw.items():
        table: dict[int, list[int]] = {}
        for head, tail in pairs:
            table.setdefault(head, []).append(tail)
        store.adj[rel] = {h: tuple(sorted(ts)) for h, ts in table.items()}

    _propagate_domain_tags(store, domains)
    return store


def load_triples(
    path,
    items_a=(),
    items_b=(),
    domains=DOMAINS,
) -> KnowledgeStore:
    """Index a TSV triple file (see :func:`store_from_triples`)."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as err:
        raise IOError(f"cannot read triples file {path}: {err}") from err

    name_triples = []
    for line in lines:
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            log.warning("triples: skipping malformed line %r", line[:60])
            continue
        name_triples.append(tuple(parts))
    return store_from_triples(name_triples, items_a, items_b, domains)


def _propagate_domain_tags(store: KnowledgeStore, domains) -> None:
    untagged = [i for i in range(store.n_entities) if not store.domain_tag[i]]
    changed = True
    while untagged and changed:
        changed = False
        remaining = []
        for idx in untagged:
            tags = sorted(
                store.domain_tag[n]
                for n in store.neighbors_undirected(idx)
                if store.domain_tag[n]
            )
            if tags:
                store.domain_tag[idx] = tags[0]
                changed = True
            else:
                remaining.append(idx)
        untagged = remaining
    if untagged:
        log.warning(
            "triples: %d entit(ies) unreachable from any item; tagged as domain %s",
            len(untagged),
            domains[0],
        )
        for idx in untagged:
            store.domain_tag[idx] = domains[0]


@dataclass
class KnowledgeSubgraph:
    """Extraction result for one sequence, over a local entity list."""

    seq_id: str
    entity_ids: list[int]  # store indices
    entity_names: list[str]
    domain_tags: list[str]
    item_flags: list[bool]
    hops: list[int]  # hop at which each entity entered (0 = seed)
    connected: bool
    n_relations: int
    adjacency: np.ndarray = field(repr=False)  # (R, n, n) bool, directed

    @property
    def n_entities(self) -> int:
        return len(self.entity_ids)

    @property
    def empty(self) -> bool:
        return not self.entity_ids

    def edge_count(self) -> int:
        return int(self.adjacency.sum())

    def local_index(self, store_idx: int) -> int | None:
        try:
            return self.entity_ids.index(store_idx)
        except ValueError:
            return None


def empty_subgraph(seq_id: str, n_relations: int) -> KnowledgeSubgraph:
    return KnowledgeSubgraph(
        seq_id=seq_id,
        entity_ids=[],
        entity_names=[],
        domain_tags=[],
        item_flags=[],
        hops=[],
        connected=False,
        n_relations=n_relations,
        adjacency=np.zeros((n_relations, 0, 0), dtype=bool),
    )


def triple_entities(triples: set[Triple]) -> set[int]:
    out: set[int] = set()
    for head, _, tail in triples:
        out.add(head)
        out.add(tail)
    return out


def is_connected(acc_entities_1: set[int], acc_entities_2: set[int]) -> bool:
    """True iff the accumulated frontiers share an entity, which is exactly
    when an A-item and a B-item are joined by a path through the union of
    extracted triples."""
    return not acc_entities_1.isdisjoint(acc_entities_2)


def select_triples(
    frontier1: set[Triple],
    frontier2: set[Triple],
    seeds_a: list[int],
    seeds_b: list[int],
    budget: int,
    entry_hop: dict[int, int] | None = None,
    sequence_order: list[int] | None = None,
    names: list[str] | None = None,
) -> tuple[set[Triple], list[int], list[int]]:
    """Prune to the entity budget; returns (triples, items, connectors).

    Item entities survive first (in ``sequence_order`` when given, else
    A seeds then B seeds); connector slots go to entities closest
    (undirected hop distance over the extracted triples) to any item
    entity, ties broken by (hop of entry, entity id).  When ``names`` is
    given the id tie-break uses entity names, making the selection
    independent of store registration order.
    """
    union = frontier1 | frontier2
    entry_hop = entry_hop or {}
    ident = (lambda e: names[e]) if names is not None else (lambda e: e)
    items = list(dict.fromkeys(sequence_order if sequence_order is not None else seeds_a + seeds_b))
    if len(items) > budget:
        log.warning(
            "subgraph budget %d below item-entity count %d; truncating items",
            budget,
            len(items),
        )
        items = items[:budget]
        kept_entities = set(items)
        kept = {t for t in union if t[0] in kept_entities and t[2] in kept_entities}
        return kept, items, []

    connectors = sorted(triple_entities(union) - set(items), key=ident)
    slots = budget - len(items)
    dist = _bfs_distance(union, items)
    connectors.sort(key=lambda e: (dist.get(e, np.inf), entry_hop.get(e, np.inf), ident(e)))
    connectors = connectors[:slots]
    kept_entities = set(items) | set(connectors)
    kept = {t for t in union if t[0] in kept_entities and t[2] in kept_entities}
    return kept, items, connectors


def _bfs_distance(triples: set[Triple], sources: list[int]) -> dict[int, int]:
    neigh: dict[int, set[int]] = {}
    for head, _, tail in triples:
        neigh.setdefault(head, set()).add(tail)
        neigh.setdefault(tail, set()).add(head)
    dist = {s: 0 for s in sources}
    frontier = list(sources)
    depth = 0
    while frontier:
        depth += 1
        nxt = []
        for node in frontier:
            for other in neigh.get(node, ()):
                if other not in dist:
                    dist[other] = depth
                    nxt.append(other)
        frontier = nxt
    return dist


def build_adjacency(
    triples: set[Triple], entity_ids: list[int], n_relations: int
) -> np.ndarray:
    """Per-relation boolean matrices over the local entity list, directed."""
    local = {e: i for i, e in enumerate(entity_ids)}
    n = len(entity_ids)
    adj = np.zeros((n_relations, n, n), dtype=bool)
    for head, rel, tail in triples:
        assert head in local and tail in local, "triple references a pruned entity"
        adj[rel, local[head], local[tail]] = True
    return adj


def extract_subgraph(
    seq: HybridSequence,
    store: KnowledgeStore,
    max_hops: int = 2,
    budget: int = 200,
) -> KnowledgeSubgraph:
    """Run the per-sequence construction over the full store."""
    seeds_a: list[int] = []
    seeds_b: list[int] = []
    seen: set[int] = set()
    for item, domain in zip(seq.item_ids, seq.item_domains):
        idx = store.entity_index.get(item)
        if idx is None or idx in seen:
            continue
        seen.add(idx)
        (seeds_a if domain == DOMAINS[0] else seeds_b).append(idx)

    if not seeds_a and not seeds_b:
        log.warning("subgraph %s: no sequence item found in the store", seq.seq_id)
        return empty_subgraph(seq.seq_id, store.n_relations)

    acc1: set[Triple] = set()
    acc2: set[Triple] = set()
    ents1: set[int] = set(seeds_a)
    ents2: set[int] = set(seeds_b)
    level1: set[int] = set(seeds_a)
    level2: set[int] = set(seeds_b)
    entry_hop: dict[int, int] = {e: 0 for e in seeds_a + seeds_b}
    connected = False

    for hop in range(1, max_hops + 1):
        new1 = {
            (head, rel, tail)
            for head in level1
            for rel, tail in store.outgoing(head)
        }
        new2 = {
            (head, rel, tail)
            for head in level2
            for rel, tail in store.outgoing(head)
        }
        acc1 |= new1
        acc2 |= new2
        level1 = triple_entities(new1)
        level2 = triple_entities(new2)
        ents1 |= level1
        ents2 |= level2
        for e in sorted(level1 | level2):
            entry_hop.setdefault(e, hop)
        connected = is_connected(ents1, ents2)
        if connected or hop == max_hops:
            break

    # item entities in sequence order, then connectors in selection order
    sequence_order: list[int] = []
    for item in seq.item_ids:
        idx = store.entity_index.get(item)
        if idx is not None and idx in seen and idx not in sequence_order:
            sequence_order.append(idx)
    kept, kept_items, connectors = select_triples(
        acc1, acc2, seeds_a, seeds_b, budget, entry_hop, sequence_order, store.entities
    )
    entity_ids = kept_items + connectors

    adjacency = build_adjacency(kept, entity_ids, store.n_relations)
    return KnowledgeSubgraph(
        seq_id=seq.seq_id,
        entity_ids=entity_ids,
        entity_names=[store.entities[e] for e in entity_ids],
        domain_tags=[store.domain_tag[e] for e in entity_ids],
        item_flags=[store.is_item[e] for e in entity_ids],
        hops=[entry_hop[e] for e in entity_ids],
        connected=connected,
        n_relations=store.n_relations,
        adjacency=adjacency,
    )


# ---------------------------------------------------------------------------
# plain-text subgraph cache
#
# One block per sequence:
#     seq <seq_id> connected=<0|1> entities=<count>
#     e <entity_name> <domain> <item 0|1> <hop>
#     t <head_local> <relation_name> <tail_local>
#     end
# Entities appear in local order; edges sorted by (relation, head, tail).

def write_subgraph_cache(path, subgraphs: list[KnowledgeSubgraph], store: KnowledgeStore) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# subgraph cache v1\n")
        for sg in sorted(subgraphs, key=lambda s: s.seq_id):
            fh.write(f"seq {sg.seq_id} connected={int(sg.connected)} entities={sg.n_entities}\n")
            for name, dom, flag, hop in zip(
                sg.entity_names, sg.domain_tags, sg.item_flags, sg.hops
            ):
                fh.write(f"e {name} {dom} {int(flag)} {hop}\n")
            rel_ids, heads, tails = np.nonzero(sg.adjacency)
            edges = sorted(zip(rel_ids.tolist(), heads.tolist(), tails.tolist()))
            for rel, head, tail in edges:
                fh.write(f"t {head} {store.relations[rel]} {tail}\n")
            fh.write("end\n")


def read_subgraph_cache(path, store: KnowledgeStore) -> dict[str, KnowledgeSubgraph]:
    out: dict[str, KnowledgeSubgraph] = {}
    current: dict | None = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            kind, _, rest = line.partition(" ")
            if kind == "seq":
                seq_id, conn_part, ent_part = rest.split(" ")
                current = {
                    "seq_id": seq_id,
                    "connected": conn_part == "connected=1",
                    "names": [],
                    "domains": [],
                    "flags": [],
                    "hops": [],
                    "edges": [],
                }
            elif kind == "e":
                name, dom, flag, hop = rest.rsplit(" ", 3)
                current["names"].append(name)
                current["domains"].append(dom)
                current["flags"].append(flag == "1")
                current["hops"].append(int(hop))
            elif kind == "t":
                head, rel_name, tail = rest.split(" ")
                current["edges"].append((int(head), store.relation_index[rel_name], int(tail)))
            elif kind == "end":
                n = len(current["names"])
                adj = np.zeros((store.n_relations, n, n), dtype=bool)
                for head, rel, tail in current["edges"]:
                    adj[rel, head, tail] = True
                out[current["seq_id"]] = KnowledgeSubgraph(
                    seq_id=current["seq_id"],
                    entity_ids=[store.entity_index[nm] for nm in current["names"]],
                    entity_names=current["names"],
                    domain_tags=current["domains"],
                    item_flags=current["flags"],
                    hops=current["hops"],
                    connected=current["connected"],
                    n_relations=store.n_relations,
                    adjacency=adj,
                )
                current = None
    return out
