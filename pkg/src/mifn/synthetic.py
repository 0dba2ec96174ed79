"""Synthetic planted-link corpora for desk-scale validation.

The generator draws interaction logs for two domains where, with
probability ``p_link``, a domain-B event is determined solely by a
knowledge triple <most recent A item, Is_the_same_category, B item> under
a fixed random item pairing, and is otherwise an independent uniform draw.
The matching triple file is emitted alongside, so the knowledge graph is
the only reliable route to the planted targets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DOMAINS, Event

PLANT_RELATION = "Is_the_same_category"


@dataclass
class SyntheticConfig:
    n_users: int = 100
    items_a: int = 50
    items_b: int = 50
    seqs_per_user: int = 4
    min_a: int = 3
    max_a: int = 6
    min_b: int = 3
    max_b: int = 6
    p_link: float = 0.0
    period_seconds: int = 2_592_000
    event_gap_seconds: int = 60

    def validate(self) -> None:
        if not 0.0 <= self.p_link <= 1.0:
            raise ValueError(f"p_link must lie in [0, 1], got {self.p_link}")
        if min(self.n_users, self.items_a, self.items_b, self.seqs_per_user) < 1:
            raise ValueError("counts must be positive")
        if self.min_a < 3 or self.min_b < 3:
            raise ValueError("sequences need at least 3 items per domain to survive filtering")
        if self.max_a < self.min_a or self.max_b < self.min_b:
            raise ValueError("length ranges are inverted")
        span = (self.max_a + self.max_b) * self.event_gap_seconds
        if span >= self.period_seconds:
            raise ValueError("sequences would straddle period boundaries")


def item_label(domain: str, index: int) -> str:
    return f"{domain.lower()}{index:05d}"


def partner_map(config: SyntheticConfig, seed: int) -> dict[str, str]:
    """The planted A-item -> B-item pairing, as used for the triple file."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0FFEE]))
    perm = rng.permutation(config.items_b)
    return {
        item_label(DOMAINS[0], i): item_label(DOMAINS[1], int(perm[i % config.items_b]))
        for i in range(config.items_a)
    }


def generate_synthetic(
    config: SyntheticConfig, seed: int = 0
) -> tuple[list[Event], list[tuple[str, str, str]]]:
    """Emit (events, triples) for the planted-link corpus."""
    config.validate()
    partners = partner_map(config, seed)
    triples = [(a, PLANT_RELATION, b) for a, b in sorted(partners.items())]

    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    events: list[Event] = []
    for u in range(config.n_users):
        user = f"u{u:05d}"
        for s in range(config.seqs_per_user):
            bucket = u * config.seqs_per_user + s
            base_ts = bucket * config.period_seconds
            n_a = int(rng.integers(config.min_a, config.max_a + 1))
            n_b = int(rng.integers(config.min_b, config.max_b + 1))

            # prefix slots: first one from domain A so every B event has a
            # preceding A item; the held-out pair (gt_b then gt_a) closes
            # the sequence so the planted source stays in the prefix.
            body = [DOMAINS[0]] * (n_a - 2) + [DOMAINS[1]] * (n_b - 1)
            body = [DOMAINS[0]] + [body[i] for i in rng.permutation(len(body))]
            slots = body + [DOMAINS[1], DOMAINS[0]]

            last_a: str | None = None
            for pos, domain in enumerate(slots):
                if domain == DOMAINS[0]:
                    item = item_label(domain, int(rng.integers(config.items_a)))
                    # the final A slot is the held-out gt_a; items before it
                    # update the planted source
                    if pos != len(slots) - 1:
                        last_a = item
                else:
                    if last_a is not None and rng.random() < config.p_link:
                        item = partners[last_a]
                    else:
                        item = item_label(domain, int(rng.integers(config.items_b)))
                events.append(
                    Event(user, item, domain, base_ts + pos * config.event_gap_seconds)
                )
    return events, triples


def write_events_tsv(path, events: list[Event]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in events:
            fh.write(f"{e.user_id}\t{e.item_id}\t{e.domain}\t{e.timestamp}\n")


def write_triples_tsv(path, triples: list[tuple[str, str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for head, rel, tail in triples:
            fh.write(f"{head}\t{rel}\t{tail}\n")
