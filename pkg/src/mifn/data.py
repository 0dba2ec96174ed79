"""Interaction-log ingestion, filtering, hybrid sequences and splits.

Events arrive as a tab-separated file with one interaction per line:

    user_id<TAB>item_id<TAB>domain<TAB>unix_timestamp

Users and items below the frequency thresholds are dropped iteratively
until a fixpoint, each user's surviving events are bucketed into fixed
periods, and buckets with enough interactions from both domains become
hybrid sequences.  The last item of each domain is held out as that
domain's ground truth and removed from the encoded prefix.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

DOMAINS = ("A", "B")

# period presets: a month and a year, in seconds
PERIOD_MONTH = 2_592_000
PERIOD_YEAR = 31_536_000


class DataFormatError(ValueError):
    """Raised when an input file is structurally unusable."""


class EmptyDatasetError(ValueError):
    """Raised when filtering leaves no usable sequence."""


@dataclass(frozen=True)
class Event:
    user_id: str
    item_id: str
    domain: str
    timestamp: int


@dataclass
class Vocabulary:
    """Dense item index per domain, frozen once built from the training set."""

    index_a: dict[str, int] = field(default_factory=dict)
    index_b: dict[str, int] = field(default_factory=dict)
    items_a: list[str] = field(default_factory=list)
    items_b: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.items_a)

    @property
    def m(self) -> int:
        return len(self.items_b)

    def lookup(self, item_id: str, domain: str) -> int:
        """Dense index, or -1 for items outside the vocabulary."""
        table = self.index_a if domain == DOMAINS[0] else self.index_b
        return table.get(item_id, -1)

    def size(self, domain: str) -> int:
        return self.n if domain == DOMAINS[0] else self.m

    def item_name(self, index: int, domain: str) -> str:
        items = self.items_a if domain == DOMAINS[0] else self.items_b
        return items[index]

    @classmethod
    def from_sequences(cls, sequences: list["HybridSequence"]) -> "Vocabulary":
        seen_a: list[str] = []
        seen_b: list[str] = []
        have_a: set[str] = set()
        have_b: set[str] = set()
        for seq in sequences:
            for item, domain in zip(
                seq.item_ids + [seq.gt_a_id, seq.gt_b_id],
                seq.item_domains + [DOMAINS[0], DOMAINS[1]],
            ):
                if domain == DOMAINS[0]:
                    if item not in have_a:
                        have_a.add(item)
                        seen_a.append(item)
                else:
                    if item not in have_b:
                        have_b.add(item)
                        seen_b.append(item)
        seen_a.sort()
        seen_b.sort()
        return cls(
            index_a={it: i for i, it in enumerate(seen_a)},
            index_b={it: i for i, it in enumerate(seen_b)},
            items_a=seen_a,
            items_b=seen_b,
        )


@dataclass
class HybridSequence:
    """One user's time-ordered interactions from both domains in one period.

    ``item_ids``/``item_domains`` hold the encoded prefix (ground truths
    already removed).  ``items`` carries (vocab index, domain) pairs after
    :meth:`bind_vocab`; out-of-vocabulary items keep the -1 sentinel.
    """

    seq_id: str
    user_id: str
    item_ids: list[str]
    item_domains: list[str]
    gt_a_id: str
    gt_b_id: str
    items: list[tuple[int, str]] = field(default_factory=list)
    sub_a: list[int] = field(default_factory=list)
    sub_b: list[int] = field(default_factory=list)
    gt_a: int = -1
    gt_b: int = -1

    def __post_init__(self):
        self.sub_a = [i for i, d in enumerate(self.item_domains) if d == DOMAINS[0]]
        self.sub_b = [i for i, d in enumerate(self.item_domains) if d == DOMAINS[1]]

    def bind_vocab(self, vocab: Vocabulary) -> "HybridSequence":
        self.items = [
            (vocab.lookup(item, domain), domain)
            for item, domain in zip(self.item_ids, self.item_domains)
        ]
        self.gt_a = vocab.lookup(self.gt_a_id, DOMAINS[0])
        self.gt_b = vocab.lookup(self.gt_b_id, DOMAINS[1])
        return self

    def indices(self, domain: str) -> list[int]:
        positions = self.sub_a if domain == DOMAINS[0] else self.sub_b
        return [self.items[p][0] for p in positions]


def ingest_events(path, domains=DOMAINS) -> list[Event]:
    """Parse an events TSV; malformed lines are counted and reported."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as err:
        raise IOError(f"cannot read events file {path}: {err}") from err

    events: list[Event] = []
    malformed = 0
    considered = 0
    for line in lines:
        if not line.strip():
            continue
        considered += 1
        parts = line.split("\t")
        if len(parts) != 4:
            malformed += 1
            continue
        user, item, domain, ts = parts
        if domain not in domains or not user or not item:
            malformed += 1
            continue
        try:
            stamp = int(ts)
        except ValueError:
            malformed += 1
            continue
        if stamp < 0:
            malformed += 1
            continue
        events.append(Event(user, item, domain, stamp))

    if malformed:
        log.warning("ingest: %d malformed line(s) out of %d", malformed, considered)
    if considered and malformed / considered > 0.10:
        raise DataFormatError(
            f"{path}: {malformed}/{considered} malformed lines exceeds the 10% budget"
        )
    if not events:
        log.warning("ingest: %s contained no events", path)
    return events


def filter_events(
    events: list[Event],
    min_user_interactions: int = 10,
    min_item_freq: int = 10,
) -> list[Event]:
    """Iteratively drop infrequent users and items until nothing changes."""
    current = list(events)
    while True:
        user_counts = Counter(e.user_id for e in current)
        item_counts = Counter(e.item_id for e in current)
        kept = [
            e
            for e in current
            if user_counts[e.user_id] >= min_user_interactions
            and item_counts[e.item_id] >= min_item_freq
        ]
        if len(kept) == len(current):
            return kept
        current = kept


def build_hybrid_sequences(
    events: list[Event],
    period_seconds: int = PERIOD_MONTH,
    min_user_interactions: int = 10,
    min_item_freq: int = 10,
    min_per_domain: int = 3,
    domains=DOMAINS,
) -> tuple[list[HybridSequence], Vocabulary]:
    """Filter, bucket by period and emit per-bucket hybrid sequences.

    The returned vocabulary covers every item of every emitted sequence;
    pipelines that split afterwards rebuild it from the training split and
    rebind (see :meth:`Vocabulary.from_sequences`).
    """
    if not events:
        raise EmptyDatasetError("no events to build sequences from")
    survivors = filter_events(events, min_user_interactions, min_item_freq)

    per_user: dict[str, list[Event]] = defaultdict(list)
    for e in survivors:
        per_user[e.user_id].append(e)

    sequences: list[HybridSequence] = []
    for user in sorted(per_user):
        ordered = sorted(per_user[user], key=lambda e: (e.timestamp, e.item_id))
        buckets: dict[int, list[Event]] = defaultdict(list)
        for e in ordered:
            buckets[e.timestamp // period_seconds].append(e)
        for bucket_id in sorted(buckets):
            chunk = buckets[bucket_id]
            n_a = sum(1 for e in chunk if e.domain == domains[0])
            n_b = len(chunk) - n_a
            if n_a < min_per_domain or n_b < min_per_domain:
                continue
            last_a = max(i for i, e in enumerate(chunk) if e.domain == domains[0])
            last_b = max(i for i, e in enumerate(chunk) if e.domain == domains[1])
            prefix = [e for i, e in enumerate(chunk) if i not in (last_a, last_b)]
            sequences.append(
                HybridSequence(
                    seq_id=f"{user}:{bucket_id}",
                    user_id=user,
                    item_ids=[e.item_id for e in prefix],
                    item_domains=[e.domain for e in prefix],
                    gt_a_id=chunk[last_a].item_id,
                    gt_b_id=chunk[last_b].item_id,
                )
            )
    if not sequences:
        raise EmptyDatasetError("filtering left no sequence with enough items per domain")

    vocab = Vocabulary.from_sequences(sequences)
    for seq in sequences:
        seq.bind_vocab(vocab)
    return sequences, vocab


def _largest_remainder(total: int, ratios) -> list[int]:
    quotas = [total * r for r in ratios]
    counts = [int(q) for q in quotas]
    for _ in range(total - sum(counts)):
        remainders = [q - c for q, c in zip(quotas, counts)]
        best = max(range(len(ratios)), key=lambda i: (remainders[i], -i))
        counts[best] += 1
    return counts


def split_dataset(
    sequences: list[HybridSequence],
    ratios=(0.8, 0.1, 0.1),
    seed: int = 0,
) -> tuple[list[HybridSequence], list[HybridSequence], list[HybridSequence]]:
    """Partition sequences per user into train/valid/test.

    Each user's sequences are shuffled with a seeded stream and divided by
    largest-remainder counts, so the three parts are an exact partition.
    """
    if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must be positive and sum to 1")
    if len(sequences) < len(ratios):
        log.warning(
            "split: only %d sequence(s) for %d splits; some splits will be empty",
            len(sequences),
            len(ratios),
        )
    per_user: dict[str, list[HybridSequence]] = defaultdict(list)
    for seq in sequences:
        per_user[seq.user_id].append(seq)

    rng = np.random.default_rng(seed)
    out: tuple[list, list, list] = ([], [], [])
    for user in sorted(per_user):
        mine = sorted(per_user[user], key=lambda s: s.seq_id)
        order = rng.permutation(len(mine))
        shuffled = [mine[i] for i in order]
        counts = _largest_remainder(len(mine), ratios)
        start = 0
        for part, count in zip(out, counts):
            part.extend(shuffled[start:start + count])
            start += count
    for part in out:
        part.sort(key=lambda s: s.seq_id)
    return out


def write_split_manifest(path, splits: dict[str, list[HybridSequence]]) -> None:
    """One `sequence_id<TAB>split` line per sequence."""
    with open(path, "w", encoding="utf-8") as fh:
        for label in ("train", "valid", "test"):
            for seq in splits.get(label, []):
                fh.write(f"{seq.seq_id}\t{label}\n")


def read_split_manifest(path) -> dict[str, str]:
    out: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            seq_id, label = line.rstrip("\n").split("\t")
            out[seq_id] = label
    return out
