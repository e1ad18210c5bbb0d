"""Desk-scale synthetic datasets with a tunable amount of KG signal.

Items belong to latent topics and users prefer a few topics. Every item is
aligned to its own entity, which links to the hub entity of its KG
community and to a few attribute entities of that community (plus random
noise attributes). With ``kg_signal_strength = 1`` an item's KG community is its
topic; with ``0`` it is drawn independently of the topics, so the KG carries
no information about the interactions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .graph import InteractionGraph, KnowledgeGraph, save_bundle
from .sampling import split_interactions


@dataclass(frozen=True)
class SyntheticSpec:
    users: int = 500
    items: int = 1000
    entities: int = 1500
    relations: int = 8
    kg_signal_strength: float = 0.9
    seed: int = 0
    topics: int = 20
    mean_interactions: float = 5.0
    attributes_per_item: int = 3
    noise_attributes: int = 1
    popularity_skew: float = 0.8
    off_topic: float = 0.1
    ratios: tuple = (0.8, 0.1, 0.1)

    def validate(self):
        if self.users < 50 or self.items < 100:
            raise ValueError("need at least 50 users and 100 items")
        if self.entities <= self.items:
            raise ValueError("entities must exceed items (attribute entities are required)")
        if self.relations < 3:
            raise ValueError("need at least 3 relations")
        if self.entities - self.items < 2 * self.topics:
            raise ValueError("need at least two attribute entities per topic")
        if not 0.0 <= self.kg_signal_strength <= 1.0:
            raise ValueError("kg_signal_strength must lie in [0, 1]")
        if self.topics < 2 or self.mean_interactions < 1:
            raise ValueError("bad topics / mean_interactions")


def _interactions(spec, rng, item_topic):
    n_top = spec.topics
    members = [np.flatnonzero(item_topic == t) for t in range(n_top)]
    popularity = rng.lognormal(0.0, spec.popularity_skew, size=spec.items)
    users, items = [], []
    favourite = np.empty(spec.users, dtype=np.int64)
    for u in range(spec.users):
        first, second = rng.choice(n_top, size=2, replace=False)
        favourite[u] = first
        pref = np.full(n_top, spec.off_topic / n_top)
        pref[first] += 0.7 * (1.0 - spec.off_topic) / 0.9
        pref[second] += 0.2 * (1.0 - spec.off_topic) / 0.9
        count = min(1 + rng.poisson(spec.mean_interactions - 1), spec.items // 4)
        chosen = set()
        while len(chosen) < count:
            t = rng.choice(n_top, p=pref)
            pool = members[t]
            if pool.size == 0:
                continue
            w = popularity[pool]
            chosen.add(int(pool[rng.choice(pool.size, p=w / w.sum())]))
        chosen = sorted(chosen)
        users.extend([u] * len(chosen))
        items.extend(chosen)
    # every item needs one interaction so that the TSV files carry the full item set
    seen = np.zeros(spec.items, dtype=bool)
    seen[items] = True
    for i in np.flatnonzero(~seen):
        fans = np.flatnonzero(favourite == item_topic[i])
        users.append(int(rng.choice(fans)) if fans.size else int(rng.integers(spec.users)))
        items.append(int(i))
    return InteractionGraph(spec.users, spec.items, users, items)


def _knowledge_graph(spec, rng, item_topic):
    n_attr = spec.entities - spec.items
    attr_ids = spec.items + np.arange(n_attr)
    attr_comm = np.arange(n_attr) % spec.topics
    # the first attribute of every community is its hub ("genre") entity
    hubs = attr_ids[:spec.topics]
    rest = attr_ids[spec.topics:]
    rng.shuffle(attr_comm[spec.topics:])
    # relation 0 links attributes to each other, relation 1 links items to
    # hubs, the rest link items to ordinary attributes
    attr_rel = 2 + rng.integers(0, spec.relations - 2, size=n_attr)
    by_comm = [rest[attr_comm[spec.topics:] == c] for c in range(spec.topics)]

    signal = rng.random(spec.items) < spec.kg_signal_strength
    comm = np.where(signal, item_topic, rng.integers(0, spec.topics, size=spec.items))
    triples = []
    for i in range(spec.items):
        triples.append((i, 1, int(hubs[comm[i]])))
        pool = by_comm[comm[i]]
        k = min(spec.attributes_per_item, pool.size)
        picks = list(rng.choice(pool, size=k, replace=False)) if k else []
        picks += list(rng.choice(rest, size=spec.noise_attributes, replace=False))
        for a in picks:
            triples.append((i, int(attr_rel[a - spec.items]), int(a)))
    for c in range(spec.topics):
        for a in by_comm[c]:
            triples.append((int(a), 0, int(hubs[c])))
    return KnowledgeGraph(spec.entities, spec.relations, np.array(triples, dtype=np.int64),
                          np.arange(spec.items))


def generate_synthetic_dataset(spec=None, out_dir=None, **overrides):
    """Generate a :class:`DatasetBundle`; optionally write it to ``out_dir``.

    Written files: ``train.tsv``, ``valid.tsv``, ``test.tsv``, ``kg.tsv``,
    ``alignment.tsv`` and ``meta.txt`` (``key=value`` lines).
    """
    if spec is None:
        spec = SyntheticSpec(**overrides)
    elif isinstance(spec, dict):
        spec = SyntheticSpec(**{**spec, **overrides})
    spec.validate()
    root = np.random.SeedSequence(spec.seed)
    s_items, s_ig, s_kg, s_split = (np.random.default_rng(s) for s in root.spawn(4))

    item_topic = s_items.integers(0, spec.topics, size=spec.items)
    graph = _interactions(spec, s_ig, item_topic)
    kg = _knowledge_graph(spec, s_kg, item_topic)
    split_seed = int(s_split.integers(0, 2**31 - 1))
    bundle = split_interactions(graph, spec.ratios, seed=split_seed, kg=kg)
    bundle.user_keys = [f"u{n}" for n in range(spec.users)]
    bundle.item_keys = [f"i{n}" for n in range(spec.items)]
    bundle.entity_keys = [f"ent_i{n}" for n in range(spec.items)] + \
        [f"attr{n}" for n in range(spec.entities - spec.items)]
    bundle.relation_keys = ["related_to"] + [f"r{n}" for n in range(1, spec.relations)]
    bundle.validate()
    if out_dir is not None:
        out_dir = Path(out_dir)
        save_bundle(bundle, out_dir)
        meta = asdict(spec)
        meta["ratios"] = ",".join(repr(r) for r in spec.ratios)
        meta["interactions"] = graph.num_edges
        meta["density"] = repr(graph.num_edges / (spec.users * spec.items))
        meta["triples"] = len(kg.triples)
        with open(out_dir / "meta.txt", "w", encoding="utf-8", newline="\n") as fh:
            for k, v in meta.items():
                fh.write(f"{k}={v}\n")
    return bundle
