"""Interaction graph, knowledge graph and the dataset bundle.

Both graphs are immutable after construction. Every derived structure
(adjacency lists, normalization coefficients, sparse aggregation matrices)
is built once in ``__init__`` and shared read-only afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class DataFormatError(ValueError):
    """Raised when an input file violates the TSV contract."""


class InteractionGraph:
    """Bipartite user-item graph with symmetric normalization coefficients.

    Edges are stored deduplicated and sorted by ``(user, item)``. The
    coefficient of edge ``(u, i)`` is ``1 / sqrt(deg(u) * deg(i))``.

    Parameters
    ----------
    num_users, num_items : int
        Sizes of the id spaces. Nodes without edges are allowed.
    users, items : array_like of int
        Edge endpoints. Duplicates are dropped.
    """

    def __init__(self, num_users, num_items, users, items):
        users = np.asarray(users, dtype=np.int64).ravel()
        items = np.asarray(items, dtype=np.int64).ravel()
        if users.shape != items.shape:
            raise ValueError("users and items must have equal length")
        if users.size and (users.min() < 0 or users.max() >= num_users):
            raise ValueError("user id out of range")
        if items.size and (items.min() < 0 or items.max() >= num_items):
            raise ValueError("item id out of range")
        self.num_users = int(num_users)
        self.num_items = int(num_items)

        keys = np.unique(users * self.num_items + items)
        self._keys = keys
        self.users = keys // self.num_items
        self.items = keys % self.num_items
        self.user_degree = np.bincount(self.users, minlength=self.num_users)
        self.item_degree = np.bincount(self.items, minlength=self.num_items)
        self.norm = 1.0 / np.sqrt(
            self.user_degree[self.users].astype(np.float64)
            * self.item_degree[self.items].astype(np.float64)
        )

        self.user_indptr = np.zeros(self.num_users + 1, dtype=np.int64)
        np.cumsum(self.user_degree, out=self.user_indptr[1:])
        by_item = np.lexsort((self.users, self.items))
        self._item_order = by_item
        self.item_indptr = np.zeros(self.num_items + 1, dtype=np.int64)
        np.cumsum(self.item_degree, out=self.item_indptr[1:])
        self._item_neighbors = self.users[by_item]
        self._matrices = {}

    @property
    def num_edges(self):
        return int(self._keys.size)

    def user_items(self, u):
        """Sorted item ids adjacent to user ``u``."""
        return self.items[self.user_indptr[u]:self.user_indptr[u + 1]]

    def item_users(self, i):
        """Sorted user ids adjacent to item ``i``."""
        return self._item_neighbors[self.item_indptr[i]:self.item_indptr[i + 1]]

    @property
    def user_adj(self):
        return [self.user_items(u).tolist() for u in range(self.num_users)]

    @property
    def item_adj(self):
        return [self.item_users(i).tolist() for i in range(self.num_items)]

    def edge_norm(self, u, i):
        pos = np.searchsorted(self._keys, u * self.num_items + i)
        if pos >= self._keys.size or self._keys[pos] != u * self.num_items + i:
            raise KeyError((u, i))
        return float(self.norm[pos])

    def has_edges(self, users, items):
        """Vectorized membership test for ``(users[k], items[k])`` pairs."""
        q = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(items, dtype=np.int64)
        pos = np.searchsorted(self._keys, q)
        pos = np.minimum(pos, max(self._keys.size - 1, 0))
        if self._keys.size == 0:
            return np.zeros(q.shape, dtype=bool)
        return self._keys[pos] == q

    def edge_set(self):
        return set(zip(self.users.tolist(), self.items.tolist()))

    def norm_adj(self, dtype=np.float64):
        """CSR matrices ``(A, A.T)`` with ``A[u, i] = norm(u, i)``."""
        dtype = np.dtype(dtype)
        mats = self._matrices.get(dtype)
        if mats is None:
            mat = sp.csr_matrix(
                (self.norm.astype(dtype), self.items, self.user_indptr),
                shape=(self.num_users, self.num_items),
            )
            mats = self._matrices[dtype] = (mat, mat.T.tocsr())
        return mats

    def subgraph(self, mask):
        """Graph keeping only edges where ``mask`` is true; node sets unchanged."""
        mask = np.asarray(mask, dtype=bool)
        return InteractionGraph(self.num_users, self.num_items, self.users[mask], self.items[mask])

    def __eq__(self, other):
        return (
            isinstance(other, InteractionGraph)
            and self.num_users == other.num_users
            and self.num_items == other.num_items
            and np.array_equal(self._keys, other._keys)
        )

    def __repr__(self):
        return (f"InteractionGraph(num_users={self.num_users}, num_items={self.num_items}, "
                f"num_edges={self.num_edges})")


class KnowledgeGraph:
    """Entity-relation triple store aligned to items.

    ``triples`` are kept as given (deduplicated). The message edges used for
    propagation are the triples grouped by head, plus every triple reversed
    with the same relation id when ``inverse`` is true.

    Parameters
    ----------
    num_entities, num_relations : int
    triples : array_like, shape (n, 3)
        ``(head, relation, tail)`` rows.
    alignment : array_like of int, shape (num_items,)
        Entity id of each item. Must be injective.
    inverse : bool
        Insert reversed triples into the message edges.
    """

    def __init__(self, num_entities, num_relations, triples, alignment, inverse=True):
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        alignment = np.asarray(alignment, dtype=np.int64).ravel()
        self.num_entities = int(num_entities)
        self.num_relations = int(num_relations)
        self.inverse = bool(inverse)
        if triples.size:
            if triples[:, [0, 2]].min() < 0 or triples[:, [0, 2]].max() >= num_entities:
                raise ValueError("entity id out of range")
            if triples[:, 1].min() < 0 or triples[:, 1].max() >= num_relations:
                raise ValueError("relation id out of range")
        if alignment.size and (alignment.min() < 0 or alignment.max() >= num_entities):
            raise ValueError("aligned entity id out of range")
        if np.unique(alignment).size != alignment.size:
            raise ValueError("alignment must be injective")
        self.triples = np.unique(triples, axis=0) if triples.size else triples
        self.alignment = alignment

        h, r, t = self.triples.T if self.triples.size else (np.empty(0, np.int64),) * 3
        if self.inverse:
            h, r, t = np.concatenate([h, t]), np.concatenate([r, r]), np.concatenate([t, h])
        # (head, relation, tail) lexicographic order; reversed self-loops may duplicate
        msg = np.unique(np.stack([h, r, t], axis=1), axis=0) if h.size else np.empty((0, 3), np.int64)
        self.heads, self.rels, self.tails = msg[:, 0].copy(), msg[:, 1].copy(), msg[:, 2].copy()
        self.degree = np.bincount(self.heads, minlength=self.num_entities)
        self.indptr = np.zeros(self.num_entities + 1, dtype=np.int64)
        np.cumsum(self.degree, out=self.indptr[1:])
        self._matrices = {}

    @property
    def num_items(self):
        return int(self.alignment.size)

    @property
    def num_messages(self):
        return int(self.heads.size)

    @property
    def entity_adj(self):
        """Per-entity list of ``(relation, neighbor)`` pairs."""
        out = []
        for e in range(self.num_entities):
            lo, hi = self.indptr[e], self.indptr[e + 1]
            out.append(list(zip(self.rels[lo:hi].tolist(), self.tails[lo:hi].tolist())))
        return out

    def operators(self, dtype=np.float64):
        """Sparse operators for relation-aware mean aggregation.

        Returns ``(mean, mean.T, rel_sel.T, tail_sel.T)`` where ``mean`` is
        ``[num_entities x num_messages]`` with ``1/deg(head)`` entries and the
        selectors are one-hot ``[num_messages x num_relations]`` and
        ``[num_messages x num_entities]`` matrices. The transposed selectors
        scatter message gradients back onto relations and tails.
        """
        dtype = np.dtype(dtype)
        ops = self._matrices.get(dtype)
        if ops is None:
            m = self.num_messages
            rows = np.arange(m)
            inv_deg = np.zeros(self.num_entities, dtype=np.float64)
            nz = self.degree > 0
            inv_deg[nz] = 1.0 / self.degree[nz]
            mean = sp.csr_matrix(
                (inv_deg[self.heads].astype(dtype), rows, self.indptr),
                shape=(self.num_entities, m),
            )
            ones = np.ones(m, dtype=dtype)
            rel_sel = sp.csr_matrix((ones, (rows, self.rels)), shape=(m, self.num_relations))
            tail_sel = sp.csr_matrix((ones, (rows, self.tails)), shape=(m, self.num_entities))
            ops = (mean, mean.T.tocsr(), rel_sel.T.tocsr(), tail_sel.T.tocsr())
            self._matrices[dtype] = ops
        return ops

    def align_matrix(self, dtype=np.float64):
        """One-hot ``[num_items x num_entities]`` alignment matrix."""
        n = self.num_items
        return sp.csr_matrix(
            (np.ones(n, dtype=dtype), (np.arange(n), self.alignment)),
            shape=(n, self.num_entities),
        )

    def subgraph(self, mask):
        """Keep only triples where ``mask`` is true; entities and alignment unchanged."""
        mask = np.asarray(mask, dtype=bool)
        return KnowledgeGraph(self.num_entities, self.num_relations, self.triples[mask],
                              self.alignment, inverse=self.inverse)

    def __eq__(self, other):
        return (
            isinstance(other, KnowledgeGraph)
            and self.num_entities == other.num_entities
            and self.num_relations == other.num_relations
            and self.inverse == other.inverse
            and np.array_equal(self.triples, other.triples)
            and np.array_equal(self.alignment, other.alignment)
        )

    def __repr__(self):
        return (f"KnowledgeGraph(num_entities={self.num_entities}, num_relations={self.num_relations}, "
                f"num_triples={len(self.triples)}, inverse={self.inverse})")


@dataclass
class DatasetBundle:
    """Train/validation/test interaction graphs over one id space, plus the KG."""

    train: InteractionGraph
    valid: InteractionGraph
    test: InteractionGraph
    kg: KnowledgeGraph
    user_keys: list = field(default_factory=list)
    item_keys: list = field(default_factory=list)
    entity_keys: list = field(default_factory=list)
    relation_keys: list = field(default_factory=list)

    @property
    def num_users(self):
        return self.train.num_users

    @property
    def num_items(self):
        return self.train.num_items

    def split(self, name):
        if name in ("valid", "validation"):
            return self.valid
        if name == "test":
            return self.test
        if name == "train":
            return self.train
        raise ValueError(f"unknown split {name!r}")

    def validate(self):
        """Check shared id spaces, edge-disjoint splits and user coverage."""
        for g in (self.valid, self.test):
            if (g.num_users, g.num_items) != (self.train.num_users, self.train.num_items):
                raise ValueError("splits must share one id space")
        if self.kg.num_items != self.train.num_items:
            raise ValueError("alignment must cover every item")
        a, b, c = self.train._keys, self.valid._keys, self.test._keys
        if np.intersect1d(a, b).size or np.intersect1d(a, c).size or np.intersect1d(b, c).size:
            raise ValueError("splits must be edge-disjoint")
        if np.any(self.train.user_degree == 0):
            raise ValueError("every user needs at least one training edge")


# --------------------------------------------------------------------------
# file IO


def _read_rows(path, ncols):
    path = Path(path)
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != ncols or any(p == "" for p in parts):
                raise DataFormatError(f"{path}:{lineno}: expected {ncols} tab-separated fields")
            rows.append(parts)
    return rows


class _KeyMap(dict):
    """Opaque-string to dense-id map in first-appearance order."""

    def __init__(self, keys=()):
        super().__init__()
        self.keys_list = []
        for k in keys:
            self.id(k)

    def id(self, key):
        idx = self.get(key)
        if idx is None:
            idx = self[key] = len(self.keys_list)
            self.keys_list.append(key)
        return idx


def _pairs_to_ids(rows, user_map, item_map):
    u = np.fromiter((user_map.id(a) for a, _ in rows), dtype=np.int64, count=len(rows))
    i = np.fromiter((item_map.id(b) for _, b in rows), dtype=np.int64, count=len(rows))
    return u, i


def load_interaction_graph(path, return_keys=False):
    """Read a ``user<TAB>item`` file into an :class:`InteractionGraph`.

    Ids are assigned in first-appearance order; duplicate lines collapse.
    """
    rows = _read_rows(path, 2)
    if not rows:
        raise DataFormatError(f"{path}: no interactions")
    users, items = _KeyMap(), _KeyMap()
    u, i = _pairs_to_ids(rows, users, items)
    graph = InteractionGraph(len(users), len(items), u, i)
    if return_keys:
        return graph, users.keys_list, items.keys_list
    return graph


def load_knowledge_graph(path, alignment_path, item_keys, inverse=True, return_keys=False):
    """Read KG triples and the item-entity alignment.

    Parameters
    ----------
    path : path
        ``head<TAB>relation<TAB>tail`` lines.
    alignment_path : path
        ``item<TAB>entity`` lines. Items absent here get a fresh isolated
        entity keyed ``"<item>#item"``.
    item_keys : sequence of str
        Item keys indexed by item id.
    """
    entities, relations = _KeyMap(), _KeyMap()
    triples = [(entities.id(h), relations.id(r), entities.id(t)) for h, r, t in _read_rows(path, 3)]
    item_index = {k: n for n, k in enumerate(item_keys)}
    alignment = np.full(len(item_keys), -1, dtype=np.int64)
    taken = {}
    for item, ent in _read_rows(alignment_path, 2):
        if item not in item_index:
            raise DataFormatError(f"{alignment_path}: unknown item key {item!r}")
        idx = item_index[item]
        if alignment[idx] >= 0:
            raise DataFormatError(f"{alignment_path}: duplicate alignment for item {item!r}")
        eid = entities.id(ent)
        if eid in taken:
            raise DataFormatError(f"{alignment_path}: entity {ent!r} aligned to two items")
        taken[eid] = idx
        alignment[idx] = eid
    for idx in np.flatnonzero(alignment < 0):
        key = f"{item_keys[idx]}#item"
        while key in entities:
            key += "_"
        alignment[idx] = entities.id(key)
    kg = KnowledgeGraph(len(entities), max(len(relations), 1), np.array(triples, dtype=np.int64),
                        alignment, inverse=inverse)
    if return_keys:
        return kg, entities.keys_list, relations.keys_list
    return kg


def load_bundle(directory, inverse=True):
    """Load ``train.tsv``/``valid.tsv``/``test.tsv``/``kg.tsv``/``alignment.tsv``.

    User and item ids are assigned in first-appearance order over train,
    then valid, then test.
    """
    directory = Path(directory)
    users, items = _KeyMap(), _KeyMap()
    parts = {}
    for name in ("train", "valid", "test"):
        rows = _read_rows(directory / f"{name}.tsv", 2)
        if name == "train" and not rows:
            raise DataFormatError(f"{directory / 'train.tsv'}: no interactions")
        parts[name] = _pairs_to_ids(rows, users, items)
    nu, ni = len(users), len(items)
    graphs = {k: InteractionGraph(nu, ni, *v) for k, v in parts.items()}
    kg, ekeys, rkeys = load_knowledge_graph(directory / "kg.tsv", directory / "alignment.tsv",
                                            items.keys_list, inverse=inverse, return_keys=True)
    bundle = DatasetBundle(graphs["train"], graphs["valid"], graphs["test"], kg,
                           users.keys_list, items.keys_list, ekeys, rkeys)
    bundle.validate()
    return bundle


def write_pairs(path, graph, row_keys, col_keys):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, i in zip(graph.users.tolist(), graph.items.tolist()):
            fh.write(f"{row_keys[u]}\t{col_keys[i]}\n")


def save_bundle(bundle, directory):
    """Write a bundle in the TSV layout understood by :func:`load_bundle`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in ("train", "valid", "test"):
        write_pairs(directory / f"{name}.tsv", bundle.split(name), bundle.user_keys, bundle.item_keys)
    ek, rk = bundle.entity_keys, bundle.relation_keys
    with open(directory / "kg.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in bundle.kg.triples.tolist():
            fh.write(f"{ek[h]}\t{rk[r]}\t{ek[t]}\n")
    with open(directory / "alignment.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for item, ent in enumerate(bundle.kg.alignment.tolist()):
            fh.write(f"{bundle.item_keys[item]}\t{ek[ent]}\n")


def save_id_maps(bundle, directory):
    """Persist the key dictionaries next to a checkpoint."""
    directory = Path(directory)
    for name, keys in (("users", bundle.user_keys), ("items", bundle.item_keys),
                       ("entities", bundle.entity_keys), ("relations", bundle.relation_keys)):
        with open(directory / f"ids_{name}.tsv", "w", encoding="utf-8", newline="\n") as fh:
            for n, k in enumerate(keys):
                fh.write(f"{n}\t{k}\n")
