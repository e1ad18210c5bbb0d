# %% [markdown]
# # Data, graphs and augmentation
#
# A synthetic bundle has latent item topics, users who favour a couple of
# topics, and a KG in which each item links to the hub entity of its
# community. `kg_signal_strength` sets how often that community is the
# item's true topic.

# %%
import numpy as np

from simkgcl import augment_edges, generate_synthetic_dataset

bundle = generate_synthetic_dataset(seed=0)
n = sum(bundle.split(s).num_edges for s in ("train", "valid", "test"))
print(bundle.num_users, "users,", bundle.num_items, "items,", n, "interactions")
print("density", n / (bundle.num_users * bundle.num_items))

# %% [markdown]
# Each interaction edge carries `1 / sqrt(deg(u) deg(i))`. The sparse
# operator used for propagation holds exactly these coefficients.

# %%
g = bundle.train
A, At = g.norm_adj()
u, i = int(g.users[0]), int(g.items[0])
print(A[u, i], g.edge_norm(u, i), 1 / np.sqrt(g.user_degree[u] * g.item_degree[i]))

# %% [markdown]
# KG messages run in both directions, so every triple `(h, r, t)` also
# lets `t` hear from `h` under the same relation.

# %%
kg = bundle.kg
print(kg.num_entities, "entities,", kg.num_relations, "relations,", len(kg.triples), "triples")
print("neighbors of item 0's entity:", kg.entity_adj[kg.alignment[0]][:6])

# %% [markdown]
# Augmentation keeps each edge or triple independently. The result is a
# subgraph with its degrees and coefficients rebuilt.

# %%
rng = np.random.default_rng(1)
kept = augment_edges(g, 0.9, rng)
print(kept.num_edges, "of", g.num_edges, "edges kept;", kept.edge_set() <= g.edge_set())
kg_kept = augment_edges(kg, 0.9, rng)
print("isolated entities after dropping triples:", int(np.sum(kg_kept.degree == 0)))
