"""
Generating only the pairs that matter
=====================================

With many classes, prompting every pair is expensive. Instead, collect the
ambiguous sets actually observed, generate those pairs once, and freeze the
cache. Unseen pairs fall back to a single template sentence.
"""

import tempfile
from math import comb
from pathlib import Path

import numpy as np

from fudd import ClassEntry, ClassEmbeddingTable, DatasetManifest, EmbeddingMatrix, write_matrix
from fudd.gateway import (CountingBackend, FixtureBackend, Gateway, PairCache, estimate_cost,
                          full_pair_count, precompute_restricted_cache)

rng = np.random.default_rng(3)
classes = [ClassEntry(f"c{i}", f"species {i}") for i in range(40)]
table = ClassEmbeddingTable.from_mapping({c.class_id: rng.standard_normal(16) for c in classes})

root = Path(tempfile.mkdtemp())
imgs = {f"im{j}": rng.standard_normal(16) for j in range(25)}
write_matrix(EmbeddingMatrix.from_dict(imgs), root / "images.emb")
manifest = DatasetManifest("many", classes, "images.emb", {i: "c0" for i in imgs}, root)

answer = "Visual characteristic: Size\nCaption 1: A photo of a big one.\nCaption 2: A photo of a small one.\n"
backend = CountingBackend(FixtureBackend(default=answer))
cache = PairCache(root / "cache")

# %%
dry = precompute_restricted_cache(manifest, table, 5, backend, cache, dry_run=True)
print(f"{dry.unique_pairs} pairs needed vs {comb(40, 2)} for all pairs")

summary = precompute_restricted_cache(manifest, table, 5, backend, cache)
print(f"generated {summary.pairs_generated} with {backend.calls} calls; cache is now {cache.mode}")

# %%
# A pair nobody asked for gets the single-template fallback, without a call.
gw = Gateway(classes, backend, cache)
missing = next((a, b) for a in table.class_ids for b in table.class_ids
               if a < b and f"{a}||{b}" not in cache.keys())
p = gw.pair(*missing)
print(missing, p.fallback, [d.text for d in p.descriptions_for(missing[0])])

# %%
# Budget arithmetic at 380 input and 199 output tokens per prompt.
print(f"1000 prompts: ${estimate_cost(1000):.3f}")
print(f"every pair of 1000 classes: ${estimate_cost(full_pair_count(1000)):,.2f}")
