"""
Zero-shot prediction from precomputed embeddings
================================================

Class embeddings are the mean of their description embeddings; an image goes
to the class with the highest cosine similarity.
"""

import numpy as np

from fudd import ClassEntry, ambiguous_set, build_table, predict
from fudd.catalog import template_set
from fudd.embedders import HashingEmbedder

# %%
# A stand-in text encoder. Any callable ``str -> vector`` works here,
# e.g. a CLIP text tower wrapped in a function.
embed = HashingEmbedder(dim=32, seed=1)

names = ["cat", "dog", "fox", "owl"]
templates = ["a photo of a {}.", "a drawing of a {}.", "a close-up photo of a {}."]
classes = [ClassEntry(n, n, template_set(n, templates)) for n in names]
table = build_table(classes, embed)
print(table.class_ids, table.matrix.shape)

# %%
# An "image" close to the fox direction.
rng = np.random.default_rng(0)
image = table["fox"] + 0.05 * rng.standard_normal(table.dim)
label, scores = predict(image, table)
print("predicted:", label)
for cid, s in sorted(scores.items(), key=lambda kv: -kv[1]):
    print(f"  {cid:4s} {s:+.3f}")

# %%
# The ambiguous set is just the top-k by score.
print(ambiguous_set(image, table, k=2).members)
