"""
Resolving a tie with differential descriptions
==============================================

Two albatross species get identical template embeddings, so the first pass
cannot separate them. Descriptions of how they differ can.
"""

import tempfile
from pathlib import Path

import numpy as np

from fudd import ClassEntry, DatasetManifest, EmbeddingMatrix, evaluate, write_matrix
from fudd.diffgen import DifferentialRecord, render_records
from fudd.gateway import CountingBackend, FixtureBackend, Gateway, PairCache

vectors = {
    "A photo of a black-footed albatross.": (1, 0, 0),
    "A photo of a laysan albatross.": (1, 0, 0),
    "A photo of a wren.": (0, 0, 1),
    "A photo of a black-footed albatross, with a dark bill.": (1, 1, 0),
    "A photo of a laysan albatross, with a pink bill.": (1, -1, 0),
    "A photo of a black-footed albatross, with long wings.": (1, 0, 0.3),
    "A photo of a laysan albatross, with long wings.": (1, 0, 0.3),
    "A photo of a wren, with short wings.": (0, 0, 1),
}


def embed(text):
    return np.asarray(vectors[text], dtype=np.float32)


classes = [
    ClassEntry("albatross_bf", "black-footed albatross"),
    ClassEntry("albatross_ls", "laysan albatross"),
    ClassEntry("wren", "wren"),
]

# %%
# Canned LLM answers stand in for a real endpoint.
bill = DifferentialRecord("Bill color", "A photo of a black-footed albatross, with a dark bill.",
                          "A photo of a laysan albatross, with a pink bill.")
pairs = {
    ("black-footed albatross", "laysan albatross"): render_records([bill]),
    ("black-footed albatross", "wren"): render_records([DifferentialRecord(
        "Wings", "A photo of a black-footed albatross, with long wings.", "A photo of a wren, with short wings.")]),
    ("laysan albatross", "wren"): render_records([DifferentialRecord(
        "Wings", "A photo of a laysan albatross, with long wings.", "A photo of a wren, with short wings.")]),
}
backend = CountingBackend(FixtureBackend(pairs))

root = Path(tempfile.mkdtemp())
images = {"bf": (1, 0.5, 0), "ls": (1, -0.5, 0), "wren": (0.1, 0, 1)}
write_matrix(EmbeddingMatrix.from_dict(images), root / "images.emb")
manifest = DatasetManifest("albatrosses", classes, "images.emb",
                           {"bf": "albatross_bf", "ls": "albatross_ls", "wren": "wren"}, root)

# %%
base = evaluate(manifest, "single_template", embed)
gw = Gateway(classes, backend, PairCache(root / "cache"))
fudd = evaluate(manifest, "fudd", embed, k=2, gateway=gw)
print(f"single template: {base.accuracy:.3f}")
print(f"with follow-up:  {fudd.accuracy:.3f}  ({backend.calls} LLM calls)")
for t in fudd.traces:
    print(" ", t.image_id, t.ambiguous.members, "->", t.final_label)

# %%
# A second run is served from the on-disk cache.
again = evaluate(manifest, "fudd", embed, k=2, gateway=Gateway(classes, backend, PairCache(root / "cache")))
print("calls after rerun:", backend.calls, "| report backend_calls:", again.backend_calls)
