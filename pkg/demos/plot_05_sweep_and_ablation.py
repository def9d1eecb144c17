"""
Sweeping k and checking what the descriptions contribute
========================================================

Accuracy against the ambiguous-set size, and a control where the follow-up
uses attributes that do not distinguish the ambiguous classes.
"""

import tempfile
from pathlib import Path

import numpy as np

from fudd import ClassEntry, DatasetManifest, EmbeddingMatrix, write_matrix
from fudd.diffgen import DifferentialRecord, load_prefixes, render_records
from fudd.gateway import FixtureBackend, Gateway, PairCache
from fudd.pipeline import ablation_non_differential, format_table, plot_data, sweep_k

vectors = {
    "black-footed albatross.": (1, 0, 0),
    "laysan albatross.": (1, 0, 0),
    "wren.": (0, 0, 1),
    "black-footed albatross, with a dark bill.": (1, 1, 0),
    "laysan albatross, with a pink bill.": (1, -1, 0),
    "black-footed albatross, with long wings.": (1, 0, 0.3),
    "laysan albatross, with a heavy body.": (1, 0, 0.3),
    "wren, with short wings.": (0, 0, 1),
    "wren, with a tiny body.": (0, 0, 1),
}
prefixes = load_prefixes()


def embed(text):
    # the prefix carries no signal in this toy encoder
    low = text.lower()
    for p in sorted(prefixes, key=len, reverse=True):
        if low.startswith(p + " "):
            return np.asarray(vectors[text[len(p) + 1:]], dtype=np.float32)
    raise KeyError(text)


classes = [ClassEntry("bf", "black-footed albatross"), ClassEntry("ls", "laysan albatross"), ClassEntry("wren", "wren")]
rec = lambda a, x, y: render_records([DifferentialRecord(a, "A photo of a " + x, "A photo of a " + y)])
pairs = {
    ("black-footed albatross", "laysan albatross"): rec("Bill color", "black-footed albatross, with a dark bill.",
                                                        "laysan albatross, with a pink bill."),
    ("black-footed albatross", "wren"): rec("Wing shape", "black-footed albatross, with long wings.",
                                            "wren, with short wings."),
    ("laysan albatross", "wren"): rec("Body size", "laysan albatross, with a heavy body.", "wren, with a tiny body."),
}

root = Path(tempfile.mkdtemp())
imgs = {"bf": (1, 0.5, 0), "ls": (1, -0.5, 0), "wren": (0.1, 0, 1)}
write_matrix(EmbeddingMatrix.from_dict(imgs), root / "images.emb")
manifest = DatasetManifest("toy", classes, "images.emb", {"bf": "bf", "ls": "ls", "wren": "wren"}, root)
gw = Gateway(classes, FixtureBackend(pairs), PairCache(root / "cache"))

# %%
reports = sweep_k(manifest, [1, 2, 3], embed, gateway=gw)
print(format_table(reports))
print(plot_data(reports))

# %%
# For the albatross pair, the non-differential arm can only use the wing and
# body captions, which point the same way for both species.
diff, non_diff = ablation_non_differential(manifest, 2, embed, gateway=gw, prefixes=prefixes)
print(format_table([diff, non_diff]))
