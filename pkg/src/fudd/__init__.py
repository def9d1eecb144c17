"""Follow-up differential descriptions for zero-shot classification with
vision-language embeddings."""

from .catalog import ClassEntry, DatasetManifest, Description, Source, load_manifest, single_template, template_set
from .classifier import ClassEmbeddingTable, ambiguous_set, build_table, class_embedding, predict
from .diffgen import (
    DifferentialRecord,
    PairwiseDescriptions,
    assemble_differential_set,
    attribute_similar,
    augment_descriptions,
    build_pair_prompt,
    non_differential_set,
    parse_differential_response,
)
from .gateway import FixtureBackend, Gateway, HTTPChatBackend, PairCache, estimate_cost, get_or_generate_pair
from .pipeline import EvalReport, Method, evaluate, fudd_classify, sweep_k, ablation_non_differential
from .vectors import EmbeddingMatrix, cosine, mean_embedding, read_matrix, write_matrix

__version__ = "0.1.0"
