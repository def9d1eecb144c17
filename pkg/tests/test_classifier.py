import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fudd.catalog import ClassEntry, Description, Source, single_template
from fudd.classifier import (
    ClassEmbeddingTable,
    EmbedderError,
    ambiguous_set,
    build_table,
    class_embedding,
    load_table,
    predict,
    save_table,
)
from fudd.vectors import DimensionMismatchError
from oracles import argmax_ref, best_subset_ref

VECS = {"a": (1.0, 0.0), "b": (0.0, 1.0), "c": (1.0, 1.0), "d": (3.0, 0.0)}


def emb(text):
    return np.asarray(VECS[text], dtype=np.float32)


def entry(*texts):
    return ClassEntry("x", "x", tuple(Description(t, Source.TEMPLATE_SET) for t in texts))


def test_class_embedding_singleton_and_mean():
    np.testing.assert_array_equal(class_embedding(entry("a"), emb), emb("a"))
    np.testing.assert_array_equal(class_embedding(entry("a", "b"), emb), [0.5, 0.5])


def test_class_embedding_weights_by_multiplicity():
    # (a + d)/2 = (2, 0) vs (a + a + d)/3 = (5/3, 0)
    once = class_embedding(entry("a", "d"), emb)
    twice = class_embedding(entry("a", "a", "d"), emb)
    np.testing.assert_allclose(once, [2.0, 0.0])
    np.testing.assert_allclose(twice, [5 / 3, 0.0], rtol=1e-6)
    assert not np.array_equal(once, twice)


def test_class_embedding_order_invariant():
    a = class_embedding(entry("c", "a", "d", "b"), emb)
    b = class_embedding(entry("b", "d", "a", "c"), emb)
    assert a.tobytes() == b.tobytes()


def test_class_embedding_names_failing_description():
    with pytest.raises(EmbedderError, match="'zz'"):
        class_embedding(entry("a", "zz"), emb)
    with pytest.raises(ValueError):
        class_embedding(ClassEntry("x", "x"), emb)


def table(mapping):
    return ClassEmbeddingTable.from_mapping({k: np.asarray(v, dtype=np.float32) for k, v in mapping.items()})


def test_predict_self_similarity():
    t = table({"a": (1, 0, 0), "b": (0, 1, 0), "c": (0, 0, 1)})
    label, s = predict(t["b"], t)
    assert label == "b" and s["b"] == pytest.approx(1.0)
    assert set(s) == {"a", "b", "c"}


def test_predict_tie_goes_to_smaller_id():
    t = table({"zeta": (1, 1), "alpha": (1, 1), "mid": (-1, 0)})
    assert predict(np.array([1.0, 1.0]), t)[0] == "alpha"


def test_predict_dim_mismatch():
    with pytest.raises(DimensionMismatchError):
        predict(np.ones(3), table({"a": (1, 0)}))


def test_predict_matches_brute_force_oracle():
    rng = np.random.default_rng(12)
    classes = {f"class-{i:02d}": rng.standard_normal(8).astype(np.float32) for i in range(12)}
    t = ClassEmbeddingTable.from_mapping(classes)
    for _ in range(200):
        x = rng.standard_normal(8).astype(np.float32)
        assert predict(x, t)[0] == argmax_ref(x, classes)


def test_predict_scale_invariant():
    rng = np.random.default_rng(3)
    t = ClassEmbeddingTable.from_mapping({str(i): rng.standard_normal(5) for i in range(6)})
    x = rng.standard_normal(5).astype(np.float32)
    l1, s1 = predict(x, t)
    l2, s2 = predict(x * np.float32(37.5), t)
    assert l1 == l2
    for c in s1:
        assert s1[c] == pytest.approx(s2[c], abs=1e-6)


def test_ambiguous_set_extremes():
    t = table({"a": (1, 0), "b": (0.9, 0.1), "c": (0, 1)})
    x = np.array([1.0, 0.2])
    assert ambiguous_set(x, t, 1).members == (predict(x, t)[0],)
    assert set(ambiguous_set(x, t, 3).members) == {"a", "b", "c"}
    assert ambiguous_set(x, t, 10).members == ambiguous_set(x, t, 3).members
    with pytest.raises(ValueError):
        ambiguous_set(x, t, 0)


def test_ambiguous_set_oracle_small():
    rng = np.random.default_rng(5)
    for _ in range(300):
        n, d = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        classes = {f"c{i}": rng.standard_normal(d).astype(np.float32) for i in range(n)}
        k = int(rng.integers(1, n + 1))
        x = rng.standard_normal(d).astype(np.float32)
        got = ambiguous_set(x, ClassEmbeddingTable.from_mapping(classes), k)
        assert set(got.members) == best_subset_ref(x, classes, k)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 10), st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_ambiguous_set_prefix_monotone_and_top1(n, d, seed):
    rng = np.random.default_rng(seed)
    t = ClassEmbeddingTable.from_mapping({f"k{i}": rng.standard_normal(d) for i in range(n)})
    x = rng.standard_normal(d).astype(np.float32)
    full = ambiguous_set(x, t, n).members
    for k in range(1, n + 1):
        m = ambiguous_set(x, t, k).members
        assert m == full[:k]
        assert len(m) == len(set(m)) == min(k, n)
    assert full[0] == predict(x, t)[0]


def test_table_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    for trial in range(5):
        mapping = {f"id{rng.integers(1e6)}-{i}": rng.standard_normal(7) for i in range(int(rng.integers(1, 20)))}
        t = ClassEmbeddingTable.from_mapping(mapping)
        save_table(t, tmp_path / f"t{trial}.emb")
        back = load_table(tmp_path / f"t{trial}.emb")
        assert back.class_ids == t.class_ids == tuple(sorted(mapping))
        assert back.matrix.tobytes() == t.matrix.tobytes()


def test_build_table_rows_sorted_by_id():
    classes = [ClassEntry(cid, cid, (single_template(cid),)) for cid in ["b", "c", "a"]]
    t = build_table(classes, lambda s: np.array([len(s), 1.0]))
    assert t.class_ids == ("a", "b", "c")
