import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fudd.catalog import (
    ClassEntry,
    DatasetManifest,
    Description,
    ManifestError,
    Source,
    load_manifest,
    load_templates,
    naive_llm_prompt,
    parse_naive_response,
    save_manifest,
    single_template,
    template_set,
    validate_manifest,
)
from fudd.vectors import EmbeddingMatrix, write_matrix

names = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1)


@pytest.mark.parametrize(
    "name, text",
    [
        ("sparrow", "A photo of a sparrow."),
        ("black-footed albatross", "A photo of a black-footed albatross."),
        ("x", "A photo of a x."),
    ],
)
def test_single_template(name, text):
    d = single_template(name)
    assert d.text == text
    assert d.source is Source.SINGLE_TEMPLATE
    assert d.attribute is None


def test_single_template_rejects_empty():
    with pytest.raises(ValueError):
        single_template("")


@given(names)
def test_single_template_shape(name):
    t = single_template(name).text
    assert t.startswith("A photo of a ") and t.endswith(".")


def test_template_set():
    out = template_set("dog", ["A photo of a {}.", "An image of a {}."])
    assert [d.text for d in out] == ["A photo of a dog.", "An image of a dog."]
    assert all(d.source is Source.TEMPLATE_SET for d in out)
    assert template_set("dog", []) == []


def test_packaged_templates_are_eighty():
    templates = load_templates()
    assert len(templates) == 80
    out = template_set("sparrow", templates)
    assert [d.text for d in out] == [t.replace("{}", "sparrow") for t in templates]


@pytest.mark.parametrize("bad", ["no placeholder", "{} and {}"])
def test_template_set_placeholder_errors(bad):
    with pytest.raises(ValueError):
        template_set("dog", [bad])


@given(names, st.lists(st.tuples(st.text(), st.text()), max_size=5))
def test_template_substitution_only_touches_placeholder(name, parts):
    templates = [f"{a.replace('{}', '')}{{}}{b.replace('{}', '')}" for a, b in parts]
    out = template_set(name, templates)
    assert len(out) == len(templates)
    for t, d in zip(templates, out):
        head, tail = t.split("{}")
        assert d.text == head + name + tail


def test_naive_prompt():
    p = naive_llm_prompt("lemur")
    assert p.final_user_message == "What are useful features for distinguishing a lemur in a photo?"
    assert naive_llm_prompt("sparrow").final_user_message.endswith("a sparrow in a photo?")
    examples = [{"name": "a", "response": "- x"}, {"name": "b", "response": "- y"}]
    roles = [r for r, _ in naive_llm_prompt("lemur", examples).messages]
    assert roles == ["user", "assistant", "user", "assistant", "user"]
    with pytest.raises(ValueError):
        naive_llm_prompt("")


def test_parse_naive_response():
    out = parse_naive_response("lemur", "Here you go:\n- long ringed tail\n* large eyes.\n1. grey fur\nnot a bullet\n- large eyes")
    assert [d.text for d in out] == [
        "lemur, which (is/has/etc) long ringed tail.",
        "lemur, which (is/has/etc) large eyes.",
        "lemur, which (is/has/etc) grey fur.",
    ]


def test_description_attribute_rules():
    with pytest.raises(ValueError):
        Description("A photo of a x.", Source.DIFFERENTIAL)
    with pytest.raises(ValueError):
        Description("A photo of a x.", Source.SINGLE_TEMPLATE, "color")
    with pytest.raises(ValueError):
        Description("", Source.SINGLE_TEMPLATE)
    assert Description("x", "differential", "color").source is Source.DIFFERENTIAL


def _toy_manifest(root, n_classes=3, per_class=2):
    classes = [ClassEntry(f"c{i}", f"class {i}", (single_template(f"class {i}"),)) for i in range(n_classes)]
    labels = {f"img{c}_{j}": f"c{c}" for c in range(n_classes) for j in range(per_class)}
    rng = np.random.default_rng(0)
    write_matrix(EmbeddingMatrix(rng.standard_normal((len(labels), 4)), tuple(sorted(labels))), root / "images.emb")
    m = DatasetManifest("toy", classes, "images.emb", labels, root)
    save_manifest(m, root / "manifest.json")
    return m


def test_load_manifest_round_trip(tmp_path):
    _toy_manifest(tmp_path)
    m = load_manifest(tmp_path / "manifest.json")
    assert len(m.classes) == 3 and len(m.labels) == 6
    assert validate_manifest(m) == []
    assert m.classes[0].descriptions[0].text == "A photo of a class 0."
    assert len(m.load_images()) == 6


def test_unknown_class_is_reported(tmp_path):
    m = _toy_manifest(tmp_path)
    m.labels["img0_0"] = "zzz"
    problems = validate_manifest(m)
    assert [(p.kind, p.subject) for p in problems] == [("unknown_class", "img0_0")]
    assert "zzz" in problems[0].detail


def test_load_manifest_raises_with_all_violations(tmp_path):
    _toy_manifest(tmp_path)
    obj = json.loads((tmp_path / "manifest.json").read_text())
    obj["labels"]["img0_0"] = "zzz"
    obj["labels"]["ghost"] = "c1"
    (tmp_path / "manifest.json").write_text(json.dumps(obj))
    with pytest.raises(ManifestError) as err:
        load_manifest(tmp_path / "manifest.json")
    assert {v.kind for v in err.value.violations} == {"unknown_class", "dangling_image"}


def test_validation_touches_every_label(tmp_path):
    m = _toy_manifest(tmp_path, n_classes=10, per_class=10)
    assert len(m.labels) == 100 and validate_manifest(m) == []
    # every label is checked: corrupt all of them and expect 100 reports
    for k in m.labels:
        m.labels[k] = "nope"
    assert len(validate_manifest(m)) == 100


MUTATIONS = {
    "duplicate_class_id": lambda m: m.classes.append(ClassEntry("c0", "again")),
    "empty_class_id": lambda m: m.classes.append(ClassEntry("", "nameless")),
    "empty_display_name": lambda m: m.classes.append(ClassEntry("c9", "")),
    "reserved_separator": lambda m: m.classes.append(ClassEntry("a||b", "sep")),
    "unknown_class": lambda m: m.labels.__setitem__("img1_0", "zzz"),
    "dangling_image": lambda m: m.labels.__setitem__("ghost", "c0"),
    "missing_embedding_file": lambda m: setattr(m, "image_embeddings", "absent.emb"),
}


@pytest.mark.parametrize("kind", sorted(MUTATIONS))
def test_mutation_yields_exactly_matching_violation(tmp_path, kind):
    m = _toy_manifest(tmp_path)
    MUTATIONS[kind](m)
    assert [p.kind for p in validate_manifest(m)] == [kind]


def test_unreadable_embedding_file(tmp_path):
    m = _toy_manifest(tmp_path)
    (tmp_path / "images.emb").write_bytes(b"garbage")
    assert [p.kind for p in validate_manifest(m)] == ["unreadable_embedding_file"]
