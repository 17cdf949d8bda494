from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpoxvlm.data import vocab
from mpoxvlm.data.manifest import ManifestError, load_manifest, manifest_lines, save_manifest
from mpoxvlm.data.render import caption_for, caption_lexicon, render_image
from mpoxvlm.data.split import SplitError, split_targets
from mpoxvlm.data.synth import (
    ClinicalAttributes,
    GeneratorConfig,
    GeneratorError,
    bayes_accuracy,
    generate_attributes,
    generate_dataset,
)
from mpoxvlm.data.vqa import MPOX_OPTION, NON_MPOX_OPTION, QUESTION, build_vqa, lexicon_corpus
from mpoxvlm.fusion.tokenizer import TextTokenizer

SMALL = GeneratorConfig(n_total=140, image_size=16)


def test_vocab_tables():
    assert len([d for d in vocab.DISEASES if d != vocab.MPOX]) == 87
    assert vocab.MPOX not in range(87)
    assert len(vocab.STAGES) == 9
    assert set(vocab.FITZPATRICK) == set(range(7))
    assert set(vocab.BODY_PARTS) == set(range(12))
    assert set(vocab.MIMICS) <= set(vocab.DISEASES) - {vocab.MPOX}


def test_attribute_validation():
    ok = dict(patient_id=0, fitzpatrick=3, body_part=2, age_group="adult",
              gender_presentation="male", disease_id=vocab.MPOX, stage=vocab.STAGES[0])
    ClinicalAttributes(**ok)
    for bad in ({"fitzpatrick": 7}, {"body_part": 12}, {"disease_id": 999}, {"stage": None},
                {"age_group": "elder"}, {"patient_id": -1}):
        with pytest.raises(GeneratorError):
            ClinicalAttributes(**{**ok, **bad})
    with pytest.raises(GeneratorError):
        ClinicalAttributes(**{**ok, "disease_id": 1})  # stage on a non-mpox sample


def test_config_validation():
    for bad in (dict(n_total=5), dict(mpox_fraction=1.0), dict(confound=1.5), dict(image_size=4),
                dict(split_ratios=(1, 1)), dict(test_pos_neg=(0, 7)), dict(n_mpox=0)):
        with pytest.raises(GeneratorError):
            GeneratorConfig(**bad).validate()
    with pytest.raises(GeneratorError):
        generate_attributes(SMALL, -1)


def test_source_counts():
    c = GeneratorConfig().source_counts()
    assert sum(c.values()) == 980
    assert c["mimic"] == round(0.3 * (980 - c["mpox"]))
    assert GeneratorConfig(n_total=100, n_mpox=40).source_counts()["mpox"] == 40


def test_generation_is_pure():
    a, b = generate_dataset(SMALL, 7), generate_dataset(SMALL, 7)
    assert manifest_lines(a) == manifest_lines(b)
    assert manifest_lines(a) != manifest_lines(generate_dataset(SMALL, 8))


def test_patients_share_label_and_split():
    m = generate_dataset(SMALL, 3)
    labels = {}
    for r in m.records:
        assert labels.setdefault(r.attrs.patient_id, r.label) == r.label
    assert all(len(s) == 1 for s in m.patient_splits().values())


def test_mimics_look_like_mpox():
    attrs = generate_attributes(GeneratorConfig(n_total=400, confound=1.0), 2)
    negatives = [a for a in attrs if not a.is_mpox]
    assert negatives and all(a.mpox_like for a in negatives)
    attrs = generate_attributes(GeneratorConfig(n_total=400, confound=0.0), 2)
    assert not any(a.mpox_like for a in attrs if not a.is_mpox)


def test_attributes_carry_information():
    attrs = generate_attributes(GeneratorConfig(), 1)
    config = GeneratorConfig()
    assert bayes_accuracy(attrs, config, use_attributes=True) > bayes_accuracy(attrs, config, use_attributes=False)


def test_render_deterministic_and_bounded():
    m = generate_dataset(SMALL, 1)
    r = m.records[0]
    a = render_image(r.attrs, r.gen_seed, 32)
    b = render_image(r.attrs, r.gen_seed, 32)
    assert a.shape == (32, 32, 3)
    assert np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1


def test_captions_use_lexicon():
    words = set(" ".join(caption_lexicon()).split())
    m = generate_dataset(SMALL, 1)
    for r in m.records:
        assert set(r.caption.split()) <= words
        assert r.caption == caption_for(r.attrs, r.gen_seed)


def test_vqa_instances():
    m = generate_dataset(SMALL, 1)
    for r in m.records:
        inst = r.vqa
        assert inst.question_text == QUESTION
        assert inst.options == (MPOX_OPTION, NON_MPOX_OPTION)
        assert inst.label == r.label
        assert inst.answer == (MPOX_OPTION if r.label else NON_MPOX_OPTION)
        assert "stage" not in inst.context_text


def test_lexicon_covers_all_text():
    tok = TextTokenizer.from_corpus(lexicon_corpus())
    m = generate_dataset(SMALL, 4)
    for r in m.records:
        for text in (r.caption, r.vqa.context_text, r.vqa.question_text):
            assert not any(tok.is_byte(i) for i in tok.encode(text))


def test_manifest_round_trip(tmp_path):
    m = generate_dataset(SMALL, 1)
    save_manifest(m, tmp_path)
    back = load_manifest(tmp_path)
    assert manifest_lines(back) == manifest_lines(m)
    assert back.counts == m.counts


def test_manifest_rejects_bad_schema(tmp_path):
    save_manifest(generate_dataset(SMALL, 1), tmp_path, render=False)
    with pytest.raises(ManifestError):
        load_manifest(tmp_path)  # images were not written
    text = (tmp_path / "generator.json").read_text().replace('"schema_version": 1', '"schema_version": 9')
    (tmp_path / "generator.json").write_text(text)
    with pytest.raises(ManifestError):
        load_manifest(tmp_path, check_images=False)


def test_manifest_rejects_malformed_line(tmp_path):
    save_manifest(generate_dataset(SMALL, 1), tmp_path, render=False)
    with open(tmp_path / "manifest.jsonl", "a") as f:
        f.write("{not json\n")
    with pytest.raises(ManifestError, match="line"):
        load_manifest(tmp_path, check_images=False)


def test_split_targets_infeasible():
    with pytest.raises(SplitError):
        split_targets(100, 2, (5, 1, 1), (4, 7))
    with pytest.raises(SplitError):
        split_targets(100, 40, (5, 1), (4, 7))


@settings(max_examples=15, deadline=None)
@given(
    n_total=st.integers(300, 900),
    frac=st.floats(0.3, 0.45),
    confound=st.floats(0.0, 1.0),
    seed=st.integers(0, 10_000),
)
def test_split_contract(n_total, frac, confound, seed):
    config = GeneratorConfig(n_total=n_total, mpox_fraction=frac, confound=confound)
    m = generate_dataset(config, seed)
    sizes = Counter(r.attrs.patient_id for r in m.records)
    biggest = max(sizes.values())
    assert all(len(s) == 1 for s in m.patient_splits().values())
    for i, name in enumerate(("train", "val", "test")):
        want = n_total * (5, 1, 1)[i] / 7
        assert abs(m.counts[name]["total"] - want) <= biggest
    test = m.counts["test"]
    pos, neg = test["mpox"], test["total"] - test["mpox"]
    assert abs(pos / neg - 4 / 7) / (4 / 7) <= 0.02
