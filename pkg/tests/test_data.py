import logging
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acc_audio.audio import PIPELINE_RATE, read_wav
from acc_audio.data import (
    ManifestError,
    ManifestItem,
    SynthRecipe,
    balanced_counts,
    build_manifest,
    ccm_labels,
    corpus_combos,
    corpus_recipes,
    generate_corpus,
    load_manifest,
    split_train_val,
    synth_generate,
    write_manifest,
)
from acc_audio.dsp import featurize
from acc_audio.pipeline import CONTENT_CLASSES

HEADER = "path,action,content_class,container_id,split\n"


def manifest(tmp_path, body):
    path = tmp_path / "m.csv"
    path.write_text(HEADER + body)
    return path


def test_manifest_rejects_shaken_water(tmp_path):
    with pytest.raises(ManifestError, match=r"m\.csv:2:.*water"):
        load_manifest(manifest(tmp_path, "a.wav,shaking,water-full,c1,train\n"))


def test_manifest_accepts_unknown_empty(tmp_path):
    items = load_manifest(manifest(tmp_path, "b.wav,unknown,empty,c2,test\n"))
    assert items == [ManifestItem(tmp_path / "b.wav", "unknown", 0, "c2", "test")]


def test_manifest_empty_file_warns(tmp_path, caplog):
    path = tmp_path / "m.csv"
    path.write_text("")
    with caplog.at_level(logging.WARNING):
        assert load_manifest(path) == []
    assert "empty manifest" in caplog.text


def test_manifest_collects_line_numbers(tmp_path):
    body = "ok.wav,pouring,water-half,c1,train\nx.wav,unknown,rice-full,c1,train\ny.wav,stirring,empty,c1,train\nz.wav,pouring,3,c1,holdout\n"
    with pytest.raises(ManifestError) as err:
        load_manifest(manifest(tmp_path, body))
    lines = str(err.value).splitlines()
    assert [ln.split(":")[1] for ln in lines] == ["3", "4", "5"]


def test_manifest_unlabelled_and_indices(tmp_path):
    items = load_manifest(manifest(tmp_path, "sub/a.wav,,,,test\nb.wav,pouring,5,,val\n"))
    assert not items[0].labelled and items[0].path == tmp_path / "sub" / "a.wav"
    assert items[1].content_class == 5 and items[1].action_index == 1
    with pytest.raises(ManifestError, match="both"):
        load_manifest(manifest(tmp_path, "a.wav,pouring,,,train\n"))


def test_manifest_roundtrip(tmp_path):
    items = [
        ManifestItem(tmp_path / "a.wav", "pouring", 6, "c3", "train"),
        ManifestItem(tmp_path / "d" / "b.wav", None, None, "", "test"),
    ]
    write_manifest(tmp_path / "out.csv", items)
    assert load_manifest(tmp_path / "out.csv") == items


def items_of(counts):
    out = []
    for (action, c), k in counts.items():
        out += [ManifestItem(f"{action}{c}_{j}.wav", action, c) for j in range(k)]
    return out


def test_split_ten_items():
    items = items_of({("pouring", 1): 10})
    train, val = split_train_val(items, 0.8, seed=3)
    assert len(train) == 8 and len(val) == 2
    assert split_train_val(items, 0.8, seed=3) == (train, val)


def test_split_training_set_size():
    combos = corpus_combos()
    items = items_of(balanced_counts(684, combos))
    train, val = split_train_val(items, 0.8, seed=0)
    assert len(train) + len(val) == 684
    assert abs(len(train) - 547) <= len(combos)
    per_class = Counter((it.action, it.content_class) for it in items)
    got = Counter((it.action, it.content_class) for it in train)
    for key, n in per_class.items():
        assert abs(got[key] - 0.8 * n) <= 1


def test_split_too_small_class():
    items = items_of({("pouring", 1): 5, ("shaking", 2): 1})
    with pytest.raises(ValueError, match="stratified=False"):
        split_train_val(items)
    train, val = split_train_val(items, stratified=False)
    assert len(train) + len(val) == 6


@settings(max_examples=60)
@given(
    st.integers(0, 2**32 - 1),
    st.floats(0.05, 0.95),
    st.lists(st.integers(2, 25), min_size=1, max_size=5),
    st.booleans(),
)
def test_split_partition_fuzz(seed, ratio, sizes, stratified):
    combos = corpus_combos()
    items = items_of({combos[i]: n for i, n in enumerate(sizes)})
    train, val = split_train_val(items, ratio, seed, stratified)
    assert sorted(map(id, train + val)) == sorted(map(id, items))
    assert not set(map(id, train)) & set(map(id, val))
    assert split_train_val(items, ratio, seed, stratified) == (train, val)
    if stratified:
        for key, n in Counter((it.action, it.content_class) for it in items).items():
            k = sum(1 for it in train if (it.action, it.content_class) == key)
            assert abs(k - ratio * n) <= 1


def test_synth_empty_is_quiet():
    clip = synth_generate(SynthRecipe(0, "unknown", seed=4))
    assert np.max(np.abs(clip.samples)) < 0.05
    assert clip.rate == PIPELINE_RATE and len(clip.samples) == 8 * PIPELINE_RATE


def test_synth_deterministic():
    r = SynthRecipe(CONTENT_CLASSES.index("rice-half"), "shaking", duration=3.0, seed=11, container=2)
    a, b = synth_generate(r), synth_generate(r)
    assert a.samples.tobytes() == b.samples.tobytes()
    other = synth_generate(SynthRecipe(r.content_class, r.action, 3.0, seed=12, container=2))
    assert other.samples.tobytes() != a.samples.tobytes()


def test_synth_recipe_invariants():
    with pytest.raises(ManifestError):
        SynthRecipe(CONTENT_CLASSES.index("water-full"), "shaking")
    with pytest.raises(ManifestError):
        SynthRecipe(2, "unknown")
    with pytest.raises(ValueError):
        SynthRecipe(1, "pouring", duration=0)


@given(st.integers(0, 300))
def test_corpus_counts_exact(total):
    counts = balanced_counts(total, corpus_combos())
    recipes = corpus_recipes(counts, seed=1, split="train", duration=1.0)
    assert Counter((r.action, r.content_class) for r in recipes) == Counter({k: v for k, v in counts.items() if v})
    assert sum(counts.values()) == total


def test_generate_corpus_manifest(tmp_path):
    path = generate_corpus(tmp_path, {"train": 11, "test": 4}, seed=2, duration=0.5)
    items = load_manifest(path)
    assert Counter(it.split for it in items) == {"train": 11, "test": 4}
    assert len({(it.action, it.content_class) for it in items if it.split == "train"}) == 11
    assert {it.container_id for it in items if it.split == "test"} <= {"c7", "c8"}
    clip = read_wav(items[0].path)
    assert clip.rate == PIPELINE_RATE and len(clip.samples) == PIPELINE_RATE // 2


def test_nearest_centroid_separates_corpus():
    """2000 clips: centroids from seen containers, scored on unseen ones."""
    combos = corpus_combos()
    feats, labels = {}, {}
    for split, total in (("train", 1600), ("test", 400)):
        recipes = corpus_recipes(balanced_counts(total, combos), seed=9, split=split)
        feats[split] = np.stack([featurize(synth_generate(r)).ravel() for r in recipes])
        labels[split] = np.array([r.content_class for r in recipes])
    centroids = np.stack([feats["train"][labels["train"] == c].mean(axis=0) for c in range(7)])
    dist = ((feats["test"][:, None, :] - centroids[None]) ** 2).sum(axis=2)
    acc = float(np.mean(dist.argmin(axis=1) == labels["test"]))
    assert acc >= 0.80, acc


def test_ccm_labels():
    assert ccm_labels("ccm/1/audio/s0_fi3_fu2_b1_l0.wav") == ("pouring", CONTENT_CLASSES.index("water-full"), "1", "train")
    assert ccm_labels("ccm/8/audio/s1_fi2_fu1_b0_l1.wav") == ("shaking", CONTENT_CLASSES.index("rice-half"), "8", "train")
    assert ccm_labels("ccm/4/audio/s2_fi0_fu0_b0_l0.wav") == ("unknown", 0, "4", "train")
    assert ccm_labels("ccm/12/audio/s0_fi3_fu2_b1_l0.wav") == (None, None, "12", "test")
    assert ccm_labels("ccm/4/audio/notes.wav") is None


def test_build_manifest(tmp_path):
    for rel in ("2/audio/s0_fi1_fu2_b0_l0.wav", "9/audio/s0_fi0_fu0_b0_l0.wav", "3/audio/junk.wav"):
        (tmp_path / "ccm" / rel).parent.mkdir(parents=True, exist_ok=True)
        (tmp_path / "ccm" / rel).write_bytes(b"")
    written, skipped = build_manifest(tmp_path / "ccm", tmp_path / "m.csv")
    assert (written, skipped) == (2, 1)
    items = load_manifest(tmp_path / "m.csv")
    assert {(it.action, it.content_class) for it in items} == {("pouring", 2), ("unknown", 0)}


@settings(max_examples=40)
@given(st.sampled_from(corpus_combos()), st.floats(0.0005, 0.3), st.integers(0, 2**31), st.integers(0, 8))
def test_synth_any_duration_is_finite(combo, duration, seed, container):
    action, content = combo
    clip = synth_generate(SynthRecipe(content, action, duration, seed, container))
    assert len(clip.samples) == max(0, int(round(duration * PIPELINE_RATE)))
    assert np.all(np.isfinite(clip.samples))
