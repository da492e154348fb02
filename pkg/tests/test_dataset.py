import json

import numpy as np
import pytest

from emofuse.dataset import (
    EMOTION_WORDS,
    REFERENCE_TAG_STATS,
    ClassPriors,
    Emotion,
    LabeledExample,
    Post,
    Rejection,
    assign_label,
    class_priors,
    filter_dataset,
    ingest,
    load_dataset,
    mean_image,
    parse_feature_file,
    prior_baseline_accuracy,
    reference_filtered_priors,
    remove_label_word,
    save_dataset,
    split,
)
from emofuse.embeddings import parse_embedding_file
from emofuse.errors import ParseError
from emofuse.synth import make_multimodal_corpus, make_noisy_corpus


def vocab_table(words):
    return parse_embedding_file([f"{w} 1.0 0.0" for w in words])


class TestEmotionOrder:
    def test_fixed_order(self):
        assert EMOTION_WORDS == (
            "happy", "calm", "sad", "scared", "bored", "angry", "annoyed", "love",
            "excited", "surprised", "optimistic", "amazed", "ashamed", "disgusted", "pensive",
        )
        assert int(Emotion.HAPPY) == 0
        assert int(Emotion.PENSIVE) == 14


class TestIngest:
    def test_valid_lines_keep_order(self):
        lines = [
            json.dumps({"id": "a", "text": "x", "tags": ["happy"]}),
            json.dumps({"id": "b", "text": "y", "tags": [], "feature_id": "f1"}),
            json.dumps({"id": "c", "text": "z", "tags": ["sad"], "timestamp": "2017-01-01"}),
        ]
        posts, errors = ingest(lines)
        assert [p.id for p in posts] == ["a", "b", "c"]
        assert errors == []

    def test_missing_tags_reported_with_line_number(self):
        lines = [
            json.dumps({"id": "a", "text": "x", "tags": ["happy"]}),
            json.dumps({"id": "b", "text": "y"}),
        ]
        posts, errors = ingest(lines)
        assert [p.id for p in posts] == ["a"]
        assert errors == [(2, "missing field 'tags'")]

    def test_bad_json_and_duplicates_reported(self):
        lines = [
            json.dumps({"id": "a", "text": "x", "tags": []}),
            "{not json",
            json.dumps({"id": "a", "text": "again", "tags": []}),
        ]
        posts, errors = ingest(lines)
        assert len(posts) == 1
        assert [lineno for lineno, _ in errors] == [2, 3]

    def test_large_synthetic_file_matches_line_count_oracle(self):
        rng = np.random.default_rng(20)
        lines = []
        bad = 0
        for i in range(10_000):
            if rng.random() < 0.03:
                lines.append("oops")
                bad += 1
            else:
                lines.append(json.dumps({"id": f"p{i}", "text": "t", "tags": ["happy"]}))
        posts, errors = ingest(lines)
        assert len(posts) == len(lines) - bad
        assert len(errors) == bad


class TestAssignLabel:
    def test_single_emotion_tag(self):
        assert assign_label(Post("1", "", ["happy", "travel"])) == Emotion.HAPPY

    def test_case_insensitive(self):
        assert assign_label(Post("1", "", ["HaPpY"])) == Emotion.HAPPY

    def test_two_emotions_rejected(self):
        result = assign_label(Post("1", "", ["happy", "sad"]))
        assert isinstance(result, Rejection)
        assert result.reason == "multiple-emotions"

    def test_no_emotion_rejected(self):
        result = assign_label(Post("1", "", ["vacation"]))
        assert isinstance(result, Rejection)
        assert result.reason == "no-emotion"

    def test_repeated_same_emotion_is_single(self):
        assert assign_label(Post("1", "", ["happy", "HAPPY"])) == Emotion.HAPPY


class TestRemoveLabelWord:
    def test_basic(self):
        assert remove_label_word("so happy today", Emotion.HAPPY) == "so today"

    def test_case_insensitive_all_occurrences(self):
        assert remove_label_word("Happy HAPPY joy", Emotion.HAPPY) == "joy"

    def test_substring_untouched(self):
        assert remove_label_word("happiness is real", Emotion.HAPPY) == "happiness is real"

    def test_other_token_count_preserved(self):
        rng = np.random.default_rng(21)
        words = ["alpha", "beta", "gamma", "sad"]
        for _ in range(25):
            text = " ".join(rng.choice(words, size=rng.integers(0, 12)))
            out = remove_label_word(text, Emotion.SAD)
            assert out.split() == [w for w in text.split() if w != "sad"]


class TestFilterDataset:
    def test_post_without_image_dropped_at_image_stage(self):
        table = vocab_table(["hello", "there"])
        posts = [Post("1", "hello there", ["happy"])]
        kept, report = filter_dataset(posts, table)
        assert kept == []
        assert report.dropped["no_image"] == 1

    def test_clean_post_retained(self):
        table = vocab_table(["hello", "there"])
        features = {"f1": np.array([0.5, 0.5])}
        posts = [Post("1", "hello there", ["happy"], feature_id="f1")]
        kept, report = filter_dataset(posts, table, features=features)
        assert len(kept) == 1
        assert kept[0].label == Emotion.HAPPY
        assert kept[0].tokens == ["hello", "there"]
        assert report.kept == 1

    def test_exactly_half_english_kept(self):
        table = vocab_table(["aa", "bb"])
        features = {"f1": np.array([1.0])}
        posts = [Post("1", "aa bb zz qq", ["happy"], feature_id="f1")]
        kept, _ = filter_dataset(posts, table, features=features)
        assert len(kept) == 1

    def test_under_half_english_dropped(self):
        table = vocab_table(["aa"])
        features = {"f1": np.array([1.0])}
        posts = [Post("1", "aa zz qq", ["happy"], feature_id="f1")]
        kept, report = filter_dataset(posts, table, features=features)
        assert kept == []
        assert report.dropped["non_english"] == 1

    def test_label_word_removed_before_english_test(self):
        # after stripping the label word the remaining text is fully in-vocab
        table = vocab_table(["nice", "day"])
        features = {"f1": np.array([1.0])}
        posts = [Post("1", "happy happy nice day", ["happy"], feature_id="f1")]
        kept, _ = filter_dataset(posts, table, features=features)
        assert len(kept) == 1
        assert kept[0].tokens == ["nice", "day"]

    def test_planted_drop_counts(self):
        posts, features, table, plan = make_noisy_corpus(seed=3, n_clean=40)
        kept, report = filter_dataset(posts, table, features=features)
        assert report.total_posts == len(posts)
        assert report.dropped["no_emotion"] == plan["no_emotion"]
        assert report.dropped["multiple_emotions"] == plan["multiple_emotions"]
        assert report.dropped["non_english"] == plan["non_english"]
        assert report.dropped["no_image"] == plan["no_image"]
        assert report.kept == len(posts) - sum(plan.values())
        assert len(kept) == report.kept

    def test_stage_order_is_fixed_for_multi_fault_posts(self):
        # label faults are counted before english faults, english before image
        table = vocab_table(["aa", "bb"])
        posts = [
            Post("1", "zz qq", ["happy", "sad"]),      # label + english + image faults
            Post("2", "zz qq", ["happy"]),             # english + image faults
            Post("3", "aa bb", ["happy"]),             # image fault only
        ]
        _, report = filter_dataset(posts, table)
        assert report.dropped == {
            "no_emotion": 0,
            "multiple_emotions": 1,
            "non_english": 1,
            "no_image": 1,
        }

    def test_idempotent_on_own_output(self):
        posts, features, table, _ = make_noisy_corpus(seed=4, n_clean=40)
        kept, _ = filter_dataset(posts, table, features=features)
        rebuilt = [
            Post(ex.id, " ".join(ex.tokens), [ex.label.word], feature_id=ex.feature_id)
            for ex in kept
        ]
        kept2, report2 = filter_dataset(rebuilt, table, features=features)
        assert len(kept2) == len(kept)
        assert sum(report2.dropped.values()) == 0
        for a, b in zip(kept, kept2):
            assert a.id == b.id
            assert a.tokens == b.tokens
            assert np.array_equal(a.embedded_text.vectors, b.embedded_text.vectors)


class TestPriors:
    def test_even_two_class(self):
        table = vocab_table(["w"])
        examples = []
        for i in range(10):
            examples.append(_example(f"h{i}", Emotion.HAPPY))
            examples.append(_example(f"s{i}", Emotion.SAD))
        priors = class_priors(examples)
        assert priors.proportions[int(Emotion.HAPPY)] == 0.5
        assert priors.proportions[int(Emotion.SAD)] == 0.5

    def test_degenerate_single_class(self):
        priors = class_priors([_example("a", Emotion.LOVE)])
        assert priors.proportions[int(Emotion.LOVE)] == 1.0
        assert prior_baseline_accuracy(priors) == 1.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            class_priors([])

    def test_proportions_sum_to_one(self):
        rng = np.random.default_rng(22)
        examples = [_example(str(i), Emotion(int(rng.integers(15)))) for i in range(200)]
        assert abs(class_priors(examples).proportions.sum() - 1.0) < 1e-12

    def test_reference_priors_match_arithmetic_oracle(self):
        # independent recomputation from the published per-tag statistics
        counts = {e: posts * frac for e, (posts, _t, frac) in REFERENCE_TAG_STATS.items()}
        total = sum(counts.values())
        priors = reference_filtered_priors()
        for emotion, count in counts.items():
            assert abs(priors.proportions[int(emotion)] - count / total) < 1e-12
        assert abs(priors.proportions[int(Emotion.HAPPY)] - 0.214) < 2e-3

    def test_uniform_baseline(self):
        uniform = ClassPriors(np.ones(15), np.full(15, 1.0 / 15.0))
        assert abs(prior_baseline_accuracy(uniform) - 1.0 / 15.0) < 1e-12

    def test_reference_baseline_near_11_percent(self):
        assert abs(prior_baseline_accuracy(reference_filtered_priors()) - 0.11) <= 0.01

    def test_baseline_minimized_at_uniform(self):
        rng = np.random.default_rng(23)
        for _ in range(50):
            p = rng.dirichlet(np.ones(15))
            assert prior_baseline_accuracy(ClassPriors(p * 100, p)) >= 1.0 / 15.0 - 1e-12


def _example(ex_id, label, image=None):
    from emofuse.embeddings import EmbeddedSequence

    image = np.array([0.5]) if image is None else image
    return LabeledExample(ex_id, EmbeddedSequence(np.zeros((4, 2)), 0), image, label)


class TestMeanImage:
    def test_single_image_is_itself(self):
        img = np.random.default_rng(24).uniform(size=(4, 4, 3))
        assert np.array_equal(mean_image([_example("a", Emotion.HAPPY, img)]), img)

    def test_two_constant_images(self):
        zeros = np.zeros((2, 2, 3))
        ones = np.ones((2, 2, 3))
        out = mean_image([_example("a", Emotion.HAPPY, zeros), _example("b", Emotion.SAD, ones)])
        assert np.array_equal(out, np.full((2, 2, 3), 0.5))

    def test_matches_accumulate_and_divide_oracle(self):
        rng = np.random.default_rng(25)
        images = [rng.uniform(size=(3, 5, 3)) for _ in range(10)]
        examples = [_example(str(i), Emotion.HAPPY, img) for i, img in enumerate(images)]
        acc = np.zeros((3, 5, 3))
        for img in images:
            acc += img
        assert np.max(np.abs(mean_image(examples) - acc / 10.0)) < 1e-12

    def test_mixed_dataset_rejected(self):
        examples = [
            _example("a", Emotion.HAPPY, np.zeros((2, 2, 3))),
            _example("b", Emotion.SAD, np.array([1.0, 2.0])),
        ]
        with pytest.raises(ValueError):
            mean_image(examples)


class TestSplit:
    def _examples(self, per_class=10, classes=4):
        return [
            _example(f"e{c}_{i}", Emotion(c)) for c in range(classes) for i in range(per_class)
        ]

    def test_deterministic(self):
        examples = self._examples(per_class=25)  # 100 examples
        a_train, a_test = split(examples, 0.2, seed=7)
        b_train, b_test = split(examples, 0.2, seed=7)
        assert (len(a_train), len(a_test)) == (80, 20)
        assert [e.id for e in a_train] == [e.id for e in b_train]
        assert [e.id for e in a_test] == [e.id for e in b_test]

    def test_stratified_counts(self):
        train, test = split(self._examples(per_class=10), 0.2, seed=1)
        assert len(test) == 8
        per_class = {c: 0 for c in range(4)}
        for ex in test:
            per_class[int(ex.label)] += 1
        assert all(v == 2 for v in per_class.values())

    def test_partition_by_id(self):
        examples = self._examples(per_class=7, classes=3)
        train, test = split(examples, 0.3, seed=2)
        train_ids = {e.id for e in train}
        test_ids = {e.id for e in test}
        assert train_ids.isdisjoint(test_ids)
        assert train_ids | test_ids == {e.id for e in examples}

    def test_tiny_class_goes_to_train_with_warning(self):
        examples = self._examples(per_class=10, classes=2) + [_example("solo", Emotion.PENSIVE)]
        with pytest.warns(UserWarning, match="pensive"):
            train, test = split(examples, 0.2, seed=3)
        assert any(e.id == "solo" for e in train)
        assert all(e.id != "solo" for e in test)

    def test_bad_fraction_rejected(self):
        with pytest.raises(ValueError):
            split(self._examples(), 0.0, seed=0)
        with pytest.raises(ValueError):
            split(self._examples(), 1.0, seed=0)


class TestDatasetFiles:
    def test_save_load_round_trip(self, tmp_path):
        corpus = make_multimodal_corpus(n_per_class=4, seed=5)
        examples, _ = filter_dataset(
            corpus.posts, corpus.table, features=corpus.features, max_len=8
        )
        path = tmp_path / "dataset.jsonl"
        save_dataset(examples, path)
        loaded = load_dataset(path, corpus.table, features=corpus.features, max_len=8)
        assert len(loaded) == len(examples)
        for a, b in zip(examples, loaded):
            assert a.id == b.id
            assert a.label == b.label
            assert a.tokens == b.tokens
            assert np.array_equal(a.embedded_text.vectors, b.embedded_text.vectors)
            assert np.array_equal(a.image_input, b.image_input)

    def test_feature_file_parser(self):
        features = parse_feature_file(["f1 1.0 2.0", "f2 3.0 4.0"])
        assert np.array_equal(features["f1"], [1.0, 2.0])
        with pytest.raises(ParseError, match="line 2"):
            parse_feature_file(["f1 1.0 2.0", "f2 3.0"])


class TestReadImage:
    def test_npy_round_trip(self, tmp_path):
        from emofuse.dataset import read_image

        rng = np.random.default_rng(60)
        img = rng.uniform(size=(6, 5, 3))
        path = tmp_path / "img.npy"
        np.save(path, img)
        assert np.array_equal(read_image(path), img)

    def test_npy_uint8_scaled(self, tmp_path):
        from emofuse.dataset import read_image

        img = np.arange(4 * 4 * 3, dtype=np.uint8).reshape(4, 4, 3)
        path = tmp_path / "img.npy"
        np.save(path, img)
        out = read_image(path)
        assert out.max() <= 1.0
        assert np.array_equal(out, img.astype(np.float64) / 255.0)

    def test_ppm_p6(self, tmp_path):
        from emofuse.dataset import read_image

        raster = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3)
        path = tmp_path / "img.ppm"
        with open(path, "wb") as fh:
            fh.write(b"P6\n# a comment\n3 2\n255\n")
            fh.write(raster.tobytes())
        out = read_image(path)
        assert out.shape == (2, 3, 3)
        assert np.array_equal(out, raster.astype(np.float64) / 255.0)

    def test_unsupported_extension(self, tmp_path):
        from emofuse.dataset import read_image

        with pytest.raises(ValueError):
            read_image(tmp_path / "img.jpeg")

    def test_ppm_wide_maxval_rejected(self, tmp_path):
        from emofuse.dataset import read_image

        path = tmp_path / "wide.ppm"
        with open(path, "wb") as fh:
            fh.write(b"P6\n2 2\n65535\n" + b"\x00" * 24)
        with pytest.raises(ValueError, match="maxval"):
            read_image(path)

    def test_filter_pipeline_with_pixel_loader(self, tmp_path):
        rng = np.random.default_rng(61)
        table = vocab_table(["sunny", "day"])
        img_path = tmp_path / "a.npy"
        np.save(img_path, rng.uniform(size=(4, 4, 3)))
        posts = [
            Post("1", "sunny day", ["happy"], image_path=str(img_path)),
            Post("2", "sunny day", ["happy"], image_path=str(tmp_path / "missing.npy")),
        ]
        from emofuse.dataset import read_image

        kept, report = filter_dataset(posts, table, load_pixels=read_image)
        assert [ex.id for ex in kept] == ["1"]
        assert kept[0].image_input.shape == (4, 4, 3)
        assert report.dropped["no_image"] == 1
