"""Zero-shot classification, link prediction, prompt tuning."""

import numpy as np
import pytest

from tagsum.adapt import (
    FewShotSplit,
    build_label_prompts,
    auc,
    evaluate_link_prediction,
    evaluate_node_classification,
    link_score,
    load_label_prompt_asset,
    make_few_shot_split,
    prompt_tune,
    save_label_prompt_asset,
    zero_shot_classify,
)
from tagsum.autodiff import Tensor
from tagsum.encoder import ParamStore, encode_graph_tensor
from tagsum.errors import ValidationError
from tagsum.graphs import rwr_sample, with_positional_encodings
from tagsum.losses import supervised_contrastive_loss_tensor
from tagsum.synthetic import CLASS_KEYWORDS

from conftest import TOY_ENCODER, TOY_SAMPLER


class TestZeroShotClassify:
    def test_exact_match_scores_one(self, label_prompts):
        cls, scores = zero_shot_classify(label_prompts.embeddings[2], label_prompts)
        assert cls == 2
        assert abs(scores[2] - 1.0) < 1e-12

    def test_orthogonal_ties_break_low(self, label_prompts):
        # Build a vector orthogonal to every label embedding.
        basis = label_prompts.embeddings
        vec = np.random.default_rng(0).normal(size=basis.shape[1])
        for row in basis:
            vec -= (vec @ row) * row / (row @ row)
        # Project out residual numerically, then verify scores all ~0.
        q, _ = np.linalg.qr(basis.T)
        vec = vec - q @ (q.T @ vec)
        cls, scores = zero_shot_classify(vec, label_prompts)
        assert np.all(np.abs(scores) < 1e-10)
        assert cls == 0

    def test_scale_invariance(self, label_prompts):
        rng = np.random.default_rng(1)
        vec = rng.normal(size=label_prompts.embeddings.shape[1])
        cls1, _ = zero_shot_classify(vec, label_prompts)
        cls2, _ = zero_shot_classify(vec * 37.5, label_prompts)
        assert cls1 == cls2

    def test_rotation_invariance(self, label_prompts):
        rng = np.random.default_rng(2)
        dim = label_prompts.embeddings.shape[1]
        q, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
        vec = rng.normal(size=dim)
        cls1, scores1 = zero_shot_classify(vec, label_prompts)
        # rotate embeddings and the query by the same orthogonal map
        from tagsum.adapt import LabelPromptSet

        rotated_set = LabelPromptSet(
            label_prompts.class_names, label_prompts.sentences,
            label_prompts.embeddings @ q)
        cls2, scores2 = zero_shot_classify(vec @ q, rotated_set)
        assert cls1 == cls2
        np.testing.assert_allclose(scores1, scores2, atol=1e-10)

    def test_empty_label_set(self):
        from tagsum.adapt import LabelPromptSet

        empty = LabelPromptSet((), (), np.zeros((0, 3)))
        with pytest.raises(ValidationError):
            zero_shot_classify(np.ones(3), empty)


class TestPromptIndexMap:
    def test_reordered_class_names_translate(self, text_encoder):
        # Graph loaders sort class names; the prompt asset may list them in
        # any order. Ids must join through names.
        from tagsum.adapt import prompt_index_map
        from tagsum.graphs import TextAttributedGraph

        graph = TextAttributedGraph.from_edges(
            3, [(0, 1)], ["a", "b", "c"],
            labels=np.array([0, 1, 2]),
            class_names=("alpha", "beta", "gamma"))
        prompts = build_label_prompts(["gamma", "alpha", "beta"],
                                      ["", "", ""], "{class} {class_desc}",
                                      text_encoder)
        mapping = prompt_index_map(graph, prompts)
        assert mapping.tolist() == [1, 2, 0]

    def test_missing_name_raises(self, text_encoder):
        from tagsum.adapt import prompt_index_map
        from tagsum.graphs import TextAttributedGraph

        graph = TextAttributedGraph.from_edges(
            2, [(0, 1)], ["a", "b"],
            labels=np.array([0, 1]), class_names=("alpha", "zeta"))
        prompts = build_label_prompts(["alpha", "beta"], ["", ""],
                                      "{class} {class_desc}", text_encoder)
        with pytest.raises(ValidationError) as err:
            prompt_index_map(graph, prompts)
        assert "zeta" in str(err.value)


class TestLabelAssets:
    def test_round_trip(self, tmp_path, text_encoder):
        path = tmp_path / "labels.json"
        save_label_prompt_asset(path, "{class} {class_desc}",
                                ["alpha", "beta"], ["first", "second"])
        prompts = load_label_prompt_asset(path, text_encoder)
        assert prompts.class_names == ("alpha", "beta")
        assert prompts.sentences[0] == "alpha first"

    def test_gapped_ids_rejected(self, tmp_path, text_encoder):
        path = tmp_path / "labels.json"
        path.write_text(
            '{"template": "{class} {class_desc}", "classes": ['
            '{"id": 0, "name": "a", "description": ""},'
            '{"id": 2, "name": "b", "description": ""}]}')
        with pytest.raises(ValidationError):
            load_label_prompt_asset(path, text_encoder)


def brute_force_auc(scores, truth):
    scores = np.asarray(scores)
    truth = np.asarray(truth, dtype=bool)
    pos = scores[truth]
    neg = scores[~truth]
    total = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                total += 1.0
            elif p == n:
                total += 0.5
    return total / (len(pos) * len(neg))


class TestAuc:
    def test_example_three_quarters(self):
        value = auc([0.9, 0.8, 0.3, 0.1], [True, False, True, False])
        assert value == 0.75

    def test_perfect_separation(self):
        assert auc([0.9, 0.8, 0.2, 0.1], [True, True, False, False]) == 1.0

    def test_all_ties_half(self):
        assert auc([0.5, 0.5, 0.5, 0.5], [True, False, True, False]) == 0.5

    def test_single_class_rejected(self):
        with pytest.raises(ValidationError):
            auc([0.1, 0.2], [True, True])

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(0)
        for trial in range(300):
            n = int(rng.integers(2, 200))
            # coarse grid scores force plenty of exact ties
            scores = rng.integers(0, 12, size=n) / 11.0
            truth = rng.random(n) < 0.5
            if truth.all() or not truth.any():
                continue
            assert auc(scores, truth) == pytest.approx(
                brute_force_auc(scores, truth), abs=1e-12)


class TestLinkScore:
    def test_cosine_range(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a, b = rng.normal(size=5), rng.normal(size=5)
            assert -1.0 <= link_score(a, b) <= 1.0

    def test_identical_vectors(self):
        v = np.array([0.3, 0.4])
        assert link_score(v, v) == pytest.approx(1.0)


class TestFewShotSplit:
    def test_exact_shots_per_class(self, target_graph):
        split = make_few_shot_split(target_graph, shots=5, seed=0)
        labels = target_graph.labels
        for c in range(3):
            count = sum(1 for i in split.train_ids if labels[i] == c)
            assert count == 5
        assert not set(split.train_ids) & set(split.test_ids)

    def test_zero_shots_rejected(self, target_graph):
        with pytest.raises(ValidationError):
            make_few_shot_split(target_graph, shots=0, seed=0)

    def test_overlap_rejected(self):
        with pytest.raises(ValidationError):
            FewShotSplit(shots=1, train_ids=(0, 1), test_ids=(1, 2), seed=0)


class TestNodeClassification:
    def test_trained_beats_chance_strongly(self, trained_model, target_graph,
                                           label_prompts):
        result = evaluate_node_classification(
            trained_model.store, TOY_ENCODER, target_graph, label_prompts,
            TOY_SAMPLER, num_runs=5, base_seed=0)
        assert result.mean > 0.9
        assert len(result.runs) == 5

    def test_random_init_near_chance(self, target_graph, label_prompts):
        store = ParamStore.initialize(TOY_ENCODER, seed=12345)
        result = evaluate_node_classification(
            store, TOY_ENCODER, target_graph, label_prompts,
            TOY_SAMPLER, num_runs=5, base_seed=0)
        assert abs(result.mean - 1 / 3) <= 0.15

    def test_deterministic_per_seed(self, trained_model, target_graph,
                                    label_prompts):
        kwargs = dict(test_fraction=0.2, num_runs=2, base_seed=7)
        a = evaluate_node_classification(trained_model.store, TOY_ENCODER,
                                         target_graph, label_prompts,
                                         TOY_SAMPLER, **kwargs)
        b = evaluate_node_classification(trained_model.store, TOY_ENCODER,
                                         target_graph, label_prompts,
                                         TOY_SAMPLER, **kwargs)
        assert [r.value for r in a.runs] == [r.value for r in b.runs]

    def test_default_test_fraction_is_20pct(self, trained_model, target_graph,
                                            label_prompts):
        import inspect

        sig = inspect.signature(evaluate_node_classification)
        assert sig.parameters["test_fraction"].default == 0.2

    def test_missing_class_in_prompts_rejected(self, trained_model, target_graph,
                                               text_encoder):
        partial = build_label_prompts(CLASS_KEYWORDS[:2], ["", ""],
                                      "{class} {class_desc}", text_encoder)
        with pytest.raises(ValidationError):
            evaluate_node_classification(trained_model.store, TOY_ENCODER,
                                         target_graph, partial, TOY_SAMPLER,
                                         num_runs=1)


class TestLinkPrediction:
    def test_trained_model_auc_high(self, trained_model, target_graph):
        result = evaluate_link_prediction(
            trained_model.store, TOY_ENCODER, target_graph, TOY_SAMPLER,
            test_fraction=0.1, num_runs=2, base_seed=0)
        assert result.mean > 0.6

    def test_default_fraction_half(self):
        import inspect

        sig = inspect.signature(evaluate_link_prediction)
        assert sig.parameters["test_fraction"].default == 0.5


class TestPromptTune:
    def test_towers_frozen_and_sigma_size(self, trained_model,
                                          shifted_target_graph, label_prompts,
                                          text_encoder):
        split = make_few_shot_split(shifted_target_graph, shots=5, seed=0)
        result = prompt_tune(trained_model.store, TOY_ENCODER,
                             shifted_target_graph, split, label_prompts,
                             epochs=10, sampler_cfg=TOY_SAMPLER,
                             text_encoder=text_encoder)
        assert result.towers_frozen
        assert result.prompt.values.shape == (TOY_ENCODER.text_dim,)

    def test_sigma_zero_matches_zero_shot_exactly(self, trained_model,
                                                  target_graph, label_prompts):
        # Epoch count 0 leaves sigma at its zero initialization.
        split = make_few_shot_split(target_graph, shots=5, seed=1)
        result = prompt_tune(trained_model.store, TOY_ENCODER, target_graph,
                             split, label_prompts, epochs=0,
                             sampler_cfg=TOY_SAMPLER)
        assert result.tuned_accuracy == result.zero_shot_accuracy
        np.testing.assert_array_equal(result.prompt.values,
                                      np.zeros(TOY_ENCODER.text_dim))

    def test_five_shot_never_reduces_mean_accuracy(self, trained_model,
                                                   shifted_target_graph,
                                                   label_prompts, text_encoder):
        zero_shot, tuned = [], []
        for seed in range(5):
            split = make_few_shot_split(shifted_target_graph, shots=5, seed=seed)
            result = prompt_tune(trained_model.store, TOY_ENCODER,
                                 shifted_target_graph, split, label_prompts,
                                 sampler_cfg=TOY_SAMPLER,
                                 text_encoder=text_encoder)
            zero_shot.append(result.zero_shot_accuracy)
            tuned.append(result.tuned_accuracy)
        assert np.mean(tuned) >= np.mean(zero_shot)

    def test_sigma_gradient_matches_finite_differences(self, trained_model,
                                                       target_graph,
                                                       label_prompts):
        split = make_few_shot_split(target_graph, shots=2, seed=0)
        subs = [with_positional_encodings(
            rwr_sample(target_graph, n, TOY_SAMPLER), TOY_ENCODER.positional_dim)
            for n in split.train_ids]
        labels = np.array([int(target_graph.labels[n]) for n in split.train_ids])
        store = trained_model.store

        def loss_at(sigma_values):
            import tagsum.autodiff as ad

            sigma = Tensor(sigma_values, requires_grad=True)
            rows = []
            for sub in subs:
                x = ad.add(Tensor(sub.features), sigma)
                out, _ = encode_graph_tensor(store, TOY_ENCODER, sub, x_input=x)
                rows.append(out)
            z = ad.concat(rows, axis=0)
            return supervised_contrastive_loss_tensor(
                z, labels, label_prompts.embeddings, 0.1), sigma

        base = np.zeros(TOY_ENCODER.text_dim)
        loss, sigma = loss_at(base)
        store.zero_grads()
        loss.backward()
        analytic = sigma.grad.copy()

        step = 1e-5
        numeric = np.zeros_like(base)
        for j in range(base.size):
            plus = base.copy(); plus[j] += step
            minus = base.copy(); minus[j] -= step
            numeric[j] = (loss_at(plus)[0].item() - loss_at(minus)[0].item()) / (2 * step)
        rel = np.abs(analytic - numeric) / (np.maximum(np.abs(analytic),
                                                       np.abs(numeric)) + 1e-5)
        assert rel.max() < 1e-4

    def test_rejects_featureless_graph(self, trained_model, label_prompts):
        from tagsum.synthetic import make_synthetic_tag

        bare = make_synthetic_tag(30, seed=5)
        split_source = make_synthetic_tag(30, seed=5)
        with pytest.raises(ValidationError):
            split = make_few_shot_split(split_source, shots=2, seed=0)
            prompt_tune(trained_model.store, TOY_ENCODER, bare, split,
                        label_prompts, epochs=1)
