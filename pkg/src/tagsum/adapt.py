"""Zero-shot inference, link prediction, and graph prompt tuning.

Zero-shot classification embeds each class as a rendered label sentence and
picks the nearest one by cosine similarity (ties break to the lowest class
id). Link prediction scores an edge as the cosine of its endpoints'
subgraph embeddings, sampled after removing the scored edge so neither
endpoint sees it. Prompt tuning learns a single shared feature offset added
to every node feature, trained with a supervised contrastive loss against
label sentences while both towers stay frozen.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import GraphEncoderConfig, ParamStore, encode_graph, encode_graph_tensor
from .errors import ValidationError
from .graphs import (
    SamplerConfig,
    TextAttributedGraph,
    rwr_sample,
    with_positional_encodings,
)
from .losses import supervised_contrastive_loss_tensor
from .pretrain import AdamW, OptimizerConfig
from .prompts import render_label_sentence
from .textenc import Embedding

_MASK32 = (1 << 32) - 1


@dataclass(frozen=True)
class LabelPromptSet:
    """Rendered label sentences and their frozen-encoder embeddings."""

    class_names: tuple[str, ...]
    sentences: tuple[str, ...]
    embeddings: np.ndarray  # (C, d), unit rows

    def __post_init__(self):
        if len(self.class_names) != len(self.sentences):
            raise ValidationError("one sentence per class required")
        if self.embeddings.shape[0] != len(self.class_names):
            raise ValidationError("one embedding per class required")
        norms = np.linalg.norm(self.embeddings, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValidationError("label embeddings must be unit-norm")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)


def build_label_prompts(
    class_names,
    descriptions,
    template: str,
    text_encoder,
) -> LabelPromptSet:
    sentences = tuple(
        render_label_sentence(template, name, desc)
        for name, desc in zip(class_names, descriptions)
    )
    embeddings = np.vstack([text_encoder.encode(s).vector for s in sentences])
    return LabelPromptSet(tuple(class_names), sentences, embeddings)


def load_label_prompt_asset(path, text_encoder) -> LabelPromptSet:
    """Label asset file: {"template": ..., "classes": [{"id", "name",
    "description"}, ...]} with ids 0..C-1."""
    spec = json.loads(Path(path).read_text(encoding="utf-8"))
    classes = sorted(spec["classes"], key=lambda c: c["id"])
    if [c["id"] for c in classes] != list(range(len(classes))):
        raise ValidationError("class ids must be 0..C-1 with no gaps")
    return build_label_prompts(
        [c["name"] for c in classes],
        [c.get("description", "") for c in classes],
        spec["template"],
        text_encoder,
    )


def save_label_prompt_asset(path, template: str, class_names, descriptions) -> None:
    payload = {
        "template": template,
        "classes": [
            {"id": i, "name": name, "description": desc}
            for i, (name, desc) in enumerate(zip(class_names, descriptions))
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def prompt_index_map(graph: TextAttributedGraph, labels: LabelPromptSet) -> np.ndarray:
    """Graph label id -> prompt-set class index, matched by class name.

    Graph loaders may order class ids differently from a label asset; names
    are the stable join key. Falls back to identity when the graph carries
    no class names.
    """
    if graph.class_names is None:
        return np.arange(labels.num_classes)
    index = {name: i for i, name in enumerate(labels.class_names)}
    mapping = []
    for name in graph.class_names:
        if name not in index:
            raise ValidationError(
                f"class {name!r} present in the graph but missing from the prompt set"
            )
        mapping.append(index[name])
    return np.array(mapping, dtype=np.int64)


def zero_shot_classify(h, labels: LabelPromptSet) -> tuple[int, np.ndarray]:
    """Nearest label sentence by cosine; ties break to the lowest class id."""
    if labels.num_classes == 0:
        raise ValidationError("empty label set")
    vec = h.vector if isinstance(h, Embedding) else np.asarray(h, dtype=np.float64)
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        scores = np.zeros(labels.num_classes)
    else:
        scores = labels.embeddings @ (vec / norm)
    return int(np.argmax(scores)), scores


def _node_sampler_cfg(base: SamplerConfig, run_seed: int) -> SamplerConfig:
    # One deterministic stream per evaluation run; rwr_sample mixes in the
    # node id itself.
    return dataclasses.replace(base, rng_seed=(base.rng_seed * 0x9E3779B1 + run_seed) & _MASK32)


def encode_node(
    store: ParamStore,
    config: GraphEncoderConfig,
    graph: TextAttributedGraph,
    node: int,
    sampler_cfg: SamplerConfig,
    feature_offset: np.ndarray | None = None,
) -> Embedding:
    """Sample the node's ego-subgraph, attach positional encodings, encode."""
    sub = with_positional_encodings(
        rwr_sample(graph, node, sampler_cfg), config.positional_dim
    )
    return encode_graph(store, config, sub, feature_offset=feature_offset)


@dataclass
class EvalRun:
    seed: int
    value: float


@dataclass
class EvalResult:
    metric: str
    runs: list[EvalRun] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean([r.value for r in self.runs]))

    @property
    def std(self) -> float:
        return float(np.std([r.value for r in self.runs]))


def evaluate_node_classification(
    store: ParamStore,
    config: GraphEncoderConfig,
    graph: TextAttributedGraph,
    labels: LabelPromptSet,
    sampler_cfg: SamplerConfig,
    *,
    test_fraction: float = 0.2,
    num_runs: int = 5,
    base_seed: int = 0,
    feature_offset: np.ndarray | None = None,
) -> EvalResult:
    """Zero-shot accuracy over ``num_runs`` random test splits (mean and std).

    Each run draws a fresh ``test_fraction`` of the labeled nodes and a fresh
    sampler stream; runs are deterministic in (base_seed, run index).
    """
    if graph.labels is None or graph.class_names is None:
        raise ValidationError("target graph needs labels and class names")
    mapping = prompt_index_map(graph, labels)
    labeled = np.array([i for i in range(graph.num_nodes) if graph.labels[i] >= 0])
    if labeled.size == 0:
        raise ValidationError("graph has no labeled nodes")

    result = EvalResult(metric="accuracy")
    for run in range(num_runs):
        seed = base_seed + run
        rng = np.random.default_rng(seed)
        num_test = max(1, int(round(test_fraction * labeled.size)))
        test_nodes = rng.choice(labeled, size=num_test, replace=False)
        run_cfg = _node_sampler_cfg(sampler_cfg, seed)
        correct = 0
        for node in test_nodes:
            emb = encode_node(store, config, graph, int(node), run_cfg,
                              feature_offset=feature_offset)
            predicted, _ = zero_shot_classify(emb, labels)
            correct += int(predicted == int(mapping[graph.labels[node]]))
        result.runs.append(EvalRun(seed=seed, value=correct / num_test))
    return result


def link_score(h_i, h_j) -> float:
    """Cosine similarity of two endpoint embeddings, in [-1, 1]."""
    a = h_i.vector if isinstance(h_i, Embedding) else np.asarray(h_i, dtype=np.float64)
    b = h_j.vector if isinstance(h_j, Embedding) else np.asarray(h_j, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def auc(scores, truth) -> float:
    """Exact ROC AUC with ties counted 0.5, via average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth, dtype=bool)
    if scores.shape != truth.shape or scores.ndim != 1:
        raise ValidationError("scores and truth must be equal-length 1-D")
    num_pos = int(truth.sum())
    num_neg = truth.size - num_pos
    if num_pos == 0 or num_neg == 0:
        raise ValidationError("need at least one positive and one negative")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(scores.size, dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < scores.size:
        j = i
        while j + 1 < scores.size and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    pos_rank_sum = ranks[truth].sum()
    return float((pos_rank_sum - num_pos * (num_pos + 1) / 2.0) / (num_pos * num_neg))


def evaluate_link_prediction(
    store: ParamStore,
    config: GraphEncoderConfig,
    graph: TextAttributedGraph,
    sampler_cfg: SamplerConfig,
    *,
    test_fraction: float = 0.5,
    num_runs: int = 5,
    base_seed: int = 0,
) -> EvalResult:
    """AUC of cosine edge scores against uniformly sampled non-edges.

    Each scored positive edge is removed from the graph before sampling
    either endpoint's subgraph, so the score never sees the edge it predicts.
    """
    if not graph.edges:
        raise ValidationError("graph has no edges")
    edge_set = set(graph.edges)
    result = EvalResult(metric="auc")
    for run in range(num_runs):
        seed = base_seed + run
        rng = np.random.default_rng(seed)
        num_test = max(1, int(round(test_fraction * len(graph.edges))))
        chosen = rng.choice(len(graph.edges), size=num_test, replace=False)
        positives = [graph.edges[int(i)] for i in chosen]
        negatives = []
        while len(negatives) < num_test:
            u = int(rng.integers(graph.num_nodes))
            v = int(rng.integers(graph.num_nodes))
            if u == v:
                continue
            key = (min(u, v), max(u, v))
            if key in edge_set:
                continue
            negatives.append(key)
        run_cfg = _node_sampler_cfg(sampler_cfg, seed)
        scores = []
        truth = []
        for u, v in positives:
            pruned = graph.without_edge(u, v)
            scores.append(link_score(
                encode_node(store, config, pruned, u, run_cfg),
                encode_node(store, config, pruned, v, run_cfg),
            ))
            truth.append(True)
        for u, v in negatives:
            scores.append(link_score(
                encode_node(store, config, graph, u, run_cfg),
                encode_node(store, config, graph, v, run_cfg),
            ))
            truth.append(False)
        result.runs.append(EvalRun(seed=seed, value=auc(scores, truth)))
    return result


@dataclass(frozen=True)
class PromptVector:
    """The single shared feature offset learned by prompt tuning."""

    values: np.ndarray

    def __post_init__(self):
        vec = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(vec)):
            raise ValidationError("prompt vector must be finite")
        object.__setattr__(self, "values", vec)

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps({"values": self.values.tolist()}) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "PromptVector":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(values=np.asarray(data["values"], dtype=np.float64))


@dataclass(frozen=True)
class FewShotSplit:
    """k labeled train nodes per class plus a disjoint labeled test set."""

    shots: int
    train_ids: tuple[int, ...]
    test_ids: tuple[int, ...]
    seed: int

    def __post_init__(self):
        if self.shots < 1:
            raise ValidationError("shots must be >= 1 (zero-shot needs no split)")
        if set(self.train_ids) & set(self.test_ids):
            raise ValidationError("train and test overlap")


def make_few_shot_split(
    graph: TextAttributedGraph, shots: int, seed: int
) -> FewShotSplit:
    """Draw exactly ``shots`` train nodes per class; the rest become the test set."""
    if shots < 1:
        raise ValidationError("shots must be >= 1 (zero-shot needs no split)")
    if graph.labels is None:
        raise ValidationError("graph has no labels")
    rng = np.random.default_rng(seed)
    train: list[int] = []
    for c in sorted(set(int(x) for x in graph.labels if x >= 0)):
        members = [i for i in range(graph.num_nodes) if int(graph.labels[i]) == c]
        if len(members) < shots + 1:
            raise ValidationError(f"class {c} has too few nodes for {shots} shots")
        picked = rng.choice(members, size=shots, replace=False)
        train.extend(int(i) for i in picked)
    test = [i for i in range(graph.num_nodes)
            if graph.labels[i] >= 0 and i not in set(train)]
    return FewShotSplit(shots=shots, train_ids=tuple(sorted(train)),
                        test_ids=tuple(sorted(test)), seed=seed)


@dataclass
class PromptTuneResult:
    prompt: PromptVector
    tuned_accuracy: float
    zero_shot_accuracy: float
    losses: list[float]
    tower_checksum_before: str
    tower_checksum_after: str

    @property
    def towers_frozen(self) -> bool:
        return self.tower_checksum_before == self.tower_checksum_after


def _split_accuracy(store, config, graph, labels, sampler_cfg, node_ids,
                    run_seed, feature_offset=None) -> float:
    mapping = prompt_index_map(graph, labels)
    run_cfg = _node_sampler_cfg(sampler_cfg, run_seed)
    correct = 0
    for node in node_ids:
        emb = encode_node(store, config, graph, int(node), run_cfg,
                          feature_offset=feature_offset)
        predicted, _ = zero_shot_classify(emb, labels)
        correct += int(predicted == int(mapping[graph.labels[node]]))
    return correct / len(node_ids)


def prompt_tune(
    store: ParamStore,
    config: GraphEncoderConfig,
    graph: TextAttributedGraph,
    split: FewShotSplit,
    labels: LabelPromptSet,
    *,
    epochs: int = 100,
    lr: float = 1e-4,
    weight_decay: float = 1e-5,
    temperature: float = 0.1,
    sampler_cfg: SamplerConfig | None = None,
    text_encoder=None,
) -> PromptTuneResult:
    """Learn the shared prompt vector on the few-shot split; towers frozen.

    Every epoch draws fresh ego-subgraphs for the shots and runs one
    full-batch supervised contrastive step over them. The prompt starts at
    zero, so the initial model is exactly the zero-shot model.
    """
    if graph.features is None:
        raise ValidationError("graph needs features (attach a text encoder first)")
    sampler_cfg = sampler_cfg or SamplerConfig()
    checksum_before = store.checksum()
    if text_encoder is not None:
        checksum_before += ":" + text_encoder.state_checksum()

    mapping = prompt_index_map(graph, labels)
    train_labels = np.array([int(mapping[graph.labels[n]]) for n in split.train_ids])

    sigma = Tensor(np.zeros(config.text_dim), requires_grad=True)
    optimizer = AdamW({"sigma": sigma},
                      OptimizerConfig(lr=lr, weight_decay=weight_decay))
    losses = []
    for epoch in range(epochs):
        # Fresh subgraph draws per epoch keep sigma from overfitting one
        # sample of each shot's neighborhood.
        epoch_cfg = _node_sampler_cfg(sampler_cfg, split.seed * 1009 + epoch)
        rows = []
        for node in split.train_ids:
            sub = with_positional_encodings(
                rwr_sample(graph, node, epoch_cfg), config.positional_dim)
            x = ad.add(Tensor(sub.features), sigma)
            out, _ = encode_graph_tensor(store, config, sub, x_input=x)
            rows.append(out)
        z = ad.concat(rows, axis=0)
        loss = supervised_contrastive_loss_tensor(
            z, train_labels, labels.embeddings, temperature)
        sigma.zero_grad()
        store.zero_grads()
        loss.backward()
        optimizer.step({"sigma": sigma.grad})
        losses.append(loss.item())

    store.zero_grads()
    zero_acc = _split_accuracy(store, config, graph, labels, sampler_cfg,
                               split.test_ids, split.seed)
    tuned_acc = _split_accuracy(store, config, graph, labels, sampler_cfg,
                                split.test_ids, split.seed,
                                feature_offset=sigma.data)

    checksum_after = store.checksum()
    if text_encoder is not None:
        checksum_after += ":" + text_encoder.state_checksum()

    return PromptTuneResult(
        prompt=PromptVector(values=sigma.data.copy()),
        tuned_accuracy=tuned_acc,
        zero_shot_accuracy=zero_acc,
        losses=losses,
        tower_checksum_before=checksum_before,
        tower_checksum_after=checksum_after,
    )
