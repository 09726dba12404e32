"""Contrastive pretraining with an adversarial feature-perturbation inner loop.

The outer loop minimizes the in-batch contrastive loss; the inner loop runs M
projected-ascent steps on a per-node feature perturbation delta (one block
per subgraph, norm-constrained to an epsilon ball) against fixed summary
embeddings, accumulating parameter gradients at each visited delta and
averaging them for the outer update. With epsilon = 0 the feasible set is
{0} and every inner gradient equals the clean gradient, so that case runs
the plain single-pass path; the trajectory is then bit-identical to a run
with the adversary disabled.
"""

from __future__ import annotations

import csv
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from . import autodiff as ad
from .corpus import GraphSummaryPair
from .encoder import (
    GraphEncoderConfig,
    ParamStore,
    encode_graph_tensor,
    save_checkpoint,
)
from .errors import NonFiniteLossError, ValidationError
from .graphs import (
    EgoSubgraph,
    SamplerConfig,
    TextAttributedGraph,
    rwr_sample,
    with_positional_encodings,
)
from .losses import alignment_uniformity, contrastive_loss_tensor
from .textenc import attach_features

METRICS_COLUMNS = ("step", "epoch", "loss", "alignment", "uniformity",
                   "delta_norm_mean", "lr")


@dataclass
class PerturbationState:
    """Adversarial perturbation settings and the current per-node delta.

    ``epsilon`` may be zero (empty feasible set: the adversary is inert). The
    per-subgraph delta block norm never exceeds epsilon after an update.
    """

    epsilon: float = 1e-2
    norm_p: float = 2.0
    inner_steps: int = 3
    step_size: float | None = None
    delta: list[np.ndarray] | None = None

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValidationError("epsilon must be >= 0")
        if self.norm_p not in (2.0, float("inf")):
            raise ValidationError("norm_p must be 2 or inf")
        if self.inner_steps < 1:
            raise ValidationError("inner_steps must be >= 1")

    @property
    def alpha(self) -> float:
        return self.step_size if self.step_size is not None else self.epsilon / self.inner_steps


def project_block(delta: np.ndarray, epsilon: float, norm_p: float) -> np.ndarray:
    """Exact projection of one subgraph's delta block onto the norm ball."""
    if epsilon == 0.0:
        return np.zeros_like(delta)
    if norm_p == float("inf"):
        return np.clip(delta, -epsilon, epsilon)
    norm = float(np.linalg.norm(delta))
    if norm > epsilon:
        return delta * (epsilon / norm)
    return delta


def ascent_direction(grad: np.ndarray, norm_p: float) -> np.ndarray | None:
    """Unit-norm ascent direction for the block; None when the gradient is zero."""
    if norm_p == float("inf"):
        if not np.any(grad):
            return None
        return np.sign(grad)
    norm = float(np.linalg.norm(grad))
    if norm == 0.0:
        return None
    return grad / norm


@dataclass
class OptimizerConfig:
    lr: float = 1e-5
    weight_decay: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class AdamW:
    """Decoupled weight decay Adam over a named tensor dict."""

    def __init__(self, tensors: dict[str, Tensor], config: OptimizerConfig):
        self.tensors = tensors
        self.config = config
        self.step_count = 0
        self.m = {name: np.zeros_like(t.data) for name, t in tensors.items()}
        self.v = {name: np.zeros_like(t.data) for name, t in tensors.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        cfg = self.config
        self.step_count += 1
        t = self.step_count
        for name in sorted(self.tensors):
            g = grads[name]
            self.m[name] = cfg.beta1 * self.m[name] + (1 - cfg.beta1) * g
            self.v[name] = cfg.beta2 * self.v[name] + (1 - cfg.beta2) * (g * g)
            m_hat = self.m[name] / (1 - cfg.beta1 ** t)
            v_hat = self.v[name] / (1 - cfg.beta2 ** t)
            data = self.tensors[name].data
            data -= cfg.lr * (m_hat / (np.sqrt(v_hat) + cfg.eps)
                              + cfg.weight_decay * data)


@dataclass
class InnerLoopResult:
    gradients: dict[str, np.ndarray]
    first_loss: float
    final_loss: float
    clean_embeddings: np.ndarray         # graph batch at delta = 0, pre-update
    delta_blocks: list[np.ndarray]
    delta_norms: np.ndarray              # per-subgraph norms after the last update
    max_block_norm: float                # max over all inner steps and blocks
    skipped_zero_grad_steps: int


def _encode_batch(
    store: ParamStore,
    config: GraphEncoderConfig,
    subgraphs: list[EgoSubgraph],
    x_arrays: list[np.ndarray],
) -> tuple[Tensor, list[Tensor]]:
    leaves = [Tensor(x, requires_grad=True) for x in x_arrays]
    rows = [encode_graph_tensor(store, config, sub, x_input=leaf)[0]
            for sub, leaf in zip(subgraphs, leaves)]
    return ad.concat(rows, axis=0), leaves


def clean_gradients(
    store: ParamStore,
    config: GraphEncoderConfig,
    subgraphs: list[EgoSubgraph],
    summary_embs: np.ndarray,
    temperature: float,
) -> tuple[dict[str, np.ndarray], float, np.ndarray]:
    """Single unperturbed forward/backward; the no-adversary gradient."""
    h, _ = _encode_batch(store, config, subgraphs, [s.features for s in subgraphs])
    loss = contrastive_loss_tensor(h, Tensor(summary_embs), temperature)
    store.zero_grads()
    loss.backward()
    return store.gradients(), loss.item(), h.data.copy()


def inner_maximize(
    store: ParamStore,
    config: GraphEncoderConfig,
    subgraphs: list[EgoSubgraph],
    summary_embs: np.ndarray,
    pert: PerturbationState,
    temperature: float,
) -> InnerLoopResult:
    """M projected-ascent steps on delta with per-step gradient accumulation.

    Parameter gradients are taken at each visited delta (delta_0 = 0 through
    delta_{M-1}) and averaged; the returned delta blocks satisfy the norm
    constraint exactly.
    """
    if pert.epsilon == 0.0:
        grads, loss, h_clean = clean_gradients(store, config, subgraphs,
                                               summary_embs, temperature)
        return InnerLoopResult(
            gradients=grads, first_loss=loss, final_loss=loss,
            clean_embeddings=h_clean,
            delta_blocks=[np.zeros_like(s.features) for s in subgraphs],
            delta_norms=np.zeros(len(subgraphs)), max_block_norm=0.0,
            skipped_zero_grad_steps=0,
        )

    deltas = [np.zeros_like(sub.features) for sub in subgraphs]
    accum: dict[str, np.ndarray] | None = None
    first_loss = final_loss = 0.0
    h_clean = np.zeros((len(subgraphs), config.text_dim))
    skipped = 0
    max_norm = 0.0
    u_const = Tensor(summary_embs)

    for m in range(pert.inner_steps):
        x_arrays = [sub.features + delta for sub, delta in zip(subgraphs, deltas)]
        h, leaves = _encode_batch(store, config, subgraphs, x_arrays)
        loss = contrastive_loss_tensor(h, u_const, temperature)
        store.zero_grads()
        loss.backward()
        value = loss.item()
        if m == 0:
            first_loss = value
            h_clean = h.data.copy()
        final_loss = value

        grads = store.gradients()
        if accum is None:
            accum = grads
        else:
            for name in accum:
                accum[name] += grads[name]

        for i, leaf in enumerate(leaves):
            direction = ascent_direction(leaf.grad, pert.norm_p)
            if direction is None:
                skipped += 1
                continue
            deltas[i] = project_block(deltas[i] + pert.alpha * direction,
                                      pert.epsilon, pert.norm_p)
            if pert.norm_p == float("inf"):
                max_norm = max(max_norm, float(np.abs(deltas[i]).max(initial=0.0)))
            else:
                max_norm = max(max_norm, float(np.linalg.norm(deltas[i])))

    assert accum is not None
    for name in accum:
        accum[name] /= pert.inner_steps
    if pert.norm_p == float("inf"):
        norms = np.array([float(np.abs(d).max(initial=0.0)) for d in deltas])
    else:
        norms = np.array([float(np.linalg.norm(d)) for d in deltas])
    pert.delta = deltas
    return InnerLoopResult(
        gradients=accum, first_loss=first_loss, final_loss=final_loss,
        clean_embeddings=h_clean, delta_blocks=deltas, delta_norms=norms,
        max_block_norm=max_norm, skipped_zero_grad_steps=skipped,
    )


@dataclass
class PretrainResult:
    store: ParamStore
    config: GraphEncoderConfig
    metrics: list[dict]
    delta_norm_trace: list[np.ndarray] = field(default_factory=list)
    checkpoint_path: Path | None = None
    text_checksum_before: str = ""
    text_checksum_after: str = ""

    @property
    def text_encoder_frozen(self) -> bool:
        return self.text_checksum_before == self.text_checksum_after


def materialize_subgraphs(
    pairs: list[GraphSummaryPair],
    graphs: dict[str, TextAttributedGraph],
    sampler_cfg: SamplerConfig,
    positional_dim: int,
) -> list[EgoSubgraph]:
    """Re-sample each pair's subgraph deterministically from its source graph."""
    subgraphs = []
    for pair in pairs:
        graph = graphs.get(pair.graph_id)
        if graph is None:
            raise ValidationError(f"pair references unknown graph {pair.graph_id!r}")
        if graph.features is None:
            raise ValidationError(
                f"graph {pair.graph_id!r} has no features; attach an encoder first"
            )
        cfg = dataclasses.replace(sampler_cfg, rng_seed=pair.sampler_seed)
        sub = rwr_sample(graph, pair.seed_id, cfg)
        subgraphs.append(with_positional_encodings(sub, positional_dim))
    return subgraphs


def write_metrics_csv(path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in METRICS_COLUMNS})


def pretrain(
    pairs: list[GraphSummaryPair],
    graphs: dict[str, TextAttributedGraph],
    text_encoder,
    graph_config: GraphEncoderConfig,
    optimizer_config: OptimizerConfig | None = None,
    perturbation: PerturbationState | None = None,
    *,
    epochs: int = 30,
    batch_size: int = 16,
    seed: int = 0,
    temperature: float = 0.1,
    sampler_cfg: SamplerConfig | None = None,
    out_dir=None,
    checkpoint_every: int = 1,
    init_seed: int | None = None,
) -> PretrainResult:
    """Full pretraining loop: deterministic given ``seed``.

    With ``out_dir`` set, writes a metrics CSV, a checkpoint every
    ``checkpoint_every`` epochs (0 disables per-epoch checkpoints), and the
    final checkpoint.
    """
    if not pairs:
        raise ValidationError("empty pair dataset")
    optimizer_config = optimizer_config or OptimizerConfig()
    sampler_cfg = sampler_cfg or SamplerConfig()

    checksum_before = text_encoder.state_checksum()
    graphs = {
        gid: g if g.features is not None else attach_features(g, text_encoder)
        for gid, g in graphs.items()
    }
    subgraphs = materialize_subgraphs(pairs, graphs, sampler_cfg,
                                      graph_config.positional_dim)
    summary_matrix = np.vstack([text_encoder.encode(p.summary).vector for p in pairs])

    store = ParamStore.initialize(graph_config,
                                  seed=seed if init_seed is None else init_seed)
    optimizer = AdamW(store.tensors, optimizer_config)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xB41C])))

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    metrics: list[dict] = []
    delta_trace: list[np.ndarray] = []
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(len(pairs))
        for start in range(0, len(order), batch_size):
            batch_ids = order[start:start + batch_size]
            batch_subs = [subgraphs[i] for i in batch_ids]
            batch_u = summary_matrix[batch_ids]

            if perturbation is None:
                grads, loss_value, h_clean = clean_gradients(
                    store, graph_config, batch_subs, batch_u, temperature)
                delta_norms = np.zeros(len(batch_ids))
            else:
                result = inner_maximize(store, graph_config, batch_subs, batch_u,
                                        perturbation, temperature)
                grads, loss_value = result.gradients, result.first_loss
                h_clean = result.clean_embeddings
                delta_norms = result.delta_norms

            if not np.isfinite(loss_value):
                raise NonFiniteLossError(
                    f"non-finite loss at step {step} (epoch {epoch})",
                    dump={
                        "step": step,
                        "epoch": epoch,
                        "pair_indices": [int(i) for i in batch_ids],
                        "pair_keys": [list(pairs[i].key) for i in batch_ids],
                        "loss": loss_value,
                    },
                )

            optimizer.step(grads)
            alignment, uniformity = alignment_uniformity(h_clean, batch_u)
            metrics.append({
                "step": step,
                "epoch": epoch,
                "loss": loss_value,
                "alignment": alignment,
                "uniformity": uniformity,
                "delta_norm_mean": float(delta_norms.mean()) if len(delta_norms) else 0.0,
                "lr": optimizer_config.lr,
            })
            delta_trace.append(delta_norms)
            step += 1

        if out_dir is not None and checkpoint_every and (epoch + 1) % checkpoint_every == 0:
            save_checkpoint(out_dir / f"checkpoint_epoch{epoch + 1}.bin",
                            store, graph_config, _metadata(optimizer_config,
                                                           perturbation, epochs,
                                                           batch_size, seed,
                                                           temperature,
                                                           checksum_before))

    checksum_after = text_encoder.state_checksum()
    if checksum_after != checksum_before:
        raise ValidationError("text encoder state changed during pretraining")

    result = PretrainResult(
        store=store, config=graph_config, metrics=metrics,
        delta_norm_trace=delta_trace,
        text_checksum_before=checksum_before, text_checksum_after=checksum_after,
    )
    if out_dir is not None:
        path = out_dir / "checkpoint.bin"
        save_checkpoint(path, store, graph_config,
                        _metadata(optimizer_config, perturbation, epochs,
                                  batch_size, seed, temperature, checksum_before))
        write_metrics_csv(out_dir / "metrics.csv", metrics)
        result.checkpoint_path = path
    return result


def _metadata(optimizer_config, perturbation, epochs, batch_size, seed,
              temperature, text_checksum) -> dict:
    # epsilon = 0 is canonicalized to "no adversary" so that run's checkpoint
    # bytes match a run with the adversary disabled outright.
    active = perturbation is not None and perturbation.epsilon > 0.0
    return {
        "lr": optimizer_config.lr,
        "weight_decay": optimizer_config.weight_decay,
        "epochs": epochs,
        "batch_size": batch_size,
        "seed": seed,
        "temperature": temperature,
        "epsilon": perturbation.epsilon if active else 0.0,
        "inner_steps": perturbation.inner_steps if active else 0,
        "norm_p": perturbation.norm_p if active else 2.0,
        "text_encoder_checksum": text_checksum,
    }
