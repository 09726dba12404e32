"""Finite-difference verification of every analytic gradient.

Central differences with step 1e-5 on float64 are the independent oracle for
the whole reverse-mode path: encoder parameters, input features, and the
contrastive / supervised-contrastive losses. The relative error of a tensor
is the worst entrywise |analytic - fd| / (max(|analytic|, |fd|) + 1e-5); the
additive floor keeps near-zero gradients from amplifying the oracle's own
roundoff, while real sign or scale errors still show up orders of magnitude
above the tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from . import autodiff as ad
from .encoder import GraphEncoderConfig, ParamStore, encode_graph_tensor
from .errors import ValidationError
from .graphs import SamplerConfig, TextAttributedGraph, rwr_sample, with_positional_encodings
from .losses import contrastive_loss_tensor, supervised_contrastive_loss_tensor

DEFAULT_STEP = 1e-5
DEFAULT_TOLERANCE = 1e-4
_ERR_FLOOR = 1e-5


def central_difference(f, array: np.ndarray, step: float = DEFAULT_STEP) -> np.ndarray:
    """Entrywise central finite differences of a scalar function of ``array``.

    Mutates each entry in place and restores it; ``f`` must re-read the array.
    """
    grad = np.zeros_like(array)
    flat = array.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = f()
        flat[i] = original - step
        minus = f()
        flat[i] = original
        out[i] = (plus - minus) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Worst entrywise relative error with an additive floor."""
    denom = np.maximum(np.abs(analytic), np.abs(numeric)) + _ERR_FLOOR
    return float(np.max(np.abs(analytic - numeric) / denom))


def compare_gradients(
    analytic: dict[str, np.ndarray],
    numeric: dict[str, np.ndarray],
    tolerance: float = DEFAULT_TOLERANCE,
) -> dict[str, tuple[float, bool]]:
    """Per-tensor (worst relative error, passed) for two gradient maps."""
    if set(analytic) != set(numeric):
        raise ValidationError("gradient maps cover different tensors")
    return {
        name: (err := relative_error(analytic[name], numeric[name]), err < tolerance)
        for name in sorted(analytic)
    }


@dataclass
class GradCheckEntry:
    context: str
    tensor: str
    worst_rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    entries: list[GradCheckEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(entry.passed for entry in self.entries)

    @property
    def worst(self) -> float:
        return max((entry.worst_rel_err for entry in self.entries), default=0.0)

    def add(self, context: str, comparisons: dict[str, tuple[float, bool]]) -> None:
        for tensor, (err, ok) in comparisons.items():
            self.entries.append(GradCheckEntry(context, tensor, err, ok))

    def to_text(self) -> str:
        lines = [f"gradient check (tolerance {self.tolerance:g})"]
        for entry in self.entries:
            status = "ok" if entry.passed else "FAIL"
            lines.append(
                f"  [{status}] {entry.context:30s} {entry.tensor:28s} "
                f"rel_err={entry.worst_rel_err:.3e}"
            )
        lines.append(f"result: {'PASS' if self.passed else 'FAIL'} "
                     f"(worst {self.worst:.3e})")
        return "\n".join(lines)


def _random_subgraph(config: GraphEncoderConfig, num_nodes: int, seed: int):
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(num_nodes) for j in range(i + 1, num_nodes)
             if rng.random() < 0.7]
    graph = TextAttributedGraph.from_edges(
        num_nodes, edges, [""] * num_nodes,
        features=rng.normal(size=(num_nodes, config.text_dim)),
    )
    sub = rwr_sample(graph, 0, SamplerConfig(
        node_budget=num_nodes, max_steps=max(num_nodes * 8, num_nodes), rng_seed=seed))
    return with_positional_encodings(sub, config.positional_dim)


def check_encoder_gradients(
    config: GraphEncoderConfig,
    num_nodes: int = 3,
    seed: int = 0,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
) -> dict[str, tuple[float, bool]]:
    """FD-verify every parameter gradient and the input-feature gradient of a
    scalar readout of the encoder."""
    store = ParamStore.initialize(config, seed=seed)
    sub = _random_subgraph(config, num_nodes, seed + 1)
    readout = np.random.default_rng(seed + 2).normal(size=(1, config.text_dim))

    def forward() -> float:
        out, _ = encode_graph_tensor(store, config, sub)
        return float((out.data * readout).sum())

    out, x_leaf = encode_graph_tensor(store, config, sub)
    loss = ad.tsum(ad.mul(out, Tensor(readout)))
    store.zero_grads()
    loss.backward()

    analytic = {name: store[name].grad.copy() for name in store.names()}
    analytic["input.features"] = x_leaf.grad.copy()

    numeric = {}
    for name in store.names():
        numeric[name] = central_difference(forward, store[name].data, step)
    features = sub.features.copy()

    def forward_features() -> float:
        out2, _ = encode_graph_tensor(store, config, sub, x_input=Tensor(features))
        return float((out2.data * readout).sum())

    numeric["input.features"] = central_difference(forward_features, features, step)
    return compare_gradients(analytic, numeric, tolerance)


def check_contrastive_gradients(
    batch: int = 3,
    dim: int = 5,
    temperature: float = 0.1,
    seed: int = 0,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
) -> dict[str, tuple[float, bool]]:
    """FD-verify the contrastive loss gradients w.r.t. both embedding batches."""
    rng = np.random.default_rng(seed)

    def unit_rows(a):
        return a / np.linalg.norm(a, axis=1, keepdims=True)

    h = unit_rows(rng.normal(size=(batch, dim)))
    u = unit_rows(rng.normal(size=(batch, dim)))

    ht = Tensor(h.copy(), requires_grad=True)
    ut = Tensor(u.copy(), requires_grad=True)
    loss = contrastive_loss_tensor(ht, ut, temperature)
    loss.backward()
    analytic = {"loss.d_graph_batch": ht.grad.copy(), "loss.d_summary_batch": ut.grad.copy()}

    def forward_h() -> float:
        return contrastive_loss_tensor(Tensor(h), Tensor(u), temperature).item()

    numeric = {
        "loss.d_graph_batch": central_difference(forward_h, h, step),
        "loss.d_summary_batch": central_difference(forward_h, u, step),
    }
    return compare_gradients(analytic, numeric, tolerance)


def check_scl_gradients(
    batch: int = 4,
    dim: int = 5,
    num_classes: int = 3,
    temperature: float = 0.1,
    seed: int = 0,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
) -> dict[str, tuple[float, bool]]:
    """FD-verify the supervised contrastive loss gradient w.r.t. the anchors."""
    rng = np.random.default_rng(seed)
    z = rng.normal(size=(batch, dim))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    labels = rng.integers(0, num_classes, size=batch)
    labels[0] = labels[1]  # guarantee at least one same-class anchor pair
    label_emb = rng.normal(size=(num_classes, dim))
    label_emb /= np.linalg.norm(label_emb, axis=1, keepdims=True)

    zt = Tensor(z.copy(), requires_grad=True)
    loss = supervised_contrastive_loss_tensor(zt, labels, label_emb, temperature)
    loss.backward()
    analytic = {"scl.d_anchors": zt.grad.copy()}

    def forward() -> float:
        return supervised_contrastive_loss_tensor(
            Tensor(z), labels, label_emb, temperature).item()

    numeric = {"scl.d_anchors": central_difference(forward, z, step)}
    return compare_gradients(analytic, numeric, tolerance)


def run_grad_check(
    trials: int = 2,
    seed: int = 0,
    step: float = DEFAULT_STEP,
    tolerance: float = DEFAULT_TOLERANCE,
) -> GradCheckReport:
    """The full gradient suite over a set of small encoder configurations."""
    report = GradCheckReport(tolerance=tolerance)
    configs = [
        GraphEncoderConfig(layers=1, hidden=4, heads=1, positional_dim=2, text_dim=3),
        GraphEncoderConfig(layers=2, hidden=8, heads=2, positional_dim=3, text_dim=5),
    ]
    for trial in range(trials):
        config = configs[trial % len(configs)]
        label = f"encoder(L={config.layers},D={config.hidden},trial={trial})"
        report.add(label, check_encoder_gradients(config, num_nodes=3,
                                                  seed=seed + trial, step=step,
                                                  tolerance=tolerance))
    report.add("contrastive_loss",
               check_contrastive_gradients(seed=seed, step=step, tolerance=tolerance))
    report.add("supervised_contrastive_loss",
               check_scl_gradients(seed=seed, step=step, tolerance=tolerance))
    return report
