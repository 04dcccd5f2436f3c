"""End-to-end training and evaluation.

One optimization step runs: pooled features -> unary scores and pairwise
affinities -> precision system -> either the exact negative log-density
or the inferred labelling under a task loss -> gradients chained back to
every network parameter.  Optimization is plain per-example SGD with
momentum, weight decay, and an optional global gradient-norm clip.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .crf import assemble, map_backward, map_infer, nll, nll_backward
from .datasets import Dataset
from .graph import NodeGraph, build_graph, node_pixel_counts
from .losses import LossSpec, predict_labels, task_loss
from .metrics import depth_metrics, seg_metrics
from .networks import (
    Model,
    build_model,
    mlp_backward,
    pairwise_backward,
    pairwise_forward,
    unary_forward,
)


class NonFiniteLossError(RuntimeError):
    """A single objective evaluation came back NaN or infinite."""


class DivergenceError(RuntimeError):
    """Training hit a nonfinite loss; carries the offending example."""

    def __init__(self, epoch: int, example_index: int, detail: str = ""):
        self.epoch = epoch
        self.example_index = example_index
        message = f"nonfinite loss at epoch {epoch}, example {example_index}"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


@dataclass
class TrainConfig:
    loss: LossSpec = field(default_factory=lambda: LossSpec("softmax"))
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 30
    unary_warmup_epochs: int = 5
    seed: int = 0
    clip_norm: float | None = 10.0
    hidden_dims: tuple = (64,)
    embed_hidden_dims: tuple = (64,)
    embed_dim: int = 128
    gamma: float = 0.1
    keep: str = "best"

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be nonnegative")
        if self.epochs < 0 or self.unary_warmup_epochs < 0:
            raise ValueError("epoch counts must be nonnegative")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")
        if self.keep not in ("best", "last"):
            raise ValueError(f"keep must be 'best' or 'last', got {self.keep!r}")


def _parse_dims(text: str) -> tuple:
    dims = tuple(int(part) for part in text.split(",") if part.strip())
    if not dims:
        raise ValueError(f"empty layer list {text!r}")
    return dims


def parse_config(path) -> dict[str, str]:
    """Read a plain key=value config file; '#' starts a comment."""
    mapping: dict[str, str] = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            mapping[key.strip()] = value.strip()
    return mapping


def config_from_mapping(mapping: dict[str, str]) -> TrainConfig:
    """Build a TrainConfig from string key=value pairs, applying defaults."""
    defaults = TrainConfig()
    loss = LossSpec(
        mapping.get("loss", defaults.loss.kind),
        float(mapping.get("tukey_c", defaults.loss.c)),
    )
    clip_text = mapping.get("clip_norm", "")
    if clip_text.lower() in ("", "none"):
        clip = defaults.clip_norm if clip_text == "" else None
    else:
        clip = float(clip_text)
    return TrainConfig(
        loss=loss,
        lr=float(mapping.get("lr", defaults.lr)),
        momentum=float(mapping.get("momentum", defaults.momentum)),
        weight_decay=float(mapping.get("weight_decay", defaults.weight_decay)),
        epochs=int(mapping.get("epochs", defaults.epochs)),
        unary_warmup_epochs=int(
            mapping.get("warmup_epochs", defaults.unary_warmup_epochs)
        ),
        seed=int(mapping.get("seed", defaults.seed)),
        clip_norm=clip,
        hidden_dims=_parse_dims(mapping.get("hidden_dims", "64")),
        embed_hidden_dims=_parse_dims(mapping.get("embed_hidden_dims", "64")),
        embed_dim=int(mapping.get("embed_dim", defaults.embed_dim)),
        gamma=float(mapping.get("gamma", defaults.gamma)),
        keep=mapping.get("keep", defaults.keep),
    )


@dataclass
class PreparedExample:
    """Node graph, targets, and per-node pixel counts, ready for the model."""

    graph: NodeGraph
    targets: np.ndarray
    pixel_counts: np.ndarray


def prepare_examples(examples) -> list[PreparedExample]:
    prepared = []
    for ex in examples:
        graph = build_graph(ex.image, ex.seg)
        prepared.append(
            PreparedExample(graph, np.asarray(ex.targets, dtype=np.float64), node_pixel_counts(ex.seg))
        )
    return prepared


def forward_loss(
    model: Model,
    graph: NodeGraph,
    targets: np.ndarray,
    loss_spec: LossSpec,
    weight_decay: float = 0.0,
    unary_only: bool = False,
):
    """One objective evaluation with gradients for every parameter.

    ``unary_only`` freezes the pairwise stage at zero affinity: the field
    reduces to independent per-node regression, pairwise parameters get
    exactly zero gradient (no weight decay either), and the result is
    bit-identical to running the full pipeline with beta = 0.
    """
    targets = np.asarray(targets, dtype=np.float64)
    scores, unary_cache = unary_forward(model.unary, graph)
    if targets.shape != scores.shape:
        raise ValueError(
            f"targets {targets.shape} do not match model output {scores.shape}"
        )
    if unary_only:
        affinity, pair_cache = np.zeros((graph.n, graph.n)), None
    else:
        affinity, pair_cache = pairwise_forward(model.pairwise, graph)
    system = assemble(affinity)

    if loss_spec.kind == "loglik":
        loss = nll(system, scores, targets)
        dscores, daffinity = nll_backward(system, scores, targets)
    else:
        labelling = map_infer(system, scores)
        loss, dlabelling = task_loss(loss_spec, labelling, targets)
        dscores, daffinity = map_backward(system, labelling, dlabelling)
    if not np.isfinite(loss):
        raise NonFiniteLossError(f"objective returned {loss!r}")

    params = model.parameters()
    grads = {name: np.zeros_like(value) for name, value in params.items()}
    _, unary_grads = mlp_backward(model.unary.mlp, unary_cache, dscores)
    for i, (dw, db) in enumerate(unary_grads):
        grads[f"unary.w{i}"] = dw
        grads[f"unary.b{i}"] = db
    if not unary_only:
        embed_grads, dbeta_raw = pairwise_backward(model.pairwise, pair_cache, daffinity)
        for i, (dw, db) in enumerate(embed_grads):
            grads[f"pair.w{i}"] = dw
            grads[f"pair.b{i}"] = db
        grads["pair.beta_raw"] = np.array(dbeta_raw)
    if weight_decay:
        for name, value in params.items():
            if unary_only and not name.startswith("unary."):
                continue
            grads[name] = grads[name] + weight_decay * value
    return float(loss), grads


def global_grad_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))


def sgd_step(params, grads, velocity, config: TrainConfig):
    """v <- momentum v - lr g; theta <- theta + v, with optional norm clip."""
    if config.clip_norm is not None:
        norm = global_grad_norm(grads)
        if norm > config.clip_norm:
            scale = config.clip_norm / norm
            grads = {name: g * scale for name, g in grads.items()}
    for name, value in params.items():
        v = velocity[name]
        v *= config.momentum
        v -= config.lr * grads[name]
        value += v
    return params, velocity


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    metric: float
    beta: float
    grad_norm: float


@dataclass
class TrainHistory:
    metric_name: str
    records: list = field(default_factory=list)

    def to_csv(self) -> str:
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["epoch", "loss", "metric", "beta", "grad_norm"])
        for rec in self.records:
            writer.writerow(
                [
                    rec.epoch,
                    f"{rec.loss:.10g}",
                    f"{rec.metric:.10g}",
                    f"{rec.beta:.10g}",
                    f"{rec.grad_norm:.10g}",
                ]
            )
        return out.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _predictions(model: Model, examples, task: str, unary_only: bool = False):
    """Concatenated (pred, true, pixel_count) vectors over all examples."""
    preds, trues, weights = [], [], []
    for ex in examples:
        scores, _ = unary_forward(model.unary, ex.graph)
        if ex.targets.shape != scores.shape:
            raise ValueError(
                f"targets {ex.targets.shape} do not match model output {scores.shape}"
            )
        if unary_only:
            labelling = scores
        else:
            affinity, _ = pairwise_forward(model.pairwise, ex.graph)
            labelling = map_infer(assemble(affinity), scores)
        if task == "segmentation":
            preds.append(predict_labels(labelling))
            trues.append(np.argmax(ex.targets, axis=1))
        else:
            preds.append(labelling[:, 0])
            trues.append(ex.targets[:, 0])
        weights.append(ex.pixel_counts)
    return np.concatenate(preds), np.concatenate(trues), np.concatenate(weights)


def evaluate(model: Model, examples, task: str, unary_only: bool = False) -> dict:
    """Metric suite over prepared examples, pixel-count weighted."""
    if not examples:
        raise ValueError("nothing to evaluate")
    if task == "segmentation" and model.output_dim() < 2:
        raise ValueError("model emits a single score column, not class scores")
    if task == "depth" and model.output_dim() != 1:
        raise ValueError("depth evaluation needs a single-column model")
    pred, true, w = _predictions(model, examples, task, unary_only)
    if task == "segmentation":
        return seg_metrics(pred, true, w, examples[0].targets.shape[1])
    return depth_metrics(pred, true, w)


def _validation_metric(model, examples, task) -> tuple[str, float]:
    if task == "segmentation":
        return "pixel_acc", evaluate(model, examples, task)["pixel_acc"]
    # rms alone ranks depth checkpoints: unlike the ratio metrics it stays
    # defined when noise-corrupted val targets dip nonpositive
    pred, true, w = _predictions(model, examples, task)
    return "rms", float(np.sqrt((w * (true - pred) ** 2).sum() / w.sum()))


def _metric_improved(task: str, candidate: float, incumbent: float) -> bool:
    if task == "segmentation":
        return candidate > incumbent
    return candidate < incumbent


def train(dataset: Dataset, config: TrainConfig) -> tuple[Model, TrainHistory]:
    """Seed-deterministic SGD over the training split.

    The first ``unary_warmup_epochs`` epochs update only the unary net
    with the pairwise stage frozen at zero affinity; afterwards all
    parameters train jointly.  With ``keep="best"`` the model returned
    carries the parameters of the best validation epoch (train split
    stands in when the val split is empty); ``keep="last"`` returns the
    final-epoch parameters, the sane choice when validation targets are
    themselves corrupted and the metric cannot rank epochs.
    """
    if not dataset.train:
        raise ValueError("training split is empty")
    task = dataset.task
    train_ex = prepare_examples(dataset.train)
    val_ex = prepare_examples(dataset.val) if dataset.val else train_ex

    rng = np.random.default_rng(config.seed)
    feature_dim = train_ex[0].graph.features.shape[1]
    output_dim = train_ex[0].targets.shape[1]
    model = build_model(
        rng,
        feature_dim,
        output_dim,
        hidden_dims=config.hidden_dims,
        embed_hidden_dims=config.embed_hidden_dims,
        embed_dim=config.embed_dim,
        gamma=config.gamma,
        tukey_c=config.loss.c,
    )
    params = model.parameters()
    velocity = {name: np.zeros_like(value) for name, value in params.items()}

    metric_name = "pixel_acc" if task == "segmentation" else "rms"
    history = TrainHistory(metric_name)
    track_best = config.keep == "best"
    best_metric = None
    best_params = {name: value.copy() for name, value in params.items()}

    for epoch in range(config.epochs):
        warm = epoch < config.unary_warmup_epochs
        order = rng.permutation(len(train_ex))
        loss_sum = 0.0
        norm_sum = 0.0
        for j in order:
            ex = train_ex[int(j)]
            try:
                loss, grads = forward_loss(
                    model,
                    ex.graph,
                    ex.targets,
                    config.loss,
                    weight_decay=config.weight_decay,
                    unary_only=warm,
                )
            except NonFiniteLossError as err:
                raise DivergenceError(epoch, int(j), str(err)) from err
            loss_sum += loss
            norm_sum += global_grad_norm(grads)
            sgd_step(params, grads, velocity, config)
        _, metric = _validation_metric(model, val_ex, task)
        history.records.append(
            EpochRecord(
                epoch,
                loss_sum / len(train_ex),
                metric,
                model.pairwise.beta,
                norm_sum / len(train_ex),
            )
        )
        if track_best and (best_metric is None or _metric_improved(task, metric, best_metric)):
            best_metric = metric
            best_params = {name: value.copy() for name, value in params.items()}

    if track_best:
        for name, value in params.items():
            value[...] = best_params[name]
    return model, history
