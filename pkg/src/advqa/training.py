"""Two-stage training: projection-only pre-training, then fine-tuning.

Pre-training updates only the projection MLP (plus, behind a flag, the
decoder word embeddings) against the autoregressive loss on single-round
(question, answer) pairs; everything else is held bit-identical. The
fine-tuning stage comes in three modes: ``frozen`` evaluates without
updating anything, ``regular`` trains decoder plus projection, and
``lora`` trains only low-rank adapters on attention matrices while the
base weights stay frozen. A parameter census records, per group, whether
it was trainable and how much it actually moved.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as T
from .config import TrainConfig
from .encoder import VisualEncoder
from .errors import ConfigurationError, ContractError
from .fusion import FrameEmbedding, separated_feature, unified_feature
from .model import ChatTurn, Decoder, ProjectionMLP, build_round_input, make_adapters, apply_lora
from .optim import AdamW, clip_global_norm
from .tensor import Tensor


@dataclass
class PipelineModel:
    """Visual encoder + projection + decoder, trained as one unit."""

    visual: VisualEncoder
    projection: ProjectionMLP
    decoder: Decoder

    def param_groups(self) -> dict[str, dict[str, Tensor]]:
        dec = self.decoder.parameters()
        word = {"dec.word_embedding": dec.pop("dec.word_embedding")}
        groups = {
            "visual": self.visual.parameters(),
            "projection": self.projection.parameters(),
            "word_embedding": word,
            "decoder": dec,
        }
        adapters = self.decoder.adapter_parameters()
        if adapters:
            groups["lora"] = adapters
        return groups

    def visual_feature(self, frames: np.ndarray, mode: str = "unified") -> np.ndarray:
        """Unified [F+N, D] (or separated [F, D]) feature; constant w.r.t.
        training (the visual encoder is only ever updated during
        pre-alignment)."""
        emb = self.visual.encode_frames(frames)
        if mode == "separated":
            return separated_feature(emb).data
        if mode != "unified":
            raise ConfigurationError(f"unknown feature mode {mode!r}")
        return unified_feature(emb).unified.data

    def visual_tokens(self, features: np.ndarray) -> Tensor:
        return self.projection.project(Tensor(features))

    def answer_log_likelihood(self, features: np.ndarray, question: list[int],
                              answer: list[int]) -> Tensor:
        total, _ = self.decoder.sequence_log_likelihood(
            self.visual_tokens(features), question, answer)
        return total


@dataclass
class PretrainExample:
    features: np.ndarray  # [F+N, D]
    question: list[int]
    answer: list[int]


@dataclass
class FinetuneExample:
    features: np.ndarray  # [F+N, D]
    turns: list[ChatTurn]
    label: str


@dataclass
class TrainReport:
    step_losses: list[float] = field(default_factory=list)
    step_lrs: list[float] = field(default_factory=list)
    epoch_metrics: list[dict] = field(default_factory=list)
    census: dict[str, dict] = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def to_jsonl(self, path: str | Path) -> None:
        """One record per step; census summary last. Timing is left to the
        run manifest so reports stay byte-reproducible."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as f:
            for i, (loss, lr) in enumerate(zip(self.step_losses, self.step_lrs)):
                f.write(json.dumps({"step": i, "loss": loss, "lr": lr}, sort_keys=True) + "\n")
            for rec in self.epoch_metrics:
                f.write(json.dumps({"epoch_metric": rec}, sort_keys=True) + "\n")
            f.write(json.dumps({"census": self.census}, sort_keys=True) + "\n")


def lr_at(step: int, cfg: TrainConfig, total_steps: int) -> float:
    """Linear warmup to the peak rate, then cosine decay to zero."""
    if step < 0 or step > total_steps:
        raise ContractError(f"step {step} outside [0, {total_steps}]")
    warmup = cfg.warmup_ratio * total_steps
    if warmup > 0 and step <= warmup:
        return cfg.learning_rate * step / warmup
    if total_steps == warmup:
        return cfg.learning_rate
    frac = (step - warmup) / (total_steps - warmup)
    return cfg.learning_rate * 0.5 * (1.0 + math.cos(math.pi * frac))


def _snapshot(groups: dict[str, dict[str, Tensor]]) -> dict[str, dict[str, np.ndarray]]:
    return {g: {n: t.data.copy() for n, t in ps.items()} for g, ps in groups.items()}


def _census(groups: dict[str, dict[str, Tensor]], before, trainable: set[str]) -> dict[str, dict]:
    out = {}
    for g, ps in groups.items():
        max_delta = 0.0
        for n, t in ps.items():
            max_delta = max(max_delta, float(np.abs(t.data - before[g][n]).max()))
        out[g] = {"trainable": g in trainable, "max_abs_delta": max_delta}
    return out


def _total_steps(n_examples: int, cfg: TrainConfig) -> int:
    per_epoch = max(1, math.ceil(n_examples / cfg.batch_size))
    total = per_epoch * cfg.epochs
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)
    return total


def _run_steps(loss_fn: Callable[[list[int]], Tensor], n_examples: int,
               params: list[Tensor], cfg: TrainConfig,
               eval_fn: Callable[[], dict] | None = None) -> TrainReport:
    report = TrainReport()
    start = time.perf_counter()
    total = _total_steps(n_examples, cfg)
    opt = AdamW(params, lr=cfg.learning_rate, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    step = 0
    per_epoch = max(1, math.ceil(n_examples / cfg.batch_size))
    for epoch in range(cfg.epochs):
        order = rng.permutation(n_examples)
        for b in range(per_epoch):
            if step >= total:
                break
            batch = list(order[b * cfg.batch_size:(b + 1) * cfg.batch_size])
            if not batch:
                continue
            opt.zero_grad()
            loss = loss_fn(batch)
            loss.backward()
            clip_global_norm(params, cfg.grad_clip)
            step += 1
            lr = lr_at(step, cfg, total)
            opt.step(lr=lr)
            report.step_losses.append(loss.item())
            report.step_lrs.append(lr)
        if eval_fn is not None:
            metric = eval_fn()
            metric["epoch"] = epoch
            report.epoch_metrics.append(metric)
        if step >= total:
            break
    report.wall_clock_s = time.perf_counter() - start
    return report


def pretrain(model: PipelineModel, dataset: list[PretrainExample], cfg: TrainConfig,
             eval_fn: Callable[[], dict] | None = None) -> TrainReport:
    """Autoregressive caption modeling with all non-projection weights held."""
    if cfg.stage != "pretrain":
        raise ConfigurationError(f"pretrain called with stage {cfg.stage!r}")
    if not dataset:
        raise ContractError("pretrain requires a non-empty dataset")
    groups = model.param_groups()
    trainable = {"projection"}
    if cfg.train_word_embeddings:
        trainable.add("word_embedding")
    before = _snapshot(groups)
    params = [t for g in sorted(trainable) for t in groups[g].values()]

    def batch_loss(batch: list[int]) -> Tensor:
        losses = []
        for i in batch:
            ex = dataset[i]
            nll = T.mul(model.answer_log_likelihood(ex.features, ex.question, ex.answer),
                        Tensor(-1.0 / len(ex.answer)))
            losses.append(T.reshape(nll, (1,)))
        return T.mul(T.tensor_sum(T.concat(losses, axis=0)), Tensor(1.0 / len(batch)))

    report = _run_steps(batch_loss, len(dataset), params, cfg, eval_fn)
    report.census = _census(groups, before, trainable)
    return report


def finetune(model: PipelineModel, dataset: list[FinetuneExample], cfg: TrainConfig,
             eval_fn: Callable[[], dict] | None = None) -> TrainReport:
    """Instruction tuning on multi-round chat data, loss on answers only."""
    if cfg.stage != "finetune":
        raise ConfigurationError(f"finetune called with stage {cfg.stage!r}")
    if not dataset:
        raise ContractError("finetune requires a non-empty dataset")
    if cfg.mode == "lora" and not model.decoder.adapters:
        apply_lora(model.decoder, make_adapters(
            model.decoder, rank=cfg.lora_rank, alpha=cfg.lora_alpha, seed=cfg.seed))
    groups = model.param_groups()
    before = _snapshot(groups)
    if cfg.mode == "frozen":
        trainable: set[str] = set()
    elif cfg.mode == "regular":
        trainable = {"projection", "decoder", "word_embedding"}
    else:
        trainable = {"lora"}

    def example_loss(ex: FinetuneExample) -> Tensor:
        parts = []
        n_tokens = 0
        for turn in ex.turns:
            ctx = build_round_input(ex.turns, turn.round_index)
            total, _ = model.decoder.sequence_log_likelihood(
                model.visual_tokens(ex.features), ctx, turn.answer)
            parts.append(T.reshape(total, (1,)))
            n_tokens += len(turn.answer)
        nll = T.mul(T.tensor_sum(T.concat(parts, axis=0)), Tensor(-1.0 / n_tokens))
        scale = cfg.class_weights.get(ex.label, 1.0) / cfg.loss_temperature
        return T.mul(nll, Tensor(scale))

    def batch_loss(batch: list[int]) -> Tensor:
        losses = [T.reshape(example_loss(dataset[i]), (1,)) for i in batch]
        return T.mul(T.tensor_sum(T.concat(losses, axis=0)), Tensor(1.0 / len(batch)))

    if cfg.mode == "frozen":
        # evaluation-only: record the dataset loss once, update nothing
        report = TrainReport()
        start = time.perf_counter()
        report.step_losses.append(batch_loss(list(range(len(dataset)))).item())
        report.step_lrs.append(0.0)
        if eval_fn is not None:
            metric = eval_fn()
            metric["epoch"] = 0
            report.epoch_metrics.append(metric)
        report.wall_clock_s = time.perf_counter() - start
    else:
        params = [t for g in sorted(trainable) for t in groups[g].values()]
        report = _run_steps(batch_loss, len(dataset), params, cfg, eval_fn)
    report.census = _census(groups, before, trainable)
    return report
