"""Unified-and-aligned vs separated ablation at desk scale.

Both arms share the corpus, the pooling arithmetic, and the exact same
fine-tuning budget; the only difference is whether the visual encoder
was contrastively pre-aligned with the text encoder before features are
extracted. The runner reports mean and standard deviation of accuracy
and score per arm plus a delta row.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .data.corpus import generate_synthetic_corpus
from .data.records import split, validate_and_filter
from .errors import ConfigurationError, ContractError
from .evaluation import items_from_records, judge_rule_based, run_benchmark
from .pipeline import (build_model, compute_features, finetune_examples,
                       make_answer_fn, prealign_on_corpus)
from .training import finetune

ARMS = ("unified", "separated")


@dataclass
class ArmSummary:
    accuracy_mean: float
    accuracy_sd: float
    score_mean: float
    score_sd: float
    per_seed: list[dict] = field(default_factory=list)


@dataclass
class AblationResult:
    arms: dict[str, ArmSummary]
    arm_names: tuple[str, str]
    delta_accuracy: float
    delta_score: float
    wins: int  # seeds where the first arm's accuracy exceeds the second's
    seeds: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "arms": {
                name: {
                    "accuracy_mean": s.accuracy_mean,
                    "accuracy_sd": s.accuracy_sd,
                    "score_mean": s.score_mean,
                    "score_sd": s.score_sd,
                    "per_seed": list(s.per_seed),
                }
                for name, s in self.arms.items()
            },
            "arm_names": list(self.arm_names),
            "delta_accuracy": self.delta_accuracy,
            "delta_score": self.delta_score,
            "wins": self.wins,
            "seeds": list(self.seeds),
        }

    @staticmethod
    def from_dict(d: dict) -> "AblationResult":
        arms = {
            name: ArmSummary(
                accuracy_mean=float(s["accuracy_mean"]),
                accuracy_sd=float(s["accuracy_sd"]),
                score_mean=float(s["score_mean"]),
                score_sd=float(s["score_sd"]),
                per_seed=list(s["per_seed"]),
            )
            for name, s in d["arms"].items()
        }
        return AblationResult(
            arms=arms, arm_names=tuple(d["arm_names"]),
            delta_accuracy=float(d["delta_accuracy"]),
            delta_score=float(d["delta_score"]),
            wins=int(d["wins"]), seeds=list(d["seeds"]),
        )


def _run_arm(arm: str, seed: int, cfg: PipelineConfig,
             finetune_steps: int) -> dict:
    videos, records = generate_synthetic_corpus(
        cfg.desk_corpus_size, seed, cfg.label_distribution,
        frame_size=cfg.desk_frame_size)
    retained, _ = validate_and_filter(records)
    video_map = {r.video_id: v for r, v in zip(records, videos)}
    ds = split(retained, cfg.split_ratio, seed)
    if arm not in ARMS:
        raise ConfigurationError(f"unknown ablation arm {arm!r}")
    model, text = build_model(cfg, seed)
    if arm == "unified":
        prealign_on_corpus(model, text, video_map, ds.train,
                           steps=cfg.desk_prealign_steps,
                           lr=cfg.desk_prealign_lr, seed=seed)
    features = compute_features(model, video_map, mode=arm)
    train_cfg = cfg.train_config("finetune", seed=seed)
    train_cfg.mode = "regular"
    train_cfg.max_steps = finetune_steps
    # enough epochs that max_steps, not the epoch count, caps the run
    train_cfg.epochs = max(train_cfg.epochs, finetune_steps)
    finetune(model, finetune_examples(ds.train, features), train_cfg)
    result = run_benchmark(make_answer_fn(model, features),
                           items_from_records(ds.validation),
                           judge=judge_rule_based)
    return {"seed": seed, "accuracy": result.accuracy,
            "score": result.mean_score}


def _summarize(rows: list[dict]) -> ArmSummary:
    acc = [r["accuracy"] for r in rows]
    sco = [r["score"] for r in rows]
    sd = statistics.stdev if len(rows) > 1 else lambda _: 0.0
    return ArmSummary(
        accuracy_mean=statistics.mean(acc), accuracy_sd=float(sd(acc)),
        score_mean=statistics.mean(sco), score_sd=float(sd(sco)),
        per_seed=rows,
    )


def run_ablation(seeds: list[int], cfg: PipelineConfig | None = None,
                 arms: tuple[str, str] = ARMS,
                 budgets: dict[str, int] | None = None) -> AblationResult:
    """Train and evaluate both arms on every seed with matched budgets.

    ``budgets`` optionally gives per-arm fine-tuning step counts; they
    must be identical across arms (the comparison is meaningless
    otherwise).
    """
    if len(seeds) < 3:
        raise ContractError(f"ablation needs at least 3 seeds, got {len(seeds)}")
    cfg = cfg or PipelineConfig()
    if budgets is None:
        budgets = {arm: cfg.desk_finetune_steps for arm in arms}
    step_set = {budgets.get(arm, cfg.desk_finetune_steps) for arm in arms}
    if len(step_set) != 1:
        raise ConfigurationError(f"mismatched per-arm budgets: {budgets}")
    steps = step_set.pop()
    a_name, b_name = arms
    if a_name == b_name:  # self-comparison: disambiguate the report keys
        b_name = f"{b_name}#2"
    rows: dict[str, list[dict]] = {a_name: [], b_name: []}
    for seed in seeds:
        rows[a_name].append(_run_arm(arms[0], seed, cfg, steps))
        rows[b_name].append(_run_arm(arms[1], seed, cfg, steps))
    summaries = {name: _summarize(r) for name, r in rows.items()}
    wins = sum(1 for a, b in zip(rows[a_name], rows[b_name])
               if a["accuracy"] > b["accuracy"])
    return AblationResult(
        arms=summaries, arm_names=(a_name, b_name),
        delta_accuracy=summaries[a_name].accuracy_mean - summaries[b_name].accuracy_mean,
        delta_score=summaries[a_name].score_mean - summaries[b_name].score_mean,
        wins=wins, seeds=list(seeds),
    )


def format_ablation_table(result: AblationResult) -> str:
    """Text rendering: one row per arm, then the delta row."""
    a, b = result.arm_names
    lines = [f"{'arm':<22}{'accuracy (%)':>18}{'score':>14}"]
    for name in (a, b):
        s = result.arms[name]
        lines.append(f"{name:<22}{s.accuracy_mean:>10.1f} ± {s.accuracy_sd:<5.1f}"
                     f"{s.score_mean:>8.2f} ± {s.score_sd:<4.2f}")
    lines.append(f"{'Δ ' + a + ' − ' + b:<22}{result.delta_accuracy:>+12.1f}      "
                 f"{result.delta_score:>+8.2f}")
    lines.append(f"wins: {result.wins}/{len(result.seeds)} seeds")
    return "\n".join(lines)
