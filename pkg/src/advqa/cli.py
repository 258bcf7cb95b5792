"""Command-line operator surface.

Single binary with subcommands: generate, validate, split, balance,
prealign, pretrain, finetune, benchmark, ablate, pipeline, report.
Every command emits a machine-readable JSON report plus a text rendering
(and figures where curves or comparisons are involved), and appends one
hash-chained record to the output directory's run manifest.

Exit codes: 0 success, 1 runtime failure, 2 configuration/contract error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import vocab
from .ablation import AblationResult, format_ablation_table, run_ablation
from .config import PipelineConfig, read_config
from .data import (balance, canonical_json, generate_synthetic_corpus,
                   load_manifest, save_corpus, split, validate_and_filter)
from .data.balance import FeaturePoint
from .encoder import AlignmentConfig, prealign, save_encoders
from .errors import ConfigurationError, ContractError, DataError
from .evaluation import (ExternalProcessJudge, items_from_records,
                         judge_rule_based, run_benchmark)
from .manifest import RunManifest, append_manifest, git_describe
from .model import save_adapters
from .pipeline import (build_model, compute_features, finetune_examples,
                       load_pipeline_model, make_answer_fn, prealign_on_corpus,
                       pretrain_examples, save_pipeline_model)
from .plots import plot_ablation, plot_benchmark, plot_loss_curve, plot_report
from .training import finetune, pretrain

REPORT_ROW_ORDER = ("pre-trained", "regular", "lora")
CONFIG_ERRORS = (ConfigurationError, ContractError, DataError)


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _load_cfg(args) -> PipelineConfig:
    cfg = read_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _emit(out_dir: Path, name: str, payload: dict, text: str) -> list[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    json_path = out_dir / f"{name}.json"
    txt_path = out_dir / f"{name}.txt"
    json_path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
    txt_path.write_text(text + "\n")
    print(text)
    return [str(json_path), str(txt_path)]


def _load_corpus(corpus_dir: Path):
    manifest = corpus_dir / "corpus_manifest.json"
    if not manifest.exists():
        raise DataError(f"no corpus manifest at {manifest}; run generate first")
    return load_manifest(manifest)


def _train_val(records, cfg: PipelineConfig):
    retained, rejected = validate_and_filter(records)
    if not retained:
        raise DataError("no valid records in corpus")
    ds = split(retained, cfg.split_ratio, cfg.seed)
    return ds, rejected


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_generate(args, cfg: PipelineConfig, out: Path) -> list[str]:
    n = args.n if args.n is not None else cfg.desk_corpus_size
    videos, records = generate_synthetic_corpus(
        n, cfg.seed, cfg.label_distribution, frame_size=cfg.desk_frame_size)
    corpus_dir = out / "corpus"
    manifest = save_corpus(corpus_dir, videos, records)
    counts = {l: sum(r.label == l for r in records)
              for l in sorted({r.label for r in records})}
    payload = {"n": n, "seed": cfg.seed, "label_counts": counts,
               "corpus_manifest": str(manifest)}
    text = "\n".join([f"generated {n} videos (seed {cfg.seed})"] +
                     [f"  {l:<10} {c}" for l, c in counts.items()])
    return _emit(out, "generate_report", payload, text) + [str(manifest)]


def cmd_validate(args, cfg: PipelineConfig, out: Path) -> list[str]:
    _, records = _load_corpus(Path(args.corpus or out / "corpus"))
    retained, rejected = validate_and_filter(records)
    reasons: dict[str, int] = {}
    for _, reason in rejected:
        reasons[reason] = reasons.get(reason, 0) + 1
    payload = {"total": len(records), "retained": len(retained),
               "rejected": len(rejected), "reasons": reasons}
    text = "\n".join(
        [f"validated {len(records)} records: {len(retained)} retained, "
         f"{len(rejected)} rejected"] +
        [f"  {r:<24} {c}" for r, c in sorted(reasons.items())])
    return _emit(out, "validate_report", payload, text)


def cmd_split(args, cfg: PipelineConfig, out: Path) -> list[str]:
    _, records = _load_corpus(Path(args.corpus or out / "corpus"))
    ds, _ = _train_val(records, cfg)
    payload = {
        "ratio": cfg.split_ratio, "seed": cfg.seed,
        "train": [r.video_id for r in ds.train],
        "validation": [r.video_id for r in ds.validation],
    }
    text = (f"split {len(ds.train) + len(ds.validation)} records "
            f"(ratio {cfg.split_ratio}): train {len(ds.train)}, "
            f"validation {len(ds.validation)}, patient-disjoint")
    return _emit(out, "split_report", payload, text)


def cmd_balance(args, cfg: PipelineConfig, out: Path) -> list[str]:
    videos, records = _load_corpus(Path(args.corpus or out / "corpus"))
    if any(v is None for v in videos):
        raise DataError("balance needs rendered videos in the corpus")
    video_map = {r.video_id: v for r, v in zip(records, videos)}
    ds, _ = _train_val(records, cfg)
    model, _ = build_model(cfg, cfg.seed)
    points = [FeaturePoint(
        feature=model.visual_feature(video_map[r.video_id]).mean(axis=0),
        label=r.label, source_id=r.video_id) for r in ds.train]
    balanced = balance(points, cfg.balance_target, cfg.smote_k, cfg.seed)
    before = {l: sum(p.label == l for p in points) for l in cfg.balance_target}
    after = {l: sum(p.label == l for p in balanced) for l in cfg.balance_target}
    synth = sum(p.synthetic for p in balanced)
    feats = np.stack([p.feature for p in balanced])
    labels = [p.label for p in balanced]
    npz_path = out / "balanced_features.npz"
    np.savez(npz_path, features=feats, labels=np.array(labels),
             synthetic=np.array([p.synthetic for p in balanced]))
    payload = {"before": before, "after": after, "synthetic": synth,
               "k": cfg.smote_k, "features_file": str(npz_path)}
    text = "\n".join(
        [f"balanced training split with k={cfg.smote_k} "
         f"({synth} synthetic points)"] +
        [f"  {l:<10} {before[l]:>4} -> {after[l]:>4}" for l in sorted(before)])
    return _emit(out, "balance_report", payload, text) + [str(npz_path)]


def cmd_prealign(args, cfg: PipelineConfig, out: Path) -> list[str]:
    videos, records = _load_corpus(Path(args.corpus or out / "corpus"))
    if any(v is None for v in videos):
        raise DataError("prealign needs rendered videos in the corpus")
    video_map = {r.video_id: v for r, v in zip(records, videos)}
    ds, _ = _train_val(records, cfg)
    model, text_enc = build_model(cfg, cfg.seed)
    losses = prealign_on_corpus(model, text_enc, video_map, ds.train,
                                steps=cfg.desk_prealign_steps,
                                lr=cfg.desk_prealign_lr, seed=cfg.seed)
    enc_path = out / "encoders.adcv"
    save_encoders(enc_path, model.visual, text_enc)
    fig = plot_loss_curve(losses, out / "prealign_loss.png", "pre-alignment loss")
    payload = {"steps": len(losses), "initial_loss": losses[0],
               "final_loss": losses[-1], "loss_history": losses,
               "encoders": str(enc_path)}
    text = (f"pre-aligned encoders over {len(losses)} steps: "
            f"loss {losses[0]:.4f} -> {losses[-1]:.4f}")
    return _emit(out, "prealign_report", payload, text) + [str(enc_path), str(fig)]


def _prepare_model(cfg: PipelineConfig, out: Path, video_map, train_records,
                   run_prealign: bool):
    model, text_enc = build_model(cfg, cfg.seed)
    if run_prealign:
        prealign_on_corpus(model, text_enc, video_map, train_records,
                           steps=cfg.desk_prealign_steps,
                           lr=cfg.desk_prealign_lr, seed=cfg.seed)
    return model


def cmd_pretrain(args, cfg: PipelineConfig, out: Path) -> list[str]:
    videos, records = _load_corpus(Path(args.corpus or out / "corpus"))
    if any(v is None for v in videos):
        raise DataError("pretrain needs rendered videos in the corpus")
    video_map = {r.video_id: v for r, v in zip(records, videos)}
    ds, _ = _train_val(records, cfg)
    model = _prepare_model(cfg, out, video_map, ds.train, run_prealign=True)
    features = compute_features(model, video_map)
    train_cfg = cfg.train_config("pretrain")
    train_cfg.epochs = max(train_cfg.epochs, train_cfg.max_steps or 0)
    report = pretrain(model, pretrain_examples(ds.train, features), train_cfg)
    model_path = out / "model_pretrained.adcv"
    save_pipeline_model(model_path, model)
    report.to_jsonl(out / "pretrain_report.jsonl")
    fig = plot_loss_curve(report.step_losses, out / "pretrain_loss.png",
                          "projection pre-training loss")
    payload = {"steps": len(report.step_losses),
               "initial_loss": report.step_losses[0],
               "final_loss": report.step_losses[-1],
               "model": str(model_path)}
    text = (f"pre-trained projection over {len(report.step_losses)} steps: "
            f"loss {report.step_losses[0]:.4f} -> {report.step_losses[-1]:.4f}")
    return _emit(out, "pretrain_summary", payload, text) + [
        str(model_path), str(out / "pretrain_report.jsonl"), str(fig)]


def cmd_finetune(args, cfg: PipelineConfig, out: Path) -> list[str]:
    videos, records = _load_corpus(Path(args.corpus or out / "corpus"))
    if any(v is None for v in videos):
        raise DataError("finetune needs rendered videos in the corpus")
    video_map = {r.video_id: v for r, v in zip(records, videos)}
    ds, _ = _train_val(records, cfg)
    mode = args.mode or cfg.mode
    model_path = Path(args.model) if args.model else out / "model_pretrained.adcv"
    if model_path.exists():
        model = load_pipeline_model(model_path)
    else:
        model = _prepare_model(cfg, out, video_map, ds.train, run_prealign=True)
    features = compute_features(model, video_map)
    train_cfg = cfg.train_config("finetune")
    train_cfg.mode = mode
    train_cfg.epochs = max(train_cfg.epochs, train_cfg.max_steps or 0)
    report = finetune(model, finetune_examples(ds.train, features), train_cfg)
    outputs = []
    tuned_path = out / f"model_finetuned_{mode}.adcv"
    save_pipeline_model(tuned_path, model)
    outputs.append(str(tuned_path))
    if mode == "lora":
        adapter_path = out / "adapters_lora.adcv"
        save_adapters(adapter_path, list(model.decoder.adapters.values()))
        outputs.append(str(adapter_path))
    report.to_jsonl(out / f"finetune_report_{mode}.jsonl")
    fig = plot_loss_curve(report.step_losses, out / f"finetune_loss_{mode}.png",
                          f"fine-tuning loss ({mode})")
    payload = {"mode": mode, "steps": len(report.step_losses),
               "initial_loss": report.step_losses[0],
               "final_loss": report.step_losses[-1],
               "census": report.census, "model": str(tuned_path)}
    text = (f"fine-tuned ({mode}) over {len(report.step_losses)} steps: "
            f"loss {report.step_losses[0]:.4f} -> {report.step_losses[-1]:.4f}")
    return _emit(out, f"finetune_summary_{mode}", payload, text) + outputs + [
        str(out / f"finetune_report_{mode}.jsonl"), str(fig)]


def cmd_benchmark(args, cfg: PipelineConfig, out: Path) -> list[str]:
    videos, records = _load_corpus(Path(args.corpus or out / "corpus"))
    if any(v is None for v in videos):
        raise DataError("benchmark needs rendered videos in the corpus")
    video_map = {r.video_id: v for r, v in zip(records, videos)}
    ds, _ = _train_val(records, cfg)
    model_path = Path(args.model) if args.model else out / f"model_finetuned_{cfg.mode}.adcv"
    if not model_path.exists():
        raise DataError(f"no model checkpoint at {model_path}")
    model = load_pipeline_model(model_path)
    features = compute_features(model, video_map)
    judge = (ExternalProcessJudge(args.judge_cmd.split())
             if args.judge_cmd else judge_rule_based)
    result = run_benchmark(make_answer_fn(model, features),
                           items_from_records(ds.validation), judge=judge)
    fig = plot_benchmark(result.dimension_scores, result.accuracy,
                         out / "benchmark.png")
    payload = result.to_dict()
    lines = [f"benchmark on {result.n_items} validation items: "
             f"accuracy {result.accuracy:.1f}%, mean score {result.mean_score:.2f}"]
    lines += [f"  {d:<14} {s:.2f}" for d, s in result.dimension_scores.items()]
    outputs = _emit(out, "benchmark_result", payload, "\n".join(lines))
    if args.tuning_type:
        ledger_path = out / "results_ledger.json"
        entries = []
        if ledger_path.exists():
            entries = json.loads(ledger_path.read_text()).get("entries", [])
        entries = [e for e in entries if e["tuning_type"] != args.tuning_type]
        entries.append({"tuning_type": args.tuning_type,
                        "accuracy": result.accuracy,
                        "score": result.mean_score})
        ledger_path.write_text(json.dumps({"entries": entries},
                                          sort_keys=True, indent=2) + "\n")
        outputs.append(str(ledger_path))
    return outputs + [str(fig)]


def cmd_ablate(args, cfg: PipelineConfig, out: Path) -> list[str]:
    seeds = [int(s) for s in args.seeds.split(",")]
    result = run_ablation(seeds, cfg)
    table = format_ablation_table(result)
    fig = plot_ablation(result.to_dict(), out / "ablation.png")
    outputs = _emit(out, "ablation_result", result.to_dict(), table)
    return outputs + [str(fig)]


def cmd_report(args, cfg: PipelineConfig, out: Path) -> list[str]:
    ledger_path = Path(args.ledger) if args.ledger else out / "results_ledger.json"
    if not ledger_path.exists():
        raise DataError(f"no results ledger at {ledger_path}")
    try:
        entries = json.loads(ledger_path.read_text())["entries"]
        rows = {e["tuning_type"]: (float(e["accuracy"]), float(e["score"]))
                for e in entries}
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise DataError(f"{ledger_path}: malformed results ledger: {e}") from e
    lines = [f"{'Tuning Type':<14}{'Accuracy (%)':>14}{'Score':>9}"]
    ordered = []
    for name in REPORT_ROW_ORDER:
        if name in rows:
            acc, score = rows[name]
            lines.append(f"{name:<14}{acc:>14.1f}{score:>9.2f}")
            ordered.append({"tuning_type": name, "accuracy": acc, "score": score})
    text = "\n".join(lines)
    outputs = _emit(out, "report_table", {"rows": ordered}, text)
    if ordered:
        fig = plot_report(ordered, out / "report.png")
        outputs.append(str(fig))
    return outputs


# ---------------------------------------------------------------------------
# pipeline with stage resume
# ---------------------------------------------------------------------------

PIPELINE_STAGES = ("generate", "validate", "split", "balance", "prealign",
                   "pretrain", "finetune", "benchmark")


def cmd_pipeline(args, cfg: PipelineConfig, out: Path) -> list[str]:
    """Run all stages in order, resuming after the last completed one.

    Stage completion is tracked by marker files; rerunning with the same
    output directory skips anything already done."""
    outputs: list[str] = []
    marker_dir = out / "stages"
    marker_dir.mkdir(parents=True, exist_ok=True)
    handlers = {
        "generate": cmd_generate, "validate": cmd_validate,
        "split": cmd_split, "balance": cmd_balance,
        "prealign": cmd_prealign, "pretrain": cmd_pretrain,
        "finetune": cmd_finetune, "benchmark": cmd_benchmark,
    }
    ns = argparse.Namespace(
        n=getattr(args, "n", None), corpus=str(out / "corpus"),
        mode=cfg.mode, model=None, judge_cmd=None, tuning_type=cfg.mode)
    for stage in PIPELINE_STAGES:
        marker = marker_dir / f"{stage}.done"
        if marker.exists():
            print(f"stage {stage}: already complete, skipping")
            continue
        if stage == "finetune":
            ns.model = str(out / "model_pretrained.adcv")
        if stage == "benchmark":
            ns.model = str(out / f"model_finetuned_{cfg.mode}.adcv")
        try:
            stage_outputs = handlers[stage](ns, cfg, out)
        except Exception:
            (marker_dir / f"{stage}.failed").write_text(
                json.dumps({"stage": stage}) + "\n")
            raise
        outputs.extend(stage_outputs)
        marker.write_text(json.dumps({"stage": stage, "outputs": stage_outputs},
                                     sort_keys=True) + "\n")
    print(f"pipeline complete: artifacts in {out}")
    return outputs


# ---------------------------------------------------------------------------
# argument parsing and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advqa",
        description="Medication-adherence video VQA pipeline (desk scale).")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="config file path")
    common.add_argument("--seed", type=int, default=None, help="global seed")
    common.add_argument("--out", default="runs", help="output directory")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="render a synthetic corpus")
    p.add_argument("--n", type=int, default=None, help="corpus size")
    for name in ("validate", "split"):
        p = sub.add_parser(name, parents=[common])
        p.add_argument("--corpus", default=None, help="corpus directory")
    p = sub.add_parser("balance", parents=[common], help="rebalance the training split")
    p.add_argument("--corpus", default=None)
    p = sub.add_parser("prealign", parents=[common], help="contrastive pre-alignment")
    p.add_argument("--corpus", default=None)
    p = sub.add_parser("pretrain", parents=[common], help="projection pre-training")
    p.add_argument("--corpus", default=None)
    p = sub.add_parser("finetune", parents=[common], help="instruction tuning")
    p.add_argument("--corpus", default=None)
    p.add_argument("--model", default=None, help="checkpoint to start from")
    p.add_argument("--mode", choices=("frozen", "regular", "lora"), default=None)
    p = sub.add_parser("benchmark", parents=[common], help="five-dimension evaluation")
    p.add_argument("--corpus", default=None)
    p.add_argument("--model", default=None)
    p.add_argument("--judge-cmd", default=None,
                   help="external judge command (JSON on stdin/stdout)")
    p.add_argument("--tuning-type", default=None,
                   help="record the result under this tuning type")
    p = sub.add_parser("ablate", parents=[common], help="unified vs separated ablation")
    p.add_argument("--seeds", default="0,1,2,3,4", help="comma-separated seeds")
    p = sub.add_parser("pipeline", parents=[common], help="run every stage in order")
    p.add_argument("--n", type=int, default=None, help="corpus size")
    p = sub.add_parser("report", parents=[common], help="render the results table")
    p.add_argument("--ledger", default=None, help="results ledger JSON")
    return parser


COMMANDS = {
    "generate": cmd_generate, "validate": cmd_validate, "split": cmd_split,
    "balance": cmd_balance, "prealign": cmd_prealign, "pretrain": cmd_pretrain,
    "finetune": cmd_finetune, "benchmark": cmd_benchmark, "ablate": cmd_ablate,
    "pipeline": cmd_pipeline, "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = Path(args.out)
    start = time.time()
    status = 0
    outputs: list[str] = []
    try:
        cfg = _load_cfg(args)
        outputs = COMMANDS[args.command](args, cfg, out)
    except CONFIG_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        status = 2
    except Exception as e:  # runtime failure
        print(f"runtime failure: {type(e).__name__}: {e}", file=sys.stderr)
        status = 1
    try:
        append_manifest(out, RunManifest(
            command=args.command, config_path=args.config,
            seed=args.seed if args.seed is not None else -1,
            git_describe=git_describe(), outputs=outputs,
            wall_clock_s=time.time() - start, exit_status=status))
    except OSError:
        pass
    return status


if __name__ == "__main__":
    sys.exit(main())
