"""Glue between the corpus, encoders, trainer, and benchmark harness.

Builds the end-to-end model at desk scale, turns annotation records into
training examples, and answers benchmark questions closed-set: each
question is answered with the template whose tokens the decoder assigns
the highest mean log-probability, which keeps evaluation meaningful for
a small decoder that cannot be expected to free-generate exact phrasing.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import vocab
from .checkpoint import load_arrays, save_arrays
from .config import PipelineConfig
from .data.corpus import answer_templates
from .data.records import AnnotationRecord, LABELS
from .encoder import AlignmentConfig, TextEncoder, VisualEncoder, prealign
from .evaluation import DIMENSIONS, BenchmarkItem
from .model import ChatTurn, Decoder, ProjectionMLP
from .training import FinetuneExample, PipelineModel, PretrainExample


def build_model(cfg: PipelineConfig, seed: int) -> tuple[PipelineModel, TextEncoder]:
    visual = VisualEncoder(
        height=cfg.desk_frame_size, width=cfg.desk_frame_size, channels=3,
        patch_size=cfg.desk_patch_size, embed_dim=cfg.desk_embed_dim,
        rng=np.random.default_rng(seed))
    text = TextEncoder(vocab.VOCAB_SIZE, embed_dim=cfg.desk_embed_dim,
                       rng=np.random.default_rng(seed + 1))
    projection = ProjectionMLP(cfg.desk_embed_dim, cfg.desk_decoder_dim,
                               rng=np.random.default_rng(seed + 2))
    decoder = Decoder(vocab_size=vocab.VOCAB_SIZE, embed_dim=cfg.desk_decoder_dim,
                      rng=np.random.default_rng(seed + 3))
    return PipelineModel(visual=visual, projection=projection, decoder=decoder), text


def prealign_on_corpus(model: PipelineModel, text: TextEncoder,
                       videos: dict[str, np.ndarray],
                       records: list[AnnotationRecord],
                       steps: int, lr: float, seed: int,
                       max_pairs: int = 16) -> list[float]:
    """Contrastive pre-alignment on (video, caption) pairs from the
    training records; returns the loss history."""
    rng = np.random.default_rng(seed)
    recs = list(records)
    if len(recs) > max_pairs:
        picked = rng.choice(len(recs), size=max_pairs, replace=False)
        recs = [recs[i] for i in sorted(picked)]
    pairs = [(videos[r.video_id], vocab.encode(r.caption)) for r in recs]
    report = prealign(pairs, model.visual, text,
                      AlignmentConfig(steps=steps, learning_rate=lr, seed=seed))
    return report.loss_history


def compute_features(model: PipelineModel, videos: dict[str, np.ndarray],
                     mode: str = "unified") -> dict[str, np.ndarray]:
    """Frozen visual feature per video, keyed by video id."""
    return {vid: model.visual_feature(frames, mode=mode)
            for vid, frames in sorted(videos.items())}


def pretrain_examples(records: list[AnnotationRecord],
                      features: dict[str, np.ndarray]) -> list[PretrainExample]:
    """Caption-alignment stage data: describe the video (QA slot 0)."""
    out = []
    for rec in records:
        q, a = rec.qa_pairs[0]
        out.append(PretrainExample(features=features[rec.video_id],
                                   question=vocab.encode(q),
                                   answer=vocab.encode(a) + [vocab.EOS]))
    return out


def finetune_examples(records: list[AnnotationRecord],
                      features: dict[str, np.ndarray],
                      rounds_per_example: int = 1) -> list[FinetuneExample]:
    """One single-round example per QA slot, or multi-round chats when
    ``rounds_per_example`` > 1 (consecutive slots become rounds)."""
    out = []
    for rec in records:
        pairs = rec.qa_pairs
        for start in range(0, len(pairs), rounds_per_example):
            chunk = pairs[start:start + rounds_per_example]
            turns = [ChatTurn(question=vocab.encode(q),
                              answer=vocab.encode(a) + [vocab.EOS],
                              round_index=i + 1)
                     for i, (q, a) in enumerate(chunk)]
            out.append(FinetuneExample(features=features[rec.video_id],
                                       turns=turns, label=rec.label))
    return out


def save_pipeline_model(path, model: PipelineModel) -> None:
    """One checkpoint file holding every encoder/projection/decoder array."""
    arrays: dict[str, np.ndarray] = {}
    for group in (model.visual.parameters(), model.projection.parameters(),
                  model.decoder.parameters()):
        arrays.update({name: t.data for name, t in group.items()})
    v = model.visual
    arrays["meta.visual"] = np.array(
        [v.height, v.width, v.channels, v.patch_size, v.embed_dim], dtype=np.float64)
    d = model.decoder
    arrays["meta.decoder"] = np.array(
        [d.vocab_size, d.embed_dim, d.n_blocks, d.n_heads, d.max_seq], dtype=np.float64)
    save_arrays(path, arrays)


def load_pipeline_model(path) -> PipelineModel:
    arrays = load_arrays(path)
    h, w, c, p, d = (int(x) for x in arrays["meta.visual"])
    vs, ks, nb, nh, ms = (int(x) for x in arrays["meta.decoder"])
    visual = VisualEncoder(height=h, width=w, channels=c, patch_size=p, embed_dim=d)
    projection = ProjectionMLP(d, ks)
    decoder = Decoder(vocab_size=vs, embed_dim=ks, n_blocks=nb, n_heads=nh, max_seq=ms)
    model = PipelineModel(visual=visual, projection=projection, decoder=decoder)
    for group in (visual.parameters(), projection.parameters(), decoder.parameters()):
        for name, t in group.items():
            t.data[:] = arrays[name]
    return model


def answer_bank() -> dict[str, list[str]]:
    """Candidate answers per dimension, over all labels and illumination
    variants, in a deterministic order."""
    bank: dict[str, list[str]] = {dim: [] for dim in DIMENSIONS}
    for label in LABELS:
        for ill in ("good",) if label != "ambiguous" else ("dark", "blurry"):
            for dim, ans in zip(DIMENSIONS, answer_templates(label, ill)):
                if ans not in bank[dim]:
                    bank[dim].append(ans)
    return bank


def make_answer_fn(model: PipelineModel,
                   features: dict[str, np.ndarray]) -> Callable[[BenchmarkItem, str, str], str]:
    """Closed-set answering: pick the bank answer with the highest mean
    per-token log-probability under the decoder."""
    bank = answer_bank()

    def answer(item: BenchmarkItem, dimension: str, question: str) -> str:
        feats = features[item.item_id]
        q_tokens = vocab.encode(question)
        best, best_ll = None, -np.inf
        for cand in bank[dimension]:
            tokens = vocab.encode(cand) + [vocab.EOS]
            total = model.answer_log_likelihood(feats, q_tokens, tokens)
            ll = total.item() / len(tokens)
            if ll > best_ll:
                best, best_ll = cand, ll
        return best

    return answer
