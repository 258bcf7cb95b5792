"""Toy visual and text encoders plus contrastive pre-alignment.

The visual encoder is a learnable linear patch projection with additive
positional embeddings; the text encoder is a mean-pooled, L2-normalized
token embedding. Pre-alignment trains both against each other with a
symmetric InfoNCE loss over video/caption batches, binding video
descriptors and caption vectors into one shared latent space before any
projection into the decoder is attached.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fusion
from . import tensor as T
from .checkpoint import load_arrays, save_arrays
from .errors import ConfigurationError, ContractError
from .optim import AdamW
from .tensor import Tensor


def validate_geometry(frames: int, height: int, width: int, patch_size: int) -> int:
    """Check a video geometry without allocating anything.

    Returns the patch-token count N = (H/p) * (W/p).
    """
    if frames < 1:
        raise ConfigurationError(f"frame count must be positive, got {frames}")
    if patch_size < 1:
        raise ConfigurationError(f"patch size must be positive, got {patch_size}")
    if height % patch_size or width % patch_size:
        raise ConfigurationError(
            f"frame dimensions H={height}, W={width} not divisible by patch size p={patch_size}"
        )
    return (height // patch_size) * (width // patch_size)


class VisualEncoder:
    """Linear patch encoder for a fixed frame geometry."""

    def __init__(self, height: int, width: int, channels: int = 3,
                 patch_size: int = 8, embed_dim: int = 32,
                 rng: np.random.Generator | None = None):
        n_patches = validate_geometry(1, height, width, patch_size)
        rng = rng or np.random.default_rng(0)
        self.height = height
        self.width = width
        self.channels = channels
        self.patch_size = patch_size
        self.embed_dim = embed_dim
        self.n_patches = n_patches
        in_dim = patch_size * patch_size * channels
        scale = 1.0 / np.sqrt(in_dim)
        self.patch_projection = Tensor(rng.normal(0.0, scale, (in_dim, embed_dim)), requires_grad=True)
        self.positional_embedding = Tensor(np.zeros((n_patches, embed_dim)), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {
            "visual.patch_projection": self.patch_projection,
            "visual.positional_embedding": self.positional_embedding,
        }

    def encode_frames(self, frames: np.ndarray) -> fusion.FrameEmbedding:
        """Embed a raw [F, H, W, C] frame stack to [F, h, w, D] patch tokens."""
        frames = np.asarray(frames, dtype=np.float64)
        if frames.ndim != 4:
            raise ContractError(f"expected [F, H, W, C] frames, got shape {frames.shape}")
        F, H, W, C = frames.shape
        if (H, W, C) != (self.height, self.width, self.channels):
            raise ConfigurationError(
                f"frame geometry {(H, W, C)} does not match encoder {(self.height, self.width, self.channels)}"
            )
        p = self.patch_size
        h, w = H // p, W // p
        patches = (
            frames.reshape(F, h, p, w, p, C)
            .transpose(0, 1, 3, 2, 4, 5)
            .reshape(F * h * w, p * p * C)
        )
        tokens = T.matmul(Tensor(patches), self.patch_projection)
        tokens = T.add(tokens, T.tile_rows(self.positional_embedding, F))
        return fusion.FrameEmbedding(tokens=tokens, frames=F, grid_h=h, grid_w=w)


class TextEncoder:
    """Mean-pooled token embeddings, L2-normalized onto the unit sphere."""

    def __init__(self, vocab_size: int, embed_dim: int = 32,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(1)
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.token_embedding = Tensor(
            rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (vocab_size, embed_dim)),
            requires_grad=True,
        )

    def parameters(self) -> dict[str, Tensor]:
        return {"text.token_embedding": self.token_embedding}

    def encode_caption(self, tokens: list[int]) -> Tensor:
        """Unit-norm mean of token embedding rows, shape [D]."""
        if not tokens:
            raise ContractError("caption must contain at least one token")
        rows = T.embedding(self.token_embedding, tokens)
        return T.l2_normalize(T.mean_over_axis(rows, 0))


@dataclass
class AlignmentConfig:
    temperature: float = 0.07
    steps: int = 200
    learning_rate: float = 1e-2
    seed: int = 0
    train_visual: bool = True   # the source text never settles this; both by default
    train_text: bool = True
    masked_token_loss: bool = False
    mask_fraction: float = 0.15
    mask_weight: float = 0.1

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigurationError(f"temperature must be positive, got {self.temperature}")


@dataclass
class AlignmentReport:
    loss_history: list[float] = field(default_factory=list)


def video_descriptor(visual: VisualEncoder, frames: np.ndarray) -> Tensor:
    """L2-normalized mean over all F+N unified tokens, shape [1, D]."""
    emb = visual.encode_frames(frames)
    v = fusion.unified_feature(emb).unified
    mean = T.mean_over_axis(v, 0)
    return T.reshape(T.l2_normalize(mean), (1, visual.embed_dim))


def contrastive_loss(visual: VisualEncoder, text: TextEncoder,
                     pairs: list[tuple[np.ndarray, list[int]]],
                     temperature: float) -> Tensor:
    """Symmetric InfoNCE over a batch of (frames, caption tokens) pairs."""
    vids = T.concat([video_descriptor(visual, f) for f, _ in pairs], axis=0)
    caps = T.concat([T.reshape(text.encode_caption(c), (1, text.embed_dim)) for _, c in pairs], axis=0)
    logits = T.mul(T.matmul(vids, T.transpose(caps)), Tensor(1.0 / temperature))
    idx = list(range(len(pairs)))
    loss_v = T.softmax_cross_entropy(logits, idx)
    loss_t = T.softmax_cross_entropy(T.transpose(logits), idx)
    return T.mul(T.add(loss_v, loss_t), Tensor(0.5))


def masked_reconstruction_loss(visual: VisualEncoder, frames: np.ndarray,
                               mask_fraction: float, rng: np.random.Generator) -> Tensor:
    """Reconstruct masked patch tokens from the mean of their frame's
    unmasked tokens; squared-error penalty regularizes the encoder."""
    emb = visual.encode_frames(frames)
    F, N, D = emb.frames, emb.n_patches, emb.embed_dim
    grid = T.reshape(emb.tokens, (F, N, D))
    n_mask = max(1, int(round(mask_fraction * N)))
    total = Tensor(0.0)
    for f in range(F):
        masked = rng.choice(N, size=n_mask, replace=False)
        keep = np.setdiff1d(np.arange(N), masked)
        frame = T.narrow(grid, 0, f, 1)  # [1, N, D]
        frame = T.reshape(frame, (N, D))
        kept_mean = T.mean_over_axis(
            T.concat([T.narrow(frame, 0, int(i), 1) for i in keep], axis=0), 0
        )
        for i in masked:
            tok = T.reshape(T.narrow(frame, 0, int(i), 1), (D,))
            diff = T.sub(tok, kept_mean)
            total = T.add(total, T.tensor_sum(T.mul(diff, diff)))
    return T.mul(total, Tensor(1.0 / (F * n_mask * D)))


def prealign(pairs: list[tuple[np.ndarray, list[int]]],
             visual: VisualEncoder, text: TextEncoder,
             cfg: AlignmentConfig) -> AlignmentReport:
    """Contrastively align video descriptors with caption embeddings.

    Trains whichever encoders the config marks trainable (both by
    default) and returns the per-step loss history.
    """
    if len(pairs) < 2:
        raise ContractError("pre-alignment needs at least 2 pairs (contrastive negatives)")
    params: list[Tensor] = []
    if cfg.train_visual:
        params.extend(visual.parameters().values())
    if cfg.train_text:
        params.extend(text.parameters().values())
    if not params:
        raise ConfigurationError("pre-alignment with both encoders frozen is a no-op")
    opt = AdamW(params, lr=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    report = AlignmentReport()
    for _ in range(cfg.steps):
        opt.zero_grad()
        loss = contrastive_loss(visual, text, pairs, cfg.temperature)
        if cfg.masked_token_loss:
            aux = Tensor(0.0)
            for frames, _ in pairs:
                aux = T.add(aux, masked_reconstruction_loss(visual, frames, cfg.mask_fraction, rng))
            loss = T.add(loss, T.mul(aux, Tensor(cfg.mask_weight / len(pairs))))
        loss.backward()
        opt.step()
        report.loss_history.append(loss.item())
    return report


def save_encoders(path: str | Path, visual: VisualEncoder, text: TextEncoder) -> None:
    arrays = {name: t.data for name, t in {**visual.parameters(), **text.parameters()}.items()}
    arrays["visual.meta"] = np.array(
        [visual.height, visual.width, visual.channels, visual.patch_size, visual.embed_dim],
        dtype=np.float64,
    )
    arrays["text.meta"] = np.array([text.vocab_size, text.embed_dim], dtype=np.float64)
    save_arrays(path, arrays)


def load_encoders(path: str | Path) -> tuple[VisualEncoder, TextEncoder]:
    arrays = load_arrays(path)
    h, w, c, p, d = (int(x) for x in arrays["visual.meta"])
    v, dt = (int(x) for x in arrays["text.meta"])
    visual = VisualEncoder(h, w, c, p, d)
    text = TextEncoder(v, dt)
    visual.patch_projection.data[:] = arrays["visual.patch_projection"]
    visual.positional_embedding.data[:] = arrays["visual.positional_embedding"]
    text.token_embedding.data[:] = arrays["text.token_embedding"]
    return visual, text
