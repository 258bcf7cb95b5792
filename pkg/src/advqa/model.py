"""Projection MLP, toy causal decoder, LoRA adapters, and chat rounds.

The projection is a 2-layer GELU MLP mapping unified visual tokens
(width D) into the decoder embedding space (width K); hidden width is
2*D. The decoder is a small pre-norm causal transformer (2 blocks,
4 heads, 64-wide, 64-token vocabulary by default) scoring answer tokens
by teacher forcing: the total sequence log-likelihood factorizes into
per-step log-softmax terms, each conditioned only on the visual prefix,
the question, and earlier answer tokens.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .checkpoint import load_arrays, save_arrays
from .errors import ConfigurationError, ContractError
from .fusion import UnifiedVisualFeature
from .tensor import Tensor
from .vocab import SEP


class ProjectionMLP:
    """Row-wise D -> 2D -> K MLP with GELU between the layers."""

    def __init__(self, in_dim: int, out_dim: int, hidden_dim: int | None = None,
                 rng: np.random.Generator | None = None):
        rng = rng or np.random.default_rng(0)
        hidden_dim = hidden_dim or 2 * in_dim
        self.in_dim, self.hidden_dim, self.out_dim = in_dim, hidden_dim, out_dim
        self.w1 = Tensor(rng.normal(0.0, 1.0 / np.sqrt(in_dim), (in_dim, hidden_dim)), requires_grad=True)
        self.b1 = Tensor(np.zeros(hidden_dim), requires_grad=True)
        self.w2 = Tensor(rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), (hidden_dim, out_dim)), requires_grad=True)
        self.b2 = Tensor(np.zeros(out_dim), requires_grad=True)

    def parameters(self) -> dict[str, Tensor]:
        return {"proj.w1": self.w1, "proj.b1": self.b1, "proj.w2": self.w2, "proj.b2": self.b2}

    def project(self, v: UnifiedVisualFeature | Tensor) -> Tensor:
        x = v.unified if isinstance(v, UnifiedVisualFeature) else v
        if x.shape[-1] != self.in_dim:
            raise T.ShapeError(f"projection expects width {self.in_dim}, got {x.shape}")
        h = T.gelu(T.add(T.matmul(x, self.w1), self.b1))
        return T.add(T.matmul(h, self.w2), self.b2)


@dataclass
class LoraAdapter:
    """Additive low-rank path for one named weight matrix.

    Effective weight is W + (alpha/rank) * A @ B with A zero-initialized,
    so a freshly attached adapter leaves the model output untouched.
    """

    target: str
    A: Tensor  # [in, rank], zeros at init
    B: Tensor  # [rank, out]
    rank: int
    alpha: float

    @classmethod
    def create(cls, target: str, in_dim: int, out_dim: int, rank: int,
               alpha: float = 8.0, rng: np.random.Generator | None = None) -> "LoraAdapter":
        rng = rng or np.random.default_rng(0)
        A = Tensor(np.zeros((in_dim, rank)), requires_grad=True)
        B = Tensor(rng.normal(0.0, 1.0 / np.sqrt(rank), (rank, out_dim)), requires_grad=True)
        return cls(target=target, A=A, B=B, rank=rank, alpha=alpha)

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank

    def delta(self) -> Tensor:
        return T.mul(T.matmul(self.A, self.B), Tensor(self.scaling))

    def parameters(self) -> dict[str, Tensor]:
        return {f"lora.{self.target}.A": self.A, f"lora.{self.target}.B": self.B}


class Decoder:
    """Causal transformer decoder with teacher-forced likelihood scoring."""

    def __init__(self, vocab_size: int = 64, embed_dim: int = 64, n_blocks: int = 2,
                 n_heads: int = 4, max_seq: int = 128,
                 rng: np.random.Generator | None = None):
        if embed_dim % n_heads:
            raise ConfigurationError(f"embed_dim {embed_dim} not divisible by {n_heads} heads")
        rng = rng or np.random.default_rng(0)
        self.vocab_size = vocab_size
        self.embed_dim = embed_dim
        self.n_blocks = n_blocks
        self.n_heads = n_heads
        self.max_seq = max_seq
        K = embed_dim
        s = 1.0 / np.sqrt(K)
        self._params: dict[str, Tensor] = {}

        def mat(name, shape, scale=s):
            self._params[name] = Tensor(rng.normal(0.0, scale, shape), requires_grad=True)

        def vec(name, n, value=0.0):
            self._params[name] = Tensor(np.full(n, value), requires_grad=True)

        mat("dec.word_embedding", (vocab_size, K))
        mat("dec.pos_embedding", (max_seq, K), scale=0.01)
        for b in range(n_blocks):
            pre = f"dec.block{b}"
            vec(f"{pre}.ln1.gain", K, 1.0)
            vec(f"{pre}.ln1.bias", K)
            for w in ("wq", "wk", "wv", "wo"):
                mat(f"{pre}.attn.{w}", (K, K))
            vec(f"{pre}.ln2.gain", K, 1.0)
            vec(f"{pre}.ln2.bias", K)
            mat(f"{pre}.ff.w1", (K, 2 * K))
            vec(f"{pre}.ff.b1", 2 * K)
            mat(f"{pre}.ff.w2", (2 * K, K), scale=1.0 / np.sqrt(2 * K))
            vec(f"{pre}.ff.b2", K)
        vec("dec.ln_f.gain", K, 1.0)
        vec("dec.ln_f.bias", K)
        mat("dec.out_projection", (K, vocab_size))
        vec("dec.out_bias", vocab_size)

        self.adapters: dict[str, LoraAdapter] = {}
        self._mask_cache: dict[int, Tensor] = {}

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def adapter_parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for ad in self.adapters.values():
            out.update(ad.parameters())
        return out

    def weight(self, name: str) -> Tensor:
        w = self._params[name]
        ad = self.adapters.get(name)
        if ad is not None:
            return T.add(w, ad.delta())
        return w

    def _causal_mask(self, n: int) -> Tensor:
        cached = self._mask_cache.get(n)
        if cached is None:
            m = np.triu(np.full((n, n), -1e9), k=1)
            cached = self._mask_cache[n] = Tensor(m)
        return cached

    def embed_text(self, tokens: list[int]) -> Tensor:
        """Row lookup into the word embedding, shape [L, K]."""
        return T.embedding(self.weight("dec.word_embedding"), tokens)

    def forward(self, seq: Tensor) -> Tensor:
        """Map an embedded sequence [T, K] to logits [T, V]."""
        n, K = seq.shape
        if n > self.max_seq:
            raise ContractError(f"sequence length {n} exceeds max_seq {self.max_seq}")
        x = T.add(seq, T.narrow(self._params["dec.pos_embedding"], 0, 0, n))
        dh = K // self.n_heads
        inv_sqrt = Tensor(1.0 / np.sqrt(dh))
        mask = self._causal_mask(n)
        for b in range(self.n_blocks):
            pre = f"dec.block{b}"
            h = T.layer_norm(x, self._params[f"{pre}.ln1.gain"], self._params[f"{pre}.ln1.bias"])
            q = T.matmul(h, self.weight(f"{pre}.attn.wq"))
            k = T.matmul(h, self.weight(f"{pre}.attn.wk"))
            v = T.matmul(h, self.weight(f"{pre}.attn.wv"))
            heads = []
            for hd in range(self.n_heads):
                qs = T.narrow(q, 1, hd * dh, dh)
                ks = T.narrow(k, 1, hd * dh, dh)
                vs = T.narrow(v, 1, hd * dh, dh)
                scores = T.add(T.mul(T.matmul(qs, T.transpose(ks)), inv_sqrt), mask)
                heads.append(T.matmul(T.softmax(scores), vs))
            attn = T.matmul(T.concat(heads, axis=1), self.weight(f"{pre}.attn.wo"))
            x = T.add(x, attn)
            h = T.layer_norm(x, self._params[f"{pre}.ln2.gain"], self._params[f"{pre}.ln2.bias"])
            ff = T.add(
                T.matmul(
                    T.gelu(T.add(T.matmul(h, self.weight(f"{pre}.ff.w1")), self._params[f"{pre}.ff.b1"])),
                    self.weight(f"{pre}.ff.w2"),
                ),
                self._params[f"{pre}.ff.b2"],
            )
            x = T.add(x, ff)
        x = T.layer_norm(x, self._params["dec.ln_f.gain"], self._params["dec.ln_f.bias"])
        return T.add(T.matmul(x, self.weight("dec.out_projection")), self._params["dec.out_bias"])

    def sequence_log_likelihood(self, visual_tokens: Tensor | None,
                                question_tokens: list[int],
                                answer_tokens: list[int]) -> tuple[Tensor, Tensor]:
        """Teacher-forced (total, per-step) answer log-probabilities.

        The context is [visual prefix; question embeddings; answer
        embeddings shifted right]; the logits row just before answer
        position i scores answer token i, so the total is the sum of the
        per-step values by construction.
        """
        if not answer_tokens:
            raise ContractError("answer must contain at least one token")
        parts = []
        prefix_rows = 0
        if visual_tokens is not None:
            parts.append(visual_tokens)
            prefix_rows += visual_tokens.shape[0]
        if question_tokens:
            parts.append(self.embed_text(question_tokens))
            prefix_rows += len(question_tokens)
        if prefix_rows == 0:
            raise ContractError("likelihood needs a non-empty context")
        if len(answer_tokens) > 1:
            parts.append(self.embed_text(answer_tokens[:-1]))
        seq = T.concat(parts, axis=0)
        logits = self.forward(seq)
        rows = T.narrow(logits, 0, prefix_rows - 1, len(answer_tokens))
        logp = T.log_softmax(rows)
        per_step = T.select_positions(logp, list(range(len(answer_tokens))), answer_tokens)
        return T.tensor_sum(per_step), per_step

    def generate(self, visual_tokens: Tensor | None, question_tokens: list[int],
                 max_new: int = 16, eos: int | None = None,
                 temperature: float = 0.0,
                 rng: np.random.Generator | None = None) -> list[int]:
        """Greedy (temperature=0) or temperature-sampled continuation."""
        out: list[int] = []
        while len(out) < max_new:
            parts = []
            if visual_tokens is not None:
                parts.append(visual_tokens)
            toks = question_tokens + out
            if toks:
                parts.append(self.embed_text(toks))
            logits = self.forward(T.concat(parts, axis=0)).data[-1]
            if temperature > 0.0:
                if rng is None:
                    raise ConfigurationError("temperature sampling requires an rng")
                p = np.exp((logits - logits.max()) / temperature)
                p /= p.sum()
                tok = int(rng.choice(self.vocab_size, p=p))
            else:
                tok = int(np.argmax(logits))
            out.append(tok)
            if eos is not None and tok == eos:
                break
        return out

    def save(self, path: str | Path) -> None:
        arrays = {name: t.data for name, t in self._params.items()}
        arrays["dec.meta"] = np.array(
            [self.vocab_size, self.embed_dim, self.n_blocks, self.n_heads, self.max_seq],
            dtype=np.float64,
        )
        save_arrays(path, arrays)

    @classmethod
    def load(cls, path: str | Path) -> "Decoder":
        arrays = load_arrays(path)
        v, k, nb, nh, ms = (int(x) for x in arrays["dec.meta"])
        dec = cls(vocab_size=v, embed_dim=k, n_blocks=nb, n_heads=nh, max_seq=ms)
        for name, t in dec._params.items():
            t.data[:] = arrays[name]
        return dec


# ---------------------------------------------------------------------------
# LoRA attach / merge
# ---------------------------------------------------------------------------

DEFAULT_LORA_TARGETS = tuple(
    f"dec.block{b}.attn.{w}" for b in range(2) for w in ("wq", "wv")
)


def make_adapters(decoder: Decoder, targets: tuple[str, ...] | list[str] | None = None,
                  rank: int = 4, alpha: float = 8.0, seed: int = 0) -> list[LoraAdapter]:
    targets = list(targets) if targets else [
        f"dec.block{b}.attn.{w}" for b in range(decoder.n_blocks) for w in ("wq", "wv")
    ]
    rng = np.random.default_rng(seed)
    out = []
    for t in targets:
        if t not in decoder._params:
            raise ConfigurationError(f"unknown LoRA target {t!r}")
        shape = decoder._params[t].shape
        if len(shape) != 2:
            raise ConfigurationError(f"LoRA target {t!r} is not a matrix")
        out.append(LoraAdapter.create(t, shape[0], shape[1], rank, alpha, rng))
    return out


def apply_lora(decoder: Decoder, adapters: list[LoraAdapter]) -> Decoder:
    """Attach adapters as a runtime additive path; base weights untouched."""
    for ad in adapters:
        if ad.target not in decoder._params:
            raise ConfigurationError(f"unknown LoRA target {ad.target!r}")
        w = decoder._params[ad.target]
        if (ad.A.shape[0], ad.B.shape[1]) != w.shape:
            raise ConfigurationError(
                f"adapter {ad.target!r} shape {(ad.A.shape[0], ad.B.shape[1])} vs weight {w.shape}"
            )
        decoder.adapters[ad.target] = ad
    return decoder


def merge_lora(decoder: Decoder) -> Decoder:
    """Fold attached adapters into the base weights of a fresh decoder."""
    merged = Decoder(decoder.vocab_size, decoder.embed_dim, decoder.n_blocks,
                     decoder.n_heads, decoder.max_seq)
    for name, t in decoder._params.items():
        merged._params[name].data[:] = t.data
    for name, ad in decoder.adapters.items():
        merged._params[name].data += ad.scaling * (ad.A.data @ ad.B.data)
    return merged


def save_adapters(path: str | Path, adapters: list[LoraAdapter]) -> None:
    arrays: dict[str, np.ndarray] = {}
    for ad in adapters:
        arrays[f"lora.{ad.target}.A"] = ad.A.data
        arrays[f"lora.{ad.target}.B"] = ad.B.data
        arrays[f"lora.{ad.target}.meta"] = np.array([ad.rank, ad.alpha], dtype=np.float64)
    save_arrays(path, arrays)


def load_adapters(path: str | Path) -> list[LoraAdapter]:
    arrays = load_arrays(path)
    targets = sorted({k[len("lora."):-len(".meta")] for k in arrays if k.endswith(".meta")})
    out = []
    for t in targets:
        rank, alpha = arrays[f"lora.{t}.meta"]
        A = Tensor(arrays[f"lora.{t}.A"], requires_grad=True)
        B = Tensor(arrays[f"lora.{t}.B"], requires_grad=True)
        out.append(LoraAdapter(target=t, A=A, B=B, rank=int(rank), alpha=float(alpha)))
    return out


# ---------------------------------------------------------------------------
# multi-round chat input (fine-tuning prompt construction)
# ---------------------------------------------------------------------------

@dataclass
class ChatTurn:
    question: list[int]
    answer: list[int]
    round_index: int


def build_round_input(history: list[ChatTurn], m: int, sep: int = SEP) -> list[int]:
    """Token context for round ``m``: all prior (question, answer) pairs in
    round order, then the round-m question, with a separator between
    segments. Round 1 is the bare first question."""
    if m < 1:
        raise ContractError(f"round index must be >= 1, got {m}")
    by_round = {t.round_index: t for t in history}
    for r in range(1, m + 1):
        if r not in by_round:
            raise ContractError(f"history is missing round {r}")
    for r in range(1, m):
        if not by_round[r].answer:
            raise ContractError(f"round {r} has an empty answer")
    if sorted(by_round) != list(range(1, len(by_round) + 1)):
        raise ContractError("round indices must be contiguous from 1")
    if m == 1:
        return list(by_round[1].question)
    out: list[int] = []
    for r in range(1, m):
        out.extend(by_round[r].question)
        out.append(sep)
        out.extend(by_round[r].answer)
        out.append(sep)
    out.extend(by_round[m].question)
    return out
