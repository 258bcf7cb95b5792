"""Fixed 64-token vocabulary for the synthetic adherence QA task.

Desk-scale stand-in for a real tokenizer: whitespace split, lowercase,
unknown words map to <unk>. Token ids are stable across runs by
construction (the word list is a literal).
"""

from __future__ import annotations

UNK = 0
SEP = 1
EOS = 2

_WORDS = [
    "<unk>", "<sep>", "<eos>",
    # label keyphrases
    "yes", "no", "unclear",
    # entities
    "patient", "pill", "water", "face", "bottle", "medication", "hands", "mouth",
    # verbs
    "takes", "took", "swallows", "swallowed", "drinks", "drank", "holds",
    "holding", "talking", "listening", "visible", "seen", "shows",
    # qualities
    "good", "dark", "blurry", "bright", "clear", "lighting",
    # question / glue words
    "the", "a", "is", "was", "not", "then", "after", "before", "first",
    "with", "and", "did", "what", "happened", "order", "in", "video",
    "intake", "adherence", "evidence", "person", "background", "motion",
    "drinking", "swallowing", "observed", "activity", "while", "of",
]
# pad with reserved ids up to a 64-token vocabulary
_WORDS += [f"<res{i}>" for i in range(64 - len(_WORDS))]

assert len(_WORDS) == 64

VOCAB_SIZE = len(_WORDS)
WORD_TO_ID = {w: i for i, w in enumerate(_WORDS)}
ID_TO_WORD = dict(enumerate(_WORDS))


def encode(text: str) -> list[int]:
    """Tokenize whitespace-split lowercase words; unknowns become <unk>."""
    return [WORD_TO_ID.get(w, UNK) for w in text.lower().split()]


def decode(ids: list[int]) -> str:
    return " ".join(ID_TO_WORD.get(i, "<unk>") for i in ids)
