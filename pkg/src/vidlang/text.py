"""Subword text tokenizer and embedding table.

A small wordpiece-style vocabulary is trained on the caption grammar with
greedy pair merges; encoding is greedy longest-match with [UNK] fallback.
Reserved tokens sit at fixed head positions so ids are stable across vocabs.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import ConfigError

PAD, UNK, CLS, SEP, MASK, BLANK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "[BLANK]"
RESERVED = (PAD, UNK, CLS, SEP, MASK, BLANK)
PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID, BLANK_ID = range(6)


class Vocabulary:
    """Subword -> id map with reserved tokens at ids 0..5."""

    def __init__(self, pieces: list[str]):
        if list(pieces[: len(RESERVED)]) != list(RESERVED):
            raise ConfigError("vocabulary must start with the reserved tokens")
        self.id_to_token = list(pieces)
        self.token_to_id = {tok: i for i, tok in enumerate(pieces)}
        if len(self.token_to_id) != len(pieces):
            raise ConfigError("duplicate pieces in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, piece: str) -> bool:
        return piece in self.token_to_id

    def is_special(self, token_id: int) -> bool:
        return token_id < len(RESERVED)

    @property
    def n_reserved(self) -> int:
        return len(RESERVED)

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.id_to_token) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls(Path(path).read_text(encoding="utf-8").splitlines())


def _word_symbols(word: str) -> list[str]:
    return [word[0]] + ["##" + ch for ch in word[1:]]


def _merge(a: str, b: str) -> str:
    return a + (b[2:] if b.startswith("##") else b)


def build_vocab(corpus: list[str], vocab_size: int) -> Vocabulary:
    """Greedy pair-merge subword vocabulary over a text corpus.

    Merges the most frequent adjacent symbol pair (ties broken
    lexicographically) until vocab_size entries exist or nothing is left
    to merge. Deterministic for a fixed corpus.
    """
    if not corpus:
        raise ConfigError("corpus must be nonempty")
    word_freq = Counter(w for line in corpus for w in line.split())
    words = {w: _word_symbols(w) for w in word_freq}

    alphabet: set[str] = set()
    for syms in words.values():
        alphabet.update(syms)
    if vocab_size < len(RESERVED) + len(alphabet):
        raise ConfigError(
            f"vocab_size {vocab_size} below reserved + alphabet ({len(RESERVED) + len(alphabet)})")

    pieces = list(RESERVED) + sorted(alphabet)
    seen = set(pieces)
    while len(pieces) < vocab_size:
        pair_counts: Counter[tuple[str, str]] = Counter()
        for w, syms in words.items():
            for a, b in zip(syms, syms[1:]):
                pair_counts[(a, b)] += word_freq[w]
        candidates = [(-cnt, pair) for pair, cnt in pair_counts.items()
                      if _merge(*pair) not in seen]
        if not candidates:
            break
        pair = min(candidates)[1]
        merged = _merge(*pair)
        pieces.append(merged)
        seen.add(merged)
        for w, syms in words.items():
            out, i = [], 0
            while i < len(syms):
                if i + 1 < len(syms) and (syms[i], syms[i + 1]) == pair:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            words[w] = out
    return Vocabulary(pieces)


@dataclass(frozen=True)
class TextSequence:
    """Token ids plus attention flags (False marks padding)."""

    ids: np.ndarray
    flags: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)


def _encode_word(word: str, vocab: Vocabulary) -> list[int]:
    out: list[int] = []
    start, n = 0, len(word)
    while start < n:
        prefix = "" if start == 0 else "##"
        end = n
        while end > start:
            piece = prefix + word[start:end]
            if piece in vocab:
                out.append(vocab.token_to_id[piece])
                break
            end -= 1
        else:
            return [UNK_ID]
        start = end
    return out


def tokenize_text(text: str, vocab: Vocabulary) -> TextSequence:
    """Greedy longest-match subwording; whole-word [UNK] fallback.

    Reserved bracket literals ([SEP], [BLANK], ...) appearing as standalone
    words map directly to their reserved ids.
    """
    ids: list[int] = []
    for word in text.split():
        if word in vocab.token_to_id and word in RESERVED:
            ids.append(vocab.token_to_id[word])
        else:
            ids.extend(_encode_word(word, vocab))
    arr = np.asarray(ids, dtype=np.int64)
    return TextSequence(arr, np.ones(len(arr), dtype=bool))


def detokenize(ids, vocab: Vocabulary, keep_special: bool = False) -> str:
    words: list[str] = []
    for i in ids:
        tok = vocab.id_to_token[int(i)]
        if tok in RESERVED and not keep_special:
            continue
        if tok.startswith("##") and words:
            words[-1] += tok[2:]
        else:
            words.append(tok)
    return " ".join(words)


def pad_sequence(seq: TextSequence, length: int) -> TextSequence:
    if len(seq) > length:
        return TextSequence(seq.ids[:length], seq.flags[:length])
    pad_n = length - len(seq)
    return TextSequence(
        np.concatenate([seq.ids, np.full(pad_n, PAD_ID, dtype=np.int64)]),
        np.concatenate([seq.flags, np.zeros(pad_n, dtype=bool)]),
    )


class TextEmbedder(nn.Module):
    """Embedding table mapping token ids to d-dimensional rows."""

    def __init__(self, vocab_size: int, width: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.table = nn.Embedding(vocab_size, width)
        nn.init.trunc_normal_(self.table.weight, std=0.02)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.numel() and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise ValueError("token id out of vocabulary range")
        return self.table(ids)
