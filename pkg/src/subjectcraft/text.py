"""Toy text encoder with a learnable subject token.

The encoder is an embedding lookup plus an additive sinusoidal position
encoding; no transformer layers. Prompts are whitespace-tokenized and
lowercased, unknown words map to a reserved UNK id, and sequences are
padded/truncated to ``max_length`` with an all-zero PAD row (the position
encoding is added to every slot, padded or not).

New subject tokens are registered with `register_token`, which appends one
embedding row initialized from an existing word's row and marks exactly that
row trainable. All other rows are frozen: training never touches them, which
tests verify by checksum.
"""

from __future__ import annotations

import hashlib

import numpy as np

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

# 64 everyday words so short scene prompts tokenize without UNK.
BASE_VOCABULARY = (
    "a an the of on in with and photo video scene "
    "toy ball cube dice bear duck dog cat car tree house box guitar robot "
    "red green blue yellow purple orange pink white black gray brown "
    "small large tiny big bright dark shiny soft plush wooden metal plastic "
    "rolling spinning jumping running playing sitting standing floor table "
    "grass sky water room garden child person"
).split()
assert len(BASE_VOCABULARY) == 64


def position_encoding(length: int, dim: int) -> np.ndarray:
    """Sinusoidal position encoding, float64, shape (length, dim)."""
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half, dtype=np.float64) / half)
    args = np.arange(length, dtype=np.float64)[:, None] * freqs[None, :]
    pe = np.zeros((length, dim), dtype=np.float64)
    pe[:, 0:2 * half:2] = np.sin(args)
    pe[:, 1:2 * half:2] = np.cos(args)
    return pe


class ToyTextEncoder:
    """Embedding-table prompt encoder; the tau-role stand-in at desk scale."""

    def __init__(self, embed_dim: int = 16, max_length: int = 16, extra_words=(), seed=0):
        if embed_dim < 1 or max_length < 1:
            raise ValueError("embed_dim and max_length must be positive")
        self.embed_dim = int(embed_dim)
        self.max_length = int(max_length)
        self.vocabulary: dict[str, int] = {PAD_TOKEN: 0, UNK_TOKEN: 1}
        for word in list(BASE_VOCABULARY) + [w.lower() for w in extra_words]:
            if word not in self.vocabulary:
                self.vocabulary[word] = len(self.vocabulary)
        rng = np.random.default_rng(seed)
        table = rng.standard_normal((len(self.vocabulary), self.embed_dim)) * 0.1
        table[0] = 0.0  # PAD row stays zero
        self.embedding_table = table.astype(np.float32)
        self.learned_token_ids: set[int] = set()
        self._pe = position_encoding(self.max_length, self.embed_dim)

    # -- construction helpers ------------------------------------------------

    @classmethod
    def from_state(cls, embed_dim, max_length, vocabulary, embedding_table,
                   learned_token_ids) -> "ToyTextEncoder":
        enc = cls.__new__(cls)
        enc.embed_dim = int(embed_dim)
        enc.max_length = int(max_length)
        enc.vocabulary = dict(vocabulary)
        enc.embedding_table = embedding_table
        enc.learned_token_ids = set(int(i) for i in learned_token_ids)
        enc._pe = position_encoding(enc.max_length, enc.embed_dim)
        return enc

    def copy(self, dtype=None) -> "ToyTextEncoder":
        table = self.embedding_table.astype(dtype) if dtype is not None else self.embedding_table.copy()
        return ToyTextEncoder.from_state(
            self.embed_dim, self.max_length, self.vocabulary, table, self.learned_token_ids
        )

    # -- vocabulary ----------------------------------------------------------

    def register_token(self, literal: str, init_from: str) -> int:
        """Add a trainable pseudo-token, its row copied from ``init_from``."""
        literal = literal.strip().lower()
        init_from = init_from.strip().lower()
        if not literal:
            raise ValueError("token literal must be non-empty")
        if literal in self.vocabulary:
            raise ValueError(f"token {literal!r} is already registered")
        if init_from not in self.vocabulary:
            raise ValueError(f"init_from word {init_from!r} is not in the vocabulary")
        token_id = len(self.vocabulary)
        self.vocabulary[literal] = token_id
        init_row = self.embedding_table[self.vocabulary[init_from]]
        self.embedding_table = np.vstack([self.embedding_table, init_row[None, :]])
        self.learned_token_ids.add(token_id)
        return token_id

    def learned_literals(self) -> list[str]:
        ids = self.learned_token_ids
        return [w for w, i in self.vocabulary.items() if i in ids]

    def token_ids(self, prompt: str) -> list[int]:
        """Padded/truncated id sequence for a prompt (UNK for misses)."""
        words = prompt.lower().split()
        if not words:
            raise ValueError("prompt is empty after whitespace tokenization")
        unk = self.vocabulary[UNK_TOKEN]
        ids = [self.vocabulary.get(w, unk) for w in words[: self.max_length]]
        ids += [self.vocabulary[PAD_TOKEN]] * (self.max_length - len(ids))
        return ids

    # -- encoding ------------------------------------------------------------

    def encode(self, prompt: str) -> np.ndarray:
        """Condition embedding (max_length, embed_dim): row lookup + position
        encoding; deterministic."""
        ids = self.token_ids(prompt)
        rows = self.embedding_table[ids].astype(np.float64)
        return rows + self._pe

    def empty_condition(self) -> np.ndarray:
        """The all-PAD encoding used as the unconditional guidance branch."""
        rows = np.zeros((self.max_length, self.embed_dim), dtype=np.float64)
        return rows + self._pe

    def row_checksums(self) -> dict[int, str]:
        return {
            i: hashlib.sha256(np.ascontiguousarray(self.embedding_table[i]).tobytes()).hexdigest()
            for i in range(self.embedding_table.shape[0])
        }


def register_token(enc: ToyTextEncoder, literal: str, init_from: str) -> int:
    return enc.register_token(literal, init_from)


def encode_prompt(enc: ToyTextEncoder, prompt: str) -> np.ndarray:
    return enc.encode(prompt)
