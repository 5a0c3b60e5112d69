"""k-mer vocabularies, tokenization, padding, MLM masking and one-hot encoding."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Sequence, TextIO

import numpy as np

NUCLEOTIDES = "ACGT"
MASK_TOKEN = "<MASK>"
UNK_TOKEN = "<UNK>"
PAD_TOKEN = "<PAD>"
MODES = ("non-overlapping", "overlapping")
ONE_HOT_CHANNELS = "ACGTN"


class Vocabulary:
    """Bijective k-mer <-> id map.

    Ids ``0..4**k-1`` are the k-mers in lexicographic order, followed by MASK
    and UNK. The pad id sits one past UNK and is excluded from ``len()``.
    """

    def __init__(self, k: int):
        if not 1 <= k <= 8:
            raise ValueError(f"k must be in [1, 8], got {k}")
        self.k = k
        self.tokens = ["".join(p) for p in product(NUCLEOTIDES, repeat=k)] + [MASK_TOKEN, UNK_TOKEN]
        self.token_to_id = {tok: i for i, tok in enumerate(self.tokens)}
        self.mask_id = self.token_to_id[MASK_TOKEN]
        self.unk_id = self.token_to_id[UNK_TOKEN]
        self.pad_id = len(self.tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def embedding_rows(self) -> int:
        return len(self.tokens) + 1

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and other.k == self.k

    def id_of(self, kmer: str) -> int:
        return self.token_to_id.get(kmer, self.unk_id)

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.tokens[i] if i < len(self.tokens) else PAD_TOKEN for i in ids]

    def save(self, sink: TextIO) -> None:
        sink.write(f"#k={self.k}\n")
        for tok, i in self.token_to_id.items():
            sink.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, source: TextIO) -> "Vocabulary":
        header = source.readline().strip()
        if not header.startswith("#k="):
            raise ValueError(f"vocabulary header must be '#k=<k>', got {header!r}")
        vocab = cls(int(header[3:]))
        for line in source:
            if not line.strip():
                continue
            tok, idx = line.rstrip("\n").split("\t")
            if vocab.token_to_id.get(tok) != int(idx):
                raise ValueError(f"vocabulary file disagrees at token {tok!r}")
        return vocab


def build_vocab(k: int) -> Vocabulary:
    return Vocabulary(k)


def tokenize(sequence: str, vocab: Vocabulary, mode: str = "non-overlapping") -> list[int]:
    """Split ``sequence`` into k-mer ids; a short trailing fragment is dropped."""
    if mode not in MODES:
        raise ValueError(f"unknown tokenization mode {mode!r}")
    k = vocab.k
    stride = k if mode == "non-overlapping" else 1
    return [vocab.id_of(sequence[i : i + k]) for i in range(0, len(sequence) - k + 1, stride)]


@dataclass
class TokenizedBatch:
    ids: np.ndarray
    padding_mask: np.ndarray
    lengths: list[int]
    pad_id: int

    def __len__(self) -> int:
        return self.ids.shape[0]

    def subset(self, rows: Sequence[int]) -> "TokenizedBatch":
        rows = list(rows)
        lengths = [self.lengths[i] for i in rows]
        width = max(lengths, default=0)
        return TokenizedBatch(
            self.ids[rows, :width], self.padding_mask[rows, :width], lengths, self.pad_id
        )


@dataclass
class MaskedBatch:
    ids: np.ndarray
    target_ids: np.ndarray
    loss_mask: np.ndarray
    padding_mask: np.ndarray


def pad_token_lists(token_lists: Sequence[Sequence[int]], pad_id: int, max_len: int | None = None) -> TokenizedBatch:
    rows = [list(t[:max_len]) if max_len is not None else list(t) for t in token_lists]
    lengths = [len(r) for r in rows]
    width = max(lengths, default=0)
    ids = np.full((len(rows), width), pad_id, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, row in enumerate(rows):
        ids[i, : len(row)] = row
        mask[i, : len(row)] = True
    return TokenizedBatch(ids, mask, lengths, pad_id)


def encode_batch(
    sequences: Sequence[str], vocab: Vocabulary, mode: str = "non-overlapping", max_len: int = 512
) -> TokenizedBatch:
    token_lists = [tokenize(s, vocab, mode) for s in sequences]
    empty = [i for i, t in enumerate(token_lists) if not t]
    if empty:
        raise ValueError(f"sequences at indices {empty} produce no {vocab.k}-mer tokens")
    return pad_token_lists(token_lists, vocab.pad_id, max_len)


def mask_count(n_real: int, ratio: float) -> int:
    """round-half-up(ratio * n_real)."""
    return int(np.floor(ratio * n_real + 0.5))


def apply_mlm_mask(batch: TokenizedBatch, mask_id: int, ratio: float = 0.5, seed: int = 0) -> MaskedBatch:
    """Replace exactly ``round(ratio * n_real)`` real tokens per row with MASK.

    Row ``i`` draws from its own stream seeded by ``(seed, i)`` so the result
    does not depend on how rows are scheduled.
    """
    if not 0 < ratio <= 1:
        raise ValueError(f"mask ratio must be in (0, 1], got {ratio}")
    ids = batch.ids.copy()
    loss_mask = np.zeros_like(batch.padding_mask)
    for row in range(ids.shape[0]):
        real = np.flatnonzero(batch.padding_mask[row])
        n = mask_count(real.size, ratio)
        if n == 0:
            continue
        rng = np.random.default_rng([seed, row])
        chosen = rng.choice(real, size=n, replace=False)
        loss_mask[row, chosen] = True
    ids[loss_mask] = mask_id
    return MaskedBatch(ids, batch.ids.copy(), loss_mask, batch.padding_mask.copy())


def one_hot_encode(sequence: str, fixed_len: int) -> np.ndarray:
    """(fixed_len, 5) one-hot over A,C,G,T,N; truncated or zero-padded."""
    out = np.zeros((fixed_len, len(ONE_HOT_CHANNELS)), dtype=np.float32)
    channel = {c: i for i, c in enumerate(ONE_HOT_CHANNELS)}
    for i, base in enumerate(sequence[:fixed_len].upper()):
        out[i, channel.get(base, 4)] = 1.0
    return out


def one_hot_batch(sequences: Sequence[str], fixed_len: int) -> np.ndarray:
    return np.stack([one_hot_encode(s, fixed_len) for s in sequences]) if sequences else np.zeros(
        (0, fixed_len, len(ONE_HOT_CHANNELS)), dtype=np.float32
    )
