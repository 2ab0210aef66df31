"""Text ingestion: vocabulary, encoding, and contiguous BPTT batching.

Tokenization is whitespace splitting with one end-of-sentence marker appended
per line; no lowercasing or other normalization.
"""

from __future__ import annotations

import os
from collections import Counter

import numpy as np

from .errors import ConfigError, CorpusError

UNK = "<unk>"
EOS = "<eos>"
UNK_ID = 0
EOS_ID = 1


def read_tokens(path: str) -> list[str]:
    """Read a UTF-8 text file into a token stream, appending <eos> per line."""
    tokens: list[str] = []
    try:
        fh = open(path, encoding="utf-8")
    except OSError as e:
        raise CorpusError(f"cannot read corpus {path}: {e}")
    with fh:
        for line in fh:
            tokens.extend(line.split())
            tokens.append(EOS)
    return tokens


class Vocab:
    """Bijective token<->id map with reserved ids 0=<unk> and 1=<eos>."""

    def __init__(self, id_to_token: list[str]):
        if id_to_token[:2] != [UNK, EOS]:
            raise CorpusError("vocab must start with the reserved tokens <unk>, <eos>")
        self.id_to_token = list(id_to_token)
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise CorpusError("vocab contains duplicate tokens")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, tokens) -> np.ndarray:
        get = self.token_to_id.get
        return np.fromiter((get(t, UNK_ID) for t in tokens), dtype=np.int64, count=len(tokens))

    def decode(self, ids) -> list[str]:
        return [self.id_to_token[int(i)] for i in ids]

    def save(self, path: str) -> None:
        tmp = path + ".tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            for i, tok in enumerate(self.id_to_token):
                fh.write(f"{tok}\t{i}\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str) -> "Vocab":
        id_to_token: list[str] = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh):
                try:
                    tok, idx = line.rstrip("\n").split("\t")
                except ValueError:
                    raise CorpusError(f"{path}:{lineno + 1}: expected 'token<TAB>id'")
                if int(idx) != lineno:
                    raise CorpusError(f"{path}:{lineno + 1}: ids must be dense and ordered")
                id_to_token.append(tok)
        if not id_to_token:
            raise CorpusError(f"{path}: empty vocab file")
        return cls(id_to_token)


def build_vocab(tokens, min_count: int = 1) -> Vocab:
    """Build a vocab from a token stream.

    Tokens seen fewer than min_count times encode to <unk>. Non-reserved ids
    are assigned by descending frequency, ties broken lexicographically, so
    the same input always produces a byte-identical vocab file.
    """
    counts = Counter(tokens)
    if not counts:
        raise CorpusError("empty corpus: no tokens to build a vocabulary from")
    counts.pop(UNK, None)
    counts.pop(EOS, None)
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    return Vocab([UNK, EOS] + kept)


class BatchStream:
    """Contiguous [steps x batch] id matrix cut into (input, target) windows.

    Column b holds one contiguous slice of the corpus stream; window k pairs
    rows [kL, kL+L) with the rows shifted one step ahead. Trailing tokens that
    do not fill the matrix are dropped.
    """

    def __init__(self, data: np.ndarray, bptt_len: int):
        self.data = data
        self.bptt_len = bptt_len
        self.cursor = 0

    @property
    def batch_size(self) -> int:
        return self.data.shape[1]

    @property
    def num_windows(self) -> int:
        return (self.data.shape[0] - 1) // self.bptt_len

    @property
    def num_targets(self) -> int:
        return self.num_windows * self.bptt_len * self.batch_size

    def windows(self):
        """Yield (inputs, targets) int64 arrays of shape [L x B], rewound."""
        L = self.bptt_len
        for self.cursor in range(self.num_windows):
            lo = self.cursor * L
            yield self.data[lo:lo + L], self.data[lo + 1:lo + L + 1]

    def __iter__(self):
        return self.windows()


def batchify(ids, batch_size: int, bptt_len: int) -> BatchStream:
    """Lay out a token-id sequence as a BatchStream."""
    if batch_size <= 0 or bptt_len <= 0:
        raise ConfigError(
            f"batch_size and bptt_len must be positive, got {batch_size}, {bptt_len}"
        )
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or ids.size < 2 * batch_size:
        raise ConfigError(
            f"need at least {2 * batch_size} tokens for batch_size={batch_size}, got {ids.size}"
        )
    steps = ids.size // batch_size
    data = ids[:steps * batch_size].reshape(batch_size, steps).T.copy()
    return BatchStream(data, bptt_len)
