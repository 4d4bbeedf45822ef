"""
Embeddings.py - vocabulary, GloVe-format loading and OOV imputation.

Embeddings are frozen: the table is read-only after construction and never
enters the ParameterStore. Ids 0 (PAD) and 1 (NULL) are reserved and map
to zero rows.
"""

import hashlib
import logging
from collections import defaultdict
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from MatchErrors import DimensionError, EmptyInputError, ParseError
from Numerics import Tensor
from SnliData import LabeledPair

logger = logging.getLogger(__name__)

PAD = 0
NULL = 1
PAD_TOKEN = "<pad>"
NULL_TOKEN = "<null>"
RESERVED = 2


class Vocabulary:
    """
    Token <-> id mapping over corpus tokens (ids >= 2). Reserved ids are
    kept outside token_to_id, so a corpus token can never collide with them.
    """

    def __init__(self):
        self.token_to_id: Dict[str, int] = {}
        self.id_to_token: List[str] = [PAD_TOKEN, NULL_TOKEN]
        self.oov_set = set()

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def add(self, token: str) -> int:
        if token not in self.token_to_id:
            self.token_to_id[token] = len(self.id_to_token)
            self.id_to_token.append(token)
        return self.token_to_id[token]

    def id_of(self, token: str) -> int:
        return self.token_to_id[token]

    def encode(self, tokens: Sequence[str], unknown_to_null: bool = False) -> np.ndarray:
        ids = []
        for token in tokens:
            if token in self.token_to_id:
                ids.append(self.token_to_id[token])
            elif unknown_to_null:
                logger.warning(f"Token '{token}' not in vocabulary, mapped to NULL")
                ids.append(NULL)
            else:
                raise KeyError(f"Token '{token}' not in vocabulary")
        return np.array(ids, dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.id_to_token[i] for i in ids]

    def oov_ids(self) -> set:
        return {self.token_to_id[t] for t in self.oov_set}

    def save(self, path: str, oov_path: Optional[str] = None):
        with open(path, "w", encoding="utf-8") as f:
            for i, token in enumerate(self.id_to_token):
                f.write(f"{i}\t{token}\n")
        if oov_path:
            with open(oov_path, "w", encoding="utf-8") as f:
                for token in sorted(self.oov_set):
                    f.write(f"{token}\n")

    @classmethod
    def load(cls, path: str, oov_path: Optional[str] = None) -> "Vocabulary":
        vocab = cls()
        with open(path, "r", encoding="utf-8") as f:
            for line_no, line in enumerate(f, start=1):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2 or not parts[0].isdigit():
                    raise ParseError("expected '<id>\\t<token>'", path, line_no)
                idx, token = int(parts[0]), parts[1]
                if idx < RESERVED:
                    continue
                if idx != len(vocab.id_to_token):
                    raise ParseError(f"non-contiguous id {idx}", path, line_no)
                vocab.add(token)
        if oov_path:
            with open(oov_path, "r", encoding="utf-8") as f:
                vocab.oov_set = {line.rstrip("\n") for line in f if line.strip()}
        return vocab


class EmbeddingTable:
    """|V| x l frozen matrix; row PAD is zero."""

    frozen = True

    def __init__(self, matrix: np.ndarray):
        self.matrix = Tensor(matrix)

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self):
        return self.matrix.shape[0]

    def values(self) -> np.ndarray:
        return self.matrix.data

    def checksum(self) -> str:
        return hashlib.sha256(self.matrix.data.astype("<f8").tobytes()).hexdigest()

    def save(self, path: str):
        np.save(path, self.matrix.data)

    @classmethod
    def load(cls, path: str) -> "EmbeddingTable":
        return cls(np.load(path))


def build_vocab(corpus: Iterable[LabeledPair]) -> Vocabulary:
    """Ids assigned in first-occurrence order, premise before hypothesis."""
    vocab = Vocabulary()
    seen_pairs = 0
    for pair in corpus:
        seen_pairs += 1
        for token in pair.premise_tokens:
            vocab.add(token)
        for token in pair.hypothesis_tokens:
            vocab.add(token)
    if seen_pairs == 0:
        raise EmptyInputError("build_vocab: corpus is empty")
    logger.info(f"Vocabulary built from {seen_pairs} pairs: {len(vocab)} ids")
    return vocab


def load_pretrained(path: str, vocab: Vocabulary, l: int) -> EmbeddingTable:
    """
    Fills rows from a GloVe text file (`token v1 ... vl`, no header).
    Corpus tokens are matched after lowercasing; tokens never found are
    recorded in vocab.oov_set and keep a zero row until imputation.
    """
    wanted: Dict[str, List[int]] = defaultdict(list)
    for token, idx in vocab.token_to_id.items():
        wanted[token.lower()].append(idx)

    matrix = np.zeros((len(vocab), l), dtype=np.float64)
    found = set()
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                raise ParseError("expected a token followed by numbers", path, line_no)
            if len(parts) - 1 != l:
                if line_no == 1:
                    raise DimensionError(f"{path} has {len(parts) - 1}-dimensional vectors, expected {l}")
                raise ParseError(f"expected {l + 1} fields, got {len(parts)}", path, line_no)
            token = parts[0]
            if token not in wanted or token in found:
                continue
            try:
                vector = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError:
                raise ParseError("non-numeric vector component", path, line_no)
            for idx in wanted[token]:
                matrix[idx] = vector
            found.add(token)

    vocab.oov_set = {t for t in vocab.token_to_id if t.lower() not in found}
    matrix[PAD] = 0.0
    matrix[NULL] = 0.0
    logger.info(f"Loaded {len(found)} pretrained vectors from {path}; {len(vocab.oov_set)} OOV tokens")
    return EmbeddingTable(matrix)


def impute_oov(table: EmbeddingTable, vocab: Vocabulary, corpus: Iterable[LabeledPair],
               window: int = 9) -> EmbeddingTable:
    """
    Each OOV row becomes the mean of the pretrained (non-OOV, non-reserved)
    neighbours within window // 2 positions on either side, over every
    occurrence in the corpus. Only original rows are read, so the result
    does not depend on the order OOV tokens are visited. No neighbour: zero row.
    """
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    half = window // 2
    original = table.values()
    oov_ids = vocab.oov_ids()

    sums: Dict[int, np.ndarray] = {}
    counts: Dict[int, int] = defaultdict(int)
    for pair in corpus:
        for sentence in (pair.premise_tokens, pair.hypothesis_tokens):
            ids = vocab.encode(sentence)
            for pos, idx in enumerate(ids):
                if idx not in oov_ids:
                    continue
                for q in range(max(0, pos - half), min(len(ids), pos + half + 1)):
                    neighbour = ids[q]
                    if q == pos or neighbour < RESERVED or neighbour in oov_ids:
                        continue
                    if idx not in sums:
                        sums[idx] = np.zeros(table.dim, dtype=np.float64)
                    sums[idx] += original[neighbour]
                    counts[idx] += 1

    imputed = original.copy()
    for idx in oov_ids:
        imputed[idx] = sums[idx] / counts[idx] if counts[idx] else 0.0
    logger.info(f"Imputed {sum(1 for i in oov_ids if counts[i])} of {len(oov_ids)} OOV rows "
                f"(window {window})")
    return EmbeddingTable(imputed)


def lookup(tokens: Sequence[int], table: EmbeddingTable) -> Tensor:
    """Stacked rows as an untracked tensor; no gradient reaches the table."""
    ids = np.asarray(tokens, dtype=np.int64)
    if ids.ndim != 1 or ids.size == 0:
        raise DimensionError("lookup: expected a nonempty id sequence")
    if ids.min() < 0 or ids.max() >= len(table):
        raise IndexError(f"lookup: id out of range for table of {len(table)} rows")
    return Tensor(table.values()[ids])
