"""
SnliData.py - SNLI-format ingestion, label filtering and tokenization.

Input records are JSON lines with gold_label, sentence1, sentence2 and
optionally sentence1_binary_parse / sentence2_binary_parse. Pairs labeled
"-" (no annotator consensus) are dropped and counted.
"""

import json
import logging
from collections import Counter
from dataclasses import dataclass
from typing import Dict, Iterable, Iterator, List, Tuple

from MatchErrors import EmptyInputError, ParseError

logger = logging.getLogger(__name__)

# Class index order used everywhere (model outputs, checkpoints, confusion matrices)
LABELS = ("entailment", "contradiction", "neutral")
LABEL_INDEX = {label: i for i, label in enumerate(LABELS)}
NO_CONSENSUS = "-"

REQUIRED_FIELDS = ("gold_label", "sentence1", "sentence2")
PARENS = ("(", ")")


@dataclass(frozen=True)
class LabeledPair:
    premise_tokens: Tuple[str, ...]
    hypothesis_tokens: Tuple[str, ...]
    label: str

    def __post_init__(self):
        if not self.premise_tokens or not self.hypothesis_tokens:
            raise EmptyInputError("LabeledPair needs nonempty premise and hypothesis")
        if self.label not in LABEL_INDEX:
            raise ValueError(f"Unknown label: {self.label}")

    @property
    def label_id(self) -> int:
        return LABEL_INDEX[self.label]

    @classmethod
    def from_text(cls, premise: str, hypothesis: str, label: str) -> "LabeledPair":
        return cls(tuple(premise.split()), tuple(hypothesis.split()), label)


@dataclass
class Corpus:
    pairs: List[LabeledPair]
    split: str = "train"
    source: str = ""
    dropped: int = 0

    def __len__(self):
        return len(self.pairs)

    def __iter__(self) -> Iterator[LabeledPair]:
        return iter(self.pairs)

    def __getitem__(self, i) -> LabeledPair:
        return self.pairs[i]

    @property
    def kept(self) -> int:
        return len(self.pairs)


def _sentence_tokens(record: Dict, side: int) -> List[str]:
    parse = record.get(f"sentence{side}_binary_parse")
    if parse:
        tokens = [t for t in str(parse).split() if t not in PARENS]
    else:
        tokens = str(record.get(f"sentence{side}", "")).split()
    if not tokens:
        raise EmptyInputError(f"sentence{side} has no tokens")
    return tokens


def tokenize(record: Dict) -> Tuple[Tuple[str, ...], Tuple[str, ...]]:
    """
    Binary-parse leaves when the parse fields are present, otherwise a
    whitespace split of the plain sentence. Casing is preserved.
    """
    return tuple(_sentence_tokens(record, 1)), tuple(_sentence_tokens(record, 2))


def _normalize_label(raw, path: str, line: int) -> str:
    label = str(raw).strip().lower()
    if label != NO_CONSENSUS and label not in LABEL_INDEX:
        raise ParseError(f"unknown gold_label '{raw}'", path, line)
    return label


def parse_snli(path: str, split: str = None) -> Corpus:
    """Reads one SNLI split. Malformed lines raise ParseError; they are never skipped."""
    split = split or _split_from_path(path)
    pairs = []
    dropped = 0
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON record ({e.msg})", path, line_no)
            if not isinstance(record, dict):
                raise ParseError("record is not an object", path, line_no)
            for name in REQUIRED_FIELDS:
                if name not in record:
                    raise ParseError(f"missing required field {name}", path, line_no)

            label = _normalize_label(record["gold_label"], path, line_no)
            if label == NO_CONSENSUS:
                dropped += 1
                continue
            try:
                premise, hypothesis = tokenize(record)
            except EmptyInputError as e:
                raise ParseError(str(e), path, line_no)
            pairs.append(LabeledPair(premise, hypothesis, label))

    logger.info(f"Parsed {path} ({split}): kept {len(pairs)}, dropped {dropped}")
    return Corpus(pairs=pairs, split=split, source=path, dropped=dropped)


def _split_from_path(path: str) -> str:
    lowered = path.lower()
    for name in ("train", "dev", "test"):
        if name in lowered:
            return name
    return "data"


def load_fixture_tsv(path: str, split: str = None) -> Corpus:
    """Reads `label<TAB>premise<TAB>hypothesis` lines."""
    split = split or _split_from_path(path)
    pairs = []
    dropped = 0
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            fields_ = line.rstrip("\n").split("\t")
            if len(fields_) != 3:
                raise ParseError(f"expected 3 tab-separated fields, got {len(fields_)}", path, line_no)
            label = _normalize_label(fields_[0], path, line_no)
            if label == NO_CONSENSUS:
                dropped += 1
                continue
            try:
                pairs.append(LabeledPair.from_text(fields_[1], fields_[2], label))
            except EmptyInputError as e:
                raise ParseError(str(e), path, line_no)
    logger.info(f"Loaded fixture {path}: {len(pairs)} pairs")
    return Corpus(pairs=pairs, split=split, source=path, dropped=dropped)


def write_fixture_tsv(corpus: Iterable[LabeledPair], path: str):
    with open(path, "w", encoding="utf-8") as f:
        for pair in corpus:
            f.write(f"{pair.label}\t{' '.join(pair.premise_tokens)}\t{' '.join(pair.hypothesis_tokens)}\n")


def split_statistics(corpus: Corpus) -> Dict:
    labels = Counter(pair.label for pair in corpus)
    tokens = set()
    for pair in corpus:
        tokens.update(pair.premise_tokens)
        tokens.update(pair.hypothesis_tokens)
    return {
        "split": corpus.split,
        "source": corpus.source,
        "kept": corpus.kept,
        "dropped": corpus.dropped,
        "labels": {label: labels.get(label, 0) for label in LABELS},
        "unique_tokens": len(tokens),
    }
