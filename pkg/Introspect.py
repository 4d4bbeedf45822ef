"""
Introspect.py - alignment/gate trace export and corpus-level gate statistics.

Trace files are plain text: `key<TAB>value` header lines followed by one
block per matrix (alpha, input_gates, forget_gates, output_gates, hidden).
Floats are written with repr() so a read-back recovers them bit for bit.
"""

import logging
import os
import re
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from Embeddings import EmbeddingTable, Vocabulary
from MatchErrors import EmptyInputError, ParseError
from Matcher import CLASS_ORDER, MatchModel, MatchTrace, forward_pair
from SnliData import LABELS, LabeledPair

logger = logging.getLogger(__name__)

TRACE_FORMAT = "match-lstm-trace/1"
NULL_LABEL = "<NULL>"
GATE_BLOCKS = ("input_gates", "forget_gates", "output_gates")
STD_KIND = "population"


class StopwordList:
    """Lowercase stop words read from a versioned resource file (`#` lines are comments)."""

    def __init__(self, words, source: str = "", version: str = ""):
        self.words = frozenset(w.lower() for w in words)
        if not self.words:
            raise EmptyInputError("stop-word list is empty")
        self.source = source
        self.version = version

    @classmethod
    def load(cls, path: str) -> "StopwordList":
        words, version = [], ""
        with open(path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    match = re.search(r"version[:\s]+(\S+)", line, re.IGNORECASE)
                    if match:
                        version = match.group(1)
                    continue
                words.append(line)
        logger.info(f"Loaded {len(words)} stop words from {path}")
        return cls(words, source=path, version=version or os.path.basename(path))

    def __contains__(self, token: str) -> bool:
        return token.lower() in self.words

    def __len__(self):
        return len(self.words)

    def group_of(self, token: str) -> Optional[str]:
        """stop_word / content_word; tokens without letters or digits belong to neither."""
        if not any(ch.isalnum() for ch in token):
            return None
        return "stop_word" if token in self else "content_word"


@dataclass
class GateStats:
    group: str
    gate: str
    mean: float
    std: float
    n: int

    def to_record(self) -> Dict:
        record = asdict(self)
        record["std_kind"] = STD_KIND
        return record


# --- Trace files ---

@dataclass
class TraceFile:
    meta: Dict[str, str]
    premise_labels: List[str]
    hypothesis_tokens: List[str]
    blocks: Dict[str, np.ndarray] = field(default_factory=dict)


def _format_row(label: str, values: np.ndarray) -> str:
    return label + "\t" + "\t".join(repr(float(v)) for v in values)


def write_trace(trace: MatchTrace, pair: LabeledPair, out_path: str,
                probabilities: Optional[Sequence[float]] = None):
    if trace.length != len(pair.hypothesis_tokens):
        raise ValueError(f"trace has {trace.length} rows for {len(pair.hypothesis_tokens)} hypothesis tokens")
    premise_labels = [NULL_LABEL] + list(pair.premise_tokens)
    blocks = [("alpha", trace.alpha, premise_labels)]
    if trace.has_gates:
        dims = [f"d{i}" for i in range(trace.input_gates.shape[1])]
        blocks += [(name, getattr(trace, name), dims) for name in GATE_BLOCKS]
    blocks.append(("hidden", trace.hidden, [f"d{i}" for i in range(trace.hidden.shape[1])]))

    lines = [
        f"format\t{TRACE_FORMAT}",
        f"variant\t{trace.variant}",
        f"d_out\t{trace.hidden.shape[1]}",
        f"premise\t" + "\t".join(pair.premise_tokens),
        f"hypothesis\t" + "\t".join(pair.hypothesis_tokens),
        f"gold\t{pair.label}",
        f"class_order\t" + "\t".join(CLASS_ORDER),
    ]
    if probabilities is not None:
        lines.append(_format_row("probabilities", np.asarray(probabilities)))
    for name, matrix, columns in blocks:
        lines.append("")
        lines.append(f"[{name}]\t{matrix.shape[0]}\t{matrix.shape[1]}")
        lines.append("token\t" + "\t".join(columns))
        for token, values in zip(pair.hypothesis_tokens, matrix):
            lines.append(_format_row(token, values))

    with open(out_path, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")
    logger.info(f"Trace written to {out_path} ({trace.length} x {trace.alpha.shape[1]} alignment)")


def read_trace(path: str) -> TraceFile:
    meta: Dict[str, str] = {}
    blocks: Dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().split("\n")

    i = 0
    while i < len(lines):
        line = lines[i]
        if not line:
            i += 1
            continue
        if line.startswith("["):
            header = line.split("\t")
            name = header[0].strip("[]")
            try:
                rows, cols = int(header[1]), int(header[2])
            except (IndexError, ValueError):
                raise ParseError("malformed block header", path, i + 1)
            values = []
            for r in range(rows):
                parts = lines[i + 2 + r].split("\t") if i + 2 + r < len(lines) else []
                if len(parts) != cols + 1:
                    raise ParseError(f"block {name} row {r} has {len(parts) - 1} values, expected {cols}",
                                     path, i + 3 + r)
                values.append([float(v) for v in parts[1:]])
            blocks[name] = np.array(values, dtype=np.float64).reshape(rows, cols)
            i += 2 + rows
            continue
        key, _, value = line.partition("\t")
        meta[key] = value
        i += 1

    if meta.get("format") != TRACE_FORMAT:
        raise ParseError(f"not a trace file (format {meta.get('format')!r})", path, 1)
    return TraceFile(meta=meta,
                     premise_labels=[NULL_LABEL] + meta.get("premise", "").split("\t"),
                     hypothesis_tokens=meta.get("hypothesis", "").split("\t"),
                     blocks=blocks)


def export_trace(pair: LabeledPair, model: MatchModel, vocab: Vocabulary, table: EmbeddingTable,
                 out_path: str) -> MatchTrace:
    probs, trace = forward_pair(model, pair, vocab, table, unknown_to_null=True)
    write_trace(trace, pair, out_path, probabilities=probs.data)
    return trace


# --- Corpus statistics ---

def _require_gates(trace: MatchTrace):
    if not trace.has_gates:
        raise ValueError(f"gate statistics need a match-LSTM variant, got {trace.variant}")


def summarize(group: str, gate: str, samples: List[float]) -> GateStats:
    # Sorted before reducing so the result does not depend on corpus order
    values = np.sort(np.array(samples, dtype=np.float64))
    return GateStats(group=group, gate=gate, mean=float(values.mean()), std=float(values.std()), n=len(values))


def gate_statistics(corpus: Sequence[LabeledPair], model: MatchModel, vocab: Vocabulary,
                    table: EmbeddingTable, stopwords: StopwordList,
                    tokens: Sequence[str] = ("not",)) -> Tuple[List[GateStats], List[Dict]]:
    """
    Per hypothesis position the scalar gate value is the mean over the gate
    dimensions. Input gates are grouped into stop and content words and per
    named token; forget gates by gold label. Empty groups are returned as
    warning records instead of statistics.
    """
    if len(corpus) == 0:
        raise EmptyInputError("gate_statistics: corpus is empty")
    named = [t.lower() for t in tokens]
    groups: Dict[Tuple[str, str], List[float]] = {("stop_word", "input"): [], ("content_word", "input"): []}
    for t in named:
        groups[(f"token:{t}", "input")] = []
    for label in LABELS:
        groups[(f"label:{label}", "forget")] = []

    for pair in corpus:
        _, trace = forward_pair(model, pair, vocab, table, unknown_to_null=True)
        _require_gates(trace)
        input_values = trace.input_gates.mean(axis=1)
        forget_values = trace.forget_gates.mean(axis=1)
        for k, token in enumerate(pair.hypothesis_tokens):
            group = stopwords.group_of(token)
            if group is not None:
                groups[(group, "input")].append(float(input_values[k]))
            if token.lower() in named:
                groups[(f"token:{token.lower()}", "input")].append(float(input_values[k]))
            groups[(f"label:{pair.label}", "forget")].append(float(forget_values[k]))

    stats, warnings = [], []
    for (group, gate), samples in groups.items():
        if not samples:
            logger.warning(f"Gate statistics group {group}/{gate} is empty, omitted")
            warnings.append({"group": group, "gate": gate, "warning": "empty group"})
            continue
        stats.append(summarize(group, gate, samples))
    return stats, warnings


def null_alignment_report(corpus: Sequence[LabeledPair], model: MatchModel, vocab: Vocabulary,
                          table: EmbeddingTable, threshold: float = 0.5) -> List[Dict]:
    """Hypothesis tokens whose attention mass on the NULL slot exceeds threshold."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    report = []
    for index, pair in enumerate(corpus):
        _, trace = forward_pair(model, pair, vocab, table, unknown_to_null=True)
        for k, token in enumerate(pair.hypothesis_tokens):
            mass = float(trace.alpha[k, 0])
            if mass > threshold:
                report.append({"pair": index, "position": k, "token": token,
                               "null_mass": mass, "label": pair.label})
    logger.info(f"NULL alignment report: {len(report)} tokens above {threshold}")
    return report
