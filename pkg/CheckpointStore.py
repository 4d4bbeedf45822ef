"""
CheckpointStore.py - self-describing model checkpoints.

Layout: one line of JSON (sorted keys) describing the model and the
parameter blocks, then the blocks' little-endian float64 bytes in the
declared order, which is the ParameterStore insertion order.
"""

import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from MatchErrors import CheckpointError, CheckpointVersionError
from Matcher import CLASS_ORDER, MatchModel, ModelConfig
from Numerics import ParameterStore

logger = logging.getLogger(__name__)

FORMAT_NAME = "match-lstm-checkpoint"
FORMAT_VERSION = 1
BYTE_ORDER = "<f8"
INIT_SCHEME = "glorot_uniform matrices, zero biases"


@dataclass
class Checkpoint:
    config: ModelConfig
    blocks: List[Tuple[str, np.ndarray]]
    metadata: Dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: MatchModel, **metadata) -> "Checkpoint":
        blocks = [(p.name, p.value.data.copy()) for p in model.store]
        return cls(config=model.config, blocks=blocks, metadata=dict(metadata))

    def to_model(self) -> MatchModel:
        """Rebuilds the model; block names and shapes must match the variant's layout."""
        expected = MatchModel(self.config).store
        got = [(name, values.shape) for name, values in self.blocks]
        want = [(p.name, p.value.shape) for p in expected]
        if got != want:
            raise CheckpointError(f"parameter blocks do not match the {self.config.variant} layout")
        store = ParameterStore()
        for name, values in self.blocks:
            store.add(name, values)
        return MatchModel(self.config, store)

    def header(self) -> Dict:
        return {
            "format": FORMAT_NAME,
            "format_version": FORMAT_VERSION,
            "variant": self.config.variant,
            "dims": {"d": self.config.d, "l": self.config.l, "d_out": self.config.d_out},
            "shared_encoder": self.config.shared_encoder,
            "class_order": list(CLASS_ORDER),
            "init": {"seed": self.config.seed, "scheme": INIT_SCHEME},
            "dtype": BYTE_ORDER,
            "blocks": [[name, list(values.shape)] for name, values in self.blocks],
            "metadata": self.metadata,
        }


def save_checkpoint(checkpoint: Checkpoint, path: str):
    header = json.dumps(checkpoint.header(), sort_keys=True)
    with open(path, "wb") as f:
        f.write(header.encode("utf-8") + b"\n")
        for _, values in checkpoint.blocks:
            f.write(np.ascontiguousarray(values, dtype=BYTE_ORDER).tobytes())
    logger.info(f"Checkpoint written to {path} ({len(checkpoint.blocks)} blocks)")


def load_checkpoint(path: str) -> Checkpoint:
    with open(path, "rb") as f:
        header_line = f.readline()
        payload = f.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CheckpointError(f"{path}: unreadable checkpoint header")
    if not isinstance(header, dict) or header.get("format") != FORMAT_NAME:
        raise CheckpointError(f"{path}: not a {FORMAT_NAME} file")
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint format version {header.get('format_version')} is incompatible "
            f"with this build (expected {FORMAT_VERSION})")
    if header.get("class_order") != list(CLASS_ORDER):
        raise CheckpointError(f"{path}: unexpected class order {header.get('class_order')}")

    dims = header["dims"]
    config = ModelConfig(variant=header["variant"], d=dims["d"], l=dims["l"],
                         shared_encoder=header["shared_encoder"], seed=header["init"]["seed"])
    if config.d_out != dims["d_out"]:
        raise CheckpointError(f"{path}: d_out {dims['d_out']} inconsistent with variant {config.variant}")

    itemsize = np.dtype(BYTE_ORDER).itemsize
    blocks, offset = [], 0
    for name, shape in header["blocks"]:
        count = int(np.prod(shape))
        end = offset + count * itemsize
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated at block {name}")
        values = np.frombuffer(payload[offset:end], dtype=BYTE_ORDER).astype(np.float64).reshape(shape)
        blocks.append((name, values))
        offset = end
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} trailing bytes after the last block")

    logger.info(f"Loaded checkpoint {path}: {config.variant}, {len(blocks)} blocks")
    return Checkpoint(config=config, blocks=blocks, metadata=header.get("metadata", {}))
