"""
Encoder.py - LSTM sentence encoding.

Three variants share one entry point, encode():
  lstm      left-to-right states from a zero initial state
  bilstm    forward and backward states concatenated (output 2d)
  identity  the embeddings themselves (output l)
"""

import logging
from dataclasses import dataclass, fields
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from MatchErrors import DimensionError, EmptyInputError
from Numerics import (
    ParameterStore, Tensor, concat, glorot_uniform, lstm_cell, row, segment, stack, zeros,
)

logger = logging.getLogger(__name__)

ENCODER_VARIANTS = ("lstm", "bilstm", "identity")


@dataclass
class LstmParams:
    W_i: Tensor
    W_f: Tensor
    W_o: Tensor
    W_c: Tensor
    V_i: Tensor
    V_f: Tensor
    V_o: Tensor
    V_c: Tensor
    b_i: Tensor
    b_f: Tensor
    b_o: Tensor
    b_c: Tensor

    @property
    def d(self) -> int:
        return self.W_i.shape[0]

    @property
    def l_in(self) -> int:
        return self.W_i.shape[1]

    def validate(self):
        d, l_in = self.d, self.l_in
        for gate in "ifoc":
            if getattr(self, f"W_{gate}").shape != (d, l_in):
                raise DimensionError(f"W_{gate} must be {d}x{l_in}")
            if getattr(self, f"V_{gate}").shape != (d, d):
                raise DimensionError(f"V_{gate} must be {d}x{d}")
            if getattr(self, f"b_{gate}").shape != (d,):
                raise DimensionError(f"b_{gate} must have length {d}")

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]

    @classmethod
    def from_bound(cls, bound: Dict[str, Tensor], prefix: str) -> "LstmParams":
        params = cls(**{name: bound[f"{prefix}.{name}"] for name in cls.field_names()})
        params.validate()
        return params

    @classmethod
    def register(cls, store: ParameterStore, prefix: str, d: int, l_in: int,
                 rng: np.random.Generator):
        """Adds the 12 tensors to the store: Glorot-uniform matrices, zero biases."""
        for name in cls.field_names():
            if name.startswith("W_"):
                store.add(f"{prefix}.{name}", glorot_uniform(rng, (d, l_in)))
            elif name.startswith("V_"):
                store.add(f"{prefix}.{name}", glorot_uniform(rng, (d, d)))
            else:
                store.add(f"{prefix}.{name}", np.zeros(d))


@dataclass
class BiLstmParams:
    forward: LstmParams
    backward: LstmParams


@dataclass
class LstmGates:
    """Gate activations of one position, as untracked arrays."""
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray


@dataclass
class EncoderConfig:
    d: int
    variant: str = "lstm"
    shared: bool = True

    def __post_init__(self):
        if self.variant not in ENCODER_VARIANTS:
            raise ValueError(f"Unknown encoder variant: {self.variant}")
        if self.variant != "identity" and self.d < 1:
            raise ValueError(f"d must be positive, got {self.d}")

    def output_dim(self, l: int) -> int:
        if self.variant == "identity":
            return l
        if self.variant == "bilstm":
            return 2 * self.d
        return self.d

    def prefixes(self) -> Dict[str, str]:
        """Store prefix of the encoder used for each sentence role."""
        if self.shared:
            return {"premise": "enc", "hypothesis": "enc"}
        return {"premise": "enc_p", "hypothesis": "enc_h"}


EncoderParams = Union[None, LstmParams, BiLstmParams]


def register_encoder(store: ParameterStore, config: EncoderConfig, l: int, rng: np.random.Generator):
    if config.variant == "identity":
        return
    for prefix in dict.fromkeys(config.prefixes().values()):
        if config.variant == "bilstm":
            LstmParams.register(store, f"{prefix}.fwd", config.d, l, rng)
            LstmParams.register(store, f"{prefix}.bwd", config.d, l, rng)
        else:
            LstmParams.register(store, prefix, config.d, l, rng)


def encoder_params(bound: Dict[str, Tensor], config: EncoderConfig, role: str) -> EncoderParams:
    if config.variant == "identity":
        return None
    prefix = config.prefixes()[role]
    if config.variant == "bilstm":
        return BiLstmParams(LstmParams.from_bound(bound, f"{prefix}.fwd"),
                            LstmParams.from_bound(bound, f"{prefix}.bwd"))
    return LstmParams.from_bound(bound, prefix)


def lstm_step(x: Tensor, h_prev: Tensor, c_prev: Tensor,
              params: LstmParams) -> Tuple[Tensor, Tensor, LstmGates]:
    """One LSTM position. Gates are returned for introspection."""
    if x.shape != (params.l_in,):
        raise DimensionError(f"lstm_step: input has shape {x.shape}, expected ({params.l_in},)")
    if h_prev.shape != (params.d,) or c_prev.shape != (params.d,):
        raise DimensionError(f"lstm_step: state shapes {h_prev.shape}/{c_prev.shape}, expected ({params.d},)")

    gates = "ifoc"
    state, (i, f, o) = lstm_cell(x, h_prev, c_prev,
                                 [getattr(params, f"W_{g}") for g in gates],
                                 [getattr(params, f"V_{g}") for g in gates],
                                 [getattr(params, f"b_{g}") for g in gates])
    d = params.d
    h = segment(state, 0, d)
    c = segment(state, d, 2 * d)
    return h, c, LstmGates(i=i, f=f, o=o)


def _run_lstm(embedded: Tensor, order: List[int], params: LstmParams) -> Dict[int, Tensor]:
    h, c = zeros(params.d), zeros(params.d)
    states = {}
    for k in order:
        h, c, _ = lstm_step(row(embedded, k), h, c, params)
        states[k] = h
    return states


def encode(embedded: Tensor, params: EncoderParams, config: EncoderConfig,
           length: Optional[int] = None) -> Tensor:
    """
    Encodes an n x l embedding matrix whose first `length` rows are real tokens.
    Padded rows are still run through the LSTM; consumers mask them out.
    """
    n = embedded.shape[0]
    length = n if length is None else length
    if length > n:
        raise IndexError(f"encode: length {length} exceeds {n} rows")
    if length < 1:
        raise EmptyInputError("encode: sentence has no tokens")

    if config.variant == "identity":
        return embedded

    if config.variant == "lstm":
        states = _run_lstm(embedded, list(range(n)), params)
        return stack([states[k] for k in range(n)])

    forward = _run_lstm(embedded, list(range(n)), params.forward)
    # Backward direction starts at the last real token; padding comes after
    order = list(range(length - 1, -1, -1)) + list(range(length, n))
    backward = _run_lstm(embedded, order, params.backward)
    return stack([concat(forward[k], backward[k]) for k in range(n)])
