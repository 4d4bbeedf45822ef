"""
Attention.py - word-by-word attention over a premise with a NULL slot.

One score kernel serves both the baseline (recurrent state h^a) and the
match-LSTM (recurrent state h^m):
    e_kj = w_e · tanh(W_s h^s_j + W_t h^t_k + W_r h_rec)
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from MatchErrors import DimensionError
from Numerics import (
    ParameterStore, Tensor, add, add_rows, affine, affine_rows, glorot_uniform,
    masked_softmax, prepend_zero_row, row_dot, tanh, weighted_sum,
)

logger = logging.getLogger(__name__)


class PremiseBank:
    """
    Premise states with the NULL slot prepended as row 0 (all zeros).
    mask is true for NULL and the real premise positions, false for padding.
    """

    def __init__(self, H: Tensor, mask: np.ndarray):
        if H.shape[0] != mask.shape[0]:
            raise DimensionError(f"PremiseBank: {H.shape[0]} rows but mask of length {mask.shape[0]}")
        if not mask[0]:
            raise DimensionError("PremiseBank: NULL slot must be unmasked")
        if np.any(H.data[0] != 0.0):
            raise DimensionError("PremiseBank: NULL row must be all zeros")
        self.H = H
        self.mask = mask
        self._projected = None
        self._projected_by = None

    @property
    def length(self) -> int:
        """Number of real premise tokens (NULL excluded)."""
        return int(self.mask.sum()) - 1

    @property
    def dim(self) -> int:
        return self.H.shape[1]

    def projection(self, W_s: Tensor) -> Tensor:
        """W_s h^s_j for every row; computed once per bank and weight tensor."""
        if self._projected is None or self._projected_by is not W_s:
            self._projected = affine_rows(self.H, W_s)
            self._projected_by = W_s
        return self._projected


def build_premise_bank(premise_states: Tensor, length: int) -> PremiseBank:
    """premise_states is M_pad x d_out; the first `length` rows are real."""
    if not 1 <= length <= premise_states.shape[0]:
        raise IndexError(f"premise length {length} out of range for {premise_states.shape[0]} rows")
    mask = np.zeros(premise_states.shape[0] + 1, dtype=bool)
    mask[:length + 1] = True
    return PremiseBank(prepend_zero_row(premise_states), mask)


@dataclass
class AttentionParams:
    w_e: Tensor
    W_s: Tensor
    W_t: Tensor
    W_r: Tensor
    V_a: Optional[Tensor] = None

    @property
    def dim(self) -> int:
        return self.w_e.shape[0]

    def validate(self):
        d = self.dim
        for name in ("W_s", "W_t", "W_r"):
            if getattr(self, name).shape != (d, d):
                raise DimensionError(f"{name} must be {d}x{d}")
        if self.V_a is not None and self.V_a.shape != (d, d):
            raise DimensionError(f"V_a must be {d}x{d}")

    @classmethod
    def from_bound(cls, bound: Dict[str, Tensor], baseline: bool) -> "AttentionParams":
        params = cls(
            w_e=bound["att.w_e"],
            W_s=bound["att.W_s"],
            W_t=bound["att.W_t"],
            W_r=bound["att.W_r"],
            V_a=bound["att.V_a"] if baseline else None,
        )
        params.validate()
        return params

    @staticmethod
    def register(store: ParameterStore, d_out: int, rng: np.random.Generator, baseline: bool):
        store.add("att.w_e", glorot_uniform(rng, (d_out,)))
        store.add("att.W_s", glorot_uniform(rng, (d_out, d_out)))
        store.add("att.W_t", glorot_uniform(rng, (d_out, d_out)))
        store.add("att.W_r", glorot_uniform(rng, (d_out, d_out)))
        if baseline:
            store.add("att.V_a", glorot_uniform(rng, (d_out, d_out)))


def attention_scores(bank: PremiseBank, h_t_k: Tensor, h_rec_prev: Tensor,
                     params: AttentionParams) -> Tensor:
    """Scores for every bank row, NULL included. Masked rows are dropped by the softmax."""
    if h_t_k.shape != (bank.dim,) or h_rec_prev.shape != (bank.dim,):
        raise DimensionError(f"attention_scores: states must have length {bank.dim}")
    query = add(affine(h_t_k, params.W_t), affine(h_rec_prev, params.W_r))
    return row_dot(tanh(add_rows(bank.projection(params.W_s), query)), params.w_e)


def attention_weights(scores: Tensor, mask: np.ndarray) -> Tensor:
    return masked_softmax(scores, mask)


def attend(alpha: Tensor, bank: PremiseBank) -> Tensor:
    """a_k = Σ_j α_kj h^s_j; the NULL row contributes zero."""
    if alpha.shape[0] != bank.H.shape[0]:
        raise DimensionError(f"attend: {alpha.shape[0]} weights for {bank.H.shape[0]} bank rows")
    return weighted_sum(alpha, bank.H)


def aggregate_rnn_step(a_k: Tensor, h_a_prev: Tensor, V_a: Tensor) -> Tensor:
    """Baseline aggregation h^a_k = a_k + tanh(V_a h^a_{k-1})."""
    return add(a_k, tanh(affine(h_a_prev, V_a)))
