"""
Matcher.py - match-LSTM head, baseline attention head and model assembly.

For hypothesis position k the match-LSTM reads m_k = [a_k; h^t_k], where a_k
is the attention-weighted premise state computed with the previous match
state h^m_{k-1} as the recurrent query. The last real state h^m_N is
classified by a single affine map followed by softmax.

The baseline keeps a separate attention state h^a (a_k + tanh(V_a h^a_{k-1}))
and classifies [h^a_N; h^t_N] with the same head.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from Attention import (
    AttentionParams, PremiseBank, aggregate_rnn_step, attend, attention_scores,
    attention_weights, build_premise_bank,
)
from Embeddings import EmbeddingTable, Vocabulary, lookup
from Encoder import EncoderConfig, LstmParams, encode, encoder_params, lstm_step, register_encoder
from MatchErrors import DimensionError, EmptyInputError
from Numerics import (
    ParameterStore, Tape, Tensor, affine, concat, glorot_uniform, row, softmax, zeros,
)
from SnliData import LABELS, LabeledPair

logger = logging.getLogger(__name__)

BASELINE = "wbw_attention_baseline"
MODEL_VARIANTS = (BASELINE, "mlstm", "mlstm_bilstm", "mlstm_word_embedding")
ENCODER_FOR_VARIANT = {
    BASELINE: "lstm",
    "mlstm": "lstm",
    "mlstm_bilstm": "bilstm",
    "mlstm_word_embedding": "identity",
}
CLASS_ORDER = LABELS
NUM_CLASSES = len(CLASS_ORDER)


@dataclass
class MatchLstmParams(LstmParams):
    """LstmParams whose input is the concatenation [a_k; h^t_k]."""

    def validate(self):
        super().validate()
        if self.l_in != 2 * self.d:
            raise DimensionError(f"match-LSTM input must be 2 x {self.d}, got {self.l_in}")


@dataclass
class ClassifierParams:
    W_y: Tensor
    b_y: Tensor

    def validate(self):
        if self.W_y.shape[0] != NUM_CLASSES or self.b_y.shape != (NUM_CLASSES,):
            raise DimensionError(f"classifier must have exactly {NUM_CLASSES} outputs")

    @classmethod
    def from_bound(cls, bound: Dict[str, Tensor]) -> "ClassifierParams":
        params = cls(W_y=bound["cls.W_y"], b_y=bound["cls.b_y"])
        params.validate()
        return params

    @staticmethod
    def register(store: ParameterStore, d_in: int, rng: np.random.Generator):
        store.add("cls.W_y", glorot_uniform(rng, (NUM_CLASSES, d_in)))
        store.add("cls.b_y", np.zeros(NUM_CLASSES))


@dataclass
class ModelConfig:
    variant: str
    d: int
    l: int
    shared_encoder: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.variant not in MODEL_VARIANTS:
            raise ValueError(f"Unknown variant: {self.variant} (expected one of {', '.join(MODEL_VARIANTS)})")
        if self.d < 1 or self.l < 1:
            raise ValueError(f"d and l must be positive, got d={self.d}, l={self.l}")

    @property
    def is_baseline(self) -> bool:
        return self.variant == BASELINE

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(d=self.d, variant=ENCODER_FOR_VARIANT[self.variant], shared=self.shared_encoder)

    @property
    def d_out(self) -> int:
        return self.encoder_config().output_dim(self.l)

    def to_dict(self) -> Dict:
        return {"variant": self.variant, "d": self.d, "l": self.l, "d_out": self.d_out,
                "shared_encoder": self.shared_encoder, "seed": self.seed}


@dataclass
class MatchTrace:
    """
    One row per real hypothesis position. hidden holds h^m (or h^a for the
    baseline); the gate blocks are None for the baseline.
    """
    variant: str
    alpha: np.ndarray
    hidden: np.ndarray
    input_gates: Optional[np.ndarray] = None
    forget_gates: Optional[np.ndarray] = None
    output_gates: Optional[np.ndarray] = None

    @property
    def length(self) -> int:
        return self.alpha.shape[0]

    @property
    def has_gates(self) -> bool:
        return self.input_gates is not None


class MatchModel:
    """Parameter store plus the configuration needed to run forward()."""

    def __init__(self, config: ModelConfig, store: Optional[ParameterStore] = None):
        self.config = config
        if store is None:
            store = ParameterStore()
            self._register(store, config)
        self.store = store

    @staticmethod
    def _register(store: ParameterStore, config: ModelConfig):
        rng = np.random.default_rng(config.seed)
        d_out = config.d_out
        register_encoder(store, config.encoder_config(), config.l, rng)
        AttentionParams.register(store, d_out, rng, baseline=config.is_baseline)
        if config.is_baseline:
            ClassifierParams.register(store, 2 * d_out, rng)
        else:
            MatchLstmParams.register(store, "mlstm", d_out, 2 * d_out, rng)
            ClassifierParams.register(store, d_out, rng)
        logger.info(f"Initialised {config.variant} (d={config.d}, l={config.l}, d_out={d_out}, "
                    f"seed={config.seed}): {store.num_scalars()} parameters")


def match_step(a_k: Tensor, h_t_k: Tensor, h_prev: Tensor, c_prev: Tensor, params: MatchLstmParams):
    if a_k.shape != (params.d,) or h_t_k.shape != (params.d,):
        raise DimensionError(f"match_step: a_k {a_k.shape} and h_t_k {h_t_k.shape} must both be ({params.d},)")
    return lstm_step(concat(a_k, h_t_k), h_prev, c_prev, params)


def _check_length(hyp_states: Tensor, length: Optional[int]) -> int:
    n = hyp_states.shape[0] if length is None else length
    if n < 1:
        raise EmptyInputError("hypothesis has no tokens")
    if n > hyp_states.shape[0]:
        raise IndexError(f"hypothesis length {n} exceeds {hyp_states.shape[0]} rows")
    return n


def run_match(bank: PremiseBank, hyp_states: Tensor, attn: AttentionParams, match: MatchLstmParams,
              length: Optional[int] = None) -> Tuple[Tensor, MatchTrace]:
    """Runs positions 1..N and returns h^m_N at the true length with the trace."""
    n = _check_length(hyp_states, length)
    h, c = zeros(match.d), zeros(match.d)
    alphas, hidden, inputs, forgets, outputs = [], [], [], [], []
    for k in range(n):
        h_t = row(hyp_states, k)
        alpha = attention_weights(attention_scores(bank, h_t, h, attn), bank.mask)
        h, c, gates = match_step(attend(alpha, bank), h_t, h, c, match)
        alphas.append(alpha.data)
        hidden.append(h.data)
        inputs.append(gates.i)
        forgets.append(gates.f)
        outputs.append(gates.o)
    trace = MatchTrace(variant="mlstm", alpha=np.array(alphas), hidden=np.array(hidden),
                       input_gates=np.array(inputs), forget_gates=np.array(forgets),
                       output_gates=np.array(outputs))
    return h, trace


def run_baseline(bank: PremiseBank, hyp_states: Tensor, attn: AttentionParams,
                 length: Optional[int] = None) -> Tuple[Tensor, MatchTrace]:
    """Returns [h^a_N; h^t_N] and a gate-free trace."""
    if attn.V_a is None:
        raise DimensionError("baseline attention needs V_a")
    n = _check_length(hyp_states, length)
    h_a = zeros(attn.dim)
    alphas, hidden = [], []
    for k in range(n):
        h_t = row(hyp_states, k)
        alpha = attention_weights(attention_scores(bank, h_t, h_a, attn), bank.mask)
        h_a = aggregate_rnn_step(attend(alpha, bank), h_a, attn.V_a)
        alphas.append(alpha.data)
        hidden.append(h_a.data)
    trace = MatchTrace(variant=BASELINE, alpha=np.array(alphas), hidden=np.array(hidden))
    return concat(h_a, row(hyp_states, n - 1)), trace


def classify(h_final: Tensor, params: ClassifierParams) -> Tensor:
    return softmax(affine(h_final, params.W_y, params.b_y))


def forward(model: MatchModel, premise_ids: Sequence[int], hypothesis_ids: Sequence[int],
            table: EmbeddingTable, tape: Optional[Tape] = None,
            grads: Optional[Dict[str, np.ndarray]] = None,
            premise_length: Optional[int] = None,
            hypothesis_length: Optional[int] = None) -> Tuple[Tensor, MatchTrace]:
    """
    Class probabilities (entailment, contradiction, neutral) and the trace for
    one id-mapped pair. Id rows may carry PAD beyond the given lengths.
    With a tape, gradients flow into `grads` (default: the store's accumulators).
    """
    config = model.config
    if len(premise_ids) == 0 or len(hypothesis_ids) == 0:
        raise EmptyInputError("forward: premise and hypothesis must be nonempty")
    if table.dim != config.l:
        raise DimensionError(f"embedding table has dimension {table.dim}, model expects {config.l}")
    m = len(premise_ids) if premise_length is None else int(premise_length)
    n = len(hypothesis_ids) if hypothesis_length is None else int(hypothesis_length)
    if m < 1 or n < 1:
        raise EmptyInputError("forward: premise and hypothesis must be nonempty")

    bound = model.store.bind(tape, grads)
    enc = config.encoder_config()
    premise = encode(lookup(premise_ids, table), encoder_params(bound, enc, "premise"), enc, m)
    hypothesis = encode(lookup(hypothesis_ids, table), encoder_params(bound, enc, "hypothesis"), enc, n)
    bank = build_premise_bank(premise, m)
    attn = AttentionParams.from_bound(bound, baseline=config.is_baseline)

    if config.is_baseline:
        h_final, trace = run_baseline(bank, hypothesis, attn, n)
    else:
        h_final, trace = run_match(bank, hypothesis, attn, MatchLstmParams.from_bound(bound, "mlstm"), n)
        trace.variant = config.variant
    return classify(h_final, ClassifierParams.from_bound(bound)), trace


def forward_pair(model: MatchModel, pair: LabeledPair, vocab: Vocabulary, table: EmbeddingTable,
                 unknown_to_null: bool = False, tape: Optional[Tape] = None) -> Tuple[Tensor, MatchTrace]:
    premise_ids = vocab.encode(pair.premise_tokens, unknown_to_null=unknown_to_null)
    hypothesis_ids = vocab.encode(pair.hypothesis_tokens, unknown_to_null=unknown_to_null)
    return forward(model, premise_ids, hypothesis_ids, table, tape=tape)


def predict(probs: Tensor) -> str:
    return CLASS_ORDER[int(np.argmax(probs.data))]


def count_parameters(model: MatchModel) -> int:
    """Trainable scalars; the frozen embedding table is not part of the store."""
    return model.store.num_scalars()


def parameter_breakdown(model: MatchModel) -> Dict[str, int]:
    groups: Dict[str, int] = {}
    for p in model.store:
        group = p.name.split(".")[0]
        groups[group] = groups.get(group, 0) + p.value.data.size
    return groups
