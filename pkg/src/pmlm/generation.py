"""Arbitrary-order autoregressive generation.

A sequence starts as all [MASK] except for anchor tokens fixed at chosen
positions. Each step runs a full bidirectional forward on the current
snapshot, samples a token for the next position in the generation order,
writes it in, and repeats until no [MASK] remains. Left-to-right generation
is the identity-order special case.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import MASK_ID, PAD_ID, UNK_ID, Vocabulary, detokenize
from .model import Transformer

EXCLUDED_CANDIDATES = (PAD_ID, MASK_ID, UNK_ID)

ORDER_MODES = ("random", "left_to_right", "explicit")
SAMPLER_KINDS = ("greedy", "temperature", "top_k")


@dataclass(frozen=True)
class SamplerSpec:
    kind: str = "greedy"
    temperature: float = 1.0
    k: int = 40

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise ValueError(f"sampler kind must be one of {SAMPLER_KINDS}, got '{self.kind}'")
        if self.temperature <= 0.0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.k < 1:
            raise ValueError(f"top-k width must be >= 1, got {self.k}")


@dataclass(frozen=True)
class GenerationOrder:
    """Sequence of distinct positions to fill, with a mode tag."""

    sigma: Tuple[int, ...]
    mode: str = "explicit"

    def __post_init__(self):
        if self.mode not in ORDER_MODES:
            raise ValueError(f"order mode must be one of {ORDER_MODES}")
        if len(set(self.sigma)) != len(self.sigma):
            raise ValueError("generation order repeats a position")
        if self.mode == "left_to_right" and tuple(self.sigma) != tuple(sorted(self.sigma)):
            raise ValueError("left_to_right order must visit positions in increasing order")

    @classmethod
    def left_to_right(cls, positions: Sequence[int]) -> "GenerationOrder":
        return cls(tuple(sorted(int(p) for p in positions)), mode="left_to_right")

    @classmethod
    def random(cls, positions: Sequence[int], rng: np.random.Generator) -> "GenerationOrder":
        perm = rng.permutation(np.asarray(sorted(positions), dtype=np.int64))
        return cls(tuple(int(p) for p in perm), mode="random")

    @classmethod
    def explicit(cls, sigma: Sequence[int]) -> "GenerationOrder":
        return cls(tuple(int(p) for p in sigma), mode="explicit")


@dataclass(frozen=True)
class GenerationConstraints:
    """Anchor tokens pinned at fixed positions plus the target length."""

    target_length: int
    anchors: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.target_length < 1:
            raise ValueError("target_length must be >= 1")
        for pos, tok in self.anchors.items():
            if not 0 <= pos < self.target_length:
                raise ValueError(f"anchor position {pos} outside sequence of length {self.target_length}")
            if tok in (MASK_ID, PAD_ID):
                raise ValueError(f"anchor at position {pos} may not be [MASK] or [PAD]")

    @property
    def free_positions(self) -> List[int]:
        return [p for p in range(self.target_length) if p not in self.anchors]


@dataclass(frozen=True)
class TraceStep:
    step: int
    position: int
    token: int
    snapshot: Tuple[int, ...]


@dataclass
class GenerationTrace:
    target_length: int
    anchors: Dict[int, int]
    order_mode: str
    steps: List[TraceStep] = field(default_factory=list)

    @property
    def order(self) -> Tuple[int, ...]:
        return tuple(s.position for s in self.steps)

    def to_jsonl(self, vocab: Optional[Vocabulary] = None, tokenizer_kind: str = "char") -> str:
        """One JSON object per step; positions and steps are 1-based to match
        the tabular rendering."""
        lines = []
        for s in self.steps:
            rec = {
                "step": s.step + 1,
                "position": s.position + 1,
                "token": s.token,
                "snapshot_ids": list(s.snapshot),
            }
            if vocab is not None:
                rec["token_text"] = vocab.decode(s.token)
                rec["snapshot"] = snapshot_text(s.snapshot, vocab, tokenizer_kind)
            lines.append(json.dumps(rec, sort_keys=True))
        return "\n".join(lines) + "\n"


def snapshot_text(snapshot: Sequence[int], vocab: Vocabulary, tokenizer_kind: str) -> str:
    """Render a snapshot with '_' standing in for [MASK]."""
    toks = ["_" if t == MASK_ID else vocab.decode(int(t)) for t in snapshot]
    return detokenize(toks, tokenizer_kind)


def render_trace_table(trace: GenerationTrace, vocab: Optional[Vocabulary] = None,
                       tokenizer_kind: str = "char") -> str:
    """Aligned step/prediction-index/state table for a generation trace."""
    header = f"{'Step':>4}  {'Index':>5}  State"
    rows = [header, "-" * len(header)]
    for s in trace.steps:
        state = (
            snapshot_text(s.snapshot, vocab, tokenizer_kind)
            if vocab is not None
            else " ".join("_" if t == MASK_ID else str(t) for t in s.snapshot)
        )
        rows.append(f"{s.step + 1:>4}  {s.position + 1:>5}  {state}")
    order = "->".join(str(p + 1) for p in trace.order)
    rows.append(f"Generation order: {order}")
    return "\n".join(rows)


# ---------------------------------------------------------------------------
# token sampling
# ---------------------------------------------------------------------------


def sample_token(
    logit_row: np.ndarray,
    sampler: SamplerSpec,
    rng: Optional[np.random.Generator] = None,
    exclude: Sequence[int] = EXCLUDED_CANDIDATES,
) -> int:
    """Pick a token id from one logit row.

    greedy takes the argmax (lowest id wins ties); temperature samples from
    softmax(logits / T); top_k renormalizes over the k best after temperature
    scaling. Excluded ids are removed from the candidate set first.
    """
    logits = np.asarray(logit_row, dtype=np.float64).copy()
    if logits.ndim != 1:
        raise ValueError(f"sample_token expects one logit row, got shape {logits.shape}")
    if not np.all(np.isfinite(logits)):
        raise ValueError("sample_token: non-finite logits")
    keep = np.ones(logits.shape[0], dtype=bool)
    for ex in exclude:
        if 0 <= ex < logits.shape[0]:
            keep[ex] = False
    if not keep.any():
        raise ValueError("sample_token: every candidate token is excluded")
    logits[~keep] = -np.inf

    if sampler.kind == "greedy":
        return int(np.argmax(logits))

    scaled = logits / sampler.temperature
    if sampler.kind == "top_k":
        # rank by logit descending, ties by lower id, keep the k best
        ranked = np.lexsort((np.arange(logits.shape[0]), -scaled))
        cutoff = min(sampler.k, int(keep.sum()))
        drop = ranked[cutoff:]
        scaled[drop] = -np.inf
    if rng is None:
        raise ValueError(f"sampler kind '{sampler.kind}' requires an rng")
    candidates = np.flatnonzero(np.isfinite(scaled))
    weights = np.exp(scaled[candidates] - scaled[candidates].max())
    cdf = np.cumsum(weights / weights.sum())
    pick = min(int(np.searchsorted(cdf, rng.random(), side="right")), len(candidates) - 1)
    return int(candidates[pick])


# ---------------------------------------------------------------------------
# generation loops
# ---------------------------------------------------------------------------


def generate(
    model: Transformer,
    constraints: GenerationConstraints,
    order: GenerationOrder,
    sampler: SamplerSpec = SamplerSpec(),
    rng: Optional[np.random.Generator] = None,
) -> Tuple[np.ndarray, GenerationTrace]:
    """Fill every non-anchor position in the given order.

    Starts from all-[MASK] plus anchors; each step runs one full forward on
    the current snapshot (every hidden state is recomputed), samples the row
    at the next position in the order, and reveals it. The order must cover
    exactly the non-anchor positions.
    """
    if model.is_causal:
        raise ValueError("generate requires a bidirectional model")
    n = constraints.target_length
    if n > model.config.max_len:
        raise ValueError(f"target_length {n} exceeds model max_len {model.config.max_len}")
    free = set(constraints.free_positions)
    if set(order.sigma) != free:
        raise ValueError(
            "generation order and anchors must partition the positions: "
            f"order covers {sorted(set(order.sigma))}, free positions are {sorted(free)}"
        )
    for pos, tok in constraints.anchors.items():
        if tok >= model.config.vocab_size:
            raise ValueError(f"anchor token {tok} outside vocabulary")

    seq = np.full(n, MASK_ID, dtype=np.int64)
    for pos, tok in constraints.anchors.items():
        seq[pos] = tok
    trace = GenerationTrace(target_length=n, anchors=dict(constraints.anchors), order_mode=order.mode)
    for step, pos in enumerate(order.sigma):
        logits = model.logits(seq)
        token = sample_token(logits[pos], sampler, rng)
        seq[pos] = token
        trace.steps.append(TraceStep(step=step, position=pos, token=token, snapshot=tuple(int(t) for t in seq)))
    return seq, trace


def generate_left_to_right(
    model: Transformer,
    prompt: Sequence[int],
    target_length: int,
    sampler: SamplerSpec = SamplerSpec(),
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Anchor the prompt as a prefix and fill the rest in identity order."""
    prompt = [int(t) for t in prompt]
    if len(prompt) >= target_length:
        raise ValueError(
            f"prompt length {len(prompt)} must be shorter than target_length {target_length}"
        )
    constraints = GenerationConstraints(
        target_length=target_length, anchors={i: t for i, t in enumerate(prompt)}
    )
    order = GenerationOrder.left_to_right(constraints.free_positions)
    seq, _ = generate(model, constraints, order, sampler, rng)
    return seq


def replay_trace(
    model: Transformer,
    trace: GenerationTrace,
    sampler: SamplerSpec = SamplerSpec(),
    rng: Optional[np.random.Generator] = None,
) -> np.ndarray:
    """Re-execute a trace step by step and fail loudly on any divergence.

    With the greedy sampler this is fully deterministic; for stochastic
    samplers pass an rng seeded identically to the original run.
    """
    seq = np.full(trace.target_length, MASK_ID, dtype=np.int64)
    for pos, tok in trace.anchors.items():
        seq[pos] = tok
    for s in trace.steps:
        logits = model.logits(seq)
        token = sample_token(logits[s.position], sampler, rng)
        if token != s.token:
            raise ValueError(
                f"trace replay diverged at step {s.step}: recorded token {s.token}, replayed {token}"
            )
        seq[s.position] = token
        if tuple(int(t) for t in seq) != s.snapshot:
            raise ValueError(f"trace replay snapshot mismatch at step {s.step}")
    return seq
