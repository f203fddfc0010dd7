"""Perplexity evaluation in sequential or random reveal order, and a
wall-clock benchmark of cached causal decoding vs full-recompute
bidirectional decoding.

Bidirectional scoring of a sequence fixes a reveal order, then scores each
token with the ground-truth tokens revealed at the earlier order positions
and [MASK] everywhere else (teacher forcing; the model never sees its own
samples). Causal models only support the sequential order.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .data import Corpus, MASK_ID, PAD_ID
from .generation import GenerationConstraints, GenerationOrder, SamplerSpec, generate, sample_token
from .model import Transformer

PPL_MODES = ("sequential", "random")

#: Context only: published wall times for generating 100 sequences of 128
#: tokens on one V100 GPU at full model scale (causal cached vs
#: bidirectional full-recompute, ratio ~1.20). CPU ratios differ.
REFERENCE_GPU_SECONDS = {"causal": 105.6, "bidirectional": 126.8}

COST_NOTE = (
    "each bidirectional step recomputes the hidden states of every position; "
    "each causal step updates only the newly generated position via cached keys/values"
)

_EVAL_CHUNK = 128


@dataclass
class PplReport:
    mode: str
    ppl: float
    token_count: int
    seed: Optional[int]
    per_sequence: List[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "ppl": self.ppl,
            "token_count": self.token_count,
            "seed": self.seed,
            "per_sequence": self.per_sequence,
        }


@dataclass
class LatencyReport:
    model_kind: str
    sequence_count: int
    sequence_length: int
    seconds: float
    ratio_vs_baseline: float

    def to_dict(self) -> dict:
        return {
            "model_kind": self.model_kind,
            "sequence_count": self.sequence_count,
            "sequence_length": self.sequence_length,
            "seconds": self.seconds,
            "ratio_vs_baseline": self.ratio_vs_baseline,
        }


def _batched_nll(model: Transformer, inputs: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-row NLL of targets under the model, chunked over the batch axis."""
    out = np.empty(targets.shape)
    for start in range(0, inputs.shape[0], _EVAL_CHUNK):
        sl = slice(start, start + _EVAL_CHUNK)
        logits = model.logits(inputs[sl])
        with T.no_grad():
            out[sl] = T.cross_entropy_rows(T.Tensor(logits), targets[sl]).data
    return out


def _sequence_order(ids: np.ndarray, mode: str, seed: Optional[int], index: int) -> np.ndarray:
    positions = np.flatnonzero(ids != PAD_ID)
    if mode == "sequential":
        return positions
    order_rng = np.random.default_rng([0 if seed is None else seed, index])
    return order_rng.permutation(positions)


def score_sequence_bidirectional(
    model: Transformer, ids: np.ndarray, order: Sequence[int]
) -> Tuple[float, int]:
    """Total NLL and token count for one sequence under one reveal order.

    Builds the per-step snapshots (revealed prefix of the order, [MASK] at
    the unrevealed non-pad positions) as one batch and scores them in a
    single forward.
    """
    order = np.asarray(order, dtype=np.int64)
    steps = len(order)
    snapshots = np.tile(ids, (steps, 1))
    for t in range(steps):
        snapshots[t, order[t:]] = MASK_ID
    pad = ids == PAD_ID
    snapshots[:, pad] = PAD_ID
    nll = _batched_nll(model, snapshots, np.tile(ids, (steps, 1)))
    total = float(nll[np.arange(steps), order].sum())
    return total, steps


def ppl_bidirectional(
    model: Transformer, corpus: Corpus, mode: str, seed: Optional[int] = 0
) -> PplReport:
    """Perplexity with identity order per sequence, or one random order per
    sequence drawn from (seed, sequence index)."""
    if model.is_causal:
        raise ValueError("ppl_bidirectional requires a bidirectional model")
    if mode not in PPL_MODES:
        raise ValueError(f"mode must be one of {PPL_MODES}, got '{mode}'")
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    total_nll = 0.0
    total_count = 0
    per_sequence = []
    for idx, ids in enumerate(corpus.sequences):
        order = _sequence_order(ids, mode, seed, idx)
        if len(order) == 0:
            continue
        nll, count = score_sequence_bidirectional(model, ids, order)
        total_nll += nll
        total_count += count
        per_sequence.append(
            {"index": idx, "token_count": count, "nll": nll, "ppl": math.exp(nll / count)}
        )
    if total_count == 0:
        raise ValueError("corpus contains no scorable tokens")
    return PplReport(
        mode=mode,
        ppl=math.exp(total_nll / total_count),
        token_count=total_count,
        seed=seed,
        per_sequence=per_sequence,
    )


def ppl_causal(model: Transformer, corpus: Corpus, mode: str = "sequential") -> PplReport:
    """Standard left-to-right teacher-forced perplexity.

    Random reveal order is rejected: a causal model cannot condition on
    later positions, so the random-order protocol has no defined value.
    """
    if not model.is_causal:
        raise ValueError("ppl_causal requires a causal model")
    if mode != "sequential":
        raise ValueError(
            "random-order perplexity is unsupported for causal models "
            "(attention cannot reach later positions); use a bidirectional model"
        )
    if len(corpus) == 0:
        raise ValueError("empty corpus")
    batch = np.stack(
        [
            np.pad(ids, (0, corpus.max_len - len(ids)), constant_values=PAD_ID)
            for ids in corpus.sequences
        ]
    )
    pad = batch == PAD_ID
    inputs = np.empty_like(batch)
    inputs[:, 0] = MASK_ID
    inputs[:, 1:] = batch[:, :-1]
    inputs[pad] = PAD_ID
    nll = _batched_nll(model, inputs, batch)
    nll[pad] = 0.0
    counts = (~pad).sum(axis=1)
    if counts.sum() == 0:
        raise ValueError("corpus contains no scorable tokens")
    per_sequence = [
        {
            "index": i,
            "token_count": int(counts[i]),
            "nll": float(nll[i].sum()),
            "ppl": math.exp(float(nll[i].sum()) / counts[i]) if counts[i] else float("nan"),
        }
        for i in range(batch.shape[0])
        if counts[i]
    ]
    total = float(nll.sum())
    return PplReport(
        mode="sequential",
        ppl=math.exp(total / counts.sum()),
        token_count=int(counts.sum()),
        seed=None,
        per_sequence=per_sequence,
    )


def render_ppl_table(rows: Dict[str, Dict[str, Optional[float]]]) -> str:
    """Aligned table with one row per model and sequential/random columns."""
    header = f"{'Model':<16}  {'PPL(sequential)':>16}  {'PPL(random)':>12}"
    lines = [header, "-" * len(header)]
    for name, cols in rows.items():
        seq = cols.get("sequential")
        rnd = cols.get("random")
        seq_s = f"{seq:.4f}" if seq is not None else "N/A"
        rnd_s = f"{rnd:.4f}" if rnd is not None else "N/A"
        lines.append(f"{name:<16}  {seq_s:>16}  {rnd_s:>12}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# latency benchmark
# ---------------------------------------------------------------------------


def _generate_causal_cached(
    model: Transformer, length: int, sampler: SamplerSpec, rng: np.random.Generator
) -> np.ndarray:
    prefix = [MASK_ID]
    out = []
    cache = None
    for _ in range(length):
        logits, cache = model.forward_incremental(np.asarray(prefix), cache)
        token = sample_token(logits, sampler, rng)
        out.append(token)
        if len(out) < length:
            prefix.append(token)
    return np.asarray(out, dtype=np.int64)


def bench_latency(
    causal_model: Transformer,
    bidirectional_model: Transformer,
    count: int,
    length: int,
    sampler: SamplerSpec = SamplerSpec(),
    seed: int = 0,
) -> dict:
    """Wall-clock comparison: cached causal decoding vs full-recompute
    bidirectional decoding, generating ``count`` sequences of ``length``.

    Single-threaded sequential loops; the two models must share the same
    architecture sizes so the comparison isolates the decode strategy.
    """
    if not causal_model.is_causal or bidirectional_model.is_causal:
        raise ValueError("bench_latency needs one causal and one bidirectional model")
    ca, bi = causal_model.config, bidirectional_model.config
    same = (
        ca.layers == bi.layers
        and ca.heads == bi.heads
        and ca.hidden_size == bi.hidden_size
        and ca.intermediate_size == bi.intermediate_size
        and ca.vocab_size == bi.vocab_size
    )
    if not same:
        raise ValueError("bench_latency requires models of identical size")
    if length > ca.max_len or length > bi.max_len:
        raise ValueError(f"length {length} exceeds model max_len")
    if count < 1 or length < 1:
        raise ValueError("count and length must be positive")

    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    causal_out = [_generate_causal_cached(causal_model, length, sampler, rng) for _ in range(count)]
    causal_seconds = time.perf_counter() - t0

    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    bidir_out = []
    for _ in range(count):
        constraints = GenerationConstraints(target_length=length)
        order = GenerationOrder.random(constraints.free_positions, rng)
        seq, _ = generate(bidirectional_model, constraints, order, sampler, rng)
        bidir_out.append(seq)
    bidir_seconds = time.perf_counter() - t0

    reports = [
        LatencyReport("causal", count, length, causal_seconds, 1.0),
        LatencyReport("bidirectional", count, length, bidir_seconds, bidir_seconds / causal_seconds),
    ]
    return {
        "reports": [r.to_dict() for r in reports],
        "count": count,
        "length": length,
        "cost_note": COST_NOTE,
        "reference_gpu_seconds": REFERENCE_GPU_SECONDS,
        "reference_gpu_ratio": REFERENCE_GPU_SECONDS["bidirectional"] / REFERENCE_GPU_SECONDS["causal"],
        "sequences": {
            "causal": [s.tolist() for s in causal_out],
            "bidirectional": [s.tolist() for s in bidir_out],
        },
    }


def render_latency_table(result: dict) -> str:
    header = f"{'Models':<16}  {'Cost Time':>12}"
    lines = [header, "-" * len(header)]
    for rep in result["reports"]:
        lines.append(f"{rep['model_kind']:<16}  {rep['seconds']:>11.3f}s")
    ratio = result["reports"][1]["seconds"] / result["reports"][0]["seconds"]
    lines.append(f"ratio (bidirectional / causal): {ratio:.3f}")
    lines.append(f"note: {result['cost_note']}")
    ref = result["reference_gpu_seconds"]
    lines.append(
        "context: full-scale GPU reference "
        f"{ref['causal']}s vs {ref['bidirectional']}s (~{result['reference_gpu_ratio']:.2f}x)"
    )
    return "\n".join(lines)
