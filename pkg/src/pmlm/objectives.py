"""Training objectives and their exact enumeration counterparts.

Four losses share one convention (negative log-likelihood in nats):

* left-to-right teacher-forced loss for causal models,
* masked-position loss for one fixed mask pattern,
* its sampled-mask training estimator under a masking-ratio prior,
* the exact expectation of that estimator over all 2^n patterns,

plus the order-averaged autoregressive loss over all n! generation orders
and a verifier for the identity tying the uniform-prior expectation to it.

Every conditional here is evaluated the same way: reveal a subset of the
ground-truth tokens, place [MASK] everywhere else, run one bidirectional
forward, and read the log-probability of the true token at a masked
position. The causal loss uses [MASK] as the begin-of-sequence filler so
the first token is predicted from an empty context.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .data import MASK_ID, PAD_ID
from .masking import MaskingPrior, MaskPattern, enumerate_masks, mask_probability, sample_mask, sample_ratio
from .model import Transformer
from .tensor import Tensor

PMLM_EXACT_LIMIT = 8
APLM_LIMIT = 6


@dataclass
class LossValue:
    """Mean negative log-likelihood in nats plus the number of scored positions."""

    value: float
    token_count: int
    tensor: Optional[Tensor] = field(default=None, repr=False, compare=False)


def _as_ids(x) -> np.ndarray:
    ids = np.asarray(x, dtype=np.int64)
    if ids.ndim != 1:
        raise ValueError(f"expected a single token sequence, got shape {ids.shape}")
    return ids


def _log_softmax_np(rows: np.ndarray) -> np.ndarray:
    shifted = rows - rows.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def masked_input(x: np.ndarray, positions: Sequence[int]) -> np.ndarray:
    out = x.copy()
    if len(positions):
        out[list(positions)] = MASK_ID
    return out


def conditional_log_probs(model: Transformer, x, positions: Sequence[int]) -> np.ndarray:
    """log p(x_pos | ground truth everywhere outside ``positions``) per position.

    The model input carries [MASK] at every position in ``positions`` and the
    true tokens elsewhere; one bidirectional forward scores all of them.
    """
    ids = _as_ids(x)
    logits = model.logits(masked_input(ids, positions))
    logp = _log_softmax_np(logits[list(positions)])
    return logp[np.arange(len(positions)), ids[list(positions)]]


# ---------------------------------------------------------------------------
# per-sequence losses
# ---------------------------------------------------------------------------


def ar_loss(
    model: Transformer,
    x,
    *,
    with_grad: bool = False,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> LossValue:
    """Teacher-forced left-to-right loss: -(1/N) sum_n log p(x_n | x_<n).

    The input at position n is x_{n-1} (and [MASK] at the first position),
    so the logit row at n conditions only on the strictly earlier tokens.
    [PAD] positions are neither scored nor attended to.
    """
    if not model.is_causal:
        raise ValueError("ar_loss requires a causal model")
    ids = _as_ids(x)
    pad = ids == PAD_ID
    scored = ~pad
    count = int(scored.sum())
    if count == 0:
        raise ValueError("ar_loss: sequence is all padding")
    inp = np.empty_like(ids)
    inp[0] = MASK_ID
    inp[1:] = ids[:-1]
    inp[pad] = PAD_ID

    def compute() -> Tensor:
        logits = model.forward(inp, train=train, rng=rng)
        nll = T.cross_entropy_rows(logits, ids)
        return T.sum_(nll * Tensor(scored / count))

    if with_grad:
        loss = compute()
    else:
        with T.no_grad():
            loss = compute()
    return LossValue(loss.item(), count, tensor=loss if with_grad else None)


def mlm_loss(
    model: Transformer,
    x,
    pattern: MaskPattern,
    *,
    with_grad: bool = False,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> LossValue:
    """Masked-position loss: -(1/K) sum over masked positions of log p."""
    if model.is_causal:
        raise ValueError("mlm_loss requires a bidirectional model")
    ids = _as_ids(x)
    if pattern.n != len(ids):
        raise ValueError(f"pattern length {pattern.n} does not match sequence length {len(ids)}")
    if pattern.k == 0:
        raise ValueError("mlm_loss is undefined for an empty mask (K=0)")

    weights = np.zeros(len(ids))
    weights[list(pattern.indices)] = 1.0 / pattern.k

    def compute() -> Tensor:
        logits = model.forward(masked_input(ids, pattern.indices), train=train, rng=rng)
        nll = T.cross_entropy_rows(logits, ids)
        return T.sum_(nll * Tensor(weights))

    if with_grad:
        loss = compute()
    else:
        with T.no_grad():
            loss = compute()
    return LossValue(loss.item(), pattern.k, tensor=loss if with_grad else None)


def pmlm_training_step(
    model: Transformer,
    x,
    prior: MaskingPrior,
    rng: np.random.Generator,
    *,
    pad_flags: Optional[np.ndarray] = None,
    with_grad: bool = False,
    train: bool = False,
) -> LossValue:
    """One-sample estimator of the prior-expected masked loss.

    Draws r from the prior, masks i.i.d. at rate r, and scores the masked
    positions. An all-unmasked draw contributes exactly zero (keeping the
    estimator's expectation equal to the enumerated objective); resampling
    on K=0 is a training-loop policy, not part of this estimator.
    """
    ids = _as_ids(x)
    if pad_flags is None:
        pad_flags = ids == PAD_ID
    r = sample_ratio(prior, rng)
    pattern = sample_mask(len(ids), r, rng, pad_flags=pad_flags)
    if pattern.k == 0:
        return LossValue(0.0, 0, tensor=Tensor(0.0) if with_grad else None)
    return mlm_loss(model, ids, pattern, with_grad=with_grad, train=train, rng=rng)


# ---------------------------------------------------------------------------
# exact enumeration oracles
# ---------------------------------------------------------------------------


def _require_unpadded(ids: np.ndarray, op: str) -> None:
    if np.any(ids == PAD_ID):
        raise ValueError(f"{op} does not support padded sequences")


def pmlm_exact_loss(model: Transformer, x, prior: MaskingPrior) -> LossValue:
    """Exact prior expectation: -(sum over all masks M) alpha_M (1/K) sum log p.

    The K=0 pattern contributes zero by definition. Requires 2^n forwards.
    """
    ids = _as_ids(x)
    _require_unpadded(ids, "pmlm_exact_loss")
    n = len(ids)
    if n > PMLM_EXACT_LIMIT:
        raise ValueError(f"pmlm_exact_loss enumerates 2^n forwards and is capped at n <= {PMLM_EXACT_LIMIT}")
    total = 0.0
    for pattern in enumerate_masks(n):
        if pattern.k == 0:
            continue
        alpha = mask_probability(pattern, prior).alpha
        if alpha == 0.0:
            continue
        logp = conditional_log_probs(model, ids, pattern.indices)
        total += alpha * logp.sum() / pattern.k
    return LossValue(-total, n)


def _masked_logprob_table(model: Transformer, ids: np.ndarray) -> Dict[int, Dict[int, float]]:
    """For every nonempty masked set S (as a bitmask): position -> log p(x_pos | rest)."""
    n = len(ids)
    table: Dict[int, Dict[int, float]] = {}
    for bits in range(1, 1 << n):
        positions = [i for i in range(n) if (bits >> i) & 1]
        logp = conditional_log_probs(model, ids, positions)
        table[bits] = {pos: float(lp) for pos, lp in zip(positions, logp)}
    return table


def aplm_exact_loss(model: Transformer, x) -> LossValue:
    """Order-averaged autoregressive loss over all n! generation orders.

    Each conditional p(x_{s_t} | x_{s_1}..x_{s_{t-1}}) is evaluated through
    the bidirectional model by masking exactly the not-yet-revealed set, so
    no separate causal model is involved. Value is the mean NLL per token
    per order: -(1/(n n!)) sum over orders and steps.
    """
    ids = _as_ids(x)
    _require_unpadded(ids, "aplm_exact_loss")
    n = len(ids)
    if n > APLM_LIMIT:
        raise ValueError(f"aplm_exact_loss enumerates n! orders and is capped at n <= {APLM_LIMIT}")
    table = _masked_logprob_table(model, ids)
    total = 0.0
    for sigma in itertools.permutations(range(n)):
        bits = (1 << n) - 1
        for pos in sigma:
            total += table[bits][pos]
            bits &= ~(1 << pos)
    return LossValue(-total / (n * math.factorial(n)), n)


# ---------------------------------------------------------------------------
# equivalence verification
# ---------------------------------------------------------------------------


def count_permutation_conditionals(n: int) -> Dict[Tuple[int, int], int]:
    """Exhaustively count, over all n! orders, how many times each distinct
    (masked set, predicted position) conditional occurs. Keys are
    (bitmask of the masked set, position)."""
    counts: Dict[Tuple[int, int], int] = {}
    for sigma in itertools.permutations(range(n)):
        bits = (1 << n) - 1
        for pos in sigma:
            key = (bits, pos)
            counts[key] = counts.get(key, 0) + 1
            bits &= ~(1 << pos)
    return counts


def audit_duplication_factors(n: int) -> Tuple[Dict[int, int], bool]:
    """Group the permutation counts by masked-set size k and compare every
    group against (n-k)! (k-1)! in exact integer arithmetic.

    Returns ({k: expected factor}, all groups matched).
    """
    counts = count_permutation_conditionals(n)
    expected = {k: math.factorial(n - k) * math.factorial(k - 1) for k in range(1, n + 1)}
    ok = True
    seen_keys = 0
    for (bits, _pos), count in counts.items():
        k = bin(bits).count("1")
        seen_keys += 1
        if count != expected[k]:
            ok = False
    # every (masked set of size k, member position) pair must appear
    total_expected = sum(math.comb(n, k) * k for k in range(1, n + 1))
    if seen_keys != total_expected:
        ok = False
    return expected, ok


@dataclass
class EquivalenceReport:
    """Numeric check that the uniform-prior masked expectation recombines into
    the order-averaged autoregressive likelihood."""

    n: int
    pmlm_exact: float
    aplm_mean: float
    constant_c: int
    masked_side: float
    permutation_side: float
    max_abs_gap: float
    tolerance: float
    duplication_audit: Dict[str, int]
    duplication_ok: bool
    passed: bool

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "pmlm_exact_nats": self.pmlm_exact,
            "aplm_mean_nats": self.aplm_mean,
            "constant_c": self.constant_c,
            "masked_side": self.masked_side,
            "permutation_side": self.permutation_side,
            "max_abs_gap": self.max_abs_gap,
            "tolerance": self.tolerance,
            "duplication_audit": self.duplication_audit,
            "duplication_ok": self.duplication_ok,
            "passed": self.passed,
        }


def verify_equivalence(model: Transformer, x, tolerance: float = 1e-9) -> EquivalenceReport:
    """Check (n+1) * sum_M alpha_M (1/K) sum_k log p == mean over all orders
    of the total autoregressive log-likelihood, for this model and sequence.

    Both sides are computed by genuinely different enumerations: the left by
    summing over the 2^n mask patterns weighted with the analytic alpha, the
    right by walking all n! generation orders. The report records both
    normalization conventions: the permutation mean shown here, and the same
    sum divided by c = (n+1)!, under which the right side equals the left
    without the (n+1) factor.
    """
    ids = _as_ids(x)
    _require_unpadded(ids, "verify_equivalence")
    n = len(ids)
    if n > APLM_LIMIT:
        raise ValueError(f"verify_equivalence is capped at n <= {APLM_LIMIT}")

    prior = MaskingPrior.uniform()
    masked_sum = 0.0  # sum_M alpha_M (1/K) sum_k log p
    for pattern in enumerate_masks(n):
        if pattern.k == 0:
            continue
        alpha = mask_probability(pattern, prior).alpha
        logp = conditional_log_probs(model, ids, pattern.indices)
        masked_sum += alpha * logp.sum() / pattern.k

    table = _masked_logprob_table(model, ids)
    perm_total = 0.0
    for sigma in itertools.permutations(range(n)):
        bits = (1 << n) - 1
        for pos in sigma:
            perm_total += table[bits][pos]
            bits &= ~(1 << pos)
    perm_mean = perm_total / math.factorial(n)

    gap = abs((n + 1) * masked_sum - perm_mean)
    audit, audit_ok = audit_duplication_factors(n)
    return EquivalenceReport(
        n=n,
        pmlm_exact=-masked_sum,
        aplm_mean=-perm_total / (n * math.factorial(n)),
        constant_c=math.factorial(n + 1),
        masked_side=(n + 1) * masked_sum,
        permutation_side=perm_mean,
        max_abs_gap=gap,
        tolerance=tolerance,
        duplication_audit={f"n={n},k={k}": v for k, v in audit.items()},
        duplication_ok=audit_ok,
        passed=bool(gap < tolerance and audit_ok),
    )


# ---------------------------------------------------------------------------
# batched training losses
# ---------------------------------------------------------------------------


def masked_batch_loss(
    model: Transformer,
    batch: np.ndarray,
    patterns: List[MaskPattern],
    *,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Mean over sequences of the per-sequence masked loss, in one forward.

    Sequences whose pattern is empty contribute zero but still count toward
    the batch mean.
    """
    if model.is_causal:
        raise ValueError("masked_batch_loss requires a bidirectional model")
    b, n = batch.shape
    if len(patterns) != b:
        raise ValueError("one mask pattern per sequence is required")
    inputs = batch.copy()
    weights = np.zeros((b, n))
    for s, pattern in enumerate(patterns):
        if pattern.k == 0:
            continue
        idx = list(pattern.indices)
        inputs[s, idx] = MASK_ID
        weights[s, idx] = 1.0 / (b * pattern.k)
    logits = model.forward(inputs, train=train, rng=rng)
    nll = T.cross_entropy_rows(logits, batch)
    return T.sum_(nll * Tensor(weights))


def causal_batch_loss(
    model: Transformer,
    batch: np.ndarray,
    *,
    train: bool = False,
    rng: Optional[np.random.Generator] = None,
) -> Tensor:
    """Mean over sequences of the per-sequence left-to-right loss."""
    if not model.is_causal:
        raise ValueError("causal_batch_loss requires a causal model")
    b, n = batch.shape
    pad = batch == PAD_ID
    counts = (~pad).sum(axis=1)
    if np.any(counts == 0):
        raise ValueError("causal_batch_loss: a sequence is all padding")
    inputs = np.empty_like(batch)
    inputs[:, 0] = MASK_ID
    inputs[:, 1:] = batch[:, :-1]
    inputs[pad] = PAD_ID
    weights = (~pad) / (b * counts[:, None])
    logits = model.forward(inputs, train=train, rng=rng)
    nll = T.cross_entropy_rows(logits, batch)
    return T.sum_(nll * Tensor(weights))
