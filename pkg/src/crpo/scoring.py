"""Pair scoring: confidence-reward scores, reward gaps, and MBR utilities."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import Candidate, CandidateSet, ValidationError

# Character n-gram settings of the built-in utility: orders 1..6 with recall
# weighted twice as heavily as precision (beta = 2).
_NGRAM_ORDER = 6
_BETA_SQ = 4.0


@dataclass(frozen=True)
class PairScoreInput:
    """Rewards and reference log-likelihoods for one (winner, loser) pair."""

    r_w: float
    r_l: float
    logp_w: float
    logp_l: float

    def __post_init__(self) -> None:
        for name in ("r_w", "r_l", "logp_w", "logp_l"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise ValidationError(f"non-finite pair score input {name}={value!r}")
        for name in ("r_w", "r_l"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValidationError(f"reward out of range: {name}={value!r}")
        for name in ("logp_w", "logp_l"):
            value = getattr(self, name)
            if value > 0.0:
                raise ValidationError(f"log-likelihood must be <= 0: {name}={value!r}")


def reward_gap(r_w: float, r_l: float) -> float:
    """Difference of aggregate rewards, winner minus loser."""
    for name, value in (("r_w", r_w), ("r_l", r_l)):
        if not math.isfinite(value) or not 0.0 <= value <= 1.0:
            raise ValidationError(f"reward out of range: {name}={value!r}")
    return r_w - r_l


def cr_plus(pair: PairScoreInput, k_trust: float) -> float:
    """Additive confidence-reward score.

    k_trust * (r_w - r_l) + (logp_l - logp_w): large when the reward gap is
    wide and the reference policy is more confident in the loser.  k_trust
    weighs how much the rewards are trusted against the likelihood term.
    """
    if not math.isfinite(k_trust) or k_trust < 0:
        raise ValidationError(f"k_trust must be finite and >= 0, got {k_trust!r}")
    return k_trust * (pair.r_w - pair.r_l) + (pair.logp_l - pair.logp_w)


def cr_times(pair: PairScoreInput) -> float:
    """Multiplicative confidence-reward score: (r_w - r_l) * (logp_l - logp_w).

    Positive exactly when the reward ordering and the reference-confidence
    ordering disagree (loser more likely than winner, or winner worse but
    less likely).
    """
    return (pair.r_w - pair.r_l) * (pair.logp_l - pair.logp_w)


@dataclass(frozen=True)
class UtilityMatrix:
    """Dense pairwise utility U[j, k] = utility(candidate j, candidate k)."""

    ids: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "ids", tuple(self.ids))
        if len(set(self.ids)) != len(self.ids) or not self.ids:
            raise ValidationError("utility matrix ids must be non-empty and distinct")
        values = np.asarray(self.values, dtype=np.float64)
        k = len(self.ids)
        if values.shape != (k, k):
            raise ValidationError(
                f"utility matrix must be {k}x{k}, got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise ValidationError("utility matrix contains non-finite entries")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def index(self, candidate_id: str) -> int:
        try:
            return self.ids.index(candidate_id)
        except ValueError:
            raise ValidationError(f"unknown candidate id {candidate_id!r}") from None


def mbr_expected_utility(matrix: UtilityMatrix, j: int) -> float:
    """Mean utility of candidate j against every other candidate as reference."""
    k = len(matrix.ids)
    if k < 2:
        raise ValidationError("expected utility needs at least 2 candidates")
    if not 0 <= j < k:
        raise ValidationError(f"candidate index {j} out of range for K={k}")
    row = matrix.values[j]
    return float((row.sum() - row[j]) / (k - 1))


def mbr_scores(matrix: UtilityMatrix) -> np.ndarray:
    """Expected utility of every candidate, self-utility excluded."""
    k = len(matrix.ids)
    if k < 2:
        raise ValidationError("expected utility needs at least 2 candidates")
    return (matrix.values.sum(axis=1) - np.diag(matrix.values)) / (k - 1)


def _char_ngrams(text: str, n: int) -> Counter:
    return Counter(text[i : i + n] for i in range(len(text) - n + 1))


def builtin_utility(hypothesis: str, reference: str) -> float:
    """Character n-gram F-score of ``hypothesis`` against ``reference``.

    Whitespace is removed before extracting n-grams.  Precision and recall
    are averaged over the n-gram orders that actually occur in both strings
    (shorter strings simply contribute fewer orders), so identical strings
    always score 1.0.  Two empty strings also score 1.0; an empty string
    against a non-empty one scores 0.0.
    """
    hyp = "".join(hypothesis.split())
    ref = "".join(reference.split())
    if not hyp and not ref:
        return 1.0
    precision_sum = 0.0
    recall_sum = 0.0
    orders = 0
    for n in range(1, _NGRAM_ORDER + 1):
        hyp_grams = _char_ngrams(hyp, n)
        ref_grams = _char_ngrams(ref, n)
        hyp_total = sum(hyp_grams.values())
        ref_total = sum(ref_grams.values())
        if hyp_total == 0 or ref_total == 0:
            continue
        common = sum((hyp_grams & ref_grams).values())
        precision_sum += common / hyp_total
        recall_sum += common / ref_total
        orders += 1
    if orders == 0:
        return 0.0
    precision = precision_sum / orders
    recall = recall_sum / orders
    if precision + recall == 0.0:
        return 0.0
    return (1 + _BETA_SQ) * precision * recall / (_BETA_SQ * precision + recall)


def utility_matrix_for_set(
    cset: CandidateSet,
    utility: Callable[[str, str], float] | None = None,
) -> UtilityMatrix:
    """Pairwise utility matrix over one candidate set's texts."""
    metric = builtin_utility if utility is None else utility
    texts = [cand.text for cand in cset.candidates]
    k = len(texts)
    values = np.empty((k, k), dtype=np.float64)
    for j in range(k):
        for m in range(k):
            values[j, m] = metric(texts[j], texts[m])
    return UtilityMatrix(ids=tuple(c.id for c in cset.candidates), values=values)
