"""Comparator selectors: turn one candidate set into preference pairs.

Every selector is deterministic given the candidate set, the configuration,
and (where sampling is involved) the seeded generator.  Argmax/argmin ties
always break toward the lexicographically smallest candidate id.
"""

from __future__ import annotations

import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .core import (
    Candidate,
    CandidateSet,
    PreferenceDataset,
    PreferencePair,
    SelectionConfig,
    ValidationError,
    direction_class,
    effective_logprob,
)
from .scoring import (
    PairScoreInput,
    UtilityMatrix,
    cr_plus,
    cr_times,
    mbr_scores,
    utility_matrix_for_set,
)

# Draw budget of the stochastic subsampler, as a multiple of the target
# number of acceptances.
RSO_MAX_DRAW_FACTOR = 64


@dataclass(frozen=True)
class SelectionOutcome:
    """What one selector produced for one source: pairs, an SFT target, or
    an explanation of why it produced nothing."""

    pairs: tuple[PreferencePair, ...] = ()
    sft_target: str | None = None
    skipped_reason: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "pairs", tuple(self.pairs))


def _best_by_reward(candidates: Sequence[Candidate]) -> Candidate:
    return min(candidates, key=lambda c: (-c.reward_agg, c.id))


def _by_id(candidates: Sequence[Candidate]) -> list[Candidate]:
    return sorted(candidates, key=lambda c: c.id)


def _require_k(cset: CandidateSet, minimum: int) -> None:
    if len(cset.candidates) < minimum:
        raise ValidationError(
            f"source {cset.source_id!r}: selector needs at least {minimum} "
            f"candidates, got {len(cset.candidates)}"
        )


def _pair(
    cset: CandidateSet,
    chosen: Candidate,
    rejected: Candidate,
    score: float,
    method: str,
    logp: Mapping[str, float],
    extra: Mapping[str, float] | None = None,
) -> PreferencePair:
    extras = {
        "reward_gap": chosen.reward_agg - rejected.reward_agg,
        "confidence_gap": logp[rejected.id] - logp[chosen.id],
    }
    if extra:
        extras.update(extra)
    return PreferencePair(
        source_id=cset.source_id,
        chosen_id=chosen.id,
        rejected_id=rejected.id,
        score=score,
        method=method,
        extras=extras,
    )


def _effective_logps(cset: CandidateSet, config: SelectionConfig) -> dict[str, float]:
    return {c.id: effective_logprob(c, config) for c in cset.candidates}


def _passes_gate(
    logp_other: float, logp_best: float, config: SelectionConfig
) -> bool:
    if config.gate_mode == "off":
        return True
    if config.gate_mode == "log_space":
        return logp_other - logp_best + config.epsilon > 0.0
    return math.exp(logp_other) - math.exp(logp_best) + config.epsilon > 0.0


def select_crpo(cset: CandidateSet, config: SelectionConfig) -> SelectionOutcome:
    """Confidence-reward selection: highest-reward candidate versus the
    gated competitor with the largest positive CR score.

    The chosen side is always the reward argmax.  Every other candidate that
    passes the likelihood gate is scored, and the best strictly positive
    score wins; if no score is positive the source yields no pair.
    """
    if config.method not in ("cr_plus", "cr_times"):
        raise ValidationError(f"select_crpo cannot run method {config.method!r}")
    _require_k(cset, 2)
    logp = _effective_logps(cset, config)
    chosen = _best_by_reward(cset.candidates)
    best_score = 0.0
    best: Candidate | None = None
    for other in _by_id(cset.candidates):
        if other.id == chosen.id:
            continue
        if not _passes_gate(logp[other.id], logp[chosen.id], config):
            continue
        inputs = PairScoreInput(
            r_w=chosen.reward_agg,
            r_l=other.reward_agg,
            logp_w=logp[chosen.id],
            logp_l=logp[other.id],
        )
        if config.method == "cr_plus":
            score = cr_plus(inputs, config.k_trust)
        else:
            score = cr_times(inputs)
        if score > best_score:
            best_score = score
            best = other
    if best is None:
        return SelectionOutcome(skipped_reason="no positive CR score")
    pair = _pair(cset, chosen, best, best_score, config.method, logp)
    return SelectionOutcome(pairs=(pair,))


@dataclass(frozen=True)
class RsoSample:
    """Trace of one statistical-rejection subsampling run.

    ``picks`` lists the accepted candidate indices in acceptance order
    (duplicates allowed; back-filled entries included).  ``proposals`` and
    ``acceptances`` count, per candidate, how often it was drawn and how
    often a draw of it was accepted.
    """

    picks: tuple[int, ...]
    proposals: np.ndarray
    acceptances: np.ndarray
    n_filled: int


def rso_acceptance_probs(agg_rewards: Sequence[float], beta: float) -> np.ndarray:
    """Per-candidate acceptance probability exp((r - r_max) / beta)."""
    if beta <= 0 or not math.isfinite(beta):
        raise ValidationError(f"beta must be finite and > 0, got {beta!r}")
    rewards = np.asarray(agg_rewards, dtype=np.float64)
    return np.exp((rewards - rewards.max()) / beta)


def rso_subsample(
    acceptance_probs: np.ndarray,
    n_samples: int,
    rng: np.random.Generator,
    max_draw_factor: int = RSO_MAX_DRAW_FACTOR,
) -> RsoSample:
    """Draw candidates uniformly with replacement, accepting each with its
    acceptance probability, until ``n_samples`` acceptances.

    If the draw budget (``max_draw_factor * n_samples`` proposals) runs out
    first, the remaining slots are filled with the not-yet-accepted
    candidates in decreasing acceptance-probability order (i.e. decreasing
    reward), cycling through all candidates if even that runs dry.
    """
    probs = np.asarray(acceptance_probs, dtype=np.float64)
    k = len(probs)
    proposals = np.zeros(k, dtype=np.int64)
    acceptances = np.zeros(k, dtype=np.int64)
    picks: list[int] = []
    budget = max_draw_factor * n_samples
    for _ in range(budget):
        if len(picks) >= n_samples:
            break
        j = int(rng.integers(k))
        proposals[j] += 1
        if rng.random() < probs[j]:
            acceptances[j] += 1
            picks.append(j)
    n_filled = 0
    if len(picks) < n_samples:
        order = sorted(range(k), key=lambda j: (-probs[j], j))
        accepted = set(picks)
        backfill = [j for j in order if j not in accepted]
        while len(picks) < n_samples:
            if not backfill:
                backfill = list(order)
            picks.append(backfill.pop(0))
            n_filled += 1
    return RsoSample(
        picks=tuple(picks),
        proposals=proposals,
        acceptances=acceptances,
        n_filled=n_filled,
    )


def select_rso(
    cset: CandidateSet, config: SelectionConfig, rng: np.random.Generator
) -> SelectionOutcome:
    """Statistical rejection sampling followed by random adjacent pairing.

    Subsamples ``rso_samples`` candidates with acceptance probability
    exp((r - r_max) / beta), shuffles them, and pairs consecutive entries,
    labeling the higher-reward member of each pair as chosen.  Pairs with a
    zero reward gap are dropped.
    """
    _require_k(cset, 2)
    ordered = _by_id(cset.candidates)
    logp = _effective_logps(cset, config)
    probs = rso_acceptance_probs([c.reward_agg for c in ordered], config.beta)
    sample = rso_subsample(probs, config.rso_samples, rng)
    perm = rng.permutation(len(sample.picks))
    shuffled = [ordered[sample.picks[i]] for i in perm]
    pairs = []
    for i in range(0, len(shuffled) - 1, 2):
        first, second = shuffled[i], shuffled[i + 1]
        if first.reward_agg == second.reward_agg:
            continue
        chosen, rejected = (
            (first, second)
            if first.reward_agg > second.reward_agg
            else (second, first)
        )
        pairs.append(
            _pair(
                cset,
                chosen,
                rejected,
                chosen.reward_agg - rejected.reward_agg,
                "rso",
                logp,
            )
        )
    if not pairs:
        return SelectionOutcome(skipped_reason="no pair with a positive reward gap")
    return SelectionOutcome(pairs=tuple(pairs))


def select_rsdpo(cset: CandidateSet, config: SelectionConfig) -> SelectionOutcome:
    """Keep every candidate pair whose aggregate-reward gap exceeds eta.

    eta is resolved from the set's translation direction (into English or
    out of it).  The higher-reward member of each kept pair is chosen, and
    pairs are emitted ordered by (chosen id, rejected id).
    """
    _require_k(cset, 2)
    klass = direction_class(cset.direction)
    if klass not in config.eta:
        raise ValidationError(
            f"source {cset.source_id!r}: no eta threshold for direction class {klass!r}"
        )
    eta = config.eta[klass]
    logp = _effective_logps(cset, config)
    ordered = _by_id(cset.candidates)
    pairs = []
    for i in range(len(ordered)):
        for j in range(i + 1, len(ordered)):
            a, b = ordered[i], ordered[j]
            gap = abs(a.reward_agg - b.reward_agg)
            if gap <= eta:
                continue
            chosen, rejected = (a, b) if a.reward_agg > b.reward_agg else (b, a)
            pairs.append(_pair(cset, chosen, rejected, gap, "rs_dpo", logp))
    pairs.sort(key=lambda p: (p.chosen_id, p.rejected_id))
    if not pairs:
        return SelectionOutcome(skipped_reason="no reward gap above eta")
    return SelectionOutcome(pairs=tuple(pairs))


def _mbr_ranked(
    cset: CandidateSet,
    utility: UtilityMatrix | Callable[[str, str], float] | None,
) -> tuple[list[Candidate], dict[str, float]]:
    if isinstance(utility, UtilityMatrix):
        matrix = utility
        if set(matrix.ids) != {c.id for c in cset.candidates}:
            raise ValidationError(
                f"source {cset.source_id!r}: utility matrix ids do not match the set"
            )
    else:
        matrix = utility_matrix_for_set(cset, utility)
    scores = mbr_scores(matrix)
    score_by_id = {cid: float(s) for cid, s in zip(matrix.ids, scores)}
    ranked = sorted(cset.candidates, key=lambda c: (-score_by_id[c.id], c.id))
    return ranked, score_by_id


def select_mbr(
    cset: CandidateSet,
    utility: UtilityMatrix | Callable[[str, str], float] | None = None,
    variant: str = "bw",
    config: SelectionConfig | None = None,
) -> SelectionOutcome:
    """Minimum-Bayes-risk pairing: best-vs-worst or best/middle/worst.

    Candidates are ranked by expected utility against the other candidates
    as pseudo-references.  ``bw`` pairs the top and bottom of the ranking;
    ``bmw`` additionally uses the middle candidate (rank ceil(K/2)) and
    emits (best, middle), (best, worst), (middle, worst).  Labels follow
    the utility ranking, not the rewards.
    """
    if variant not in ("bw", "bmw"):
        raise ValidationError(f"unknown MBR variant {variant!r}")
    method = f"mbr_{variant}"
    _require_k(cset, 2 if variant == "bw" else 3)
    cfg = config if config is not None else SelectionConfig(method=method)
    logp = _effective_logps(cset, cfg)
    ranked, score_by_id = _mbr_ranked(cset, utility)

    def mbr_pair(chosen: Candidate, rejected: Candidate) -> PreferencePair:
        return _pair(
            cset,
            chosen,
            rejected,
            score_by_id[chosen.id] - score_by_id[rejected.id],
            method,
            logp,
            extra={
                "mbr_chosen": score_by_id[chosen.id],
                "mbr_rejected": score_by_id[rejected.id],
            },
        )

    best, worst = ranked[0], ranked[-1]
    if variant == "bw":
        return SelectionOutcome(pairs=(mbr_pair(best, worst),))
    middle = ranked[math.ceil(len(ranked) / 2) - 1]
    return SelectionOutcome(
        pairs=(
            mbr_pair(best, middle),
            mbr_pair(best, worst),
            mbr_pair(middle, worst),
        )
    )


def select_qe_best(cset: CandidateSet) -> SelectionOutcome:
    """Quality-estimation fine-tuning mode: no pairs, just the best candidate."""
    return SelectionOutcome(sft_target=_best_by_reward(cset.candidates).id)


def select_top_scores(
    cset: CandidateSet, n: int, config: SelectionConfig | None = None
) -> SelectionOutcome:
    """Keep the n highest-reward candidates and pair the extremes among them."""
    if not 2 <= n <= len(cset.candidates):
        raise ValidationError(
            f"source {cset.source_id!r}: top-scores subset size {n} must lie "
            f"in [2, {len(cset.candidates)}]"
        )
    cfg = config if config is not None else SelectionConfig(method="top_scores")
    logp = _effective_logps(cset, cfg)
    kept = sorted(cset.candidates, key=lambda c: (-c.reward_agg, c.id))[:n]
    best = kept[0]
    worst = min(kept, key=lambda c: (c.reward_agg, c.id))
    gap = best.reward_agg - worst.reward_agg
    if gap == 0.0:
        return SelectionOutcome(skipped_reason="zero reward gap")
    return SelectionOutcome(pairs=(_pair(cset, best, worst, gap, "top_scores", logp),))


def select_minmax_r(
    cset: CandidateSet, config: SelectionConfig | None = None
) -> SelectionOutcome:
    """Pair the maximum-reward candidate with the minimum-reward one."""
    _require_k(cset, 2)
    cfg = config if config is not None else SelectionConfig(method="minmax_r")
    logp = _effective_logps(cset, cfg)
    best = _best_by_reward(cset.candidates)
    worst = min(cset.candidates, key=lambda c: (c.reward_agg, c.id))
    gap = best.reward_agg - worst.reward_agg
    if gap == 0.0:
        return SelectionOutcome(skipped_reason="zero reward gap")
    return SelectionOutcome(pairs=(_pair(cset, best, worst, gap, "minmax_r", logp),))


def select_minmax_p(cset: CandidateSet, config: SelectionConfig) -> SelectionOutcome:
    """Reward-free variant: best-reward candidate versus the competitor the
    reference policy is most (strictly more) confident in."""
    _require_k(cset, 2)
    logp = _effective_logps(cset, config)
    chosen = _best_by_reward(cset.candidates)
    best_gap = 0.0
    best: Candidate | None = None
    for other in _by_id(cset.candidates):
        if other.id == chosen.id:
            continue
        gap = logp[other.id] - logp[chosen.id]
        if gap > best_gap:
            best_gap = gap
            best = other
    if best is None:
        return SelectionOutcome(skipped_reason="no positive confidence gap")
    return SelectionOutcome(
        pairs=(_pair(cset, chosen, best, best_gap, "minmax_p", logp),)
    )


def select_minmax_po(cset: CandidateSet, config: SelectionConfig) -> SelectionOutcome:
    """Pair the most and least likely candidates, chosen by higher reward."""
    _require_k(cset, 2)
    logp = _effective_logps(cset, config)
    most = min(cset.candidates, key=lambda c: (-logp[c.id], c.id))
    least = min(cset.candidates, key=lambda c: (logp[c.id], c.id))
    if most.id == least.id:
        return SelectionOutcome(skipped_reason="degenerate likelihood range")
    if most.reward_agg == least.reward_agg:
        return SelectionOutcome(skipped_reason="zero reward gap")
    chosen, rejected = (
        (most, least) if most.reward_agg > least.reward_agg else (least, most)
    )
    gap = chosen.reward_agg - rejected.reward_agg
    return SelectionOutcome(pairs=(_pair(cset, chosen, rejected, gap, "minmax_po", logp),))


def per_source_rng(seed: int, source_id: str) -> np.random.Generator:
    """Generator that is stable per (seed, source) regardless of set order."""
    return np.random.default_rng([seed, zlib.crc32(source_id.encode("utf-8"))])


def validate_outcome(outcome: SelectionOutcome, cset: CandidateSet) -> None:
    """Check pair invariants against the set that produced them."""
    dataset = PreferenceDataset(pairs=outcome.pairs)
    dataset.validate_against([cset])
    if outcome.sft_target is not None:
        cset.candidate(outcome.sft_target)


def run_selector(
    cset: CandidateSet,
    config: SelectionConfig,
    rng: np.random.Generator | None = None,
    utility: UtilityMatrix | Callable[[str, str], float] | None = None,
) -> SelectionOutcome:
    """Dispatch one candidate set to the selector named by ``config.method``."""
    method = config.method
    if method in ("cr_plus", "cr_times"):
        outcome = select_crpo(cset, config)
    elif method == "rso":
        if rng is None:
            rng = per_source_rng(config.seed, cset.source_id)
        outcome = select_rso(cset, config, rng)
    elif method == "rs_dpo":
        outcome = select_rsdpo(cset, config)
    elif method in ("mbr_bw", "mbr_bmw"):
        outcome = select_mbr(cset, utility, variant=method.removeprefix("mbr_"), config=config)
    elif method == "qe_best":
        outcome = select_qe_best(cset)
    elif method == "top_scores":
        outcome = select_top_scores(cset, min(config.rso_samples, len(cset.candidates)), config)
    elif method == "minmax_r":
        outcome = select_minmax_r(cset, config)
    elif method == "minmax_p":
        outcome = select_minmax_p(cset, config)
    elif method == "minmax_po":
        outcome = select_minmax_po(cset, config)
    else:  # pragma: no cover - SelectionConfig already rejects unknown tags
        raise ValidationError(f"unknown method {method!r}")
    validate_outcome(outcome, cset)
    return outcome


def select_dataset(
    sets: Sequence[CandidateSet],
    config: SelectionConfig,
    utilities: Mapping[str, UtilityMatrix] | None = None,
    workers: int = 1,
    input_digest: str | None = None,
) -> PreferenceDataset:
    """Run the configured selector over many candidate sets.

    Work is distributed over a thread pool with order-preserving assembly,
    so the result does not depend on the worker count.  Each set gets its
    own seeded generator derived from (config.seed, source_id).
    """

    def run_one(cset: CandidateSet) -> SelectionOutcome:
        utility = None
        if utilities is not None:
            if cset.source_id not in utilities:
                raise ValidationError(
                    f"no utility matrix for source {cset.source_id!r}"
                )
            utility = utilities[cset.source_id]
        return run_selector(
            cset,
            config,
            rng=per_source_rng(config.seed, cset.source_id),
            utility=utility,
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run_one, sets))
    else:
        outcomes = [run_one(cset) for cset in sets]

    pairs: list[PreferencePair] = []
    sft_targets: list[tuple[str, str]] = []
    skipped = 0
    for cset, outcome in zip(sets, outcomes):
        pairs.extend(outcome.pairs)
        if outcome.sft_target is not None:
            sft_targets.append((cset.source_id, outcome.sft_target))
        if outcome.skipped_reason is not None:
            skipped += 1
    provenance: dict[str, object] = {
        "config": {
            "method": config.method,
            "k_trust": config.k_trust,
            "beta": config.beta,
            "eta": dict(config.eta),
            "gate_mode": config.gate_mode,
            "epsilon": config.epsilon,
            "rso_samples": config.rso_samples,
            "seed": config.seed,
            "logprob_norm": config.logprob_norm,
        },
        "n_sources": len(sets),
        "n_skipped": skipped,
    }
    if input_digest is not None:
        provenance["input_digest"] = input_digest
    return PreferenceDataset(
        pairs=tuple(pairs), sft_targets=tuple(sft_targets), provenance=provenance
    )
