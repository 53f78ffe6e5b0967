"""Core data model: candidates, preference pairs, and selection configuration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

# Method tags accepted by the selectors and the CLI.
METHODS = (
    "cr_plus",
    "cr_times",
    "rso",
    "rs_dpo",
    "mbr_bw",
    "mbr_bmw",
    "qe_best",
    "top_scores",
    "minmax_r",
    "minmax_p",
    "minmax_po",
)

GATE_MODES = ("off", "log_space", "probability")
LOGPROB_NORMS = ("sum", "per_token")

# Direction classes used to resolve the pair-gap threshold eta.
OUT_OF_EN = "out_of_en"
INTO_EN = "into_en"
DEFAULT_ETA = {OUT_OF_EN: 0.6, INTO_EN: 0.5}

# Selectors that rank candidates by expected utility rather than by reward.
# Their pairs are labeled by utility rank, so the chosen-reward >=
# rejected-reward check does not apply to them.
UTILITY_RANKED_METHODS = ("mbr_bw", "mbr_bmw")


class ValidationError(ValueError):
    """Raised when a record, score, or configuration violates its contract."""


def aggregate_reward(rewards: Mapping[str, float]) -> float:
    """Unweighted mean of the per-model reward scores for one candidate."""
    if not rewards:
        raise ValidationError("no reward sources")
    for name, value in rewards.items():
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ValidationError(f"reward out of range: {name}={value!r}")
        if not math.isfinite(value) or not 0.0 <= value <= 1.0:
            raise ValidationError(f"reward out of range: {name}={value!r}")
    return math.fsum(rewards.values()) / len(rewards)


def direction_class(direction: tuple[str, str]) -> str:
    """Threshold class of a translation direction: into English or out of it."""
    return INTO_EN if direction[1] == "en" else OUT_OF_EN


@dataclass(frozen=True)
class Candidate:
    """One sampled output with its reference-policy log-likelihood and rewards.

    ``logprob`` is the summed token log-probability of ``text`` under the
    reference policy.  ``rewards`` maps reward-model names to scores in
    [0, 1]; ``reward_agg`` caches their mean and is filled in automatically
    when not supplied.  ``token_count`` is only needed for per-token
    likelihood normalization.
    """

    id: str
    text: str
    logprob: float
    rewards: Mapping[str, float]
    reward_agg: float | None = None
    token_count: int | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValidationError("candidate id must be a non-empty string")
        if not isinstance(self.logprob, (int, float)) or isinstance(self.logprob, bool):
            raise ValidationError(f"candidate {self.id!r}: logprob must be a number")
        if not math.isfinite(self.logprob) or self.logprob > 0.0:
            raise ValidationError(
                f"candidate {self.id!r}: logprob must be finite and <= 0, got {self.logprob!r}"
            )
        agg = aggregate_reward(self.rewards)
        if self.reward_agg is None:
            object.__setattr__(self, "reward_agg", agg)
        elif abs(self.reward_agg - agg) > 1e-12:
            raise ValidationError(
                f"candidate {self.id!r}: cached aggregate {self.reward_agg!r} "
                f"disagrees with mean reward {agg!r}"
            )
        if self.token_count is not None:
            if not isinstance(self.token_count, int) or self.token_count < 1:
                raise ValidationError(
                    f"candidate {self.id!r}: token_count must be a positive integer"
                )


@dataclass(frozen=True)
class CandidateSet:
    """All candidates sampled for one source segment."""

    source_id: str
    source_text: str
    direction: tuple[str, str]
    candidates: tuple[Candidate, ...]
    k: int | None = None

    def __post_init__(self) -> None:
        if not self.source_id:
            raise ValidationError("source_id must be a non-empty string")
        if (
            len(self.direction) != 2
            or not all(isinstance(t, str) and t for t in self.direction)
        ):
            raise ValidationError(
                f"source {self.source_id!r}: direction must be a (src, tgt) tag pair"
            )
        object.__setattr__(self, "direction", tuple(self.direction))
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.candidates:
            raise ValidationError(f"source {self.source_id!r}: empty candidate list")
        index = {}
        for cand in self.candidates:
            if cand.id in index:
                raise ValidationError(
                    f"source {self.source_id!r}: duplicate candidate id {cand.id!r}"
                )
            index[cand.id] = cand
        object.__setattr__(self, "_index", index)
        if self.k is None:
            object.__setattr__(self, "k", len(self.candidates))
        elif self.k != len(self.candidates):
            raise ValidationError(
                f"source {self.source_id!r}: recorded K={self.k} but "
                f"{len(self.candidates)} candidates present"
            )

    def candidate(self, candidate_id: str) -> Candidate:
        try:
            return self._index[candidate_id]
        except KeyError:
            raise ValidationError(
                f"source {self.source_id!r}: unknown candidate id {candidate_id!r}"
            ) from None


@dataclass(frozen=True)
class PreferencePair:
    """A (chosen, rejected) training pair emitted by a selector."""

    source_id: str
    chosen_id: str
    rejected_id: str
    score: float
    method: str
    extras: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.chosen_id == self.rejected_id:
            raise ValidationError(
                f"source {self.source_id!r}: pair must use two distinct candidates"
            )
        if not self.method:
            raise ValidationError("pair method tag must be non-empty")
        if not math.isfinite(self.score):
            raise ValidationError(
                f"source {self.source_id!r}: non-finite pair score {self.score!r}"
            )


@dataclass(frozen=True)
class PreferenceDataset:
    """Selector output over many sources: pairs, SFT targets, provenance."""

    pairs: tuple[PreferencePair, ...]
    sft_targets: tuple[tuple[str, str], ...] = ()
    provenance: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "pairs", tuple(self.pairs))
        object.__setattr__(self, "sft_targets", tuple(tuple(t) for t in self.sft_targets))

    def validate_against(self, sets: Sequence[CandidateSet]) -> None:
        """Check that every id resolves and pair labels respect rewards.

        Utility-ranked methods (MBR) are exempt from the reward-ordering
        check because their labels follow utility rank, not reward.
        """
        by_source = {cset.source_id: cset for cset in sets}
        for pair in self.pairs:
            if pair.source_id not in by_source:
                raise ValidationError(f"pair references unknown source {pair.source_id!r}")
            cset = by_source[pair.source_id]
            chosen = cset.candidate(pair.chosen_id)
            rejected = cset.candidate(pair.rejected_id)
            if pair.method not in UTILITY_RANKED_METHODS:
                if chosen.reward_agg < rejected.reward_agg:
                    raise ValidationError(
                        f"source {pair.source_id!r}: chosen candidate "
                        f"{pair.chosen_id!r} has lower aggregate reward than "
                        f"rejected {pair.rejected_id!r}"
                    )
        for source_id, candidate_id in self.sft_targets:
            if source_id not in by_source:
                raise ValidationError(f"sft target references unknown source {source_id!r}")
            by_source[source_id].candidate(candidate_id)


@dataclass(frozen=True)
class SelectionConfig:
    """Knobs shared by all selectors.

    ``eta`` maps a direction class (out of / into English) to the minimum
    reward gap used by the pair-gap selector.  ``gate_mode`` controls the
    optional likelihood gate of the confidence-reward selector: ``off``
    keeps only the positivity filter, ``log_space`` requires
    logp_j - logp_best + epsilon > 0, and ``probability`` applies the same
    test after exponentiation.
    """

    method: str = "cr_plus"
    k_trust: float = 50.0
    beta: float = 0.1
    eta: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_ETA))
    gate_mode: str = "off"
    epsilon: float = 0.0
    rso_samples: int = 8
    seed: int = 0
    logprob_norm: str = "sum"

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValidationError(
                f"unknown method {self.method!r}; valid tags: {', '.join(METHODS)}"
            )
        if not math.isfinite(self.k_trust) or self.k_trust <= 0:
            raise ValidationError(f"k_trust must be finite and > 0, got {self.k_trust!r}")
        if not math.isfinite(self.beta) or self.beta <= 0:
            raise ValidationError(f"beta must be finite and > 0, got {self.beta!r}")
        for key, value in self.eta.items():
            if not math.isfinite(value) or not 0.0 < value < 1.0:
                raise ValidationError(f"eta[{key!r}] must lie in (0, 1), got {value!r}")
        if self.gate_mode not in GATE_MODES:
            raise ValidationError(
                f"unknown gate mode {self.gate_mode!r}; valid modes: {', '.join(GATE_MODES)}"
            )
        if not math.isfinite(self.epsilon) or self.epsilon < 0:
            raise ValidationError(f"epsilon must be finite and >= 0, got {self.epsilon!r}")
        if not isinstance(self.rso_samples, int) or self.rso_samples < 2:
            raise ValidationError(f"rso_samples must be an integer >= 2, got {self.rso_samples!r}")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ValidationError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.logprob_norm not in LOGPROB_NORMS:
            raise ValidationError(
                f"unknown logprob_norm {self.logprob_norm!r}; "
                f"valid modes: {', '.join(LOGPROB_NORMS)}"
            )


def effective_logprob(candidate: Candidate, config: SelectionConfig) -> float:
    """Candidate log-likelihood under the configured normalization."""
    if config.logprob_norm == "sum":
        return float(candidate.logprob)
    if candidate.token_count is None:
        raise ValidationError(
            f"candidate {candidate.id!r}: per-token normalization requires token_count"
        )
    return float(candidate.logprob) / candidate.token_count
