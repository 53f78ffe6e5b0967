"""Shared test helpers: small hand-built sets and random set generators."""

from __future__ import annotations

import numpy as np
import pytest

from crpo.core import Candidate, CandidateSet


def make_set(
    triples,
    source_id: str = "s1",
    direction: tuple[str, str] = ("en", "de"),
) -> CandidateSet:
    """Build a set from (id, reward, logprob) triples with one reward model."""
    candidates = tuple(
        Candidate(id=cid, text=f"text {cid}", logprob=lp, rewards={"qe": r})
        for cid, r, lp in triples
    )
    return CandidateSet(
        source_id=source_id,
        source_text="a source segment",
        direction=direction,
        candidates=candidates,
    )


def random_set(
    rng: np.random.Generator,
    k: int | None = None,
    source_id: str = "s1",
    direction: tuple[str, str] = ("en", "de"),
    tie_probability: float = 0.2,
) -> CandidateSet:
    """Random candidate set with occasional reward/likelihood ties."""
    if k is None:
        k = int(rng.integers(2, 17))
    rewards = rng.uniform(size=k)
    logprobs = -rng.uniform(0.1, 60.0, size=k)
    if k >= 3 and rng.random() < tie_probability:
        rewards[1] = rewards[0]
    if k >= 3 and rng.random() < tie_probability:
        logprobs[2] = logprobs[1]
    ids = [f"c{j:02d}" for j in range(k)]
    candidates = tuple(
        Candidate(
            id=ids[j],
            text=f"text {j}",
            logprob=float(logprobs[j]),
            rewards={"qe": float(rewards[j])},
        )
        for j in range(k)
    )
    return CandidateSet(
        source_id=source_id,
        source_text="a source segment",
        direction=direction,
        candidates=candidates,
    )


@pytest.fixture
def worked_example() -> CandidateSet:
    """The three-candidate set used in the worked selector examples."""
    return make_set([("A", 0.9, -40.0), ("B", 0.5, -10.0), ("C", 0.2, -60.0)])
