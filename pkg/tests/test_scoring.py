"""Scoring contracts: CR scores, reward gaps, MBR utilities, text utility."""

from __future__ import annotations

import numpy as np
import pytest

from crpo.scoring import (
    PairScoreInput,
    UtilityMatrix,
    builtin_utility,
    cr_plus,
    cr_times,
    mbr_expected_utility,
    mbr_scores,
    reward_gap,
    utility_matrix_for_set,
)
from crpo.core import ValidationError

from conftest import make_set


def pair(r_w, r_l, logp_w, logp_l) -> PairScoreInput:
    return PairScoreInput(r_w=r_w, r_l=r_l, logp_w=logp_w, logp_l=logp_l)


class TestPairScoreInput:
    def test_non_finite_rejected(self):
        with pytest.raises(ValidationError, match="non-finite"):
            pair(0.5, 0.5, float("nan"), -1.0)

    def test_reward_range_checked(self):
        with pytest.raises(ValidationError, match="reward out of range"):
            pair(1.5, 0.5, -1.0, -1.0)

    def test_positive_logprob_rejected(self):
        with pytest.raises(ValidationError, match="<= 0"):
            pair(0.5, 0.4, 1.0, -1.0)


class TestCrPlus:
    def test_worked_example(self):
        assert cr_plus(pair(0.9, 0.3, -50.0, -20.0), 50.0) == 60.0

    def test_zero_trust_reduces_to_confidence_gap(self):
        assert cr_plus(pair(0.9, 0.3, -10.0, -5.0), 0.0) == 5.0

    def test_negative_trust_rejected(self):
        with pytest.raises(ValidationError, match="k_trust"):
            cr_plus(pair(0.9, 0.3, -10.0, -5.0), -1.0)

    def test_antisymmetric_under_swap(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            r = rng.uniform(size=2)
            lp = -rng.uniform(0.1, 50.0, size=2)
            k = float(rng.uniform(0.0, 80.0))
            forward = cr_plus(pair(r[0], r[1], lp[0], lp[1]), k)
            backward = cr_plus(pair(r[1], r[0], lp[1], lp[0]), k)
            assert forward == pytest.approx(-backward, abs=1e-12)

    def test_monotone_in_each_argument(self):
        base = pair(0.6, 0.4, -20.0, -15.0)
        score = cr_plus(base, 50.0)
        assert cr_plus(pair(0.7, 0.4, -20.0, -15.0), 50.0) > score
        assert cr_plus(pair(0.6, 0.3, -20.0, -15.0), 50.0) > score
        assert cr_plus(pair(0.6, 0.4, -25.0, -15.0), 50.0) > score
        assert cr_plus(pair(0.6, 0.4, -20.0, -10.0), 50.0) > score
        assert cr_plus(pair(0.6, 0.4, -20.0, -15.0), 60.0) > score


class TestCrTimes:
    def test_worked_examples(self):
        assert cr_times(pair(0.9, 0.3, -50.0, -20.0)) == pytest.approx(18.0)
        assert cr_times(pair(0.9, 0.3, -50.0, -60.0)) == pytest.approx(-6.0)

    def test_sign_tracks_disagreement(self):
        # positive iff the loser is more likely than the winner (given r_w > r_l)
        assert cr_times(pair(0.8, 0.2, -30.0, -10.0)) > 0
        assert cr_times(pair(0.8, 0.2, -10.0, -30.0)) < 0
        assert cr_times(pair(0.5, 0.5, -10.0, -30.0)) == 0.0

    def test_symmetric_under_swap(self):
        # both factors negate, so swapping the roles leaves the product alone
        rng = np.random.default_rng(11)
        for _ in range(200):
            r = rng.uniform(size=2)
            lp = -rng.uniform(0.1, 50.0, size=2)
            forward = cr_times(pair(r[0], r[1], lp[0], lp[1]))
            backward = cr_times(pair(r[1], r[0], lp[1], lp[0]))
            assert forward == pytest.approx(backward, abs=1e-12)


class TestRewardGap:
    def test_examples(self):
        assert reward_gap(0.9, 0.2) == pytest.approx(0.7)
        assert reward_gap(0.2, 0.9) == pytest.approx(-0.7)

    def test_range_checked(self):
        with pytest.raises(ValidationError, match="reward out of range"):
            reward_gap(1.1, 0.0)


class TestMbrUtilities:
    def test_worked_example(self):
        matrix = UtilityMatrix(
            ids=("A", "B", "C"),
            values=np.array(
                [
                    [1.0, 0.8, 0.4],
                    [0.8, 1.0, 0.5],
                    [0.4, 0.5, 1.0],
                ]
            ),
        )
        assert mbr_expected_utility(matrix, 0) == pytest.approx(0.6)

    def test_self_utility_excluded(self):
        # a huge diagonal must not affect the scores
        values = np.array([[9.0, 0.2], [0.4, 9.0]])
        matrix = UtilityMatrix(ids=("A", "B"), values=values)
        np.testing.assert_allclose(mbr_scores(matrix), [0.2, 0.4])

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        for _ in range(100):
            k = int(rng.integers(2, 17))
            values = rng.uniform(size=(k, k))
            matrix = UtilityMatrix(ids=tuple(f"c{j}" for j in range(k)), values=values)
            expected = []
            for j in range(k):
                total = 0.0
                for m in range(k):
                    if m != j:
                        total += values[j][m]
                expected.append(total / (k - 1))
            np.testing.assert_allclose(mbr_scores(matrix), expected, atol=1e-12)
            for j in range(k):
                assert mbr_expected_utility(matrix, j) == pytest.approx(expected[j])

    def test_single_candidate_rejected(self):
        matrix = UtilityMatrix(ids=("A",), values=np.array([[1.0]]))
        with pytest.raises(ValidationError, match="at least 2"):
            mbr_expected_utility(matrix, 0)

    def test_matrix_validation(self):
        with pytest.raises(ValidationError, match="must be 2x2"):
            UtilityMatrix(ids=("A", "B"), values=np.zeros((2, 3)))
        with pytest.raises(ValidationError, match="non-finite"):
            UtilityMatrix(ids=("A", "B"), values=np.array([[0.0, np.inf], [0.0, 0.0]]))
        with pytest.raises(ValidationError, match="distinct"):
            UtilityMatrix(ids=("A", "A"), values=np.zeros((2, 2)))


def oracle_chrf(hyp: str, ref: str, max_order: int = 6, beta: float = 2.0) -> float:
    """Independent re-derivation of the built-in utility for cross-checking."""
    hyp = "".join(hyp.split())
    ref = "".join(ref.split())
    if not hyp and not ref:
        return 1.0
    precisions, recalls = [], []
    for n in range(1, max_order + 1):
        hyp_counts: dict[str, int] = {}
        for i in range(len(hyp) - n + 1):
            g = hyp[i : i + n]
            hyp_counts[g] = hyp_counts.get(g, 0) + 1
        ref_counts: dict[str, int] = {}
        for i in range(len(ref) - n + 1):
            g = ref[i : i + n]
            ref_counts[g] = ref_counts.get(g, 0) + 1
        hyp_total = sum(hyp_counts.values())
        ref_total = sum(ref_counts.values())
        if hyp_total == 0 or ref_total == 0:
            continue
        common = sum(min(c, ref_counts.get(g, 0)) for g, c in hyp_counts.items())
        precisions.append(common / hyp_total)
        recalls.append(common / ref_total)
    if not precisions:
        return 0.0
    p = sum(precisions) / len(precisions)
    r = sum(recalls) / len(recalls)
    if p + r == 0:
        return 0.0
    return (1 + beta**2) * p * r / (beta**2 * p + r)


class TestBuiltinUtility:
    def test_frozen_example(self):
        value = builtin_utility("the cat sat", "the cat sat down")
        assert value == pytest.approx(0.6601764142221674, abs=1e-12)
        assert value == pytest.approx(oracle_chrf("the cat sat", "the cat sat down"))
        reverse = builtin_utility("the cat sat down", "the cat sat")
        assert reverse == pytest.approx(0.8859854884450613, abs=1e-12)

    def test_identical_strings_score_one(self):
        for text in ("a", "abc", "the quick brown fox", "ab", "žluťoučký kůň"):
            assert builtin_utility(text, text) == pytest.approx(1.0)

    def test_disjoint_strings_score_zero(self):
        assert builtin_utility("aaa", "bbb") == 0.0

    def test_empty_string_cases(self):
        assert builtin_utility("", "") == 1.0
        assert builtin_utility("", "abc") == 0.0
        assert builtin_utility("abc", "") == 0.0

    def test_whitespace_ignored(self):
        assert builtin_utility("a b c", "abc") == pytest.approx(1.0)

    def test_bounded_and_matches_oracle_on_random_pairs(self):
        rng = np.random.default_rng(5)
        alphabet = "abcdef "
        for _ in range(200):
            a = "".join(rng.choice(list(alphabet), size=rng.integers(0, 15)))
            b = "".join(rng.choice(list(alphabet), size=rng.integers(0, 15)))
            value = builtin_utility(a, b)
            assert 0.0 <= value <= 1.0
            assert value == pytest.approx(oracle_chrf(a, b), abs=1e-12)


def test_utility_matrix_for_set_uses_texts():
    cset = make_set([("A", 0.9, -1.0), ("B", 0.5, -2.0)])
    matrix = utility_matrix_for_set(cset)
    assert matrix.ids == ("A", "B")
    assert matrix.values[0, 0] == pytest.approx(1.0)
    assert matrix.values[0, 1] == pytest.approx(
        builtin_utility("text A", "text B")
    )
