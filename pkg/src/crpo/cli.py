"""Command-line interface: select, stats, losses, toy, and utility commands.

Exit codes: 0 on success, 2 for input/validation problems (including usage
errors), 1 for internal failures.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence

from .core import GATE_MODES, INTO_EN, LOGPROB_NORMS, METHODS, OUT_OF_EN, SelectionConfig, ValidationError
from .dataio import (
    digest_file,
    emit_pairs,
    emit_stats,
    ingest_candidates,
    load_pairs,
    load_utility_matrices,
    save_stats,
    save_stats_csv,
    save_utility_matrices,
)
from .losses import gradient_check
from .scoring import utility_matrix_for_set
from .selectors import select_dataset
from .toylab import CompareConfig, make_world, run_comparison

GRADIENT_TOLERANCE = 1e-4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crpo",
        description="Preference-data selection toolkit: confidence-reward "
        "scoring, comparator selectors, loss diagnostics, and a toy lab.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    select = sub.add_parser("select", help="run one selector over a candidate file")
    select.add_argument("--in", dest="input", required=True, help="candidate JSONL file")
    select.add_argument("--out", required=True, help="pair JSONL file to write")
    select.add_argument("--method", required=True, choices=METHODS)
    select.add_argument("--k-trust", type=float, default=50.0)
    select.add_argument("--beta", type=float, default=0.1)
    select.add_argument("--eta-out", type=float, default=0.6,
                        help="reward-gap threshold for out-of-English directions")
    select.add_argument("--eta-in", type=float, default=0.5,
                        help="reward-gap threshold for into-English directions")
    select.add_argument("--gate", choices=GATE_MODES, default="off")
    select.add_argument("--epsilon", type=float, default=0.0)
    select.add_argument("--rso-samples", type=int, default=8)
    select.add_argument("--seed", type=int, default=0)
    select.add_argument("--logprob-norm", choices=LOGPROB_NORMS, default="sum")
    select.add_argument("--utility-matrix", default=None,
                        help="precomputed utility matrices for the MBR methods")

    stats = sub.add_parser("stats", help="summarize a pair file against its candidates")
    stats.add_argument("--pairs", required=True)
    stats.add_argument("--candidates", required=True)
    stats.add_argument("--out", required=True)
    stats.add_argument("--bins", type=int, default=20)
    stats.add_argument("--csv", default=None, help="also write flat histogram rows")

    losses = sub.add_parser("losses", help="loss diagnostics")
    losses_sub = losses.add_subparsers(dest="losses_command", required=True)
    check = losses_sub.add_parser("check-grad", help="finite-difference gradient check")
    check.add_argument("--seed", type=int, default=0)
    check.add_argument("--instances", type=int, default=100)

    toy = sub.add_parser("toy", help="toy-world experiments")
    toy_sub = toy.add_subparsers(dest="toy_command", required=True)
    compare = toy_sub.add_parser("compare", help="compare selection methods by trained reward")
    compare.add_argument("--methods", required=True,
                         help="comma-separated method tags (random_pair allowed)")
    compare.add_argument("--seeds", type=int, default=20,
                         help="number of seeds (0..N-1)")
    compare.add_argument("--out", required=True, help="JSON report to write")
    compare.add_argument("--sources", type=int, default=50)
    compare.add_argument("--outputs", type=int, default=32)
    compare.add_argument("--k", type=int, default=16)
    compare.add_argument("--world-seed", type=int, default=0)
    compare.add_argument("--corr", type=float, default=0.5,
                         help="reward/logit mixing coefficient of the world")

    utility = sub.add_parser("utility", help="utility-matrix tools")
    utility_sub = utility.add_subparsers(dest="utility_command", required=True)
    matrix = utility_sub.add_parser("matrix", help="compute built-in utility matrices")
    matrix.add_argument("--in", dest="input", required=True)
    matrix.add_argument("--out", required=True)

    return parser


def _cmd_select(args: argparse.Namespace) -> int:
    config = SelectionConfig(
        method=args.method,
        k_trust=args.k_trust,
        beta=args.beta,
        eta={OUT_OF_EN: args.eta_out, INTO_EN: args.eta_in},
        gate_mode=args.gate,
        epsilon=args.epsilon,
        rso_samples=args.rso_samples,
        seed=args.seed,
        logprob_norm=args.logprob_norm,
    )
    sets = ingest_candidates(args.input)
    utilities = None
    if args.utility_matrix is not None:
        utilities = load_utility_matrices(args.utility_matrix)
    dataset = select_dataset(
        sets, config, utilities=utilities, input_digest=digest_file(args.input)
    )
    emit_pairs(dataset, args.out)
    skipped = dataset.provenance.get("n_skipped", 0)
    print(
        f"wrote {len(dataset.pairs)} pairs, {len(dataset.sft_targets)} sft targets "
        f"({skipped} of {len(sets)} sources skipped) -> {args.out}"
    )
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    dataset = load_pairs(args.pairs)
    sets = ingest_candidates(args.candidates)
    expected = dataset.provenance.get("input_digest")
    if expected is not None and expected != digest_file(args.candidates):
        raise ValidationError(
            "pair file was produced from a different candidate file (digest mismatch)"
        )
    report = emit_stats(dataset, sets, bins=args.bins)
    save_stats(report, args.out)
    if args.csv is not None:
        save_stats_csv(report, args.csv)
    print(
        f"summarized {report.n_pairs} pairs and {report.n_sft_targets} sft targets "
        f"over {len(report.methods)} methods -> {args.out}"
    )
    return 0


def _cmd_check_grad(args: argparse.Namespace) -> int:
    worst = gradient_check(seed=args.seed, n_instances=args.instances)
    failed = False
    for name, err in worst.items():
        status = "ok" if err < GRADIENT_TOLERANCE else "FAIL"
        print(f"{name}: max relative error {err:.3e} [{status}]")
        failed = failed or err >= GRADIENT_TOLERANCE
    if failed:
        print(f"gradient check failed (tolerance {GRADIENT_TOLERANCE:g})", file=sys.stderr)
        return 1
    print(f"gradient check passed over {args.instances} instances")
    return 0


def _cmd_toy_compare(args: argparse.Namespace) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    if args.seeds < 1:
        raise ValidationError("--seeds must be >= 1")
    world = make_world(
        n_sources=args.sources,
        n_outputs=args.outputs,
        seed=args.world_seed,
        reward_logit_corr=args.corr,
    )
    config = CompareConfig(k_candidates=args.k)
    report = run_comparison(world, methods, list(range(args.seeds)), config)
    with open(args.out, "w", encoding="utf-8") as handle:
        json.dump(report.to_dict(), handle, ensure_ascii=False, indent=2)
        handle.write("\n")
    for method, mean, stderr in zip(report.methods, report.means, report.stderrs):
        print(f"{method}: mean gain {mean:+.5f} (stderr {stderr:.5f})")
    return 0


def _cmd_utility_matrix(args: argparse.Namespace) -> int:
    sets = ingest_candidates(args.input)
    entries = [(cset.source_id, utility_matrix_for_set(cset)) for cset in sets]
    save_utility_matrices(entries, args.out)
    print(f"wrote {len(entries)} utility matrices -> {args.out}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "select":
            return _cmd_select(args)
        if args.command == "stats":
            return _cmd_stats(args)
        if args.command == "losses":
            return _cmd_check_grad(args)
        if args.command == "toy":
            return _cmd_toy_compare(args)
        if args.command == "utility":
            return _cmd_utility_matrix(args)
        parser.error(f"unknown command {args.command!r}")
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # internal failure
        print(f"internal error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
