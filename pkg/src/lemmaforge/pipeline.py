"""Decomposition pipeline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

from .config import GlobalConfig
from .decompose import (
    MIN_PROOF_LINES,
    STRUCTURED_RULES,
    UNSTRUCTURED_RULES,
    DecompositionReport,
    ExtractedLemma,
    decompose_structured,
    decompose_unstructured,
    dedup,
    filter_trivial,
    theoretical_bounds,
)
from .errors import InputNotVerified, NoIntermediateHypotheses
from .progress import ProgressTracker
from .repl import Oracle, OracleRequest, collect_states, summarize_errors
from .script import TheoremScript, parse_theorem, print_theorem, steps

logger = logging.getLogger(__name__)

RECURSIVE_THRESHOLD = 20
MAX_DEPTH = 2


class Strategy(str, Enum):
    STRUCTURED = "structured"
    UNSTRUCTURED = "unstructured"
    BOTH = "both"


@dataclass
class DecompositionResult:
    """Result of decomposing one theorem."""
    script: TheoremScript
    candidates: list[ExtractedLemma]
    exported: list[ExtractedLemma]
    report: DecompositionReport
    children: list[DecompositionReport] = field(default_factory=list)


@dataclass
class DecompositionOptions:
    strategy: Strategy = Strategy.BOTH
    keep_trivial: bool = False
    min_proof_lines: int = MIN_PROOF_LINES
    recursive: bool = False
    recursive_threshold: int = RECURSIVE_THRESHOLD
    max_depth: int = MAX_DEPTH
    source_problem: str = ""


def run_decomposition(
    source_text: str,
    theorem_name: str,
    oracle: Oracle,
    config: GlobalConfig,
    options: DecompositionOptions | None = None,
    source_path: Path | None = None,
    tracker: ProgressTracker | None = None,
) -> DecompositionResult:
    """Run the full decomposition pipeline on one theorem.

    Steps:
    1. Parse the theorem and verify it as printed
    2. Generate structured and/or unstructured candidates
    3. Verify every candidate
    4. Filter trivial and too-short lemmas
    5. Deduplicate, in deterministic id order
    6. Optionally decompose long exported lemmas again
    """
    options = options or DecompositionOptions()

    # Step 1: Parse and check the input
    script = parse_theorem(source_text, theorem_name, source_path)
    check = oracle.verify(OracleRequest(
        source_text=print_theorem(script),
        timeout_s=config.batch_timeout_s,
        memory_cap_mb=config.memory_cap_mb,
    ))
    if not check.proved:
        raise InputNotVerified(
            f"{theorem_name} does not verify ({check.status.value}):\n{summarize_errors(check)}"
        )

    result = _decompose(script, oracle, config, options, tracker, depth=0)

    # Step 6: Recursive pass over long lemmas
    if options.recursive:
        frontier = list(result.exported)
        for depth in range(1, options.max_depth + 1):
            parents = [
                lemma for lemma in frontier
                if lemma.proof_length > options.recursive_threshold
            ]
            frontier = []
            for parent in parents:
                child_script = parse_theorem(parent.render(), parent.id, source_path)
                child = _decompose(child_script, oracle, config, options, tracker, depth)
                result.children.append(child.report)
                result.candidates.extend(child.candidates)
                frontier.extend(child.exported)
            result.exported = sorted(dedup([*result.exported, *frontier]), key=lambda l: l.id)
            if not frontier:
                break

    return result


def _decompose(
    script: TheoremScript,
    oracle: Oracle,
    config: GlobalConfig,
    options: DecompositionOptions,
    tracker: ProgressTracker | None,
    depth: int,
) -> DecompositionResult:
    n, k = script.n, script.k
    report = DecompositionReport(source=script.name, n=n, k=k, bounds=theoretical_bounds(n, k))

    # Step 2: Generate candidates
    candidates: list[ExtractedLemma] = []
    if options.strategy in (Strategy.STRUCTURED, Strategy.BOTH):
        try:
            candidates.extend(decompose_structured(script))
        except NoIntermediateHypotheses:
            if options.strategy is Strategy.STRUCTURED:
                raise
            report.notices.append("structured strategy skipped: no top-level `have`")
            logger.info("%s: no intermediate hypotheses, skipping structured strategy", script.name)

    if options.strategy in (Strategy.UNSTRUCTURED, Strategy.BOTH):
        if tracker:
            tracker.start_stage(f"Collecting states of {script.name}")
        states = collect_states(oracle, script, config.verify_timeout_s)
        unstructured = decompose_unstructured(script, states)
        candidates.extend(unstructured)
        positions = theoretical_bounds(len(steps(script)), k)
        for rule in UNSTRUCTURED_RULES:
            emitted = sum(1 for lemma in unstructured if lemma.rule is rule)
            report.skipped[rule.value] = positions[rule.value] - emitted

    for lemma in candidates:
        lemma.depth = depth
        lemma.source_problem = options.source_problem

    # Step 3: Verify candidates
    if tracker:
        tracker.start_stage(f"Verifying {len(candidates)} candidates of {script.name}", len(candidates))
    verdicts = oracle.verify_many([
        OracleRequest(
            source_text=lemma.render(),
            timeout_s=config.verify_timeout_s,
            memory_cap_mb=config.memory_cap_mb,
        )
        for lemma in candidates
    ])
    for lemma, verdict in zip(candidates, verdicts):
        lemma.verified = verdict.proved
        if tracker:
            tracker.advance(lemma_id=lemma.id, rule=lemma.rule.value, status=verdict.status.value)
    verified = [lemma for lemma in candidates if lemma.verified]

    # Step 4: Triviality and length gates
    long_enough = [lemma for lemma in verified if lemma.proof_length >= options.min_proof_lines]
    if tracker:
        tracker.start_stage("Filtering trivial lemmas", len(long_enough))
    for lemma in long_enough:
        filter_trivial(lemma, config.trivial_tactics, config.triviality_timeout_s, oracle)
        if tracker:
            tracker.advance(lemma_id=lemma.id, trivial=lemma.trivial)
    eligible = [lemma for lemma in long_enough if options.keep_trivial or not lemma.trivial]

    # Step 5: Deduplicate
    exported = sorted(dedup(eligible), key=lambda lemma: lemma.id)

    for rule in (*STRUCTURED_RULES, *UNSTRUCTURED_RULES):
        report.count(rule, candidates, "candidates")
        report.count(rule, verified, "verified")
        report.count(rule, exported, "exported")

    logger.info(
        "%s: %d candidates, %d verified, %d exported",
        script.name, report.total_candidates, report.total_verified, report.total_exported,
    )
    return DecompositionResult(
        script=script, candidates=candidates, exported=exported, report=report,
    )
