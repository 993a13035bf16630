"""Lemma extraction from verified tactic proofs.

Two families of candidates are produced:

- structured: one lemma per top-level intermediate hypothesis (lifted to a
  standalone goal) and one per cumulative grant of those hypotheses back to
  the original theorem;
- unstructured: lemmas read off the proof states between top-level steps
  (forward suffixes, backward pairs and backward prefixes).

Generation here is pure. Verification, triviality filtering and export are
driven by `pipeline.run_decomposition`.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Any, Sequence

from .errors import NoIntermediateHypotheses
from .repl import Oracle, OracleRequest, ProofState
from .script import (
    DECLARATION_RE,
    Binder,
    TacticLine,
    TheoremScript,
    have_blocks,
    reindent,
    render_declaration,
    render_header,
    steps,
    text_proof_length,
)
from .statements import binders_from_hypotheses, canonical_statement, grant_binder, single_goal

logger = logging.getLogger(__name__)

MIN_PROOF_LINES = 2


class Rule(str, Enum):
    HYPOTHESIS_LIFT = "hypothesis_lift"
    CUMULATIVE_GRANT = "cumulative_grant"
    FORWARD = "forward"
    BACKWARD_PAIR = "backward_pair"
    BACKWARD_PREFIX = "backward_prefix"
    IMPORTED = "imported"


STRUCTURED_RULES = (Rule.HYPOTHESIS_LIFT, Rule.CUMULATIVE_GRANT)
UNSTRUCTURED_RULES = (Rule.FORWARD, Rule.BACKWARD_PAIR, Rule.BACKWARD_PREFIX)


@dataclass
class ExtractedLemma:
    """A candidate lemma and its gating state."""

    id: str
    rule: Rule
    param: int
    statement_text: str
    proof_text: str
    preamble: str = ""
    source: str = ""
    source_problem: str = ""
    verified: bool = False
    trivial: bool | None = None
    proof_length: int = 0
    depth: int = 0

    def __post_init__(self) -> None:
        if not self.proof_length:
            self.proof_length = text_proof_length(self.proof_text)

    def render(self) -> str:
        """Full Lean source of the lemma, preamble included."""
        return render_declaration(self.statement_text, self.proof_text.split("\n"), self.preamble)

    @property
    def theorem_name(self) -> str:
        match = DECLARATION_RE.match(self.statement_text.strip())
        return match.group("name") if match else self.id

    @property
    def exportable(self) -> bool:
        return self.verified and self.trivial is False and self.proof_length >= MIN_PROOF_LINES


def lemma_id(theorem_name: str, rule: Rule, param: int) -> str:
    return f"{theorem_name}_{rule.value}_{param:03d}"


def _make_lemma(
    script: TheoremScript,
    rule: Rule,
    param: int,
    binders: Sequence[Binder],
    goal_text: str,
    proof_lines: Sequence[str],
) -> ExtractedLemma:
    name = lemma_id(script.name, rule, param)
    source = script.name if script.source_path is None else f"{script.name} ({script.source_path})"
    return ExtractedLemma(
        id=name,
        rule=rule,
        param=param,
        statement_text=render_header(name, binders, goal_text),
        proof_text="\n".join(proof_lines),
        preamble=script.preamble,
        source=source,
    )


def theoretical_bounds(n: int, k: int) -> dict[str, int]:
    """Maximum candidate counts for a proof of n lines with k intermediate hypotheses."""
    return {
        Rule.HYPOTHESIS_LIFT.value: k,
        Rule.CUMULATIVE_GRANT.value: k,
        Rule.FORWARD.value: max(n - 2, 0),
        Rule.BACKWARD_PAIR.value: max(n - 2, 0),
        Rule.BACKWARD_PREFIX.value: max(n - 3, 0),
        "structured": 2 * k,
        "unstructured": max(3 * n - 7, 0),
    }


# --- structured ---


def decompose_structured(script: TheoremScript) -> list[ExtractedLemma]:
    """Exactly 2k candidates: k hypothesis lifts then k cumulative grants.

    Raises:
        NoIntermediateHypotheses: the body has no top-level `have`.
    """
    blocks = have_blocks(script)
    if not blocks:
        raise NoIntermediateHypotheses(f"{script.name}: no top-level intermediate hypotheses")

    lifts: list[ExtractedLemma] = []
    grants: list[ExtractedLemma] = []
    granted: list[Binder] = []
    removed: set[int] = set()

    for j, block in enumerate(blocks, start=1):
        lifts.append(_make_lemma(
            script, Rule.HYPOTHESIS_LIFT, j,
            [*script.binders, *granted], block.type_text, block.proof_lines(),
        ))

        granted.append(Binder(block.name, block.type_text))
        removed.update(range(block.start, block.end))
        remaining = [line for line in script.body if line.index not in removed]
        grants.append(_make_lemma(
            script, Rule.CUMULATIVE_GRANT, j,
            [*script.binders, *granted], script.goal_text, reindent(remaining, 0),
        ))

    return lifts + grants


# --- unstructured ---


def _step_lines(script: TheoremScript, start: int, end: int | None = None) -> list[TacticLine]:
    return [line for step in steps(script)[start:end] for line in step.lines]


def _check_states(script: TheoremScript, states: Sequence[ProofState | None]) -> int:
    count = len(steps(script))
    if len(states) != count + 1:
        raise ValueError(f"expected {count + 1} states for {script.name}, got {len(states)}")
    return count


def decompose_forward(
    script: TheoremScript,
    states: Sequence[ProofState | None],
) -> list[ExtractedLemma]:
    """For m in 1..n-2: the state after m steps, proved by the remaining steps."""
    n = _check_states(script, states)
    lemmas: list[ExtractedLemma] = []
    for m in range(1, n - 1):
        state = states[m]
        goal = single_goal(state)
        binders = binders_from_hypotheses(state.hypotheses) if state is not None else None
        if goal is None or binders is None:
            logger.debug("%s: forward m=%d skipped, state not renderable", script.name, m)
            continue
        lemmas.append(_make_lemma(
            script, Rule.FORWARD, m, binders, goal, reindent(_step_lines(script, m), 0),
        ))
    return lemmas


def decompose_backward_pair(
    script: TheoremScript,
    states: Sequence[ProofState | None],
) -> list[ExtractedLemma]:
    """For each consecutive pair of steps (i, i+1), i in 0..n-3.

    The statement is the state before the pair with the state after it
    granted back as a hypothesis; the proof is the two steps followed by an
    application of the grant.
    """
    n = _check_states(script, states)
    lemmas: list[ExtractedLemma] = []
    for i in range(n - 2):
        before, after = states[i], states[i + 2]
        goal = single_goal(before)
        binders = binders_from_hypotheses(before.hypotheses) if before is not None else None
        if goal is None or binders is None:
            logger.debug("%s: backward pair i=%d skipped, state not renderable", script.name, i)
            continue
        assert before is not None
        grant = grant_binder(before.hypotheses, after, (b.name for b in binders))
        if grant is None:
            logger.debug("%s: backward pair i=%d skipped, delta not renderable", script.name, i)
            continue
        binder, closing = grant
        lines = reindent(_step_lines(script, i, i + 2), 0) + [closing]
        lemmas.append(_make_lemma(
            script, Rule.BACKWARD_PAIR, i, [*binders, binder], goal, lines,
        ))
    return lemmas


def decompose_backward_prefix(
    script: TheoremScript,
    states: Sequence[ProofState | None],
) -> list[ExtractedLemma]:
    """For m in 2..n-2: the original theorem with the state after m steps granted."""
    n = _check_states(script, states)
    initial = states[0]
    before = (
        initial.hypotheses if initial is not None
        else [(b.name, b.type_text) for b in script.binders]
    )
    taken = [b.name for b in script.binders]

    lemmas: list[ExtractedLemma] = []
    for m in range(2, n - 1):
        grant = grant_binder(before, states[m], taken)
        if grant is None:
            logger.debug("%s: backward prefix m=%d skipped, state not renderable", script.name, m)
            continue
        binder, closing = grant
        lines = reindent(_step_lines(script, 0, m), 0) + [closing]
        lemmas.append(_make_lemma(
            script, Rule.BACKWARD_PREFIX, m, [*script.binders, binder], script.goal_text, lines,
        ))
    return lemmas


def decompose_unstructured(
    script: TheoremScript,
    states: Sequence[ProofState | None],
) -> list[ExtractedLemma]:
    return [
        *decompose_forward(script, states),
        *decompose_backward_pair(script, states),
        *decompose_backward_prefix(script, states),
    ]


# --- gating ---


def filter_trivial(
    lemma: ExtractedLemma,
    tactics: Sequence[str],
    timeout_s: float,
    oracle: Oracle,
) -> bool:
    """Whether a single listed tactic closes the lemma's goal.

    The result is recorded on the lemma. Timeouts count as not closing.
    """
    if not tactics:
        lemma.trivial = False
        return False

    requests = [
        OracleRequest(
            source_text=render_declaration(lemma.statement_text, [tactic], lemma.preamble),
            timeout_s=timeout_s,
        )
        for tactic in tactics
    ]
    results = oracle.verify_many(requests)
    closers = [tactic for tactic, result in zip(tactics, results) if result.proved]
    if closers:
        logger.debug("%s is trivial: closed by %s", lemma.id, closers[0])
    lemma.trivial = bool(closers)
    return lemma.trivial


def dedup(lemmas: Sequence[ExtractedLemma]) -> list[ExtractedLemma]:
    """Drop lemmas whose canonical statement repeats an earlier one."""
    seen: set[str] = set()
    unique: list[ExtractedLemma] = []
    for lemma in lemmas:
        key = canonical_statement(lemma.statement_text)
        if key in seen:
            logger.debug("Dropping duplicate statement %s", lemma.id)
            continue
        seen.add(key)
        unique.append(lemma)
    return unique


@dataclass
class DecompositionReport:
    """Per-rule candidate, verified and exported counts for one theorem."""

    source: str
    n: int
    k: int
    candidates: dict[str, int] = field(default_factory=dict)
    verified: dict[str, int] = field(default_factory=dict)
    exported: dict[str, int] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)
    bounds: dict[str, int] = field(default_factory=dict)
    notices: list[str] = field(default_factory=list)

    def count(self, rule: Rule, lemmas: Sequence[ExtractedLemma], kind: str) -> None:
        getattr(self, kind)[rule.value] = sum(1 for lemma in lemmas if lemma.rule is rule)

    @property
    def total_candidates(self) -> int:
        return sum(self.candidates.values())

    @property
    def total_verified(self) -> int:
        return sum(self.verified.values())

    @property
    def total_exported(self) -> int:
        return sum(self.exported.values())

    def to_dict(self) -> dict[str, Any]:
        data = asdict(self)
        data["totals"] = {
            "candidates": self.total_candidates,
            "verified": self.total_verified,
            "exported": self.total_exported,
        }
        return data
