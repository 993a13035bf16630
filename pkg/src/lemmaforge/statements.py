"""Lemma statement synthesis from proof states, and statement canonicalization."""

from __future__ import annotations

import re
from typing import Iterable, Sequence

from .errors import MalformedHeader
from .repl import ProofState
from .script import ANONYMOUS, Binder, BinderKind, parse_header

INACCESSIBLE = "✝"
GRANT_NAME = "hgrant"

METAVARIABLE_RE = re.compile(r"\?[\w.]")
WHITESPACE_RE = re.compile(r"\s+")

Hypothesis = tuple[str, str]


def binders_from_hypotheses(hypotheses: Sequence[Hypothesis]) -> tuple[Binder, ...] | None:
    """Render state hypotheses as theorem binders, in state order.

    Returns None when the state cannot be stated: inaccessible names (other
    than anonymous instances), metavariables, let-bound values or repeated
    names.
    """
    binders: list[Binder] = []
    seen: set[str] = set()
    for name, type_text in hypotheses:
        if METAVARIABLE_RE.search(type_text) or ":=" in type_text:
            return None
        if INACCESSIBLE in name:
            if name.startswith("inst"):
                binders.append(Binder(ANONYMOUS, type_text, BinderKind.INSTANCE))
                continue
            return None
        if name in seen:
            return None
        seen.add(name)
        binders.append(Binder(name, type_text))
    return tuple(binders)


def single_goal(state: ProofState | None) -> str | None:
    """The goal of a state with exactly one goal."""
    if state is None or len(state.goals) != 1:
        return None
    goal = state.goals[0]
    if METAVARIABLE_RE.search(goal):
        return None
    return goal


def new_hypotheses(before: Sequence[Hypothesis], after: Sequence[Hypothesis]) -> list[Hypothesis]:
    """Hypotheses of `after` that are not present, with the same type, in `before`."""
    known = set(before)
    return [h for h in after if h not in known]


def fresh_name(base: str, taken: Iterable[str]) -> str:
    taken = set(taken)
    if base not in taken:
        return base
    i = 1
    while f"{base}{i}" in taken:
        i += 1
    return f"{base}{i}"


def grant_type(hypotheses: Sequence[Hypothesis], goal: str) -> str:
    """Type of a granted state change: the new hypotheses imply the goal.

    Premises are curried binders so that later hypotheses and the goal may
    mention earlier ones. No new hypotheses means the bare goal.
    """
    if not hypotheses:
        return goal
    premises = " ".join(f"({name} : {type_text})" for name, type_text in hypotheses)
    return f"∀ {premises}, {goal}"


def grant_closing(grant: str, hypotheses: Sequence[Hypothesis]) -> str:
    """The tactic that closes a goal from the granted hypothesis."""
    args = " ".join(name for name, _ in hypotheses)
    return f"exact {grant} {args}" if args else f"exact {grant}"


def grant_binder(
    before: Sequence[Hypothesis],
    after: ProofState | None,
    taken: Iterable[str],
) -> tuple[Binder, str] | None:
    """Granted-hypothesis binder and closing tactic for a state change.

    None when the target state is not a single renderable goal.
    """
    goal = single_goal(after)
    if goal is None:
        return None
    assert after is not None
    delta = new_hypotheses(before, after.hypotheses)
    delta_binders = binders_from_hypotheses(delta)
    if delta_binders is None or any(b.kind is BinderKind.INSTANCE for b in delta_binders):
        return None
    name = fresh_name(GRANT_NAME, [*taken, *(n for n, _ in after.hypotheses)])
    return Binder(name, grant_type(delta, goal)), grant_closing(name, delta)


# --- canonical form ---


def collapse_whitespace(text: str) -> str:
    return WHITESPACE_RE.sub(" ", text).strip()


def rename_identifiers(text: str, mapping: dict[str, str]) -> str:
    """Replace whole identifiers; `h` never matches inside `h₁`, `h'` or `x.h`."""
    if not mapping:
        return text
    names = sorted(mapping, key=len, reverse=True)
    pattern = re.compile(r"(?<![\w.'])(" + "|".join(re.escape(n) for n in names) + r")(?![\w'])")
    return pattern.sub(lambda m: mapping[m.group(1)], text)


def canonical_statement(statement_text: str) -> str:
    """Normalized statement for duplicate detection.

    The declaration name is dropped, binder names become positional and
    whitespace is collapsed.
    """
    try:
        _, _, binders, goal = parse_header(statement_text)
    except MalformedHeader:
        return collapse_whitespace(statement_text)

    mapping = {
        b.name: f"_b{i}" for i, b in enumerate(binders) if b.name != ANONYMOUS
    }
    renamed = [
        Binder(mapping.get(b.name, b.name), rename_identifiers(b.type_text, mapping), b.kind)
        for b in binders
    ]
    text = " ".join(b.render() for b in renamed) + " : " + rename_identifiers(goal, mapping)
    return collapse_whitespace(text)
