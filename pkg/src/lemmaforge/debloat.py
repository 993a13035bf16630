"""Proof de-bloating: greedy removal of lines a proof does not need."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

from .errors import DebloatError, OracleTimeout, WorkerCrashed
from .repl import Oracle, OracleRequest, summarize_errors
from .script import LineKind, block_end, parse_body, parse_header, render_declaration
from .statements import collapse_whitespace, rename_identifiers

logger = logging.getLogger(__name__)


@dataclass
class DebloatResult:
    original_proof: str
    minimized_proof: str
    removed_line_indices: list[int]
    original_length: int
    minimized_length: int
    annotated_proof: str = ""
    substitutions: dict[str, str] = field(default_factory=dict)
    passes: int = 0
    trials: int = 0


class _Trials:
    """Verification of candidate bodies against one fixed statement."""

    def __init__(self, statement_text: str, preamble: str, oracle: Oracle, timeout_s: float) -> None:
        self.statement_text = statement_text
        self.preamble = preamble
        self.oracle = oracle
        self.timeout_s = timeout_s
        self.count = 0

    def proves(self, lines: Sequence[str]) -> bool:
        self.count += 1
        source = render_declaration(self.statement_text, list(lines), self.preamble)
        try:
            return self.oracle.verify(OracleRequest(source_text=source, timeout_s=self.timeout_s)).proved
        except (OracleTimeout, WorkerCrashed) as e:
            logger.debug("Trial skipped: %s", e)
            return False


def _hypothesis_types(statement_text: str) -> dict[str, str]:
    _, _, binders, _ = parse_header(statement_text)
    return {collapse_whitespace(b.type_text): b.name for b in binders}


def _annotate(original: Sequence[str], kept: dict[int, str]) -> str:
    out: list[str] = []
    for index, text in enumerate(original):
        if index in kept:
            out.append(kept[index])
        elif text.strip():
            indent = len(text) - len(text.lstrip())
            out.append(" " * indent + "-- " + text.strip())
        else:
            out.append(text)
    return "\n".join(out)


def debloat(
    statement_text: str,
    proof: str,
    oracle: Oracle,
    preamble: str = "",
    timeout_s: float = 60.0,
) -> DebloatResult:
    """Remove every line (or balanced block) whose removal keeps the proof verifying.

    Lines are tried last to first; each accepted removal is kept and the
    passes repeat until one removes nothing. A removed `have` restating a
    hypothesis of the statement is replaced by that hypothesis' name.

    Args:
        statement_text: Theorem header without `:= by`
        proof: Tactic body
        oracle: Verifier
        preamble: Imports and opens the statement needs

    Returns:
        DebloatResult; the minimized proof verifies

    Raises:
        DebloatError: the input proof does not verify
    """
    original = proof.rstrip("\n").split("\n")
    trials = _Trials(statement_text, preamble, oracle, timeout_s)
    try:
        check = oracle.verify(OracleRequest(
            source_text=render_declaration(statement_text, original, preamble),
            timeout_s=timeout_s,
        ))
    except (OracleTimeout, WorkerCrashed) as e:
        raise DebloatError(f"proof could not be checked: {e}") from e
    if not check.proved:
        raise DebloatError(f"proof does not verify ({check.status.value}):\n{summarize_errors(check)}")

    restated = _hypothesis_types(statement_text)
    substitutions: dict[str, str] = {}
    current: list[tuple[int, str]] = list(enumerate(original))
    passes = 0

    while True:
        passes += 1
        removed_this_pass = False
        i = len(current) - 1
        while i >= 0:
            body = parse_body([text for _, text in current])
            line = body[i]
            if not line.counted:
                i -= 1
                continue
            end = block_end(body, i)
            kept = current[:i] + current[end:]

            if trials.proves([text for _, text in kept]):
                current = kept
                removed_this_pass = True
            elif line.kind is LineKind.HAVE_INTRO and line.introduced is not None:
                name, type_text = line.introduced
                original_name = restated.get(collapse_whitespace(type_text))
                if original_name and original_name != name:
                    mapping = {name: original_name}
                    renamed = current[:i] + [
                        (index, rename_identifiers(text, mapping)) for index, text in current[end:]
                    ]
                    if trials.proves([text for _, text in renamed]):
                        current = renamed
                        substitutions[name] = original_name
                        removed_this_pass = True
            i = min(i, len(current)) - 1

        if not removed_this_pass:
            break

    minimized = [text for _, text in current]
    kept_indices = {index: text for index, text in current}
    removed = [index for index, text in enumerate(original) if index not in kept_indices and text.strip()]
    result = DebloatResult(
        original_proof="\n".join(original),
        minimized_proof="\n".join(minimized),
        removed_line_indices=removed,
        original_length=sum(1 for line in parse_body(original) if line.counted),
        minimized_length=sum(1 for line in parse_body(minimized) if line.counted),
        annotated_proof=_annotate(original, kept_indices),
        substitutions=substitutions,
        passes=passes,
        trials=trials.count,
    )
    logger.info(
        "Debloated %d -> %d line(s) in %d pass(es), %d trial(s)",
        result.original_length, result.minimized_length, passes, trials.count,
    )
    return result


def debloat_many(
    items: Sequence[tuple[str, str, str]],
    oracle: Oracle,
    timeout_s: float = 60.0,
    in_flight: int = 4,
) -> list[DebloatResult | DebloatError]:
    """Debloat several (statement, proof, preamble) triples concurrently.

    Trials within one proof stay sequential; results keep input order.
    """
    def run(item: tuple[str, str, str]) -> DebloatResult | DebloatError:
        statement_text, proof, preamble = item
        try:
            return debloat(statement_text, proof, oracle, preamble, timeout_s)
        except DebloatError as e:
            return e

    with ThreadPoolExecutor(max_workers=max(1, in_flight)) as executor:
        return list(executor.map(run, items))
