"""Error-taxonomy labels for evaluation attempts.

Automatic labels come from the oracle verdict and its diagnostics; judgement
calls (wrong approach, wrong implementation, natural-language grading) only
come from manual label files. Labels of a run live in
`runs/<run_id>/labels.jsonl`, one ErrorLabelSet per attempt.
"""

from __future__ import annotations

import csv
import logging
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Iterable

from pydantic import BaseModel, Field, model_validator

from .dataset import atomic_write
from .errors import IntegrityError, LemmaforgeError, UnknownAttemptId
from .harness import EvalAttempt, RunStore
from .repl import Oracle, OracleRequest, Severity, Status

logger = logging.getLogger(__name__)

LABELS_FILE = "labels.jsonl"

ERROR_FLAGS = ("hallucination", "wrong_approach", "wrong_implementation", "incomplete", "minor_error")
AUTO_FLAGS = ("no_error", "hallucination", "incomplete", "minor_error")
MANUAL_ONLY_FLAGS = ("wrong_approach", "wrong_implementation", "nl_correct", "nl_lean_match")
FLAGS = ("no_error", *ERROR_FLAGS, "nl_correct", "nl_lean_match")

UNKNOWN_NAME_RE = re.compile(r"unknown (?:identifier|constant) '([^']+)'")
UNKNOWN_TACTIC_RE = re.compile(r"unknown tactic")
MINOR_ERROR_PATTERNS = (
    re.compile(r"function expected"),
    re.compile(r"too many (?:explicit )?arguments"),
    re.compile(r"application type mismatch"),
    re.compile(r"type mismatch"),
    re.compile(r"failed to unify"),
)
LOCAL_NAME_RE = re.compile(
    r"\b(?:have|let|set|obtain|rcases|cases'|induction'|intro|intros|rintro|fun|with|generalize)\b"
    r"([^:=\n]*)"
)
NAME_TOKEN_RE = re.compile(r"[A-Za-z_][\w.'!?]*")

TRUE_VALUES = {"1", "true", "yes", "y", "t"}
FALSE_VALUES = {"0", "false", "no", "n", "f"}


class Provenance(str, Enum):
    AUTO = "auto"
    MANUAL = "manual"
    MANUAL_PENDING = "manual-pending"


class LabelChange(BaseModel):
    flag: str
    value: bool | None
    previous: bool | None
    provenance: Provenance
    previous_provenance: Provenance | None = None
    annotator: str = ""
    note: str = ""


class ErrorLabelSet(BaseModel):
    """Taxonomy flags of one attempt, with the provenance of each flag."""

    attempt_id: str
    lemma_id: str = ""
    no_error: bool = False
    hallucination: bool = False
    wrong_approach: bool | None = None
    wrong_implementation: bool | None = None
    incomplete: bool = False
    minor_error: bool = False
    nl_correct: bool | None = None
    nl_lean_match: bool | None = None
    provenance: dict[str, Provenance] = Field(default_factory=dict)
    history: list[LabelChange] = Field(default_factory=list)

    @model_validator(mode="after")
    def _no_error_exclusive(self) -> ErrorLabelSet:
        if self.no_error and self.error_types:
            raise ValueError(f"{self.attempt_id}: no_error together with {', '.join(self.error_types)}")
        return self

    @property
    def error_types(self) -> list[str]:
        return [flag for flag in ERROR_FLAGS if getattr(self, flag)]


# --- known-name index ---


NAME_DUMP_COMMAND = """\
open Lean Elab Command in
#eval show CommandElabM Unit from do
  let env ← getEnv
  let names := env.constants.fold (init := #[]) fun acc n _ =>
    if n.isInternal then acc else acc.push n.toString
  logInfo (String.intercalate "\\n" (names.qsort (· < ·)).toList)
"""


@dataclass
class NameIndex:
    """Sorted set of constant names known to a Lean environment."""

    names: frozenset[str] = frozenset()
    lean_version: str = ""
    created_at: str = ""
    _suffixes: set[str] = field(default_factory=set, repr=False)

    def __post_init__(self) -> None:
        for name in self.names:
            parts = name.split(".")
            for i in range(1, len(parts)):
                self._suffixes.add(".".join(parts[i:]))

    def __contains__(self, name: object) -> bool:
        return isinstance(name, str) and (name in self.names or name in self._suffixes)

    def __len__(self) -> int:
        return len(self.names)

    def save(self, path: Path) -> None:
        header = f"# lean_version={self.lean_version} created_at={self.created_at}\n"
        atomic_write(path, header + "".join(f"{name}\n" for name in sorted(self.names)))

    @classmethod
    def load(cls, path: Path, expected_version: str | None = None) -> NameIndex:
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except OSError as e:
            raise LemmaforgeError(f"cannot read name index {path}: {e}") from e

        meta: dict[str, str] = {}
        if lines and lines[0].startswith("#"):
            for field_text in lines.pop(0).lstrip("# ").split():
                key, _, value = field_text.partition("=")
                meta[key] = value
        index = cls(
            names=frozenset(line.strip() for line in lines if line.strip()),
            lean_version=meta.get("lean_version", ""),
            created_at=meta.get("created_at", ""),
        )
        if expected_version and index.lean_version != expected_version:
            logger.warning(
                "Name index %s was built for Lean %s, toolchain is %s; rebuild with `lemmaforge index build`",
                path, index.lean_version or "?", expected_version,
            )
        return index


def build_name_index(
    oracle: Oracle,
    lean_version: str,
    preamble: str = "import Mathlib\n",
    timeout_s: float = 600.0,
) -> NameIndex:
    """Enumerate the environment's constants through the oracle."""
    result = oracle.verify(OracleRequest(source_text=preamble + NAME_DUMP_COMMAND, timeout_s=timeout_s))
    if result.errors or result.status in (Status.TIMEOUT, Status.CRASHED):
        raise LemmaforgeError(f"cannot enumerate constants ({result.status.value})")

    names = {
        line.strip()
        for message in result.messages if message.severity is Severity.INFO
        for line in message.text.splitlines() if line.strip()
    }
    logger.info("Indexed %d constant names", len(names))
    return NameIndex(
        names=frozenset(names),
        lean_version=lean_version,
        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )


# --- automatic labels ---


def local_names(proof: str) -> set[str]:
    """Names a proof introduces itself (hypotheses, bound variables, cases)."""
    names: set[str] = set()
    for match in LOCAL_NAME_RE.finditer(proof):
        names.update(NAME_TOKEN_RE.findall(match.group(1)))
    return names


def auto_label(attempt: EvalAttempt, name_index: NameIndex | Iterable[str]) -> ErrorLabelSet:
    """Labels derivable from the verdict alone.

    Args:
        attempt: Attempt with its oracle verdict
        name_index: Names known to the library environment

    Returns:
        Label set with automatic flags and pending manual ones
    """
    index = name_index if isinstance(name_index, NameIndex) else NameIndex(frozenset(name_index))
    labels = ErrorLabelSet(attempt_id=attempt.attempt_id, lemma_id=attempt.lemma_id)
    for flag in AUTO_FLAGS:
        labels.provenance[flag] = Provenance.AUTO
    for flag in MANUAL_ONLY_FLAGS:
        labels.provenance[flag] = Provenance.MANUAL_PENDING

    verdict = attempt.verdict
    if verdict.proved:
        labels.no_error = True
        return labels

    labels.incomplete = verdict.status is Status.INCOMPLETE
    local = local_names(attempt.extracted_proof or "")
    for diagnostic in verdict.errors:
        for name in UNKNOWN_NAME_RE.findall(diagnostic.text):
            name = name.replace("«", "").replace("»", "")
            if name not in index and name not in local:
                labels.hallucination = True
        if UNKNOWN_TACTIC_RE.search(diagnostic.text):
            labels.hallucination = True
        if any(pattern.search(diagnostic.text) for pattern in MINOR_ERROR_PATTERNS):
            labels.minor_error = True
    return labels


def label_run(store: RunStore, name_index: NameIndex) -> list[ErrorLabelSet]:
    """Auto-label every attempt of a run, keeping manual flags already recorded."""
    existing = {labels.attempt_id: labels for labels in load_labels(store)}
    result: list[ErrorLabelSet] = []
    for attempt in store.attempts():
        fresh = auto_label(attempt, name_index)
        previous = existing.get(attempt.attempt_id)
        if previous is not None:
            for flag, provenance in previous.provenance.items():
                if provenance is Provenance.MANUAL:
                    setattr(fresh, flag, getattr(previous, flag))
                    fresh.provenance[flag] = Provenance.MANUAL
            fresh.history = previous.history
        result.append(fresh)
    save_labels(store, result)
    return result


def load_labels(store: RunStore) -> list[ErrorLabelSet]:
    path = store.root / LABELS_FILE
    if not path.exists():
        return []
    return [
        ErrorLabelSet.model_validate_json(line)
        for line in path.read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]


def save_labels(store: RunStore, labels: Iterable[ErrorLabelSet]) -> None:
    ordered = sorted(labels, key=lambda item: item.attempt_id)
    atomic_write(store.root / LABELS_FILE, "".join(item.model_dump_json() + "\n" for item in ordered))


# --- manual labels ---


@dataclass
class LabelRejection:
    row: int
    attempt_id: str
    flag: str
    reason: str
    kind: str


@dataclass
class IngestReport:
    applied: int = 0
    rejected: list[LabelRejection] = field(default_factory=list)


def _parse_value(text: str) -> bool:
    value = text.strip().lower()
    if value in TRUE_VALUES:
        return True
    if value in FALSE_VALUES:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def apply_manual_label(
    labels: ErrorLabelSet,
    attempt: EvalAttempt,
    flag: str,
    value: bool,
    annotator: str = "",
    note: str = "",
) -> None:
    """Set one flag manually; the oracle verdict stays authoritative for no_error.

    Raises:
        IntegrityError: the label contradicts the verdict
        ValueError: unknown flag
    """
    if flag not in FLAGS:
        raise ValueError(f"unknown flag {flag!r}")
    proved = attempt.verdict.proved
    if flag == "no_error" and value != proved:
        raise IntegrityError(
            f"{attempt.attempt_id}: no_error={value} contradicts verdict {attempt.verdict.status.value}"
        )
    if flag in ERROR_FLAGS and value and proved:
        raise IntegrityError(f"{attempt.attempt_id}: {flag} set on a proved attempt")

    previous = getattr(labels, flag)
    previous_provenance = labels.provenance.get(flag)
    setattr(labels, flag, value)
    labels.provenance[flag] = Provenance.MANUAL
    labels.history.append(LabelChange(
        flag=flag,
        value=value,
        previous=previous,
        provenance=Provenance.MANUAL,
        previous_provenance=previous_provenance,
        annotator=annotator,
        note=note,
    ))


def ingest_manual_labels(
    labels_file: Path,
    store: RunStore,
    name_index: NameIndex | None = None,
) -> IngestReport:
    """Merge a delimiter-separated label file into the run's labels.

    Columns: attempt_id, flag, value, annotator, note. Comma-separated for
    `.csv` files, tab-separated otherwise. Rejected rows are reported and
    the remaining rows still apply.
    """
    report = IngestReport()
    text = labels_file.read_text(encoding="utf-8")
    if not text.strip():
        return report

    attempts = {attempt.attempt_id: attempt for attempt in store.attempts()}
    labels = {item.attempt_id: item for item in load_labels(store)}
    index = name_index or NameIndex()
    delimiter = "," if labels_file.suffix.lower() == ".csv" else "\t"

    reader = csv.DictReader(text.splitlines(), delimiter=delimiter)
    for row_number, row in enumerate(reader, start=2):
        attempt_key = (row.get("attempt_id") or "").strip()
        flag = (row.get("flag") or "").strip()
        try:
            attempt = attempts.get(attempt_key)
            if attempt is None:
                raise UnknownAttemptId(f"no attempt {attempt_key!r} in run {store.run_id}")
            value = _parse_value(row.get("value") or "")
            current = labels.get(attempt_key) or auto_label(attempt, index)
            apply_manual_label(
                current, attempt, flag, value,
                annotator=(row.get("annotator") or "").strip(),
                note=(row.get("note") or "").strip(),
            )
            labels[attempt_key] = current
            report.applied += 1
        except (LemmaforgeError, ValueError) as e:
            logger.warning("%s row %d rejected: %s", labels_file.name, row_number, e)
            report.rejected.append(LabelRejection(
                row=row_number,
                attempt_id=attempt_key,
                flag=flag,
                reason=str(e),
                kind=type(e).__name__,
            ))

    if report.applied:
        save_labels(store, labels.values())
    logger.info("Applied %d manual label(s), rejected %d", report.applied, len(report.rejected))
    return report


def audit_labels(store: RunStore) -> list[str]:
    """Check no_error against the verdict for every labelled attempt."""
    attempts = {attempt.attempt_id: attempt for attempt in store.attempts()}
    problems: list[str] = []
    for labels in load_labels(store):
        attempt = attempts.get(labels.attempt_id)
        if attempt is None:
            problems.append(f"{labels.attempt_id}: label without attempt")
        elif labels.no_error != attempt.verdict.proved:
            problems.append(
                f"{labels.attempt_id}: no_error={labels.no_error} but verdict is {attempt.verdict.status.value}"
            )
    return problems
