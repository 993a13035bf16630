"""Lemma dataset format: per-lemma Lean files plus a JSONL manifest.

    <dataset>/lemmas/<source_problem>/<lemma_id>.lean
    <dataset>/manifest.jsonl           one ManifestEntry per line
    <dataset>/manifest.summary.json    metadata, per-problem counts and line totals
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from . import __version__
from .decompose import ExtractedLemma, Rule
from .errors import (
    DatasetIoError,
    EmptyManifest,
    LemmaforgeError,
    NotFound,
    ParseFailure,
    TermModeProof,
    UnverifiedLemma,
)
from .progress import ProgressTracker
from .repl import Oracle, OracleRequest
from .script import (
    find_declarations,
    locate_declaration,
    parse_theorem,
    reindent,
    term_as_tactic,
    text_proof_length,
)
from .stats import length_stats

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.jsonl"
SUMMARY_FILE = "manifest.summary.json"
LEMMAS_DIR = "lemmas"
DEFAULT_GLOB = "**/*.lean"
UNKNOWN_PROBLEM = "unknown"


class ManifestEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lemma_id: str
    source_problem: str
    topic: str = ""
    file: str
    proof_length: int = Field(ge=1)
    rule: str
    trivial: bool = False
    verified: bool = False


class ImportFailure(BaseModel):
    file: str
    error: str


class Manifest(BaseModel):
    dataset_name: str
    lean_version: str = "4.17.0"
    entries: list[ManifestEntry] = Field(default_factory=list)
    created_at: str = ""
    tool_version: str = __version__
    license: str = ""
    failures: list[ImportFailure] = Field(default_factory=list)

    @model_validator(mode="after")
    def _unique_ids(self) -> Manifest:
        ids = [e.lemma_id for e in self.entries]
        if len(ids) != len(set(ids)):
            duplicates = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate lemma ids: {', '.join(duplicates)}")
        return self

    def entry(self, lemma_id: str) -> ManifestEntry:
        for entry in self.entries:
            if entry.lemma_id == lemma_id:
                return entry
        raise NotFound(f"lemma {lemma_id!r} is not in dataset {self.dataset_name!r}")

    def by_problem(self) -> dict[str, list[ManifestEntry]]:
        groups: dict[str, list[ManifestEntry]] = defaultdict(list)
        for entry in self.entries:
            groups[entry.source_problem].append(entry)
        return dict(sorted(groups.items()))


# --- reading and writing ---


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except OSError as e:
        Path(tmp).unlink(missing_ok=True)
        raise DatasetIoError(f"cannot write {path}: {e}") from e


def manifest_summary(manifest: Manifest) -> dict[str, Any]:
    problems = {
        problem: {
            "lemmas": len(entries),
            "total_lines": sum(e.proof_length for e in entries),
        }
        for problem, entries in manifest.by_problem().items()
    }
    return {
        "dataset_name": manifest.dataset_name,
        "lean_version": manifest.lean_version,
        "created_at": manifest.created_at,
        "tool_version": manifest.tool_version,
        "license": manifest.license,
        "problems": problems,
        "total_lemmas": len(manifest.entries),
        "total_lines": sum(e.proof_length for e in manifest.entries),
        "failures": [f.model_dump() for f in manifest.failures],
    }


def write_manifest(manifest: Manifest, out_dir: Path) -> None:
    """Write manifest.jsonl and manifest.summary.json atomically."""
    entries = sorted(manifest.entries, key=lambda e: (e.source_problem, e.lemma_id))
    atomic_write(
        out_dir / MANIFEST_FILE,
        "".join(e.model_dump_json() + "\n" for e in entries),
    )
    atomic_write(
        out_dir / SUMMARY_FILE,
        json.dumps(manifest_summary(manifest), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
    )


def load_manifest(dataset_dir: Path) -> Manifest:
    """Load a dataset's manifest.

    Raises:
        DatasetIoError: the manifest is missing or malformed
    """
    path = dataset_dir / MANIFEST_FILE
    if not path.exists():
        raise DatasetIoError(f"no {MANIFEST_FILE} in {dataset_dir}")

    try:
        entries = [
            ManifestEntry.model_validate_json(line)
            for line in path.read_text(encoding="utf-8").splitlines()
            if line.strip()
        ]
        meta: dict[str, Any] = {}
        summary = dataset_dir / SUMMARY_FILE
        if summary.exists():
            meta = json.loads(summary.read_text(encoding="utf-8"))
        return Manifest(
            dataset_name=meta.get("dataset_name", dataset_dir.name),
            lean_version=meta.get("lean_version", "4.17.0"),
            created_at=meta.get("created_at", ""),
            tool_version=meta.get("tool_version", __version__),
            license=meta.get("license", ""),
            entries=entries,
        )
    except (ValidationError, ValueError, OSError) as e:
        raise DatasetIoError(f"invalid manifest in {dataset_dir}: {e}") from e


def main_declaration(source_text: str, preferred: str | None = None) -> str:
    """Name of the lemma a dataset file states: `preferred` if declared, else the last one."""
    names = find_declarations(source_text)
    if not names:
        raise ParseFailure("no theorem or lemma declaration")
    if preferred in names:
        return preferred
    return names[-1]


def read_lemma_text(
    source_text: str,
    lemma_id: str,
) -> tuple[str, str, str, str]:
    """Split a lemma file into (declaration name, preamble, statement, tactic proof)."""
    name = main_declaration(source_text, lemma_id)
    match, assign = locate_declaration(source_text, name)
    preamble = source_text[:match.start()]
    statement = source_text[match.start():assign].rstrip()
    try:
        script = parse_theorem(source_text, name)
    except TermModeProof as e:
        return name, preamble, statement, "\n".join(term_as_tactic(e.proof_text))
    return name, preamble, statement, "\n".join(reindent(script.body, 0))


def read_lemma(dataset_dir: Path, entry: ManifestEntry) -> ExtractedLemma:
    """Load a manifest entry's lemma file."""
    path = dataset_dir / entry.file
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise DatasetIoError(f"cannot read {path}: {e}") from e

    _, preamble, statement, proof = read_lemma_text(text, entry.lemma_id)
    rule = Rule(entry.rule) if entry.rule in Rule._value2member_map_ else Rule.IMPORTED
    return ExtractedLemma(
        id=entry.lemma_id,
        rule=rule,
        param=0,
        statement_text=statement,
        proof_text=proof,
        preamble=preamble,
        source=entry.file,
        source_problem=entry.source_problem,
        verified=entry.verified,
        trivial=entry.trivial,
        proof_length=entry.proof_length,
    )


# --- operations ---


def export_dataset(
    lemmas: Sequence[ExtractedLemma],
    out_dir: Path,
    dataset_name: str | None = None,
    lean_version: str = "4.17.0",
    topics: dict[str, str] | None = None,
    allow_trivial: bool = False,
) -> Manifest:
    """Write lemma files and the manifest; entries already in `out_dir` are kept.

    Raises:
        UnverifiedLemma: a lemma is unverified, or trivial without allow_trivial
    """
    topics = topics or {}
    for lemma in lemmas:
        if not lemma.verified:
            raise UnverifiedLemma(f"{lemma.id}: refusing to export an unverified lemma")
        if lemma.trivial and not allow_trivial:
            raise UnverifiedLemma(f"{lemma.id}: refusing to export a trivial lemma")

    existing: dict[str, ManifestEntry] = {}
    if (out_dir / MANIFEST_FILE).exists():
        existing = {e.lemma_id: e for e in load_manifest(out_dir).entries}

    for lemma in sorted(lemmas, key=lambda item: (item.source_problem, item.id)):
        problem = lemma.source_problem or UNKNOWN_PROBLEM
        relative = Path(LEMMAS_DIR) / problem / f"{lemma.id}.lean"
        atomic_write(out_dir / relative, lemma.render())
        existing[lemma.id] = ManifestEntry(
            lemma_id=lemma.id,
            source_problem=problem,
            topic=topics.get(problem, ""),
            file=relative.as_posix(),
            proof_length=lemma.proof_length,
            rule=lemma.rule.value,
            trivial=bool(lemma.trivial),
            verified=lemma.verified,
        )

    manifest = Manifest(
        dataset_name=dataset_name or out_dir.name,
        lean_version=lean_version,
        entries=sorted(existing.values(), key=lambda e: (e.source_problem, e.lemma_id)),
        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
    )
    write_manifest(manifest, out_dir)
    logger.info("Exported %d lemma(s) to %s", len(lemmas), out_dir)
    return manifest


def _source_problem(relative: Path) -> str:
    if len(relative.parts) > 1:
        return relative.parent.name
    return UNKNOWN_PROBLEM


def _unique_id(stem: str, problem: str, taken: set[str]) -> str:
    for candidate in (stem, f"{problem}/{stem}"):
        if candidate not in taken:
            return candidate
    suffix = 2
    while f"{problem}/{stem}-{suffix}" in taken:
        suffix += 1
    return f"{problem}/{stem}-{suffix}"


def _file_proof_length(text: str, name: str) -> int:
    try:
        return parse_theorem(text, name).n
    except TermModeProof as e:
        return text_proof_length(e.proof_text)


def import_dataset(
    directory: Path,
    verify: bool = False,
    oracle: Oracle | None = None,
    glob: str = DEFAULT_GLOB,
    timeout_s: float = 600.0,
    tracker: ProgressTracker | None = None,
) -> Manifest:
    """Build a manifest from the `.lean` files of a directory.

    Files that fail to parse are recorded as failures and left out. An
    existing manifest contributes topics, rules and triviality flags.
    """
    if not directory.is_dir():
        raise DatasetIoError(f"not a directory: {directory}")
    if verify and oracle is None:
        raise ValueError("verification requested without an oracle")

    known: dict[str, ManifestEntry] = {}
    if (directory / MANIFEST_FILE).exists():
        known = {e.file: e for e in load_manifest(directory).entries}

    files = sorted(p for p in directory.glob(glob) if p.is_file())
    if tracker:
        tracker.start_stage(f"Parsing {len(files)} file(s)", len(files))

    entries: list[ManifestEntry] = []
    texts: list[str] = []
    failures: list[ImportFailure] = []
    taken: set[str] = {e.lemma_id for e in known.values()}
    for path in files:
        relative = path.relative_to(directory)
        file = relative.as_posix()
        try:
            text = path.read_text(encoding="utf-8")
            name = main_declaration(text, path.stem)
            length = _file_proof_length(text, name)
            if length < 1:
                raise ParseFailure("empty proof")
        except (LemmaforgeError, UnicodeDecodeError, OSError) as e:
            logger.warning("Skipping %s: %s", file, e)
            failures.append(ImportFailure(file=file, error=f"{type(e).__name__}: {e}"))
            if tracker:
                tracker.advance(file=file, status="parse_failure")
            continue

        problem = _source_problem(relative)
        previous = known.get(file)
        lemma_id = previous.lemma_id if previous else _unique_id(path.stem, problem, taken)
        taken.add(lemma_id)
        entries.append(ManifestEntry(
            lemma_id=lemma_id,
            source_problem=previous.source_problem if previous else problem,
            topic=previous.topic if previous else "",
            file=file,
            proof_length=length,
            rule=previous.rule if previous else Rule.IMPORTED.value,
            trivial=previous.trivial if previous else False,
            verified=previous.verified if previous else False,
        ))
        texts.append(text)
        if tracker:
            tracker.advance(file=file, status="parsed")

    if verify:
        assert oracle is not None
        if tracker:
            tracker.start_stage(f"Verifying {len(entries)} lemma(s)", len(entries))
        results = oracle.verify_many([
            OracleRequest(source_text=text, timeout_s=timeout_s) for text in texts
        ])
        for entry, result in zip(entries, results):
            entry.verified = result.proved
            if not result.proved:
                failures.append(ImportFailure(file=entry.file, error=f"verification: {result.status.value}"))
            if tracker:
                tracker.advance(lemma_id=entry.lemma_id, status=result.status.value)

    manifest = Manifest(
        dataset_name=directory.name,
        entries=entries,
        created_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
        failures=failures,
    )
    logger.info(
        "Imported %d lemma(s) from %d problem(s); %d failure(s)",
        len(entries), len(manifest.by_problem()), len(failures),
    )
    return manifest


@dataclass
class ProblemStats:
    problem: str
    count: int
    mean: float
    max: int
    min: int
    std: float
    total_lines: int


TOTAL_ROW = "total"


def _problem_stats(problem: str, lengths: Iterable[int]) -> ProblemStats:
    stats = length_stats(list(lengths))
    return ProblemStats(
        problem=problem,
        count=stats.count,
        mean=stats.mean,
        max=stats.max,
        min=stats.min,
        std=stats.std,
        total_lines=sum(stats.values),
    )


def dataset_stats(manifest: Manifest) -> list[ProblemStats]:
    """Proof-length statistics per source problem, followed by a totals row.

    Raises:
        EmptyManifest: the manifest has no entries
    """
    if not manifest.entries:
        raise EmptyManifest(f"dataset {manifest.dataset_name!r} has no entries")
    rows = [
        _problem_stats(problem, (e.proof_length for e in entries))
        for problem, entries in manifest.by_problem().items()
    ]
    rows.append(_problem_stats(TOTAL_ROW, (e.proof_length for e in manifest.entries)))
    return rows


def audit_dataset(
    dataset_dir: Path,
    oracle: Oracle | None = None,
    timeout_s: float = 600.0,
) -> list[str]:
    """Re-check manifest/filesystem coherence; returns one line per problem found.

    With an oracle, entries marked verified are re-verified as well.
    """
    manifest = load_manifest(dataset_dir)
    problems: list[str] = []
    texts: dict[str, str] = {}
    for entry in manifest.entries:
        path = dataset_dir / entry.file
        if not path.is_file():
            problems.append(f"{entry.lemma_id}: missing file {entry.file}")
            continue
        try:
            text = path.read_text(encoding="utf-8")
            length = _file_proof_length(text, main_declaration(text, entry.lemma_id))
        except (LemmaforgeError, UnicodeDecodeError) as e:
            problems.append(f"{entry.lemma_id}: does not parse ({e})")
            continue
        if length != entry.proof_length:
            problems.append(
                f"{entry.lemma_id}: proof_length {entry.proof_length} in manifest, {length} in file"
            )
        if entry.verified:
            texts[entry.lemma_id] = text

    if oracle is not None and texts:
        ids = sorted(texts)
        results = oracle.verify_many([
            OracleRequest(source_text=texts[i], timeout_s=timeout_s) for i in ids
        ])
        for lemma_id, result in zip(ids, results):
            if not result.proved:
                problems.append(f"{lemma_id}: marked verified but oracle says {result.status.value}")

    return problems

