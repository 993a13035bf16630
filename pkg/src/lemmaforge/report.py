"""Run reports: accuracy, progression, error types, length buckets, histograms.

Each table is written twice under `runs/<run_id>/report/`: a plain-text
rendering (`<table>.txt`) and a JSON document (`<table>.json`). Reports are
computed from persisted files only, so identical run directories give
byte-identical reports.
"""

from __future__ import annotations

import io
import json
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

from rich.console import Console
from rich.table import Table

from .dataset import Manifest, atomic_write
from .harness import EvalAttempt, EvalMode, EvalOutcome, RunStore
from .labels import ERROR_FLAGS, ErrorLabelSet, NameIndex, auto_label, load_labels
from .script import text_proof_length
from .stats import CANONICAL_BUCKETS, accuracy_by_length, bucket_for, pass_at_k

logger = logging.getLogger(__name__)

REPORT_DIR = "report"
TOTAL_ROW = "total"
TABLES = (
    "accuracy_by_problem",
    "progression",
    "error_types",
    "length_buckets",
    "length_histogram",
)


@dataclass
class ReportTable:
    name: str
    title: str
    columns: list[str]
    rows: list[list[Any]]
    data: dict[str, Any]


def _percent(solved: int, total: int) -> float:
    return round(100.0 * solved / total, 1) if total else 0.0


def render_text(table: ReportTable) -> str:
    """Plain-text rendering with a fixed width and no colour."""
    buffer = io.StringIO()
    console = Console(file=buffer, width=120, color_system=None, force_terminal=False, record=True)
    rich_table = Table(title=table.title, show_lines=False)
    for column in table.columns:
        rich_table.add_column(column, justify="left" if column == table.columns[0] else "right")
    for row in table.rows:
        rich_table.add_row(*(f"{cell:.1f}" if isinstance(cell, float) else str(cell) for cell in row))
    console.print(rich_table)
    return console.export_text()


# --- tables ---


def accuracy_table(
    outcomes: Sequence[EvalOutcome],
    manifest: Manifest,
    model_id: str,
) -> ReportTable:
    """Solved lemmas per source problem for one model, with a totals row."""
    solved = {o.lemma_id for o in outcomes if o.solved}
    rows: list[list[Any]] = []
    data: dict[str, Any] = {"model_id": model_id, "problems": {}}
    total_solved = total = 0
    for problem, entries in manifest.by_problem().items():
        evaluated = [e for e in entries if not e.trivial]
        if not evaluated:
            continue
        count = sum(1 for e in evaluated if e.lemma_id in solved)
        rows.append([problem, len(evaluated), count, _percent(count, len(evaluated))])
        data["problems"][problem] = {"lemmas": len(evaluated), "solved": count}
        total_solved += count
        total += len(evaluated)
    rows.append([TOTAL_ROW, total, total_solved, _percent(total_solved, total)])
    data[TOTAL_ROW] = {"lemmas": total, "solved": total_solved}
    return ReportTable(
        name="accuracy_by_problem",
        title=f"Accuracy by problem ({model_id})",
        columns=["problem", "lemmas", "solved", f"{model_id} %"],
        rows=rows,
        data=data,
    )


def feedback_progression(outcomes: Sequence[EvalOutcome], total: int, rounds: int) -> ReportTable:
    """Cumulative solved fraction after each feedback round."""
    rows: list[list[Any]] = []
    series: list[dict[str, Any]] = []
    for round in range(rounds + 1):
        count = sum(
            1 for o in outcomes
            if o.solved and o.solved_at_round is not None and o.solved_at_round <= round
        )
        rows.append([round, count, _percent(count, total)])
        series.append({"round": round, "solved": count, "percent": _percent(count, total)})
    return ReportTable(
        name="progression",
        title="Solved after feedback round",
        columns=["round", "solved", "%"],
        rows=rows,
        data={"mode": EvalMode.FEEDBACK.value, "lemmas": total, "rounds": series},
    )


def pass_at_progression(
    outcomes: Sequence[EvalOutcome],
    attempts: Sequence[EvalAttempt],
    total: int,
    samples_k: int,
) -> ReportTable:
    """Mean unbiased pass@j for j = 1..k over all evaluated lemmas."""
    samples: Counter[str] = Counter()
    correct: Counter[str] = Counter()
    for attempt in attempts:
        samples[attempt.lemma_id] += 1
        if attempt.verdict.proved:
            correct[attempt.lemma_id] += 1

    rows: list[list[Any]] = []
    series: list[dict[str, Any]] = []
    for j in range(1, samples_k + 1):
        score = 0.0
        for outcome in outcomes:
            n = samples[outcome.lemma_id]
            if n == 0:
                continue
            score += pass_at_k(n, correct[outcome.lemma_id], min(j, n))
        percent = round(100.0 * score / total, 1) if total else 0.0
        rows.append([j, percent])
        series.append({"k": j, "percent": percent})
    return ReportTable(
        name="progression",
        title="pass@k",
        columns=["k", "%"],
        rows=rows,
        data={"mode": EvalMode.PASS_AT_K.value, "lemmas": total, "pass_at": series},
    )


def error_type_table(labels: Sequence[ErrorLabelSet]) -> ReportTable:
    """Error-type frequencies over failed attempts, under two conventions.

    per_proof: share of failed attempts carrying the type (a proof with
    several types counts once under each). per_type: share of all error
    flags raised (shares sum to 100).
    """
    failed = [item for item in labels if not item.no_error]
    flags = Counter(flag for item in failed for flag in item.error_types)
    flag_total = sum(flags.values())

    rows: list[list[Any]] = []
    data: dict[str, Any] = {"failed_attempts": len(failed), "flags_raised": flag_total, "types": {}}
    for flag in ERROR_FLAGS:
        count = flags[flag]
        per_proof = _percent(count, len(failed))
        per_type = _percent(count, flag_total)
        pending = sum(1 for item in failed if getattr(item, flag) is None)
        rows.append([flag, count, per_proof, per_type, pending])
        data["types"][flag] = {
            "count": count, "per_proof": per_proof, "per_type": per_type, "unlabelled": pending,
        }
    unlabelled = sum(1 for item in failed if not item.error_types)
    rows.append(["(none detected)", unlabelled, _percent(unlabelled, len(failed)), 0.0, 0])
    data["no_type_detected"] = unlabelled
    return ReportTable(
        name="error_types",
        title="Error types of failed attempts",
        columns=["type", "attempts", "per_proof %", "per_type %", "unlabelled"],
        rows=rows,
        data=data,
    )


def length_bucket_table(outcomes: Sequence[EvalOutcome], manifest: Manifest) -> ReportTable:
    lengths = {e.lemma_id: e.proof_length for e in manifest.entries if not e.trivial}
    solved = {o.lemma_id: o.solved for o in outcomes}
    buckets = accuracy_by_length(solved, lengths)
    rows = [[b.bucket.label, b.total, b.solved, b.percent] for b in buckets]
    return ReportTable(
        name="length_buckets",
        title="Accuracy by dataset proof length",
        columns=["length", "lemmas", "solved", "%"],
        rows=rows,
        data={"buckets": [
            {"bucket": b.bucket.label, "lemmas": b.total, "solved": b.solved, "percent": b.percent}
            for b in buckets
        ]},
    )


def length_histogram(
    outcomes: Sequence[EvalOutcome],
    attempts: Sequence[EvalAttempt],
    manifest: Manifest,
) -> ReportTable:
    """Counts per length bucket: dataset proofs, solved lemmas and the model's correct proofs."""
    solved = {o.lemma_id for o in outcomes if o.solved}
    dataset: Counter[str] = Counter()
    solved_counts: Counter[str] = Counter()
    for entry in manifest.entries:
        if entry.trivial:
            continue
        bucket = bucket_for(entry.proof_length)
        if bucket is None:
            continue
        dataset[bucket.label] += 1
        if entry.lemma_id in solved:
            solved_counts[bucket.label] += 1

    model: Counter[str] = Counter()
    model_lengths: list[int] = []
    for attempt in attempts:
        if attempt.verdict.proved and attempt.extracted_proof:
            length = text_proof_length(attempt.extracted_proof)
            model_lengths.append(length)
            bucket = bucket_for(length)
            if bucket is not None:
                model[bucket.label] += 1

    labels = [bucket.label for bucket in CANONICAL_BUCKETS]
    rows = [[label, dataset[label], solved_counts[label], model[label]] for label in labels]
    return ReportTable(
        name="length_histogram",
        title="Proof length distribution",
        columns=["length", "dataset", "solved (dataset length)", "model proofs"],
        rows=rows,
        data={
            "buckets": labels,
            "dataset": [dataset[label] for label in labels],
            "solved": [solved_counts[label] for label in labels],
            "model_proofs": [model[label] for label in labels],
            "model_proof_lengths": sorted(model_lengths),
        },
    )


# --- report ---


def _labels_for(
    store: RunStore, attempts: Sequence[EvalAttempt], index: NameIndex,
) -> list[ErrorLabelSet]:
    stored = {item.attempt_id: item for item in load_labels(store)}
    return [stored.get(a.attempt_id) or auto_label(a, index) for a in attempts]


def build_report(
    store: RunStore, manifest: Manifest, name_index: NameIndex | None = None,
) -> list[Path]:
    """Write the five report tables of a run; returns the written files.

    Attempts without stored labels are labelled against `name_index`.

    Outcomes are deduplicated by lemma id (last record wins) and attempts
    ordered by id, so a resumed run reports like an uninterrupted one.
    """
    config, _ = store.load_config()
    outcomes = sorted(
        {o.lemma_id: o for o in store.outcomes()}.values(), key=lambda o: o.lemma_id,
    )
    attempts = sorted(
        {a.attempt_id: a for a in store.attempts()}.values(), key=lambda a: a.attempt_id,
    )
    if not outcomes:
        logger.warning("Run %s has no outcomes yet", store.run_id)
    total = sum(1 for e in manifest.entries if not e.trivial)

    if config.mode is EvalMode.PASS_AT_K:
        progression = pass_at_progression(outcomes, attempts, total, config.samples_k)
    else:
        progression = feedback_progression(outcomes, total, config.max_feedback_rounds)
    tables = [
        accuracy_table(outcomes, manifest, config.model_id),
        progression,
        error_type_table(_labels_for(store, attempts, name_index or NameIndex())),
        length_bucket_table(outcomes, manifest),
        length_histogram(outcomes, attempts, manifest),
    ]

    out_dir = store.root / REPORT_DIR
    written: list[Path] = []
    for table in tables:
        text_path = out_dir / f"{table.name}.txt"
        json_path = out_dir / f"{table.name}.json"
        atomic_write(text_path, render_text(table))
        payload = {"table": table.name, "columns": table.columns, "rows": table.rows, **table.data}
        atomic_write(json_path, json.dumps(payload, indent=2, sort_keys=True, ensure_ascii=False) + "\n")
        written.extend([text_path, json_path])
    logger.info("Wrote %d report file(s) to %s", len(written), out_dir)
    return written
