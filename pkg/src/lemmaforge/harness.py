"""Prover evaluation: feedback loops, pass@k sampling and resumable campaigns.

A campaign persists into a run directory:

    runs/<run_id>/config.json     the EvalConfig and dataset it ran with
    runs/<run_id>/attempts.jsonl  one EvalAttempt per line, append-only
    runs/<run_id>/outcomes.jsonl  one EvalOutcome per evaluated lemma

Every attempt is flushed to disk before the next round is requested, so a
killed campaign resumes from its last finished lemma.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from datetime import datetime, timezone
from enum import Enum
from pathlib import Path
from typing import Any, TypeVar

from pydantic import BaseModel, Field, ValidationError

from .dataset import Manifest, read_lemma
from .decompose import ExtractedLemma
from .errors import EndpointError, LemmaforgeError, WorkerCrashed
from .progress import ProgressTracker
from .prover import Messages, ModelClient, RequestContext, build_prompt, extract_proof
from .repl import (
    Diagnostic,
    Oracle,
    OracleRequest,
    Severity,
    Status,
    VerificationResult,
    summarize_errors,
)
from .script import render_declaration

logger = logging.getLogger(__name__)

NO_PROOF_MESSAGE = "no Lean code block with a proof was found in the response"


class EvalMode(str, Enum):
    FEEDBACK = "feedback"
    PASS_AT_K = "pass_at_k"


class EvalConfig(BaseModel):
    model_id: str
    endpoint: str = ""
    mode: EvalMode = EvalMode.FEEDBACK
    max_feedback_rounds: int = Field(default=10, ge=0)
    samples_k: int = Field(default=1, ge=1)
    early_stop: bool = True
    decoding: dict[str, Any] = Field(default_factory=dict)
    timeout_s: float = Field(default=60.0, gt=0)
    prompt_template_id: str = "default"
    in_flight: int = Field(default=4, ge=1)
    digest_budget_bytes: int = Field(default=4096, gt=0)
    lean_version: str = "4.17.0"


class EvalAttempt(BaseModel):
    attempt_id: str
    lemma_id: str
    model_id: str
    sample_index: int = 0
    round: int = 0
    prompt_text: str
    raw_response: str
    extracted_proof: str | None = None
    verdict: VerificationResult
    timestamp: str


class EvalOutcome(BaseModel):
    lemma_id: str
    model_id: str
    source_problem: str = ""
    solved: bool = False
    solved_at_round: int | None = None
    solved_at_sample: int | None = None
    attempts: list[str] = Field(default_factory=list)
    error: str | None = None


def attempt_id(lemma_id: str, model_id: str, sample_index: int, round: int) -> str:
    return f"{lemma_id}/{model_id}/s{sample_index:02d}/r{round:02d}"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


# --- run store ---


Record = TypeVar("Record", bound=BaseModel)


class RunStore:
    """Append-only, crash-safe persistence of one evaluation run."""

    CONFIG = "config.json"
    ATTEMPTS = "attempts.jsonl"
    OUTCOMES = "outcomes.jsonl"

    def __init__(self, root: Path) -> None:
        self.root = root
        self._lock = threading.Lock()

    @property
    def run_id(self) -> str:
        return self.root.name

    @classmethod
    def create(
        cls,
        runs_dir: Path,
        config: EvalConfig,
        dataset_dir: Path,
        run_id: str | None = None,
    ) -> RunStore:
        run_id = run_id or f"{datetime.now(timezone.utc):%Y%m%d-%H%M%S}-{config.model_id}"
        root = runs_dir / run_id
        if root.exists():
            raise LemmaforgeError(f"run {run_id!r} already exists under {runs_dir}; use --resume")
        root.mkdir(parents=True)
        meta = {"eval": config.model_dump(mode="json"), "dataset": str(dataset_dir)}
        (root / cls.CONFIG).write_text(
            json.dumps(meta, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8",
        )
        logger.info("Created run %s", root)
        return cls(root)

    @classmethod
    def open(cls, runs_dir: Path, run_id: str) -> RunStore:
        root = runs_dir / run_id
        if not (root / cls.CONFIG).exists():
            raise LemmaforgeError(f"no run {run_id!r} under {runs_dir}")
        return cls(root)

    def load_config(self) -> tuple[EvalConfig, Path]:
        meta = json.loads((self.root / self.CONFIG).read_text(encoding="utf-8"))
        return EvalConfig.model_validate(meta["eval"]), Path(meta["dataset"])

    def _append(self, name: str, record: BaseModel) -> None:
        line = record.model_dump_json() + "\n"
        with self._lock, open(self.root / name, "a", encoding="utf-8") as f:
            f.write(line)
            f.flush()
            os.fsync(f.fileno())

    def append_attempt(self, attempt: EvalAttempt) -> None:
        self._append(self.ATTEMPTS, attempt)

    def append_outcome(self, outcome: EvalOutcome) -> None:
        self._append(self.OUTCOMES, outcome)

    def _read(self, name: str, model: type[Record]) -> list[Record]:
        path = self.root / name
        if not path.exists():
            return []
        records: list[Record] = []
        lines = path.read_text(encoding="utf-8").split("\n")
        for number, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                records.append(model.model_validate_json(line))
            except ValidationError:
                if number >= len(lines) - 1:
                    logger.warning("Discarding torn final record in %s", path)
                    continue
                raise
        return records

    def attempts(self) -> list[EvalAttempt]:
        return self._read(self.ATTEMPTS, EvalAttempt)

    def outcomes(self) -> list[EvalOutcome]:
        return self._read(self.OUTCOMES, EvalOutcome)

    def _rewrite(self, name: str, records: list[Record]) -> None:
        path = self.root / name
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_text("".join(r.model_dump_json() + "\n" for r in records), encoding="utf-8")
        os.replace(tmp, path)

    def prepare_resume(self) -> set[str]:
        """Drop torn records and attempts of unfinished lemmas.

        Returns:
            Ids of lemmas whose outcome is already persisted
        """
        outcomes = self.outcomes()
        done = {o.lemma_id for o in outcomes}
        attempts = [a for a in self.attempts() if a.lemma_id in done]
        self._rewrite(self.OUTCOMES, outcomes)
        self._rewrite(self.ATTEMPTS, attempts)
        return done


# --- single lemma ---


def verify_proof(
    lemma: ExtractedLemma,
    proof: str | None,
    oracle: Oracle,
    timeout_s: float,
) -> VerificationResult:
    """Check a candidate proof against the lemma's own statement."""
    if proof is None:
        return VerificationResult(
            status=Status.FAILED,
            messages=[Diagnostic(severity=Severity.ERROR, line=0, column=0, text=NO_PROOF_MESSAGE)],
        )
    source = render_declaration(lemma.statement_text, proof.split("\n"), lemma.preamble)
    try:
        return oracle.verify(OracleRequest(source_text=source, timeout_s=timeout_s))
    except WorkerCrashed as e:
        return VerificationResult(
            status=Status.CRASHED,
            messages=[Diagnostic(severity=Severity.ERROR, line=0, column=0, text=str(e))],
        )


def _attempt(
    lemma: ExtractedLemma,
    config: EvalConfig,
    model: ModelClient,
    oracle: Oracle,
    messages: Messages,
    context: RequestContext,
    store: RunStore | None,
) -> tuple[EvalAttempt, str]:
    raw = model.complete(messages, context)
    proof = extract_proof(raw, lemma.theorem_name)
    verdict = verify_proof(lemma, proof, oracle, config.timeout_s)
    attempt = EvalAttempt(
        attempt_id=attempt_id(lemma.id, config.model_id, context.sample_index, context.round),
        lemma_id=lemma.id,
        model_id=config.model_id,
        sample_index=context.sample_index,
        round=context.round,
        prompt_text=messages[-1]["content"],
        raw_response=raw,
        extracted_proof=proof,
        verdict=verdict,
        timestamp=_now(),
    )
    if store is not None:
        store.append_attempt(attempt)
    logger.debug("%s: %s", attempt.attempt_id, verdict.status.value)
    return attempt, raw


def run_feedback_loop(
    lemma: ExtractedLemma,
    config: EvalConfig,
    model: ModelClient,
    oracle: Oracle,
    store: RunStore | None = None,
) -> EvalOutcome:
    """Zero-shot attempt followed by up to `max_feedback_rounds` repairs.

    Each round appends the model's answer and the error digest of its
    verdict to the conversation. Stops at the first proved round.
    """
    outcome = EvalOutcome(
        lemma_id=lemma.id, model_id=config.model_id, source_problem=lemma.source_problem,
    )
    messages: Messages = [{
        "role": "user",
        "content": build_prompt(lemma, config.prompt_template_id, lean_version=config.lean_version),
    }]

    for round in range(config.max_feedback_rounds + 1):
        try:
            attempt, raw = _attempt(
                lemma, config, model, oracle, messages, RequestContext(lemma.id, 0, round), store,
            )
        except EndpointError as e:
            logger.warning("%s: endpoint failed at round %d: %s", lemma.id, round, e)
            outcome.error = str(e)
            break

        outcome.attempts.append(attempt.attempt_id)
        if attempt.verdict.proved:
            outcome.solved = True
            outcome.solved_at_round = round
            outcome.solved_at_sample = 0
            break

        digest = summarize_errors(attempt.verdict, config.digest_budget_bytes)
        messages = [
            *messages,
            {"role": "assistant", "content": raw},
            {
                "role": "user",
                "content": build_prompt(lemma, "feedback", digest, config.lean_version),
            },
        ]
    return outcome


def run_pass_at_k(
    lemma: ExtractedLemma,
    config: EvalConfig,
    model: ModelClient,
    oracle: Oracle,
    store: RunStore | None = None,
) -> EvalOutcome:
    """`samples_k` independent zero-shot samples, without feedback."""
    outcome = EvalOutcome(
        lemma_id=lemma.id, model_id=config.model_id, source_problem=lemma.source_problem,
    )
    messages: Messages = [{
        "role": "user",
        "content": build_prompt(lemma, config.prompt_template_id, lean_version=config.lean_version),
    }]

    for sample in range(config.samples_k):
        try:
            attempt, _ = _attempt(
                lemma, config, model, oracle, messages, RequestContext(lemma.id, sample, 0), store,
            )
        except EndpointError as e:
            logger.warning("%s: endpoint failed at sample %d: %s", lemma.id, sample, e)
            outcome.error = str(e)
            break

        outcome.attempts.append(attempt.attempt_id)
        if attempt.verdict.proved and not outcome.solved:
            outcome.solved = True
            outcome.solved_at_round = 0
            outcome.solved_at_sample = sample
            if config.early_stop:
                break
    return outcome


# --- campaigns ---


def _evaluate_entry(
    manifest: Manifest,
    dataset_dir: Path,
    lemma_id: str,
    config: EvalConfig,
    model: ModelClient,
    oracle: Oracle,
    store: RunStore,
) -> EvalOutcome:
    entry = manifest.entry(lemma_id)
    try:
        lemma = read_lemma(dataset_dir, entry)
        if config.mode is EvalMode.PASS_AT_K:
            outcome = run_pass_at_k(lemma, config, model, oracle, store)
        else:
            outcome = run_feedback_loop(lemma, config, model, oracle, store)
    except Exception as e:  # one lemma never aborts the campaign
        logger.error("%s: evaluation failed: %s", lemma_id, e)
        outcome = EvalOutcome(
            lemma_id=lemma_id,
            model_id=config.model_id,
            source_problem=entry.source_problem,
            error=f"{type(e).__name__}: {e}",
        )
    store.append_outcome(outcome)
    return outcome


def run_campaign(
    manifest: Manifest,
    dataset_dir: Path,
    config: EvalConfig,
    model: ModelClient,
    oracle: Oracle,
    store: RunStore,
    tracker: ProgressTracker | None = None,
) -> Path:
    """Evaluate every non-trivial lemma of a dataset; returns the run directory.

    Lemmas with a persisted outcome are skipped, so calling this again on the
    same store resumes an interrupted campaign.
    """
    done = store.prepare_resume()
    pending = sorted(
        entry.lemma_id for entry in manifest.entries
        if not entry.trivial and entry.lemma_id not in done
    )
    if done:
        logger.info("Resuming run %s: %d lemma(s) already evaluated", store.run_id, len(done))
    logger.info("Evaluating %d lemma(s) with %s (%s)", len(pending), config.model_id, config.mode.value)

    if tracker:
        tracker.start_stage(f"Evaluating {config.model_id}", len(pending))

    pool = ThreadPoolExecutor(max_workers=config.in_flight, thread_name_prefix="eval")
    try:
        futures = [
            pool.submit(_evaluate_entry, manifest, dataset_dir, lemma_id, config, model, oracle, store)
            for lemma_id in pending
        ]
        for future in as_completed(futures):
            outcome = future.result()
            if tracker:
                tracker.advance(
                    lemma_id=outcome.lemma_id,
                    solved=outcome.solved,
                    attempts=len(outcome.attempts),
                )
    except KeyboardInterrupt:
        logger.warning("Interrupted; finishing in-flight lemmas. Resume with --resume %s", store.run_id)
        pool.shutdown(wait=True, cancel_futures=True)
        raise
    pool.shutdown()
    return store.root
