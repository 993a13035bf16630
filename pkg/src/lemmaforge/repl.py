"""Lean REPL bridge: a pool of REPL processes acting as the verification oracle.

Each worker owns one REPL process and speaks its JSON protocol: a request
object followed by a blank line on stdin, a (possibly pretty-printed) response
object followed by a blank line on stdout. A base environment with the
configured imports is built once per worker and reused through its env id.
"""

from __future__ import annotations

import contextlib
import json
import logging
import queue
import re
import shutil
import subprocess
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from pathlib import Path
from typing import Any, Protocol, Sequence

import psutil
from pydantic import BaseModel, Field

from .config import GlobalConfig
from .errors import (
    LemmaforgeError,
    OracleTimeout,
    StateUnavailable,
    ToolchainUnavailable,
    WorkerCrashed,
)
from .script import TheoremScript, steps, top_indent

logger = logging.getLogger(__name__)

IMPORT_RE = re.compile(r"^import\s+\S")
SORRY_WARNING = "declaration uses 'sorry'"
TRUNCATION_MARKER = "... [{count} more error(s) truncated]"


class Mode(str, Enum):
    VERIFY = "verify"
    STATES = "states"


class Status(str, Enum):
    PROVED = "proved"
    FAILED = "failed"
    INCOMPLETE = "incomplete"
    TIMEOUT = "timeout"
    CRASHED = "crashed"


class Severity(str, Enum):
    ERROR = "error"
    WARNING = "warning"
    INFO = "info"


class OracleRequest(BaseModel):
    source_text: str = Field(min_length=1)
    mode: Mode = Mode.VERIFY
    timeout_s: float = Field(default=60.0, gt=0)
    memory_cap_mb: int = 8192


class Diagnostic(BaseModel):
    severity: Severity
    line: int
    column: int
    text: str


class SorryPosition(BaseModel):
    line: int
    column: int
    goal: str = ""


class ProofState(BaseModel):
    """Hypotheses and goals at one position of a tactic proof."""

    hypotheses: list[tuple[str, str]] = Field(default_factory=list)
    goals: list[str] = Field(default_factory=list)

    @property
    def terminal(self) -> bool:
        return not self.goals


class VerificationResult(BaseModel):
    status: Status
    messages: list[Diagnostic] = Field(default_factory=list)
    sorries: list[SorryPosition] = Field(default_factory=list)
    states: list[ProofState | None] | None = None
    wall_time_s: float = 0.0

    @property
    def proved(self) -> bool:
        return self.status is Status.PROVED

    @property
    def errors(self) -> list[Diagnostic]:
        return [m for m in self.messages if m.severity is Severity.ERROR]


class Oracle(Protocol):
    """Anything that can verify Lean sources."""

    def verify(self, request: OracleRequest) -> VerificationResult: ...

    def verify_many(self, requests: Sequence[OracleRequest]) -> list[VerificationResult]: ...


# --- response decoding ---


def classify_status(messages: Sequence[Diagnostic], sorries: Sequence[SorryPosition]) -> Status:
    """Verdict from diagnostics.

    proved iff there is no error and no sorry; incomplete iff a sorry was
    reported or every error is an "unsolved goals" error.
    """
    errors = [m for m in messages if m.severity is Severity.ERROR]
    sorry_warned = any(
        m.severity is Severity.WARNING and SORRY_WARNING in m.text for m in messages
    )
    if sorries or sorry_warned:
        return Status.INCOMPLETE
    if not errors:
        return Status.PROVED
    if all("unsolved goals" in e.text for e in errors):
        return Status.INCOMPLETE
    return Status.FAILED


def result_from_response(response: dict[str, Any], wall_time_s: float = 0.0) -> VerificationResult:
    """Decode one REPL response object."""
    messages: list[Diagnostic] = []
    for raw in response.get("messages", []):
        pos = raw.get("pos") or {}
        messages.append(Diagnostic(
            severity=Severity(raw.get("severity", "error")),
            line=int(pos.get("line", 0)),
            column=int(pos.get("column", 0)),
            text=str(raw.get("data", "")),
        ))
    if "message" in response and "messages" not in response:
        # Protocol-level failure, e.g. an unknown env id.
        messages.append(Diagnostic(severity=Severity.ERROR, line=0, column=0,
                                   text=str(response["message"])))

    sorries = [
        SorryPosition(
            line=int((raw.get("pos") or {}).get("line", 0)),
            column=int((raw.get("pos") or {}).get("column", 0)),
            goal=str(raw.get("goal", "")),
        )
        for raw in response.get("sorries", [])
    ]
    return VerificationResult(
        status=classify_status(messages, sorries),
        messages=messages,
        sorries=sorries,
        wall_time_s=wall_time_s,
    )


def parse_goal_text(text: str) -> tuple[list[tuple[str, str]], str]:
    """Parse one pretty-printed goal into (hypotheses, goal).

    ```
    x y : ℕ
    h₀ : 0 < x ∧ 0 < y
    ⊢ y ^ 2 ∣ x
    ```
    """
    hypotheses: list[tuple[list[str], str]] = []
    goal_parts: list[str] = []
    in_goal = False
    for raw in text.splitlines():
        if not raw.strip():
            continue
        if raw.startswith("case ") and not hypotheses and not in_goal:
            continue
        if raw.startswith("⊢"):
            in_goal = True
            goal_parts.append(raw[1:].strip())
            continue
        if raw[0].isspace():
            if in_goal:
                goal_parts.append(raw.strip())
            elif hypotheses:
                names, type_text = hypotheses[-1]
                hypotheses[-1] = (names, f"{type_text} {raw.strip()}")
            continue
        if in_goal:
            goal_parts.append(raw.strip())
            continue
        names_part, sep, type_text = raw.partition(" : ")
        if not sep:
            raise StateUnavailable(f"cannot parse hypothesis line {raw!r}")
        hypotheses.append((names_part.split(), type_text.strip()))

    if not goal_parts:
        raise StateUnavailable("goal display has no `⊢` line")
    flat = [(name, type_text) for names, type_text in hypotheses for name in names]
    return flat, " ".join(goal_parts)


# --- workers ---


class _MemoryCapExceeded(Exception):
    pass


def kill_process_tree(pid: int, term_timeout: float = 3.0) -> None:
    """Terminate a process and its children, escalating to kill."""
    try:
        proc = psutil.Process(pid)
        procs = proc.children(recursive=True) + [proc]
    except psutil.NoSuchProcess:
        return
    for p in procs:
        with contextlib.suppress(psutil.NoSuchProcess):
            p.terminate()
    _, alive = psutil.wait_procs(procs, timeout=term_timeout)
    for p in alive:
        with contextlib.suppress(psutil.NoSuchProcess):
            p.kill()


def tree_rss_mb(pid: int) -> float:
    try:
        proc = psutil.Process(pid)
        procs = [proc] + proc.children(recursive=True)
        total = 0
        for p in procs:
            with contextlib.suppress(psutil.NoSuchProcess):
                total += p.memory_info().rss
        return total / (1024 * 1024)
    except psutil.NoSuchProcess:
        return 0.0


class ReplWorker:
    """One REPL process serving one request at a time."""

    POLL_INTERVAL = 0.5

    def __init__(
        self,
        command: list[str],
        cwd: Path | None = None,
        base_imports: Sequence[str] = (),
        max_requests: int = 200,
        startup_timeout_s: float = 600.0,
    ) -> None:
        self.command = command
        self.cwd = cwd
        self.base_imports = [line.strip() for line in base_imports]
        self.max_requests = max_requests
        self.startup_timeout_s = startup_timeout_s
        self.requests_served = 0
        self._proc: subprocess.Popen[str] | None = None
        self._lines: queue.Queue[str | None] = queue.Queue()
        self._env: int | None = None

    @property
    def alive(self) -> bool:
        return self._proc is not None and self._proc.poll() is None

    @property
    def exhausted(self) -> bool:
        return self.requests_served >= self.max_requests

    def start(self) -> None:
        try:
            self._proc = subprocess.Popen(
                self.command,
                cwd=self.cwd,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                encoding="utf-8",
                bufsize=1,
            )
        except OSError as e:
            raise ToolchainUnavailable(f"cannot start REPL {self.command[0]}: {e}") from e

        self._lines = queue.Queue()
        threading.Thread(target=self._pump, args=(self._proc,), daemon=True).start()
        logger.debug("Started REPL worker pid=%s", self._proc.pid)

        self._env = None
        if self.base_imports:
            try:
                response = self._send(
                    {"cmd": "\n".join(self.base_imports)}, self.startup_timeout_s, None,
                )
            except BaseException:
                # a late base-import reply must never be read as a verdict
                self.kill()
                raise
            base = result_from_response(response)
            if base.errors:
                self.kill()
                raise ToolchainUnavailable(
                    f"base imports failed to load: {base.errors[0].text}"
                )
            self._env = response.get("env")

    def _pump(self, proc: subprocess.Popen[str]) -> None:
        assert proc.stdout is not None
        for line in proc.stdout:
            self._lines.put(line)
        self._lines.put(None)

    def kill(self) -> None:
        if self._proc is not None:
            kill_process_tree(self._proc.pid)
            self._proc = None

    def _send(
        self,
        payload: dict[str, Any],
        timeout_s: float,
        memory_cap_mb: int | None,
    ) -> dict[str, Any]:
        proc = self._proc
        if proc is None or proc.stdin is None or proc.poll() is not None:
            raise WorkerCrashed("REPL process is not running")

        logger.debug("REPL <- %s", json.dumps(payload, ensure_ascii=False)[:500])
        try:
            proc.stdin.write(json.dumps(payload, ensure_ascii=False) + "\n\n")
            proc.stdin.flush()
        except OSError as e:
            raise WorkerCrashed(f"REPL stdin closed: {e}") from e

        deadline = time.monotonic() + timeout_s
        buffer: list[str] = []
        while True:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise OracleTimeout(f"no response within {timeout_s}s")
            try:
                line = self._lines.get(timeout=min(remaining, self.POLL_INTERVAL))
            except queue.Empty:
                if proc.poll() is not None:
                    raise WorkerCrashed(f"REPL exited with code {proc.returncode}") from None
                if memory_cap_mb is not None and tree_rss_mb(proc.pid) > memory_cap_mb:
                    raise _MemoryCapExceeded() from None
                continue

            if line is None:
                raise WorkerCrashed("REPL closed its output")
            if not line.strip():
                if not buffer:
                    continue
            else:
                buffer.append(line)
                if not line.rstrip().endswith("}"):
                    continue
            try:
                response: dict[str, Any] = json.loads("".join(buffer))
            except json.JSONDecodeError:
                continue
            logger.debug("REPL -> %s", "".join(buffer)[:500])
            return response

    def _prepare(self, source_text: str) -> tuple[str, bool]:
        """Blank import lines covered by the base env, keeping line numbers."""
        lines = source_text.split("\n")
        imports = [line.strip() for line in lines if IMPORT_RE.match(line)]
        if self._env is None or any(imp not in self.base_imports for imp in imports):
            return source_text, False
        return "\n".join("" if IMPORT_RE.match(line) else line for line in lines), True

    def run(self, request: OracleRequest) -> VerificationResult:
        source, use_env = self._prepare(request.source_text)
        payload: dict[str, Any] = {"cmd": source}
        if use_env:
            payload["env"] = self._env

        started = time.monotonic()
        try:
            response = self._send(payload, request.timeout_s, request.memory_cap_mb)
        except OracleTimeout:
            self.kill()
            return VerificationResult(
                status=Status.TIMEOUT,
                messages=[Diagnostic(severity=Severity.ERROR, line=0, column=0,
                                     text=f"verification timed out after {request.timeout_s:g}s")],
                wall_time_s=time.monotonic() - started,
            )
        except _MemoryCapExceeded:
            self.kill()
            return VerificationResult(
                status=Status.CRASHED,
                messages=[Diagnostic(severity=Severity.ERROR, line=0, column=0,
                                     text=f"memory cap of {request.memory_cap_mb} MB exceeded")],
                wall_time_s=time.monotonic() - started,
            )

        self.requests_served += 1
        return result_from_response(response, time.monotonic() - started)


def _failure(status: Status, text: str) -> VerificationResult:
    return VerificationResult(
        status=status,
        messages=[Diagnostic(severity=Severity.ERROR, line=0, column=0, text=text)],
    )


class ReplPool:
    """A fixed-size pool of REPL workers.

    Requests queue for an idle worker; each worker serves one request at a
    time. A worker that times out, crashes or reaches its request budget is
    replaced by a fresh one.
    """

    def __init__(self, config: GlobalConfig, size: int | None = None) -> None:
        self.config = config
        self.size = size or config.pool_size
        self._idle: queue.Queue[ReplWorker] = queue.Queue()
        self._executor: ThreadPoolExecutor | None = None

    def __enter__(self) -> ReplPool:
        self.start()
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    def _command(self) -> list[str]:
        repl = self.config.repl_path
        if repl is None:
            raise ToolchainUnavailable("no REPL configured: set repl_path or LEMMAFORGE_REPL")
        resolved = shutil.which(str(repl)) or (str(repl) if Path(repl).exists() else None)
        if resolved is None:
            raise ToolchainUnavailable(f"REPL executable not found: {repl}")
        root = self.config.lean_project_root
        if root is not None and not Path(root).is_dir():
            raise ToolchainUnavailable(f"Lean project root does not exist: {root}")
        return [resolved, *self.config.repl_args]

    def _new_worker(self) -> ReplWorker:
        return ReplWorker(
            command=self._command(),
            cwd=self.config.lean_project_root,
            base_imports=self.config.base_imports,
            max_requests=self.config.max_requests_per_worker,
            startup_timeout_s=self.config.batch_timeout_s,
        )

    def start(self) -> None:
        self._command()
        for _ in range(self.size):
            self._idle.put(self._new_worker())
        self._executor = ThreadPoolExecutor(max_workers=self.size, thread_name_prefix="repl")
        logger.debug("REPL pool ready with %d worker slot(s)", self.size)

    def close(self) -> None:
        """Drain in-flight requests, then stop every worker."""
        if self._executor is not None:
            self._executor.shutdown(wait=True, cancel_futures=True)
            self._executor = None
        while True:
            try:
                worker = self._idle.get_nowait()
            except queue.Empty:
                break
            worker.kill()

    def verify(self, request: OracleRequest) -> VerificationResult:
        worker = self._idle.get()
        try:
            for attempt in range(2):
                try:
                    if not worker.alive:
                        worker.start()
                    result = worker.run(request)
                    break
                except WorkerCrashed as e:
                    worker.kill()
                    worker = self._new_worker()
                    if attempt == 1:
                        raise
                    logger.warning("REPL worker crashed (%s); retrying once", e)
                except OracleTimeout as e:
                    worker.kill()
                    worker = self._new_worker()
                    logger.warning("REPL worker startup timed out: %s", e)
                    return _failure(Status.TIMEOUT, str(e))
                except LemmaforgeError:
                    worker.kill()
                    worker = self._new_worker()
                    raise
            if worker.exhausted:
                logger.debug("Recycling REPL worker after %d requests", worker.requests_served)
                worker.kill()
                worker = self._new_worker()
            return result
        finally:
            self._idle.put(worker)

    def _verify_or_recorded(self, request: OracleRequest) -> VerificationResult:
        try:
            return self.verify(request)
        except WorkerCrashed as e:
            logger.error("REPL worker crashed twice: %s", e)
            return _failure(Status.CRASHED, str(e))
        except ToolchainUnavailable as e:
            logger.error("REPL worker failed to start: %s", e)
            return _failure(Status.CRASHED, str(e))

    def verify_many(self, requests: Sequence[OracleRequest]) -> list[VerificationResult]:
        """Verify a batch over the pool; results are in input order."""
        if self._executor is None:
            raise WorkerCrashed("REPL pool is not started")
        return list(self._executor.map(self._verify_or_recorded, requests))


# --- convenience operations ---


def verify(oracle: Oracle, request: OracleRequest) -> VerificationResult:
    return oracle.verify(request)


def state_source(script: TheoremScript, prefix_steps: int) -> str:
    """The script cut after `prefix_steps` top-level steps, closed by `all_goals sorry`."""
    all_steps = steps(script)
    indent = top_indent(script.body) or 2
    lines = [line.text for step in all_steps[:prefix_steps] for line in step.lines]
    lines.append(" " * indent + "all_goals sorry")
    return f"{script.preamble}{script.header} := by\n" + "\n".join(lines) + "\n"


def state_from_result(result: VerificationResult, sorry_line: int) -> ProofState:
    """Read the proof state reported at the inserted `all_goals sorry`."""
    if result.proved:
        return ProofState()
    if result.status is not Status.INCOMPLETE or result.errors:
        raise StateUnavailable(f"prefix does not elaborate cleanly ({result.status.value})")

    goals = [s for s in result.sorries if s.line == sorry_line and s.goal]
    if not goals:
        raise StateUnavailable("no goal reported at the state position")

    parsed = [parse_goal_text(s.goal) for s in goals]
    return ProofState(hypotheses=parsed[0][0], goals=[goal for _, goal in parsed])


def collect_states(
    oracle: Oracle,
    script: TheoremScript,
    timeout_s: float = 60.0,
) -> list[ProofState | None]:
    """One state per step boundary: before step 0, after step 0, ... after the last.

    Positions the oracle cannot report come back as None; the final state is
    terminal since the script verifies.
    """
    count = len(steps(script))
    sources = [state_source(script, m) for m in range(count)]
    results = oracle.verify_many([
        OracleRequest(source_text=source, mode=Mode.STATES, timeout_s=timeout_s)
        for source in sources
    ])

    states: list[ProofState | None] = []
    for m, (source, result) in enumerate(zip(sources, results)):
        sorry_line = source.count("\n")
        try:
            states.append(state_from_result(result, sorry_line))
        except StateUnavailable as e:
            logger.info("%s: state after %d step(s) unavailable: %s", script.name, m, e)
            states.append(None)
    states.append(ProofState())
    return states


def _clip(text: str, budget_bytes: int) -> str:
    """Cut `text` to at most `budget_bytes` UTF-8 bytes on a character boundary."""
    return text.encode("utf-8")[: max(budget_bytes, 0)].decode("utf-8", errors="ignore")


def summarize_errors(result: VerificationResult, budget_bytes: int = 4096) -> str:
    """Deterministic plain-text digest of a failed verification.

    One "line L, col C: message" entry per distinct error, ordered by
    position, truncated to `budget_bytes` with a marker; earliest errors win.
    """
    entries = sorted({(m.line, m.column, m.text.strip()) for m in result.errors})
    if not entries:
        entries = sorted({
            (m.line, m.column, m.text.strip())
            for m in result.messages
            if m.severity is Severity.WARNING and SORRY_WARNING in m.text
        })
    if not entries and result.status is Status.INCOMPLETE:
        entries = [(s.line, s.column, "proof contains `sorry`") for s in result.sorries]

    lines = [f"line {line}, col {column}: {text}" for line, column, text in entries]
    if not lines:
        return _clip(f"verification status: {result.status.value}", budget_bytes)

    digest: list[str] = []
    used = 0
    for i, line in enumerate(lines):
        size = len(line.encode("utf-8")) + (1 if digest else 0)
        marker = TRUNCATION_MARKER.format(count=len(lines) - i)
        marker_size = len(marker.encode("utf-8")) + 1
        remaining_after = len(lines) - i - 1
        reserve = marker_size if remaining_after else 0
        if used + size + reserve > budget_bytes:
            marker = _clip(marker, budget_bytes - used - (1 if digest else 0))
            if marker:
                digest.append(marker)
            break
        digest.append(line)
        used += size
    return "\n".join(digest)
