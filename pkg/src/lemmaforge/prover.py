"""Prover prompts, response extraction and model endpoint clients."""

from __future__ import annotations

import logging
import re
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Protocol

import httpx
import yaml

from .config import GlobalConfig, ModelSpec, get_api_key
from .decompose import ExtractedLemma
from .errors import (
    ConfigurationError,
    EndpointError,
    MalformedHeader,
    NotFound,
    TermModeProof,
    UnknownTemplate,
)
from .script import parse_body, parse_theorem, reindent, render_declaration, term_as_tactic

logger = logging.getLogger(__name__)

DEFAULT_PROMPT = """\
Think step by step. First explain the theorem, then the approach you will \
take, and finally give the proof.

Prove the following theorem in Lean 4 (version {lean_version}) with Mathlib. \
The statement must be kept exactly as given.

```lean4
{statement}```

Reply with your explanation followed by exactly one fenced ```lean4 code \
block that contains the complete theorem with its proof in place of `sorry`.
"""

FEEDBACK_PROMPT = """\
The Lean compiler rejected your proof with the following errors:

{digest}

The theorem to prove is still:

```lean4
{statement}```

Think step by step about what went wrong and fix the proof. Reply with \
exactly one fenced ```lean4 code block that contains the complete theorem \
with its proof.
"""

PROMPT_TEMPLATES = {
    "default": DEFAULT_PROMPT,
    "feedback": FEEDBACK_PROMPT,
}

FENCE_RE = re.compile(r"```[ \t]*([\w+-]*)[^\n]*\n(.*?)```", re.DOTALL)
DECLARATION_START_RE = re.compile(
    r"^(?:import|open|theorem|lemma|def|example|namespace|section|variable|set_option|universe)\b"
)
NON_LEAN_TAGS = {"text", "markdown", "md", "latex", "tex", "python", "plaintext"}


def build_prompt(
    lemma: ExtractedLemma,
    template_id: str = "default",
    digest: str | None = None,
    lean_version: str = "4.17.0",
) -> str:
    """Build the prover prompt for a lemma.

    Args:
        lemma: Lemma whose statement is posed, with a `sorry` body
        template_id: Key of PROMPT_TEMPLATES
        digest: Error digest of the previous round (feedback template)
        lean_version: Toolchain version quoted in the prompt

    Returns:
        Prompt text; identical inputs give identical prompts
    """
    template = PROMPT_TEMPLATES.get(template_id)
    if template is None:
        raise UnknownTemplate(
            f"unknown prompt template {template_id!r}; known: {', '.join(sorted(PROMPT_TEMPLATES))}"
        )
    statement = render_declaration(lemma.statement_text, ["sorry"], lemma.preamble)
    return template.format(
        statement=statement,
        digest=digest or "(no error details available)",
        lean_version=lean_version,
    )


def _qualifies(language: str, content: str, theorem_name: str) -> bool:
    if language.lower() in NON_LEAN_TAGS:
        return False
    if re.search(rf"\b(?:theorem|lemma)\s+{re.escape(theorem_name)}(?![\w'.])", content):
        return True
    first = next(
        (line.strip() for line in content.splitlines()
         if line.strip() and not line.strip().startswith("--")),
        "",
    )
    if not first or DECLARATION_START_RE.match(first):
        return False
    return first[0].islower() or first[0] in "·.(_"


def _body_from_block(content: str, theorem_name: str) -> str | None:
    if re.search(rf"\b(?:theorem|lemma)\s+{re.escape(theorem_name)}(?![\w'.])", content):
        try:
            script = parse_theorem(content, theorem_name)
        except TermModeProof as e:
            if not e.proof_text.strip():
                return None
            return "\n".join(term_as_tactic(e.proof_text))
        except (MalformedHeader, NotFound):
            return None
        lines = reindent(script.body, 0)
    else:
        text = content.strip("\n")
        if text.lstrip().startswith("by ") or text.strip() == "by":
            text = text.lstrip()[2:]
        lines = reindent(parse_body(text.split("\n")), 0)

    while lines and not lines[-1].strip():
        lines.pop()
    while lines and not lines[0].strip():
        lines.pop(0)
    return "\n".join(lines) if lines else None


def extract_proof(raw_response: str, theorem_name: str) -> str | None:
    """Tactic body from the last qualifying fenced code block, or None.

    A block qualifies when it restates the target theorem or starts with
    tactic syntax. A restated header is stripped; a term-mode answer becomes
    an `exact` tactic.
    """
    for match in reversed(list(FENCE_RE.finditer(raw_response))):
        language, content = match.group(1), match.group(2)
        if not _qualifies(language, content, theorem_name):
            continue
        body = _body_from_block(content, theorem_name)
        if body is not None:
            return body
    return None


# --- model clients ---


@dataclass(frozen=True)
class RequestContext:
    """Which lemma, sample and round a completion request belongs to."""
    lemma_id: str
    sample_index: int = 0
    round: int = 0


Messages = list[dict[str, str]]


class ModelClient(Protocol):
    model_id: str

    def complete(self, messages: Messages, context: RequestContext) -> str: ...


class ChatCompletionClient:
    """Chat-completions style HTTP endpoint (messages in, text out).

    Rate limits, server errors and transport failures are retried with
    exponential backoff; other HTTP errors fail immediately.
    """

    def __init__(
        self,
        spec: ModelSpec,
        api_key: str | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if not spec.endpoint:
            raise ConfigurationError(f"model {spec.model_id} has no endpoint configured")
        self.spec = spec
        self.model_id = spec.model_id
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(timeout=spec.timeout_s, headers=headers, transport=transport)

    @property
    def url(self) -> str:
        endpoint = self.spec.endpoint.rstrip("/")
        if endpoint.endswith("/chat/completions"):
            return endpoint
        return f"{endpoint}/chat/completions"

    def close(self) -> None:
        self._client.close()

    def complete(self, messages: Messages, context: RequestContext) -> str:
        payload: dict[str, Any] = {"model": self.spec.model_id, "messages": messages}
        payload.update(self.spec.decoding)
        logger.debug("POST %s for %s: %s", self.url, context.lemma_id, payload)

        error = "no attempt made"
        for attempt in range(self.spec.max_retries + 1):
            try:
                response = self._client.post(self.url, json=payload)
            except httpx.HTTPError as e:
                error = f"{type(e).__name__}: {e}"
            else:
                if response.status_code == 200:
                    return _completion_text(response.json())
                error = f"HTTP {response.status_code}: {response.text[:200]}"
                if response.status_code != 429 and response.status_code < 500:
                    raise EndpointError(error)

            if attempt < self.spec.max_retries:
                wait = 2 ** attempt
                logger.warning("%s (%s); retrying in %ss", error, context.lemma_id, wait)
                self._sleep(wait)

        raise EndpointError(f"{self.spec.model_id}: {error} after {self.spec.max_retries} retries")


def _completion_text(data: dict[str, Any]) -> str:
    try:
        content = data["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as e:
        raise EndpointError(f"unexpected response shape: {str(data)[:200]}") from e
    return content or ""


class ScriptedModel:
    """Replays canned responses for deterministic offline runs.

    Responses are keyed by lemma id (`"*"` is the fallback) and indexed by
    round or sample; the last response repeats.
    """

    def __init__(self, responses: dict[str, list[str]], model_id: str = "scripted") -> None:
        self.responses = responses
        self.model_id = model_id
        self.calls: list[tuple[RequestContext, Messages]] = []

    @classmethod
    def from_file(cls, path: Path, model_id: str = "scripted") -> ScriptedModel:
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except (OSError, yaml.YAMLError) as e:
            raise ConfigurationError(f"cannot read scripted responses {path}: {e}") from e
        if not isinstance(data, dict):
            raise ConfigurationError(f"{path}: expected a mapping of lemma id to responses")
        responses = {
            str(key): [value] if isinstance(value, str) else [str(v) for v in value]
            for key, value in data.items()
        }
        return cls(responses, model_id)

    def complete(self, messages: Messages, context: RequestContext) -> str:
        self.calls.append((context, [dict(m) for m in messages]))
        script = self.responses.get(context.lemma_id) or self.responses.get("*")
        if not script:
            return ""
        index = min(context.round + context.sample_index, len(script) - 1)
        return script[index]


def load_model(name: str, config: GlobalConfig) -> ModelClient:
    """Instantiate the client for a model registered in the configuration."""
    spec = config.models.get(name)
    if spec is None:
        known = ", ".join(sorted(config.models)) or "none"
        raise ConfigurationError(f"model {name!r} is not configured (known: {known})")

    if spec.adapter == "scripted":
        if spec.responses_file is None:
            raise ConfigurationError(f"scripted model {name!r} needs responses_file")
        return ScriptedModel.from_file(spec.responses_file, spec.model_id)
    return ChatCompletionClient(spec, get_api_key(spec))
