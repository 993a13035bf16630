"""Exception hierarchy.

Every error carries the process exit code the CLI should use for it:
1 for domain failures, 2 for configuration or environment problems.
"""

from __future__ import annotations


class LemmaforgeError(Exception):
    """Base class for all lemmaforge errors."""

    exit_code = 1


class ConfigurationError(LemmaforgeError):
    """Invalid or unresolvable configuration."""

    exit_code = 2


class ToolchainUnavailable(ConfigurationError):
    """The Lean REPL executable or project root cannot be used."""


# --- proof-model ---


class NotFound(LemmaforgeError):
    """No declaration with the requested name."""


class TermModeProof(LemmaforgeError):
    """The declaration is proved in term mode, not with a `by` block."""

    def __init__(self, name: str, proof_text: str = "") -> None:
        super().__init__(f"{name}: proof is not in tactic mode")
        self.name = name
        self.proof_text = proof_text


class MalformedHeader(LemmaforgeError):
    """The theorem header could not be segmented into binders and goal."""


# --- repl-bridge ---


class WorkerCrashed(LemmaforgeError):
    """A REPL worker process died while serving a request."""


class StateUnavailable(LemmaforgeError):
    """The oracle could not report a proof state at a position."""


class OracleTimeout(LemmaforgeError):
    """A verification request exceeded its time limit."""


# --- decomposer ---


class InputNotVerified(LemmaforgeError):
    """The theorem handed to the decomposer does not verify."""


class NoIntermediateHypotheses(LemmaforgeError):
    """Structured decomposition needs at least one top-level `have`."""


# --- eval-harness ---


class UnknownTemplate(LemmaforgeError):
    """No prompt template with the requested id."""


class EndpointError(LemmaforgeError):
    """The model endpoint failed after all retries."""


# --- analysis ---


class UnknownAttemptId(LemmaforgeError):
    """A manual label references an attempt that is not in the run."""


class IntegrityError(LemmaforgeError):
    """A label contradicts the oracle verdict."""


class EmptyInput(LemmaforgeError):
    """Statistics requested over an empty collection."""


class MissingLength(LemmaforgeError):
    """A lemma has no recorded dataset proof length."""


class DebloatError(LemmaforgeError):
    """The proof handed to the debloater does not verify."""


# --- dataset-io ---


class UnverifiedLemma(LemmaforgeError):
    """Export refused: the lemma is unverified or trivial."""


class DatasetIoError(LemmaforgeError):
    """Reading or writing dataset files failed."""


class ParseFailure(LemmaforgeError):
    """A dataset file could not be parsed."""


class EmptyManifest(LemmaforgeError):
    """Statistics requested over a manifest without entries."""
