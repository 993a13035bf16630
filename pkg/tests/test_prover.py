"""Tests for prompts, proof extraction and model clients."""

import json

import httpx
import pytest

from lemmaforge.config import GlobalConfig, ModelSpec
from lemmaforge.decompose import ExtractedLemma, Rule
from lemmaforge.errors import ConfigurationError, EndpointError, UnknownTemplate
from lemmaforge.prover import (
    ChatCompletionClient,
    RequestContext,
    ScriptedModel,
    build_prompt,
    extract_proof,
    load_model,
)

LEMMA = ExtractedLemma(
    id="t",
    rule=Rule.FORWARD,
    param=1,
    statement_text="theorem t (x : ℕ) : x + 0 = x",
    proof_text="simp\nrfl",
    preamble="import Mathlib\n\n",
)


def _fenced(content, language="lean4"):
    return f"```{language}\n{content}\n```"


# --- build_prompt tests ---


class TestBuildPrompt:
    def test_contains_sorry_statement(self):
        prompt = build_prompt(LEMMA, lean_version="4.9.0")
        assert "theorem t (x : ℕ) : x + 0 = x := by\n  sorry\n" in prompt
        assert "import Mathlib" in prompt
        assert "version 4.9.0" in prompt
        assert "simp" not in prompt

    def test_deterministic(self):
        assert build_prompt(LEMMA) == build_prompt(LEMMA)

    def test_feedback_digest(self):
        prompt = build_prompt(LEMMA, "feedback", "line 2, col 2: linarith failed")
        assert "line 2, col 2: linarith failed" in prompt
        assert "x + 0 = x := by\n  sorry" in prompt

    def test_unknown_template(self):
        with pytest.raises(UnknownTemplate):
            build_prompt(LEMMA, "missing")


# --- extract_proof tests ---


class TestExtractProof:
    def test_restated_theorem(self):
        response = "Simplify.\n" + _fenced("theorem t (x : ℕ) : x + 0 = x := by\n  simp")
        assert extract_proof(response, "t") == "simp"

    def test_last_qualifying_block_wins(self):
        response = (
            _fenced("theorem t (x : ℕ) : x + 0 = x := by\n  omega")
            + "\nActually:\n"
            + _fenced("theorem t (x : ℕ) : x + 0 = x := by\n  simp")
            + "\n"
            + _fenced("Done.", "text")
        )
        assert extract_proof(response, "t") == "simp"

    def test_bare_tactics(self):
        assert extract_proof(_fenced("induction x with\n| zero => rfl\n| succ n ih => simp", "lean"), "t") == (
            "induction x with\n| zero => rfl\n| succ n ih => simp"
        )

    def test_inline_by(self):
        assert extract_proof(_fenced("by simp"), "t") == "simp"

    def test_term_mode_becomes_exact(self):
        response = _fenced("theorem t (x : ℕ) : x + 0 = x :=\n  Nat.add_zero x")
        assert extract_proof(response, "t") == "exact Nat.add_zero x"

    def test_other_declaration_ignored(self):
        response = _fenced("theorem other : True := by\n  trivial")
        assert extract_proof(response, "t") is None

    def test_import_block_without_theorem(self):
        assert extract_proof(_fenced("import Mathlib\nopen Nat"), "t") is None

    def test_no_code_block(self):
        assert extract_proof("I cannot prove this.", "t") is None

    def test_prefix_name_not_matched(self):
        response = _fenced("theorem t_aux (x : ℕ) : x = x := by\n  rfl")
        assert extract_proof(response, "t") is None


# --- ChatCompletionClient tests ---


def _spec(**overrides):
    settings = dict(model_id="m1", endpoint="http://models.test/v1", max_retries=2)
    settings.update(overrides)
    return ModelSpec(**settings)


def _reply(text):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}]})


class TestChatCompletionClient:
    def test_completion(self):
        seen = []

        def handler(request):
            seen.append(request)
            return _reply("```lean4\nsimp\n```")

        client = ChatCompletionClient(
            _spec(decoding={"temperature": 0.0}), "secret", transport=httpx.MockTransport(handler),
        )
        text = client.complete([{"role": "user", "content": "prove"}], RequestContext("t"))
        assert text == "```lean4\nsimp\n```"
        assert str(seen[0].url) == "http://models.test/v1/chat/completions"
        assert seen[0].headers["Authorization"] == "Bearer secret"
        body = json.loads(seen[0].content)
        assert body["model"] == "m1"
        assert body["temperature"] == 0.0
        assert body["messages"] == [{"role": "user", "content": "prove"}]

    def test_retries_server_errors(self):
        responses = iter([httpx.Response(503), httpx.Response(429), _reply("ok")])
        waits = []
        client = ChatCompletionClient(
            _spec(), transport=httpx.MockTransport(lambda request: next(responses)), sleep=waits.append,
        )
        assert client.complete([], RequestContext("t")) == "ok"
        assert waits == [1, 2]

    def test_client_error_not_retried(self):
        calls = []

        def handler(request):
            calls.append(request)
            return httpx.Response(401, text="bad key")

        client = ChatCompletionClient(_spec(), transport=httpx.MockTransport(handler), sleep=lambda s: None)
        with pytest.raises(EndpointError, match="HTTP 401"):
            client.complete([], RequestContext("t"))
        assert len(calls) == 1

    def test_gives_up_after_retries(self):
        client = ChatCompletionClient(
            _spec(), transport=httpx.MockTransport(lambda request: httpx.Response(500)),
            sleep=lambda s: None,
        )
        with pytest.raises(EndpointError, match="after 2 retries"):
            client.complete([], RequestContext("t"))

    def test_transport_error_retried(self):
        attempts = []

        def handler(request):
            attempts.append(request)
            if len(attempts) == 1:
                raise httpx.ConnectError("refused")
            return _reply("ok")

        client = ChatCompletionClient(_spec(), transport=httpx.MockTransport(handler), sleep=lambda s: None)
        assert client.complete([], RequestContext("t")) == "ok"

    def test_unexpected_shape(self):
        client = ChatCompletionClient(
            _spec(), transport=httpx.MockTransport(lambda request: httpx.Response(200, json={})),
        )
        with pytest.raises(EndpointError, match="unexpected response shape"):
            client.complete([], RequestContext("t"))

    def test_endpoint_required(self):
        with pytest.raises(ConfigurationError):
            ChatCompletionClient(_spec(endpoint=""))

    def test_full_url_kept(self):
        client = ChatCompletionClient(_spec(endpoint="http://models.test/v1/chat/completions/"))
        assert client.url == "http://models.test/v1/chat/completions"


# --- ScriptedModel tests ---


class TestScriptedModel:
    def test_indexed_by_round_and_sample(self):
        model = ScriptedModel({"t": ["a", "b", "c"]})
        assert model.complete([], RequestContext("t", round=1)) == "b"
        assert model.complete([], RequestContext("t", sample_index=2)) == "c"
        assert model.complete([], RequestContext("t", round=9)) == "c"

    def test_fallback_and_missing(self):
        model = ScriptedModel({"*": ["any"]})
        assert model.complete([], RequestContext("other")) == "any"
        assert ScriptedModel({}).complete([], RequestContext("t")) == ""

    def test_records_calls(self):
        model = ScriptedModel({"*": ["x"]})
        model.complete([{"role": "user", "content": "p"}], RequestContext("t"))
        assert model.calls[0][1] == [{"role": "user", "content": "p"}]

    def test_from_file(self, tmp_path):
        path = tmp_path / "responses.yaml"
        path.write_text("t:\n  - first\n  - second\n'*': fallback\n", encoding="utf-8")
        model = ScriptedModel.from_file(path, "replay")
        assert model.model_id == "replay"
        assert model.responses == {"t": ["first", "second"], "*": ["fallback"]}

    def test_from_bad_file(self, tmp_path):
        path = tmp_path / "responses.yaml"
        path.write_text("- just\n- a list\n", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            ScriptedModel.from_file(path)


class TestLoadModel:
    def test_unknown_model(self):
        with pytest.raises(ConfigurationError, match="not configured"):
            load_model("nope", GlobalConfig(pool_size=1))

    def test_scripted_needs_file(self):
        config = GlobalConfig(pool_size=1, models={"s": ModelSpec(adapter="scripted", model_id="s")})
        with pytest.raises(ConfigurationError, match="responses_file"):
            load_model("s", config)

    def test_scripted(self, tmp_path):
        path = tmp_path / "r.yaml"
        path.write_text("'*': hi\n", encoding="utf-8")
        spec = ModelSpec(adapter="scripted", model_id="s", responses_file=path)
        model = load_model("s", GlobalConfig(pool_size=1, models={"s": spec}))
        assert isinstance(model, ScriptedModel)

    def test_chat_client(self, monkeypatch):
        monkeypatch.setenv("LEMMAFORGE_MODEL_KEY", "k")
        config = GlobalConfig(pool_size=1, models={"m1": _spec()})
        model = load_model("m1", config)
        assert isinstance(model, ChatCompletionClient)
        assert model.model_id == "m1"
