"""Tests for the evaluation harness and run persistence."""

import json

import pytest

from lemmaforge.dataset import export_dataset, load_manifest
from lemmaforge.decompose import ExtractedLemma, Rule
from lemmaforge.errors import EndpointError, LemmaforgeError
from lemmaforge.harness import (
    NO_PROOF_MESSAGE,
    EvalAttempt,
    EvalConfig,
    EvalMode,
    EvalOutcome,
    RunStore,
    attempt_id,
    run_campaign,
    run_feedback_loop,
    run_pass_at_k,
    verify_proof,
)
from lemmaforge.prover import ScriptedModel
from lemmaforge.repl import Status, VerificationResult
from lemmaforge.report import REPORT_DIR, build_report
from tests.fakes import FakeOracle, body_of

WRONG = "Let me try.\n```lean4\nomega\n```"
RIGHT = "```lean4\ntheorem {name} (x : ℕ) : x = x := by\n  rfl\n```"


def _rfl_only(request):
    return Status.PROVED if body_of(request.source_text) == ["rfl"] else Status.FAILED


def _lemma(lemma_id="t", problem="p1"):
    return ExtractedLemma(
        id=lemma_id,
        rule=Rule.FORWARD,
        param=1,
        statement_text=f"theorem {lemma_id} (x : ℕ) : x = x",
        proof_text="simp\nrfl",
        source_problem=problem,
        verified=True,
        trivial=False,
    )


def _config(**overrides):
    settings = dict(model_id="m1", max_feedback_rounds=10, in_flight=2)
    settings.update(overrides)
    return EvalConfig(**settings)


class FailingModel:
    model_id = "m1"

    def complete(self, messages, context):
        raise EndpointError("HTTP 500 after 3 retries")


# --- feedback loop tests ---


class TestFeedbackLoop:
    def test_never_solved_uses_every_round(self):
        oracle = FakeOracle(_rfl_only)
        outcome = run_feedback_loop(_lemma(), _config(), ScriptedModel({"t": [WRONG]}), oracle)
        assert not outcome.solved
        assert len(outcome.attempts) == 11
        assert outcome.attempts[-1] == "t/m1/s00/r10"

    @pytest.mark.parametrize("round", [0, 3, 10])
    def test_solved_at_round(self, round):
        responses = [WRONG] * round + [RIGHT.format(name="t")]
        outcome = run_feedback_loop(
            _lemma(), _config(), ScriptedModel({"t": responses}), FakeOracle(_rfl_only),
        )
        assert outcome.solved
        assert outcome.solved_at_round == round
        assert len(outcome.attempts) == round + 1

    def test_feedback_carries_digest(self):
        model = ScriptedModel({"t": [WRONG, RIGHT.format(name="t")]})
        run_feedback_loop(_lemma(), _config(), model, FakeOracle(_rfl_only))
        second = model.calls[1][1]
        assert [m["role"] for m in second] == ["user", "assistant", "user"]
        assert second[1]["content"] == WRONG
        assert "line 2, col 2: fake verdict failed" in second[2]["content"]

    def test_zero_rounds(self):
        outcome = run_feedback_loop(
            _lemma(), _config(max_feedback_rounds=0), ScriptedModel({"t": [WRONG]}),
            FakeOracle(_rfl_only),
        )
        assert len(outcome.attempts) == 1

    def test_attempts_persisted(self, tmp_path):
        store = RunStore.create(tmp_path, _config(), tmp_path / "data", "run1")
        run_feedback_loop(
            _lemma(), _config(max_feedback_rounds=2), ScriptedModel({"t": [WRONG]}),
            FakeOracle(_rfl_only), store,
        )
        attempts = store.attempts()
        assert [a.round for a in attempts] == [0, 1, 2]
        assert attempts[0].extracted_proof == "omega"
        assert attempts[0].verdict.status is Status.FAILED

    def test_endpoint_failure_recorded(self):
        outcome = run_feedback_loop(_lemma(), _config(), FailingModel(), FakeOracle(_rfl_only))
        assert not outcome.solved
        assert outcome.attempts == []
        assert "HTTP 500" in outcome.error


# --- pass@k tests ---


class TestPassAtK:
    def test_early_stop(self):
        responses = [WRONG] * 6 + [RIGHT.format(name="t")]
        outcome = run_pass_at_k(
            _lemma(), _config(mode=EvalMode.PASS_AT_K, samples_k=10),
            ScriptedModel({"t": responses}), FakeOracle(_rfl_only),
        )
        assert outcome.solved_at_sample == 6
        assert len(outcome.attempts) == 7

    def test_all_samples_without_early_stop(self):
        responses = [WRONG] * 6 + [RIGHT.format(name="t")]
        outcome = run_pass_at_k(
            _lemma(), _config(mode=EvalMode.PASS_AT_K, samples_k=10, early_stop=False),
            ScriptedModel({"t": responses}), FakeOracle(_rfl_only),
        )
        assert outcome.solved_at_sample == 6
        assert len(outcome.attempts) == 10

    def test_samples_are_independent(self):
        model = ScriptedModel({"t": [WRONG]})
        run_pass_at_k(_lemma(), _config(samples_k=3), model, FakeOracle(_rfl_only))
        assert all(len(messages) == 1 for _, messages in model.calls)
        assert [context.sample_index for context, _ in model.calls] == [0, 1, 2]


class TestVerifyProof:
    def test_missing_proof(self, oracle):
        result = verify_proof(_lemma(), None, oracle, 5.0)
        assert result.status is Status.FAILED
        assert result.errors[0].text == NO_PROOF_MESSAGE
        assert oracle.requests == []

    def test_statement_is_fixed(self, oracle):
        verify_proof(_lemma(), "rfl", oracle, 5.0)
        assert oracle.requests[0].source_text == "theorem t (x : ℕ) : x = x := by\n  rfl\n"


# --- run store tests ---


def _attempt(lemma_id, round=0):
    return EvalAttempt(
        attempt_id=attempt_id(lemma_id, "m1", 0, round),
        lemma_id=lemma_id,
        model_id="m1",
        round=round,
        prompt_text="p",
        raw_response="r",
        verdict=VerificationResult(status=Status.FAILED),
        timestamp="2024-01-01T00:00:00+00:00",
    )


class TestRunStore:
    def test_create_and_load_config(self, tmp_path):
        store = RunStore.create(tmp_path, _config(samples_k=4), tmp_path / "data", "run1")
        config, dataset = store.load_config()
        assert config.samples_k == 4
        assert dataset == tmp_path / "data"
        assert store.run_id == "run1"

    def test_create_twice(self, tmp_path):
        RunStore.create(tmp_path, _config(), tmp_path, "run1")
        with pytest.raises(LemmaforgeError, match="already exists"):
            RunStore.create(tmp_path, _config(), tmp_path, "run1")

    def test_open_missing(self, tmp_path):
        with pytest.raises(LemmaforgeError):
            RunStore.open(tmp_path, "nope")

    def test_torn_final_record_discarded(self, tmp_path):
        store = RunStore.create(tmp_path, _config(), tmp_path, "run1")
        store.append_attempt(_attempt("a"))
        with open(store.root / RunStore.ATTEMPTS, "a", encoding="utf-8") as f:
            f.write('{"attempt_id": "a/m1/s0')
        assert [a.attempt_id for a in store.attempts()] == ["a/m1/s00/r00"]

    def test_prepare_resume(self, tmp_path):
        store = RunStore.create(tmp_path, _config(), tmp_path, "run1")
        store.append_attempt(_attempt("a"))
        store.append_outcome(EvalOutcome(lemma_id="a", model_id="m1", attempts=["a/m1/s00/r00"]))
        store.append_attempt(_attempt("b"))
        done = store.prepare_resume()
        assert done == {"a"}
        assert [a.lemma_id for a in store.attempts()] == ["a"]


# --- campaign tests ---


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "dataset"
    trivial = _lemma("c_1", "p2")
    trivial.trivial = True
    export_dataset([_lemma("a_1"), _lemma("b_1", "p2")], out)
    export_dataset([trivial], out, allow_trivial=True)
    return out


class TestCampaign:
    def _model(self):
        return ScriptedModel({"a_1": [RIGHT.format(name="a_1")], "*": [WRONG]})

    def test_evaluates_nontrivial_lemmas(self, tmp_path, dataset):
        config = _config(max_feedback_rounds=2)
        store = RunStore.create(tmp_path / "runs", config, dataset, "run1")
        root = run_campaign(
            load_manifest(dataset), dataset, config, self._model(), FakeOracle(_rfl_only), store,
        )
        assert root == store.root
        outcomes = {o.lemma_id: o for o in store.outcomes()}
        assert sorted(outcomes) == ["a_1", "b_1"]
        assert outcomes["a_1"].solved_at_round == 0
        assert outcomes["b_1"].source_problem == "p2"
        assert len(outcomes["b_1"].attempts) == 3
        assert len(store.attempts()) == 4

    def test_pass_at_k_campaign(self, tmp_path, dataset):
        config = _config(mode=EvalMode.PASS_AT_K, samples_k=3)
        store = RunStore.create(tmp_path / "runs", config, dataset, "run1")
        run_campaign(load_manifest(dataset), dataset, config, self._model(), FakeOracle(_rfl_only), store)
        outcomes = {o.lemma_id: o for o in store.outcomes()}
        assert outcomes["a_1"].solved_at_sample == 0
        assert len(outcomes["a_1"].attempts) == 1
        assert len(outcomes["b_1"].attempts) == 3

    def test_resume_skips_finished_lemmas(self, tmp_path, dataset):
        config = _config(max_feedback_rounds=1)
        store = RunStore.create(tmp_path / "runs", config, dataset, "run1")
        store.append_attempt(_attempt("a_1"))
        store.append_outcome(EvalOutcome(lemma_id="a_1", model_id="m1", solved=True, solved_at_round=0))
        store.append_attempt(_attempt("b_1"))
        model = self._model()

        run_campaign(load_manifest(dataset), dataset, config, model, FakeOracle(_rfl_only), store)

        assert {context.lemma_id for context, _ in model.calls} == {"b_1"}
        assert sorted(o.lemma_id for o in store.outcomes()) == ["a_1", "b_1"]
        b_attempts = [a for a in store.attempts() if a.lemma_id == "b_1"]
        assert [a.round for a in b_attempts] == [0, 1]

    def test_broken_lemma_does_not_abort(self, tmp_path, dataset):
        (dataset / "lemmas" / "p1" / "a_1.lean").unlink()
        config = _config(max_feedback_rounds=0)
        store = RunStore.create(tmp_path / "runs", config, dataset, "run1")
        run_campaign(load_manifest(dataset), dataset, config, self._model(), FakeOracle(_rfl_only), store)
        outcomes = {o.lemma_id: o for o in store.outcomes()}
        assert outcomes["a_1"].error.startswith("DatasetIoError")
        assert outcomes["b_1"].error is None

    def test_config_snapshot(self, tmp_path, dataset):
        config = _config(decoding={"temperature": 0.7})
        store = RunStore.create(tmp_path / "runs", config, dataset, "run1")
        meta = json.loads((store.root / RunStore.CONFIG).read_text(encoding="utf-8"))
        assert meta["eval"]["decoding"] == {"temperature": 0.7}
        assert meta["dataset"] == str(dataset)


class InterruptingModel(ScriptedModel):
    """Raises KeyboardInterrupt when asked for one lemma's given round."""

    def __init__(self, responses, lemma_id, round):
        super().__init__(responses)
        self.stop_at = (lemma_id, round)

    def complete(self, messages, context):
        if (context.lemma_id, context.round) == self.stop_at:
            raise KeyboardInterrupt
        return super().complete(messages, context)


class TestCampaignReport:
    def test_feedback_progression_rounds(self, tmp_path):
        dataset = tmp_path / "dataset"
        ids = ["r00", "r01", "r05", "r10", "never"]
        manifest = export_dataset([_lemma(lemma_id) for lemma_id in ids], dataset)
        responses = {
            f"r{n:02d}": [WRONG] * n + [RIGHT.format(name=f"r{n:02d}")] for n in (0, 1, 5, 10)
        }
        responses["*"] = [WRONG]
        config = _config(max_feedback_rounds=10)
        store = RunStore.create(tmp_path / "runs", config, dataset, "run1")
        run_campaign(manifest, dataset, config, ScriptedModel(responses), FakeOracle(_rfl_only), store)

        outcomes = {o.lemma_id: o.solved_at_round for o in store.outcomes()}
        assert outcomes == {"r00": 0, "r01": 1, "r05": 5, "r10": 10, "never": None}
        build_report(store, manifest)
        table = json.loads((store.root / REPORT_DIR / "progression.json").read_text(encoding="utf-8"))
        solved = [point["solved"] for point in table["rounds"]]
        assert solved == [1, 2, 2, 2, 2, 3, 3, 3, 3, 3, 4]
        assert [table["rounds"][r]["percent"] for r in (0, 1, 5, 10)] == [20.0, 40.0, 60.0, 80.0]

    def test_resumed_run_reports_like_uninterrupted(self, tmp_path, dataset):
        responses = {"a_1": [WRONG, RIGHT.format(name="a_1")], "*": [WRONG]}
        config = _config(max_feedback_rounds=3, in_flight=1)
        manifest = load_manifest(dataset)

        full = RunStore.create(tmp_path / "full", config, dataset, "run1")
        run_campaign(manifest, dataset, config, ScriptedModel(responses), FakeOracle(_rfl_only), full)

        resumed = RunStore.create(tmp_path / "resumed", config, dataset, "run1")
        with pytest.raises(KeyboardInterrupt):
            run_campaign(
                manifest, dataset, config, InterruptingModel(responses, "b_1", 2),
                FakeOracle(_rfl_only), resumed,
            )
        with open(resumed.root / RunStore.ATTEMPTS, "a", encoding="utf-8") as f:
            f.write('{"attempt_id": "b_1/m1/s0')
        assert sorted(o.lemma_id for o in resumed.outcomes()) == ["a_1"]
        run_campaign(manifest, dataset, config, ScriptedModel(responses), FakeOracle(_rfl_only), resumed)

        expected = {path.name: path.read_bytes() for path in build_report(full, manifest)}
        actual = {path.name: path.read_bytes() for path in build_report(resumed, manifest)}
        assert actual == expected
