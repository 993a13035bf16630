"""Tests for dataset export, import, statistics and audit."""

import json

import pytest

from lemmaforge.dataset import (
    MANIFEST_FILE,
    SUMMARY_FILE,
    TOTAL_ROW,
    Manifest,
    ManifestEntry,
    audit_dataset,
    dataset_stats,
    export_dataset,
    import_dataset,
    load_manifest,
    main_declaration,
    read_lemma,
    read_lemma_text,
)
from lemmaforge.decompose import ExtractedLemma, Rule
from lemmaforge.errors import DatasetIoError, EmptyManifest, NotFound, ParseFailure, UnverifiedLemma
from lemmaforge.repl import Status
from tests.fakes import FakeOracle


def _lemma(lemma_id, problem="p1", proof="simp\nring", verified=True, trivial=False):
    return ExtractedLemma(
        id=lemma_id,
        rule=Rule.BACKWARD_PAIR,
        param=0,
        statement_text=f"theorem {lemma_id} (x : ℕ) : x + 0 = x",
        proof_text=proof,
        preamble="import Mathlib\n\n",
        source_problem=problem,
        verified=verified,
        trivial=trivial,
    )


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


# --- export tests ---


class TestExportDataset:
    def test_writes_files_and_manifest(self, tmp_path):
        manifest = export_dataset(
            [_lemma("b_1", "p2"), _lemma("a_1")], tmp_path, "demo", topics={"p1": "algebra"},
        )
        assert [e.lemma_id for e in manifest.entries] == ["a_1", "b_1"]
        text = (tmp_path / "lemmas" / "p1" / "a_1.lean").read_text(encoding="utf-8")
        assert text == "import Mathlib\n\ntheorem a_1 (x : ℕ) : x + 0 = x := by\n  simp\n  ring\n"
        entry = manifest.entry("a_1")
        assert entry.topic == "algebra"
        assert entry.proof_length == 2
        assert entry.rule == "backward_pair"
        assert entry.file == "lemmas/p1/a_1.lean"

    def test_manifest_lines_sorted(self, tmp_path):
        export_dataset([_lemma("z", "p1"), _lemma("a", "p2"), _lemma("m", "p1")], tmp_path)
        lines = (tmp_path / MANIFEST_FILE).read_text(encoding="utf-8").splitlines()
        assert [json.loads(line)["lemma_id"] for line in lines] == ["m", "z", "a"]

    def test_summary(self, tmp_path):
        export_dataset([_lemma("a"), _lemma("b", proof="simp\nring\nrfl")], tmp_path, "demo")
        summary = json.loads((tmp_path / SUMMARY_FILE).read_text(encoding="utf-8"))
        assert summary["dataset_name"] == "demo"
        assert summary["total_lemmas"] == 2
        assert summary["problems"]["p1"] == {"lemmas": 2, "total_lines": 5}

    def test_refuses_unverified(self, tmp_path):
        with pytest.raises(UnverifiedLemma):
            export_dataset([_lemma("a", verified=False)], tmp_path)
        assert not (tmp_path / MANIFEST_FILE).exists()

    def test_refuses_trivial(self, tmp_path):
        with pytest.raises(UnverifiedLemma):
            export_dataset([_lemma("a", trivial=True)], tmp_path)
        manifest = export_dataset([_lemma("a", trivial=True)], tmp_path, allow_trivial=True)
        assert manifest.entries[0].trivial

    def test_merges_with_existing(self, tmp_path):
        export_dataset([_lemma("a")], tmp_path)
        manifest = export_dataset([_lemma("b", "p2")], tmp_path)
        assert sorted(e.lemma_id for e in manifest.entries) == ["a", "b"]
        assert len(load_manifest(tmp_path).entries) == 2

    def test_unknown_problem(self, tmp_path):
        manifest = export_dataset([_lemma("a", problem="")], tmp_path)
        assert manifest.entries[0].file == "lemmas/unknown/a.lean"


# --- manifest tests ---


class TestManifest:
    def test_duplicate_ids_rejected(self):
        entry = ManifestEntry(lemma_id="a", source_problem="p", file="a.lean", proof_length=1, rule="imported")
        with pytest.raises(ValueError):
            Manifest(dataset_name="d", entries=[entry, entry])

    def test_entry_lookup(self, tmp_path):
        manifest = export_dataset([_lemma("a")], tmp_path)
        with pytest.raises(NotFound):
            manifest.entry("b")

    def test_load_missing(self, tmp_path):
        with pytest.raises(DatasetIoError):
            load_manifest(tmp_path)

    def test_load_malformed(self, tmp_path):
        _write(tmp_path / MANIFEST_FILE, '{"lemma_id": "a"}\n')
        with pytest.raises(DatasetIoError):
            load_manifest(tmp_path)

    def test_round_trip_metadata(self, tmp_path):
        export_dataset([_lemma("a")], tmp_path, "demo", lean_version="4.9.0")
        manifest = load_manifest(tmp_path)
        assert manifest.dataset_name == "demo"
        assert manifest.lean_version == "4.9.0"


# --- reading tests ---


class TestReadLemma:
    def test_read_exported(self, tmp_path):
        manifest = export_dataset([_lemma("a")], tmp_path)
        lemma = read_lemma(tmp_path, manifest.entry("a"))
        assert lemma.statement_text == "theorem a (x : ℕ) : x + 0 = x"
        assert lemma.proof_text == "simp\nring"
        assert lemma.preamble == "import Mathlib\n\n"
        assert lemma.rule is Rule.BACKWARD_PAIR
        assert lemma.verified

    def test_missing_file(self, tmp_path):
        manifest = export_dataset([_lemma("a")], tmp_path)
        (tmp_path / "lemmas" / "p1" / "a.lean").unlink()
        with pytest.raises(DatasetIoError):
            read_lemma(tmp_path, manifest.entry("a"))

    def test_term_mode(self):
        name, _, statement, proof = read_lemma_text("theorem t : 1 = 1 :=\n  rfl\n", "t")
        assert (name, statement, proof) == ("t", "theorem t : 1 = 1", "exact rfl")

    def test_main_declaration(self):
        text = "lemma helper : True := trivial\ntheorem main : True := by\n  trivial\n"
        assert main_declaration(text) == "main"
        assert main_declaration(text, "helper") == "helper"
        with pytest.raises(ParseFailure):
            main_declaration("def x := 1")


# --- import tests ---


class TestImportDataset:
    def test_problems_from_directories(self, tmp_path):
        _write(tmp_path / "p1" / "a.lean", "theorem a : 1 = 1 := by\n  norm_num\n  rfl\n")
        _write(tmp_path / "p2" / "b.lean", "theorem b : 2 = 2 := by\n  rfl\n")
        _write(tmp_path / "c.lean", "theorem c : 3 = 3 :=\n  rfl\n")
        manifest = import_dataset(tmp_path)
        entries = {e.lemma_id: e for e in manifest.entries}
        assert entries["a"].source_problem == "p1"
        assert entries["a"].proof_length == 2
        assert entries["c"].source_problem == "unknown"
        assert entries["c"].rule == "imported"
        assert not entries["a"].verified

    def test_parse_failures_recorded(self, tmp_path):
        _write(tmp_path / "good.lean", "theorem good : 1 = 1 := by\n  rfl\n")
        _write(tmp_path / "bad.lean", "def nothing := 1\n")
        manifest = import_dataset(tmp_path)
        assert [e.lemma_id for e in manifest.entries] == ["good"]
        assert manifest.failures[0].file == "bad.lean"
        assert manifest.failures[0].error.startswith("ParseFailure")

    def test_duplicate_stems(self, tmp_path):
        _write(tmp_path / "p1" / "x.lean", "theorem x : 1 = 1 := by\n  rfl\n")
        _write(tmp_path / "p2" / "x.lean", "theorem x : 2 = 2 := by\n  rfl\n")
        manifest = import_dataset(tmp_path)
        assert [e.lemma_id for e in manifest.entries] == ["x", "p2/x"]

    def test_stems_sharing_parent_name(self, tmp_path):
        for top in ("a", "b", "c"):
            _write(tmp_path / top / "x" / "foo.lean", "theorem foo : 1 = 1 := by\n  rfl\n")
        manifest = import_dataset(tmp_path)
        assert [e.lemma_id for e in manifest.entries] == ["foo", "x/foo", "x/foo-2"]
        assert {e.source_problem for e in manifest.entries} == {"x"}
        assert manifest.failures == []

    def test_verify(self, tmp_path):
        _write(tmp_path / "a.lean", "theorem a : 1 = 1 := by\n  rfl\n")
        _write(tmp_path / "b.lean", "theorem b : 1 = 2 := by\n  rfl\n")
        oracle = FakeOracle(lambda request: Status.FAILED if "1 = 2" in request.source_text else Status.PROVED)
        manifest = import_dataset(tmp_path, verify=True, oracle=oracle)
        assert [e.verified for e in manifest.entries] == [True, False]
        assert manifest.failures[0].error == "verification: failed"

    def test_keeps_existing_metadata(self, tmp_path):
        export_dataset([_lemma("a")], tmp_path)
        entries = import_dataset(tmp_path).entries
        assert entries[0].rule == "backward_pair"
        assert entries[0].verified

    def test_not_a_directory(self, tmp_path):
        with pytest.raises(DatasetIoError):
            import_dataset(tmp_path / "missing")


# --- stats and audit tests ---


class TestDatasetStats:
    def test_rows_per_problem_and_total(self, tmp_path):
        manifest = export_dataset(
            [_lemma("a"), _lemma("b", proof="simp\nring\nrfl\nrfl"), _lemma("c", "p2", proof="simp\nring\nrfl")],
            tmp_path,
        )
        rows = dataset_stats(manifest)
        assert [row.problem for row in rows] == ["p1", "p2", TOTAL_ROW]
        assert rows[0].mean == 3.0
        assert rows[0].std == 1.0
        assert rows[0].total_lines == 6
        assert rows[2].count == 3
        assert rows[2].max == 4

    def test_empty(self):
        with pytest.raises(EmptyManifest):
            dataset_stats(Manifest(dataset_name="empty"))


class TestAuditDataset:
    def test_clean(self, tmp_path):
        export_dataset([_lemma("a")], tmp_path)
        assert audit_dataset(tmp_path) == []

    def test_detects_problems(self, tmp_path):
        export_dataset([_lemma("a"), _lemma("b"), _lemma("c")], tmp_path)
        (tmp_path / "lemmas" / "p1" / "a.lean").unlink()
        _write(tmp_path / "lemmas" / "p1" / "b.lean", "theorem b (x : ℕ) : x + 0 = x := by\n  simp\n")
        problems = audit_dataset(tmp_path)
        assert problems == [
            "a: missing file lemmas/p1/a.lean",
            "b: proof_length 2 in manifest, 1 in file",
        ]

    def test_reverifies_with_oracle(self, tmp_path):
        export_dataset([_lemma("a")], tmp_path)
        problems = audit_dataset(tmp_path, FakeOracle(lambda request: Status.FAILED))
        assert problems == ["a: marked verified but oracle says failed"]
