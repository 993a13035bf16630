"""CLI entry point for lemmaforge."""

from __future__ import annotations

import json
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Any

import click
from rich.console import Console
from rich.table import Table

from . import __version__
from .config import CONFIG_FILE, GlobalConfig, load_config, set_config
from .errors import LemmaforgeError
from .progress import configure_logging, format_duration, stderr_console, track_progress
from .repl import ReplPool, Status

if TYPE_CHECKING:
    from .decompose import DecompositionReport
    from .harness import RunStore
    from .labels import NameIndex

console = Console()

NAME_INDEX_FILE = "names.txt"
INTERRUPTED_EXIT = 130


@dataclass
class CliState:
    config_path: Path | None
    verbose: bool
    porcelain: bool

    def config(self, **overrides: Any) -> GlobalConfig:
        return load_config(self.config_path, **overrides)


class LemmaforgeGroup(click.Group):
    """Maps lemmaforge errors to exit codes and one-line messages."""

    def invoke(self, ctx: click.Context) -> Any:
        try:
            return super().invoke(ctx)
        except LemmaforgeError as e:
            state = ctx.find_object(CliState)
            if state is not None and state.verbose:
                stderr_console.print_exception()
            else:
                stderr_console.print(f"[bold red]error:[/] {e}", markup=True, highlight=False)
            ctx.exit(e.exit_code)
        except KeyboardInterrupt:
            stderr_console.print("[yellow]interrupted[/]")
            ctx.exit(INTERRUPTED_EXIT)


def _open_pool(config: GlobalConfig, jobs: int | None = None) -> ReplPool:
    return ReplPool(config, size=jobs)


def _run_store(config: GlobalConfig, run: str) -> RunStore:
    from .harness import RunStore

    path = Path(run)
    if path.is_dir() and (path / RunStore.CONFIG).exists():
        return RunStore(path)
    return RunStore.open(config.runs_dir, run)


def _load_name_index(config: GlobalConfig, index_path: Path | None) -> NameIndex:
    from .labels import NameIndex

    path = index_path or config.datasets_dir / NAME_INDEX_FILE
    if path.exists():
        return NameIndex.load(path, config.lean_version)
    stderr_console.print(f"[yellow]No name index at {path}; every unknown identifier counts as hallucinated.[/]")
    return NameIndex()


@click.group(cls=LemmaforgeGroup)
@click.version_option(__version__)
@click.option("--config", "config_path", type=click.Path(path_type=Path), help=f"Config file (default ./{CONFIG_FILE})")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging and full tracebacks")
@click.option("--porcelain", is_flag=True, help="One JSON object per completed item on stdout")
@click.pass_context
def main(ctx: click.Context, config_path: Path | None, verbose: bool, porcelain: bool) -> None:
    """lemmaforge - Decompose Lean 4 proofs into lemma datasets and evaluate provers on them."""
    configure_logging(verbose)
    ctx.obj = CliState(config_path=config_path, verbose=verbose, porcelain=porcelain)


# --- decomposition ---


@main.command()
@click.argument("file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("-t", "--theorem", "theorem_name", required=True, help="Theorem to decompose")
@click.option(
    "--strategy",
    type=click.Choice(["structured", "unstructured", "both"]),
    default="both",
    show_default=True,
)
@click.option("--keep-trivial", is_flag=True, help="Export lemmas a single tactic closes")
@click.option("--min-proof-lines", default=2, show_default=True, type=click.IntRange(min=1))
@click.option("--recursive", is_flag=True, help="Decompose long extracted lemmas again")
@click.option("-o", "--out", type=click.Path(file_okay=False, path_type=Path), help="Dataset directory")
@click.option("--problem", help="Source problem tag (default: file stem)")
@click.option("--topic", default="", help="Topic recorded in the manifest")
@click.option("--no-export", is_flag=True, help="Only print the report")
@click.option("-j", "--jobs", type=click.IntRange(min=1), help="REPL workers")
@click.pass_obj
def decompose(
    state: CliState,
    file: Path,
    theorem_name: str,
    strategy: str,
    keep_trivial: bool,
    min_proof_lines: int,
    recursive: bool,
    out: Path | None,
    problem: str | None,
    topic: str,
    no_export: bool,
    jobs: int | None,
) -> None:
    """Extract verified lemmas from a tactic proof.

    Example:
        lemmaforge decompose imo_1959_p1.lean -t imo_1959_p1 --strategy both
    """
    from .dataset import export_dataset
    from .pipeline import DecompositionOptions, Strategy, run_decomposition

    config = state.config()
    problem = problem or file.stem
    options = DecompositionOptions(
        strategy=Strategy(strategy),
        keep_trivial=keep_trivial,
        min_proof_lines=min_proof_lines,
        recursive=recursive,
        source_problem=problem,
    )

    stderr_console.print(f"[bold blue]Decomposing:[/] {theorem_name} ({file.name})")
    with _open_pool(config, jobs) as pool, track_progress(state.porcelain) as tracker:
        result = run_decomposition(
            file.read_text(encoding="utf-8"), theorem_name, pool, config, options, file, tracker,
        )

    reports = [result.report, *result.children]
    if not state.porcelain:
        for report in reports:
            _print_decomposition_report(report)

    if no_export or not result.exported:
        if not result.exported:
            stderr_console.print("[yellow]No lemma passed the gates; nothing exported.[/]")
        return

    out_dir = out or config.datasets_dir / problem
    export_dataset(
        result.exported,
        out_dir,
        lean_version=config.lean_version,
        topics={problem: topic} if topic else None,
        allow_trivial=keep_trivial,
    )
    stderr_console.print(f"[bold green]Exported {len(result.exported)} lemma(s)[/] to {out_dir}")


def _print_decomposition_report(report: DecompositionReport) -> None:
    table = Table(title=f"{report.source} (n={report.n}, k={report.k})")
    for column in ("rule", "bound", "candidates", "verified", "exported", "skipped"):
        table.add_column(column, justify="left" if column == "rule" else "right")
    for rule, bound in report.bounds.items():
        if rule in ("structured", "unstructured"):
            continue
        table.add_row(
            rule,
            str(bound),
            str(report.candidates.get(rule, 0)),
            str(report.verified.get(rule, 0)),
            str(report.exported.get(rule, 0)),
            str(report.skipped.get(rule, "")),
        )
    table.add_row(
        "total",
        f"{report.bounds['structured']}+{report.bounds['unstructured']}",
        str(report.total_candidates),
        str(report.total_verified),
        str(report.total_exported),
        str(sum(report.skipped.values())),
    )
    console.print(table)
    for notice in report.notices:
        console.print(f"[dim]note:[/] {notice}")


@main.command()
@click.argument("path", type=click.Path(exists=True, path_type=Path))
@click.option("-j", "--jobs", type=click.IntRange(min=1), help="REPL workers")
@click.option("--timeout", type=float, help="Per-file timeout in seconds")
@click.pass_obj
def verify(state: CliState, path: Path, jobs: int | None, timeout: float | None) -> None:
    """Verify a Lean file or every lemma of a dataset directory.

    Exits 0 only if every target is proved.
    """
    from .dataset import DEFAULT_GLOB, MANIFEST_FILE, load_manifest
    from .repl import OracleRequest

    config = state.config()
    if path.is_dir():
        if (path / MANIFEST_FILE).exists():
            files = [path / entry.file for entry in load_manifest(path).entries]
        else:
            files = sorted(p for p in path.glob(DEFAULT_GLOB) if p.is_file())
    else:
        files = [path]

    timeout_s = timeout or config.verify_timeout_s
    with _open_pool(config, jobs) as pool, track_progress(state.porcelain) as tracker:
        tracker.start_stage(f"Verifying {len(files)} file(s)", len(files))
        results = pool.verify_many([
            OracleRequest(source_text=f.read_text(encoding="utf-8"), timeout_s=timeout_s,
                          memory_cap_mb=config.memory_cap_mb)
            for f in files
        ])
        for f, result in zip(files, results):
            tracker.advance(file=str(f), status=result.status.value)

    counts = {status: 0 for status in Status}
    for f, result in zip(files, results):
        counts[result.status] += 1
        if not result.proved and not state.porcelain:
            console.print(f"[red]{result.status.value}[/] {f}")

    if not state.porcelain:
        table = Table(title="Verification")
        table.add_column("status")
        table.add_column("files", justify="right")
        for status, count in counts.items():
            table.add_row(status.value, str(count))
        console.print(table)

    if counts[Status.PROVED] != len(files):
        sys.exit(1)


# --- evaluation ---


@main.command()
@click.argument("dataset", required=False, type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("-m", "--model", "model_name", help="Model name from the config registry")
@click.option("--rounds", default=10, show_default=True, type=click.IntRange(min=0), help="Feedback rounds")
@click.option(
    "--pass-at-k", "pass_at", type=click.IntRange(min=1), is_flag=False, flag_value=32, default=None,
    help="Independent samples per lemma instead of feedback (default 32)",
)
@click.option("--no-early-stop", is_flag=True, help="Draw all k samples even after a success")
@click.option("--template", default="default", show_default=True, help="Prompt template id")
@click.option("--in-flight", type=click.IntRange(min=1), default=4, show_default=True)
@click.option("--run-id", help="Name of the new run directory")
@click.option("--resume", "resume_id", help="Continue an interrupted run")
@click.option("-j", "--jobs", type=click.IntRange(min=1), help="REPL workers")
@click.pass_obj
def evaluate(
    state: CliState,
    dataset: Path | None,
    model_name: str | None,
    rounds: int,
    pass_at: int | None,
    no_early_stop: bool,
    template: str,
    in_flight: int,
    run_id: str | None,
    resume_id: str | None,
    jobs: int | None,
) -> None:
    """Evaluate a prover on a lemma dataset.

    Example:
        lemmaforge evaluate datasets/imo --model gpt --rounds 10
        lemmaforge evaluate datasets/imo --model gpt --pass-at-k
        lemmaforge evaluate --resume 20260101-120000-gpt
    """
    from .dataset import load_manifest
    from .harness import EvalConfig, EvalMode, RunStore, run_campaign
    from .prover import load_model

    config = state.config()
    if resume_id:
        store = _run_store(config, resume_id)
        eval_config, dataset_dir = store.load_config()
        model_name = model_name or eval_config.model_id
    else:
        if dataset is None or model_name is None:
            raise click.UsageError("DATASET and --model are required unless --resume is given")
        spec = config.models.get(model_name)
        eval_config = EvalConfig(
            model_id=model_name,
            endpoint=spec.endpoint if spec else "",
            mode=EvalMode.PASS_AT_K if pass_at else EvalMode.FEEDBACK,
            max_feedback_rounds=rounds,
            samples_k=pass_at or 1,
            early_stop=not no_early_stop,
            decoding=spec.decoding if spec else {},
            prompt_template_id=template,
            in_flight=in_flight,
            digest_budget_bytes=config.digest_budget_bytes,
            lean_version=config.lean_version,
            timeout_s=config.verify_timeout_s,
        )
        dataset_dir = dataset
        store = RunStore.create(config.runs_dir, eval_config, dataset_dir, run_id)

    manifest = load_manifest(dataset_dir)
    model = load_model(model_name, config)
    try:
        with _open_pool(config, jobs) as pool, track_progress(state.porcelain) as tracker:
            run_dir = run_campaign(manifest, dataset_dir, eval_config, model, pool, store, tracker)
    finally:
        close = getattr(model, "close", None)
        if close is not None:
            close()

    outcomes = store.outcomes()
    solved = sum(1 for o in outcomes if o.solved)
    stderr_console.print(f"[bold green]Run complete:[/] {solved}/{len(outcomes)} solved")
    click.echo(str(run_dir))


@main.command()
@click.argument("run")
@click.option("--labels", "labels_file", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Manual labels (TSV, or CSV by extension)")
@click.option("--index", "index_path", type=click.Path(dir_okay=False, path_type=Path),
              help="Known-name index (see `lemmaforge index build`)")
@click.pass_obj
def analyze(state: CliState, run: str, labels_file: Path | None, index_path: Path | None) -> None:
    """Label the attempts of a run with error types."""
    from .labels import audit_labels, ingest_manual_labels, label_run

    config = state.config()
    store = _run_store(config, run)
    index = _load_name_index(config, index_path)

    labels = label_run(store, index)
    console.print(f"Labelled {len(labels)} attempt(s)")

    if labels_file is not None:
        result = ingest_manual_labels(labels_file, store, index)
        console.print(f"Applied {result.applied} manual label(s)")
        for rejection in result.rejected:
            console.print(
                f"[red]rejected[/] row {rejection.row} ({rejection.attempt_id or '-'}): "
                f"{rejection.kind}: {rejection.reason}"
            )

    problems = audit_labels(store)
    for problem in problems:
        console.print(f"[red]{problem}[/]")
    if problems:
        sys.exit(1)


@main.command()
@click.argument("run")
@click.option("--dataset", type=click.Path(exists=True, file_okay=False, path_type=Path),
              help="Dataset directory (default: the one the run used)")
@click.option("--index", "index_path", type=click.Path(dir_okay=False, path_type=Path),
              help="Known-name index used for attempts not yet labelled")
@click.pass_obj
def report(state: CliState, run: str, dataset: Path | None, index_path: Path | None) -> None:
    """Write the report tables of a run."""
    from .dataset import load_manifest
    from .report import build_report

    config = state.config()
    store = _run_store(config, run)
    _, dataset_dir = store.load_config()
    index = _load_name_index(config, index_path)
    written = build_report(store, load_manifest(dataset or dataset_dir), index)
    for path in written:
        if path.suffix == ".txt":
            click.echo(path.read_text(encoding="utf-8"), nl=False)
    stderr_console.print(f"[dim]Report:[/] {written[0].parent}")


@main.command()
@click.argument("files", nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("-t", "--theorem", "theorem_name", help="Declaration to minimize (default: the last one)")
@click.option("--annotate", is_flag=True, help="Comment out removed lines instead of deleting them")
@click.option("-o", "--output", type=click.Path(path_type=Path),
              help="Write the result here; a directory when several files are given")
@click.option("-j", "--jobs", type=click.IntRange(min=1), default=1, show_default=True,
              help="Proofs minimized concurrently")
@click.option("--timeout", type=float, help="Per-trial timeout in seconds")
@click.pass_obj
def debloat(
    state: CliState,
    files: tuple[Path, ...],
    theorem_name: str | None,
    annotate: bool,
    output: Path | None,
    jobs: int,
    timeout: float | None,
) -> None:
    """Remove lines verified proofs do not need.

    Exits 1 if any proof does not verify.
    """
    from .dataset import read_lemma_text
    from .debloat import debloat_many
    from .errors import DebloatError
    from .script import render_declaration

    config = state.config()
    items: list[tuple[str, str, str]] = []
    for file in files:
        _, preamble, statement, proof = read_lemma_text(file.read_text(encoding="utf-8"), theorem_name or "")
        items.append((statement, proof, preamble))

    with _open_pool(config, jobs) as pool:
        results = debloat_many(items, pool, timeout or config.verify_timeout_s, jobs)

    failed = 0
    for file, (statement, _, preamble), result in zip(files, items, results):
        if isinstance(result, DebloatError):
            failed += 1
            stderr_console.print(f"[bold red]{file}:[/] {result}", highlight=False)
            continue
        body = result.annotated_proof if annotate else result.minimized_proof
        rendered = render_declaration(statement, body.split("\n"), preamble)
        if output is None:
            click.echo(rendered, nl=False)
        elif len(files) > 1:
            output.mkdir(parents=True, exist_ok=True)
            (output / file.name).write_text(rendered, encoding="utf-8")
        else:
            output.write_text(rendered, encoding="utf-8")
        stderr_console.print(
            f"[bold green]{file.name}: {result.original_length} -> {result.minimized_length} line(s)[/] "
            f"({result.trials} trial(s))"
        )
    if failed:
        sys.exit(1)


# --- datasets ---


@main.command("import")
@click.argument("directory", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--verify", "verify_files", is_flag=True, help="Verify every file")
@click.option("--glob", "pattern", default="**/*.lean", show_default=True)
@click.option("-j", "--jobs", type=click.IntRange(min=1), help="REPL workers")
@click.option("--dry-run", is_flag=True, help="Do not write the manifest")
@click.pass_obj
def import_(
    state: CliState,
    directory: Path,
    verify_files: bool,
    pattern: str,
    jobs: int | None,
    dry_run: bool,
) -> None:
    """Build a manifest for a directory of lemma files."""
    from .dataset import import_dataset, write_manifest

    config = state.config()
    with track_progress(state.porcelain) as tracker:
        if verify_files:
            with _open_pool(config, jobs) as pool:
                manifest = import_dataset(
                    directory, True, pool, pattern, config.batch_timeout_s, tracker,
                )
        else:
            manifest = import_dataset(directory, glob=pattern, tracker=tracker)

    if not dry_run:
        write_manifest(manifest, directory)

    table = Table(title=f"{manifest.dataset_name}: {len(manifest.entries)} lemma(s)")
    table.add_column("problem")
    table.add_column("lemmas", justify="right")
    for problem, entries in manifest.by_problem().items():
        table.add_row(problem, str(len(entries)))
    console.print(table)
    for failure in manifest.failures:
        console.print(f"[yellow]failed[/] {failure.file}: {failure.error}")


@main.command()
@click.argument("dataset", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output")
@click.pass_obj
def stats(state: CliState, dataset: Path, as_json: bool) -> None:
    """Proof-length statistics per source problem."""
    from dataclasses import asdict

    from .dataset import dataset_stats, load_manifest

    rows = dataset_stats(load_manifest(dataset))
    if as_json:
        click.echo(json.dumps([asdict(row) for row in rows], indent=2, sort_keys=True))
        return

    table = Table(title="Proof length")
    for column in ("problem", "lemmas", "mean", "max", "min", "std", "lines"):
        table.add_column(column, justify="left" if column == "problem" else "right")
    for row in rows:
        table.add_row(
            row.problem, str(row.count), f"{row.mean:.1f}", str(row.max), str(row.min),
            f"{row.std:.1f}", str(row.total_lines),
        )
    console.print(table)


@main.command()
@click.argument("dataset", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--verify", "verify_files", is_flag=True, help="Re-verify entries marked verified")
@click.option("-j", "--jobs", type=click.IntRange(min=1), help="REPL workers")
@click.pass_obj
def audit(state: CliState, dataset: Path, verify_files: bool, jobs: int | None) -> None:
    """Check that manifest and lemma files agree."""
    from .dataset import audit_dataset

    config = state.config()
    if verify_files:
        with _open_pool(config, jobs) as pool:
            problems = audit_dataset(dataset, pool, config.batch_timeout_s)
    else:
        problems = audit_dataset(dataset)

    for problem in problems:
        console.print(f"[red]{problem}[/]")
    if problems:
        sys.exit(1)
    console.print("[green]✓[/] dataset is coherent")


@main.group()
def index() -> None:
    """Known-name index for hallucination detection."""


@index.command("build")
@click.option("-o", "--out", type=click.Path(dir_okay=False, path_type=Path), help="Index file")
@click.pass_obj
def index_build(state: CliState, out: Path | None) -> None:
    """Enumerate the constants of the configured Lean environment."""
    import time

    from .labels import build_name_index

    config = state.config()
    started = time.monotonic()
    preamble = "".join(f"{line}\n" for line in config.base_imports)
    with _open_pool(config, 1) as pool:
        name_index = build_name_index(pool, config.lean_version, preamble, config.batch_timeout_s)
    path = out or config.datasets_dir / NAME_INDEX_FILE
    name_index.save(path)
    console.print(
        f"[green]✓[/] {len(name_index)} names written to {path} "
        f"in {format_duration(time.monotonic() - started)}"
    )


@main.group("config")
def config_group() -> None:
    """Show or change configuration."""


@config_group.command("show")
@click.pass_obj
def config_show(state: CliState) -> None:
    """Print the resolved configuration."""
    config = state.config()
    table = Table(title="Configuration")
    table.add_column("key")
    table.add_column("value")
    for key, value in config.model_dump(mode="json").items():
        table.add_row(key, json.dumps(value, sort_keys=True) if isinstance(value, (dict, list)) else str(value))
    console.print(table)


@config_group.command("set")
@click.argument("key")
@click.argument("value")
@click.pass_obj
def config_set(state: CliState, key: str, value: str) -> None:
    """Set a configuration value.

    Example:
        lemmaforge config set pool_size 8
    """
    set_config(key, value, state.config_path)
    console.print(f"[green]✓[/] Set {key}")


if __name__ == "__main__":
    main()
