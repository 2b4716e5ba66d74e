"""Command-line interface for the dispute negotiation benchmark."""

import asyncio
from pathlib import Path

import click
import yaml
from dotenv import load_dotenv
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from disputebench.annotate import (
    AnnotatorConfig,
    LLMAnnotator,
    a_kappa,
    a_kappa_by_label,
    annotate_rules,
    classification_report,
    load_judgments,
    load_prompt_template,
)
from disputebench.corpus import TRAITS, iter_corpus, load_corpus, write_corpus
from disputebench.gateway import (
    PROVIDERS,
    ChatClient,
    PolicyKind,
    ProviderConfig,
    resolve_credential,
)
from disputebench.metrics import (
    ALL_DVS,
    STRATEGY_DVS,
    TraitThresholds,
    build_speaker_records,
    corpus_stage_distribution,
    heatmap_rows,
    high_trait_filter,
    write_matrix,
    write_records_table,
)
from disputebench.negotiation import MAX_ROUNDS, Role
from disputebench.persona import TraitDistribution
from disputebench.report import compare_results, print_report, read_results_table, write_report
from disputebench.simulator import (
    BatchConfig,
    DisputeSimulator,
    plan_simulations,
)
from disputebench.stats import regression_battery, simple_effects_frame, write_results_table

console = Console()

RESOLVED_CONFIG = "resolved_config.yaml"


def _load_config(ctx: click.Context, param: click.Parameter, value: str | None) -> str | None:
    if value is None:
        return None
    with open(value, encoding="utf-8") as f:
        data = yaml.safe_load(f) or {}
    if not isinstance(data, dict):
        raise click.BadParameter("config file must hold a mapping of subcommand sections")
    ctx.default_map = {**(ctx.default_map or {}), **data}
    return value


def _save_resolved(ctx: click.Context, directory: Path) -> Path:
    """Record every parameter of the running subcommand, merged into the directory's config file."""
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / RESOLVED_CONFIG
    data = {}
    if path.exists():
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    params = {}
    for key, value in sorted(ctx.params.items()):
        if isinstance(value, tuple):
            value = list(value)
        params[key] = value
    data[ctx.info_name] = params
    path.write_text(yaml.safe_dump(data, sort_keys=True), encoding="utf-8")
    return path


def _run(coro_or_fn) -> None:
    """Run a command body with the shared interrupt/error handling."""
    try:
        if asyncio.iscoroutine(coro_or_fn):
            asyncio.run(coro_or_fn)
        else:
            coro_or_fn()
    except KeyboardInterrupt:
        console.print("\n[yellow]Interrupted by user[/yellow]")
    except Exception as e:
        console.print(f"[red]Error: {escape(str(e))}[/red]")
        raise click.Abort() from e


@click.group()
@click.option(
    "--config",
    type=click.Path(exists=True, dir_okay=False),
    is_eager=True,
    expose_value=False,
    callback=_load_config,
    help="YAML file with per-subcommand option defaults",
)
@click.version_option(package_name="disputebench")
def main() -> None:
    """Simulate, annotate and analyze personality-conditioned dispute negotiations."""
    load_dotenv()


# simulate


@main.command()
@click.option("--n", "n", default=10, type=click.IntRange(min=0), help="Number of dialogues")
@click.option("--seed", default=0, type=int, help="Root seed for the whole batch")
@click.option("--scripted", is_flag=True, help="Use scripted negotiators instead of a model")
@click.option(
    "--policy",
    default=PolicyKind.CONCESSION.value,
    type=click.Choice([k.value for k in PolicyKind]),
    help="Scripted policy for both roles",
)
@click.option("--provider", default="openai", type=click.Choice(sorted(PROVIDERS)))
@click.option("--model", default="gpt-4o", help="Model name for live simulation")
@click.option("--endpoint", default=None, help="Override the provider endpoint URL")
@click.option("--temperature", default=1.0, type=float)
@click.option("--parallelism", "-c", default=4, type=click.IntRange(min=1), help="Concurrent dialogues")
@click.option("--max-rounds", default=MAX_ROUNDS, type=click.IntRange(min=1))
@click.option("--opener", default=Role.BUYER.value, type=click.Choice([r.value for r in Role]))
@click.option(
    "--distribution",
    default=None,
    type=click.Path(exists=True, dir_okay=False),
    help="Trait distribution JSON (defaults to the bundled one)",
)
@click.option("--resume", is_flag=True, help="Keep finished dialogues and replay checkpoints")
@click.option("--output", "-o", default="./runs/corpus.jsonl", help="Output corpus file")
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose output")
@click.pass_context
def simulate(
    ctx: click.Context,
    n: int,
    seed: int,
    scripted: bool,
    policy: str,
    provider: str,
    model: str,
    endpoint: str | None,
    temperature: float,
    parallelism: int,
    max_rounds: int,
    opener: str,
    distribution: str | None,
    resume: bool,
    output: str,
    verbose: bool,
) -> None:
    """Run a batch of simulated negotiations and write them as a corpus.

    Examples:

        disputebench simulate --scripted --n 10 --seed 7 -o runs/sim.jsonl

        disputebench simulate --model gpt-4o --n 500 -c 8
    """
    output_path = Path(output)
    checkpoint_path = output_path.with_suffix(".checkpoints.jsonl")

    async def body() -> None:
        if scripted:
            agents = {role: PolicyKind(policy) for role in Role}
        else:
            spec = ProviderConfig(
                provider=provider,
                model=model,
                endpoint=endpoint,
                temperature=temperature,
                verbose=verbose,
            )
            resolve_credential(spec)
            agents = {role: spec for role in Role}

        dist = TraitDistribution.load(distribution) if distribution else None
        configs = plan_simulations(n, seed, agents, dist, max_rounds, Role(opener))

        console.print(f"[bold]Simulating {len(configs)} dialogues[/bold]")
        simulator = DisputeSimulator(BatchConfig(parallelism, verbose))
        try:
            result = await simulator.run_batch(configs, output_path, checkpoint_path, resume=resume)
        finally:
            await simulator.aclose()

        for issue in result.issues:
            console.print(f"[yellow]Skipping {escape(issue)}[/yellow]")
        _save_resolved(ctx, output_path.parent)
        simulator.print_summary()
        console.print(f"[green]Wrote {len(result.dialogues)} dialogues to {output_path}[/green]")

    _run(body())


# annotate


@main.command()
@click.argument("corpus", type=click.Path(exists=True, dir_okay=False))
@click.option("--annotator", default="rules", type=click.Choice(["rules", "llm"]))
@click.option("--reannotate", is_flag=True, help="Relabel dialogues that already carry labels")
@click.option("--provider", default="openai", type=click.Choice(sorted(PROVIDERS)))
@click.option("--model", default="gpt-4o", help="Annotation model")
@click.option("--endpoint", default=None, help="Override the provider endpoint URL")
@click.option(
    "--prompt",
    default=None,
    type=click.Path(exists=True, dir_okay=False),
    help="Annotation prompt template (defaults to the bundled one)",
)
@click.option("--concurrency", "-c", default=4, type=click.IntRange(min=1))
@click.option("--output", "-o", required=True, help="Annotated corpus file")
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose output")
@click.pass_context
def annotate(
    ctx: click.Context,
    corpus: str,
    annotator: str,
    reannotate: bool,
    provider: str,
    model: str,
    endpoint: str | None,
    prompt: str | None,
    concurrency: int,
    output: str,
    verbose: bool,
) -> None:
    """Label every segment of a corpus with an IRP strategy."""

    async def body() -> None:
        dialogues = load_corpus(corpus)
        todo = [d for d in dialogues if reannotate or not (d.is_annotated and d.turns)]
        if not todo:
            console.print("[yellow]Corpus is already annotated; nothing to do (use --reannotate)[/yellow]")
        failed = 0
        if annotator == "rules":
            labelled = {d.id: annotate_rules(d) for d in todo}
        else:
            spec = ProviderConfig(provider=provider, model=model, endpoint=endpoint, temperature=0.0, verbose=verbose)
            config = AnnotatorConfig(concurrency=concurrency, reannotate=reannotate, verbose=verbose)
            async with ChatClient(spec) as client:
                llm = LLMAnnotator(client, config, load_prompt_template(prompt))
                batch = await llm.annotate_corpus(todo)
            labelled = {d.id: d for d in batch.dialogues}
            failed = len(batch.failed)
            for dialogue, error in batch.failed:
                console.print(f"[red]Failed {dialogue.id}: {escape(error)}[/red]")
            for warning in llm.stats.warnings:
                console.print(f"[yellow]{escape(warning)}[/yellow]")

        result = [labelled.get(d.id, d) for d in dialogues]
        write_corpus(result, output)
        _save_resolved(ctx, Path(output).parent)

        segments = sum(len(t.segments) for d in result for t in d.turns)
        labelled_segments = sum(
            1 for d in result for t in d.turns for s in t.segments if s.strategy is not None
        )
        coverage = 100.0 * labelled_segments / segments if segments else 100.0
        failed_str = f"[red]{failed}[/red]" if failed else str(failed)
        console.print(
            f"\n[bold]Summary[/bold]\n"
            f"  Dialogues:  {len(result)}\n"
            f"  Annotated:  [green]{len(labelled)}[/green]\n"
            f"  Skipped:    {len(dialogues) - len(todo)}\n"
            f"  Failed:     {failed_str}\n"
            f"  Segments:   {segments}\n"
            f"  Coverage:   {coverage:.1f}%"
        )

    _run(body())


# evaluate


@main.command()
@click.argument("predicted", type=click.Path(exists=True, dir_okay=False))
@click.argument("gold", type=click.Path(exists=True, dir_okay=False))
@click.option(
    "--judgments",
    default=None,
    type=click.Path(exists=True, dir_okay=False),
    help="Annotator verdicts on the predicted labels (JSONL)",
)
@click.option("--output", "-o", required=True, help="Output directory")
@click.pass_context
def evaluate(ctx: click.Context, predicted: str, gold: str, judgments: str | None, output: str) -> None:
    """Score predicted labels against a gold-labelled copy of the same corpus."""

    def body() -> None:
        report = classification_report(load_corpus(predicted), load_corpus(gold))
        out = Path(output)
        out.mkdir(parents=True, exist_ok=True)
        frame = report.to_frame()
        frame.to_csv(out / "classification.csv", index=False, na_rep="NA")
        report.confusion.to_frame().to_csv(out / "confusion.csv")
        for warning in report.warnings:
            console.print(f"[yellow]{escape(warning)}[/yellow]")

        table = Table(title="Per-class F1")
        for column in ("Label", "Precision", "Recall", "F1", "Support"):
            table.add_column(column, justify="left" if column == "Label" else "right")
        for label, score in report.per_class.items():
            table.add_row(
                str(getattr(label, "value", label)),
                f"{score.precision:.3f}",
                f"{score.recall:.3f}",
                f"{score.f1:.3f}",
                str(score.support),
            )
        console.print(table)
        console.print(
            f"  Accuracy: {report.accuracy:.3f}  Macro F1: {report.macro_f1:.3f}  "
            f"Weighted F1: {report.weighted_f1:.3f}"
        )

        if judgments:
            items = load_judgments(judgments)
            overall = a_kappa(items)
            by_label = a_kappa_by_label(items)
            lines = ["label,a_kappa", f"ALL,{overall!r}"]
            lines += [f"{label},{value!r}" for label, value in by_label.items()]
            (out / "agreement.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
            console.print(f"  A-Kappa:  {overall:.3f} over {len(items)} items")
        _save_resolved(ctx, out)

    _run(body)


# analyze


@main.command()
@click.argument("corpus", type=click.Path(exists=True, dir_okay=False))
@click.option("--stages", default=5, type=click.IntRange(min=1), help="Number of dialogue stages")
@click.option("--coding", default="effect", type=click.Choice(["effect", "dummy"]))
@click.option("--robust", default="HC1", type=click.Choice(["HC1", "none"]))
@click.option("--standardize/--no-standardize", default=True, help="z-score trait predictors")
@click.option(
    "--role-contingent",
    is_flag=True,
    help="Also fit dummy-coded interaction models and write simple effects",
)
@click.option("--strategy-ratios", is_flag=True, help="Add one DV per strategy ratio")
@click.option("--six-point-threshold", default=2, type=int, help="High-trait level on the six-point scale")
@click.option("--decimal-threshold", default=3.5, type=float, help="High-trait bound on the 1-5 scale")
@click.option("--output", "-o", required=True, help="Output directory")
@click.option("--verbose", "-v", is_flag=True, help="Enable verbose output")
@click.pass_context
def analyze(
    ctx: click.Context,
    corpus: str,
    stages: int,
    coding: str,
    robust: str,
    standardize: bool,
    role_contingent: bool,
    strategy_ratios: bool,
    six_point_threshold: int,
    decimal_threshold: float,
    output: str,
    verbose: bool,
) -> None:
    """Build speaker records, fit the regression battery and write heatmap and stage matrices."""

    def body() -> None:
        dialogues = list(iter_corpus(corpus))
        records = build_speaker_records(dialogues)
        out = Path(output)
        out.mkdir(parents=True, exist_ok=True)
        write_records_table(records, out / "records.csv")

        dvs = ALL_DVS + (STRATEGY_DVS if strategy_ratios else ())
        battery = regression_battery(records, dvs, coding, robust, standardize)
        write_results_table(battery.results, out / f"regression_{coding}.csv")
        errors = dict(battery.errors)
        warnings = battery.warnings
        if role_contingent:
            interacted = regression_battery(records, dvs, "dummy", robust, standardize, interactions=True)
            write_results_table(interacted.results, out / "regression_dummy_interactions.csv")
            write_results_table(simple_effects_frame(interacted.results), out / "simple_effects.csv")
            errors.update({f"{dv} (interactions)": e for dv, e in interacted.errors.items()})
            warnings += interacted.warnings

        thresholds = TraitThresholds(six_point_threshold, decimal_threshold)
        write_matrix(heatmap_rows(records, thresholds), out / "heatmap.csv")
        by_id = {d.id: d for d in dialogues}
        write_matrix(
            corpus_stage_distribution(((d, None) for d in dialogues), stages).to_frame(),
            out / "stages_all.csv",
        )
        for role in Role:
            write_matrix(
                corpus_stage_distribution(((d, role) for d in dialogues), stages).to_frame(),
                out / f"stages_{role.value}.csv",
            )
        for trait in TRAITS:
            group = high_trait_filter(records, trait, thresholds)
            write_matrix(
                corpus_stage_distribution(((by_id[r.dialogue_id], r.role) for r in group), stages).to_frame(),
                out / f"stages_high_{trait.value}.csv",
            )
        _save_resolved(ctx, out)

        if verbose:
            for warning in warnings:
                console.print(f"[yellow]{escape(warning)}[/yellow]")
        for dv, error in sorted(errors.items()):
            console.print(f"[yellow]Skipped {dv}: {escape(error)}[/yellow]")
        console.print(
            f"\n[bold]Summary[/bold]\n"
            f"  Dialogues:  {len(dialogues)}\n"
            f"  Records:    {len(records)}\n"
            f"  Models:     [green]{len(battery.results)}[/green]\n"
            f"  Skipped:    {len(errors)}\n"
            f"  Output:     {out}"
        )

    _run(body)


# report


def _table_names(tables: tuple[str, ...]) -> dict[str, str]:
    names: dict[str, str] = {}
    for item in tables:
        name, sep, path = item.partition("=")
        if not sep:
            path = item
            name = Path(item).parent.name or Path(item).stem
        if name in names:
            name = f"{name}:{Path(path).stem}"
        names[name] = path
    return names


@main.command()
@click.argument("tables", nargs=-1, required=True)
@click.option("--alpha", default=0.05, type=float, help="Significance level for overlap")
@click.option("--output", "-o", required=True, help="Output directory")
@click.pass_context
def report(ctx: click.Context, tables: tuple[str, ...], alpha: float, output: str) -> None:
    """Compare regression tables across corpora, given as PATH or NAME=PATH."""

    def body() -> None:
        frames = {name: read_results_table(path) for name, path in _table_names(tables).items()}
        comparison = compare_results(frames, alpha)
        write_report(comparison, output)
        _save_resolved(ctx, Path(output))
        print_report(comparison)

    _run(body)


if __name__ == "__main__":
    main()
