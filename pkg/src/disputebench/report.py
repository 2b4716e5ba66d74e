"""Cross-corpus comparison of regression tables with significance stars and predictor overlap."""

from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from rich.console import Console
from rich.table import Table

from disputebench.metrics import MISSING
from disputebench.stats import CONST, RESULT_COLUMNS

console = Console()

STAR_LEVELS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))


class ReportError(Exception):
    pass


def stars(p: float | None) -> str:
    if p is None or np.isnan(p):
        return ""
    for bound, mark in STAR_LEVELS:
        if p < bound:
            return mark
    return ""


def format_coefficient(beta: float, p: float) -> str:
    if np.isnan(beta):
        return MISSING
    return f"{beta:.3f}{stars(p)}"


def read_results_table(path: str | Path) -> pd.DataFrame:
    frame = pd.read_csv(path, na_values=[MISSING], keep_default_na=False)
    missing = set(RESULT_COLUMNS) - set(frame.columns)
    if missing:
        raise ReportError(f"{path} is not a regression table (missing {sorted(missing)})")
    return frame


def significant_ivs(frame: pd.DataFrame, alpha: float = 0.05) -> dict[str, frozenset[str]]:
    """Per DV, the predictors (intercept excluded) with p < alpha."""
    hits = frame[(frame["iv"] != CONST) & (frame["p"] < alpha)]
    result = {dv: frozenset() for dv in frame["dv"].unique()}
    for dv, group in hits.groupby("dv"):
        result[dv] = frozenset(group["iv"])
    return result


def _overlap(sets: list[frozenset[str]]) -> float:
    union = frozenset().union(*sets)
    if not union:
        return 100.0
    return 100.0 * len(frozenset.intersection(*sets)) / len(union)


@dataclass
class DvComparison:
    dv: str
    significant: dict[str, frozenset[str]]
    shared: frozenset[str]
    overlap: float

    def only_in(self, corpus: str) -> frozenset[str]:
        others = [s for name, s in self.significant.items() if name != corpus]
        return self.significant[corpus] - frozenset().union(*others)


@dataclass
class ComparisonReport:
    corpora: list[str]
    dvs: list[str]
    aligned: pd.DataFrame
    comparisons: list[DvComparison] = field(default_factory=list)
    overall_overlap: float = 100.0
    warnings: list[str] = field(default_factory=list)


def compare_results(tables: Mapping[str, pd.DataFrame], alpha: float = 0.05) -> ComparisonReport:
    """Align coefficient tables on their shared DVs and measure significant-predictor overlap."""
    if len(tables) < 2:
        raise ReportError("a comparison needs at least two regression tables")
    names = list(tables)
    dv_sets = {name: set(frame["dv"].unique()) for name, frame in tables.items()}
    shared_dvs = sorted(set.intersection(*dv_sets.values()))
    warnings = []
    for name, dvs in dv_sets.items():
        extra = sorted(dvs - set(shared_dvs))
        if extra:
            warnings.append(f"{name}: DVs {', '.join(extra)} are not in every table; skipped")

    columns = {}
    for name, frame in tables.items():
        kept = frame[frame["dv"].isin(shared_dvs)].drop_duplicates(["dv", "iv"])
        columns[name] = pd.Series(
            [format_coefficient(b, p) for b, p in zip(kept["beta"], kept["p"], strict=True)],
            index=pd.MultiIndex.from_frame(kept[["dv", "iv"]]),
        )
    aligned = pd.DataFrame(columns).sort_index().fillna(MISSING)

    significant = {name: significant_ivs(frame, alpha) for name, frame in tables.items()}
    comparisons = []
    for dv in shared_dvs:
        per_corpus = {name: significant[name].get(dv, frozenset()) for name in names}
        sets = list(per_corpus.values())
        comparisons.append(
            DvComparison(dv, per_corpus, frozenset.intersection(*sets), _overlap(sets))
        )
    pooled = [
        frozenset((c.dv, iv) for c in comparisons for iv in c.significant[name]) for name in names
    ]
    return ComparisonReport(names, shared_dvs, aligned, comparisons, _overlap(pooled), warnings)


def overlap_frame(report: ComparisonReport) -> pd.DataFrame:
    rows = []
    for comp in report.comparisons:
        row = {"dv": comp.dv, "overlap": comp.overlap, "shared": " ".join(sorted(comp.shared))}
        for name in report.corpora:
            row[f"only_{name}"] = " ".join(sorted(comp.only_in(name)))
        rows.append(row)
    return pd.DataFrame(rows, columns=["dv", "overlap", "shared", *[f"only_{n}" for n in report.corpora]])


def write_report(report: ComparisonReport, output: str | Path) -> None:
    output = Path(output)
    output.mkdir(parents=True, exist_ok=True)
    report.aligned.to_csv(output / "aligned.csv", na_rep=MISSING)
    overlap_frame(report).to_csv(output / "overlap.csv", index=False, na_rep=MISSING)


def print_report(report: ComparisonReport) -> None:
    for warning in report.warnings:
        console.print(f"[yellow]{warning}[/yellow]")

    table = Table(title="Coefficients (*, **, *** indicate p < .05, .01, .001)")
    table.add_column("DV")
    table.add_column("IV")
    for name in report.corpora:
        table.add_column(name, justify="right")
    for (dv, iv), row in report.aligned.iterrows():
        table.add_row(dv, iv, *[row[name] for name in report.corpora])
    console.print(table)

    overlap = Table(title="Significant predictors")
    overlap.add_column("DV")
    overlap.add_column("Overlap", justify="right")
    overlap.add_column("Shared")
    for name in report.corpora:
        overlap.add_column(f"Only {name}")
    for comp in report.comparisons:
        overlap.add_row(
            comp.dv,
            f"{comp.overlap:.0f}%",
            ", ".join(sorted(comp.shared)) or "[dim]-[/dim]",
            *[", ".join(sorted(comp.only_in(n))) or "[dim]-[/dim]" for n in report.corpora],
        )
    console.print(overlap)
    console.print(f"\n[bold]Overall overlap:[/bold] {report.overall_overlap:.1f}%")
