"""Report emission: CSV rows, Markdown tables, and recall-vs-k plots.

Markdown tables mirror the reference layout (rows: Percentage, then
Recall@k per context for ascending k; columns: method variants) so runs
are visually diffable against published result tables.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ContractViolation
from .metrics import MetricReport
from .transfer import TransferReport

DEFAULT_K_VALUES = (1, 3, 5, 10, 50, 100)


def metric_row_labels(k_values: Sequence[int] = DEFAULT_K_VALUES) -> list[str]:
    """Fixed metric row ordering: Percentage, then Recall@k, m.i. before o.i."""
    labels = ["Percentage"]
    for k in k_values:
        labels.append(f"Recall@{k}: m.i.")
        labels.append(f"Recall@{k}: o.i.")
    return labels


def metric_rows(report: MetricReport) -> list[tuple[str, float]]:
    rows: list[tuple[str, float]] = [("Percentage", report.percentage)]
    for k in report.k_values:
        rows.append((f"Recall@{k}: m.i.", report.recall_mi[k]))
        rows.append((f"Recall@{k}: o.i.", report.recall_oi[k]))
    return rows


def _cell(value: float | None) -> str:
    return "n/a" if value is None else f"{value:.3f}"


def markdown_table(columns: Mapping[str, MetricReport], title: str | None = None) -> str:
    """One table: metric rows against named method columns."""
    if not columns:
        raise ContractViolation("a table needs at least one column")
    names = list(columns)
    k_values = next(iter(columns.values())).k_values
    for report in columns.values():
        if report.k_values != k_values:
            raise ContractViolation("all columns must share k_values")
    lines = []
    if title:
        lines.append(f"### {title}")
        lines.append("")
    lines.append("| Metric | " + " | ".join(names) + " |")
    lines.append("|---" * (len(names) + 1) + "|")
    per_column = {name: dict(metric_rows(report)) for name, report in columns.items()}
    for label in metric_row_labels(k_values):
        cells = " | ".join(_cell(per_column[name][label]) for name in names)
        lines.append(f"| {label} | {cells} |")
    return "\n".join(lines) + "\n"


def metric_report_csv_rows(report: MetricReport) -> list[list[str]]:
    """Long-form rows: backend, metric, context, value."""
    rows = [[report.backend_name, "Percentage", "m.i.", repr(report.percentage)]]
    for k in report.k_values:
        rows.append([report.backend_name, f"Recall@{k}", "m.i.", repr(report.recall_mi[k])])
        rows.append([report.backend_name, f"Recall@{k}", "o.i.", repr(report.recall_oi[k])])
    return rows


def transfer_report_csv(report: TransferReport, header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    writer = csv.writer(buf)
    writer.writerow(["backend", "metric", "context", "value"])
    for name in report.per_embedding:
        for row in metric_report_csv_rows(report.per_embedding[name]):
            writer.writerow(row)
    writer.writerow(["(transfer)", "TransferRecall@10", "m.i.",
                     "n/a" if report.transfer_recall is None else repr(report.transfer_recall)])
    return buf.getvalue()


def transfer_report_markdown(report: TransferReport, title: str,
                             footer: str | None = None) -> str:
    """Per-embedding columns for one variant, plus the transfer-recall line."""
    body = markdown_table(dict(report.per_embedding), title=title)
    optimized = ", ".join(report.optimized_set) or "none"
    lines = [body]
    lines.append(f"Optimized embeddings: {optimized}")
    if report.transfer_recall is None:
        lines.append("Transfer recall (mean Recall@10, m.i., held-out backends): n/a")
    else:
        lines.append(
            "Transfer recall (mean Recall@10, m.i., held-out backends): "
            f"{report.transfer_recall:.2f}"
        )
    if footer:
        lines.append("")
        lines.append(footer)
    return "\n".join(lines) + "\n"


def comparison_markdown(variants: Mapping[str, TransferReport],
                        footer: str | None = None) -> str:
    """Side-by-side tables across variants, one section per evaluated backend,
    with a transfer-recall summary line."""
    if not variants:
        raise ContractViolation("comparison needs at least one variant")
    first = next(iter(variants.values()))
    backend_names = list(first.per_embedding)
    sections = []
    for backend in backend_names:
        columns = {vname: rep.per_embedding[backend] for vname, rep in variants.items()
                   if backend in rep.per_embedding}
        sections.append(markdown_table(columns, title=f"Evaluated with {backend}"))
    summary = "Transfer recall: " + ", ".join(
        f"{vname} = " + ("n/a" if rep.transfer_recall is None
                         else f"{rep.transfer_recall:.2f}")
        for vname, rep in variants.items()
    )
    parts = sections + [summary]
    if footer:
        parts.append(footer)
    return "\n".join(parts) + "\n"


def comparison_csv(variants: Mapping[str, TransferReport],
                   header_comment: str | None = None) -> str:
    buf = io.StringIO()
    if header_comment:
        buf.write(f"# {header_comment}\n")
    writer = csv.writer(buf)
    writer.writerow(["backend", "metric", "context", "variant", "value"])
    for vname, report in variants.items():
        for backend in report.per_embedding:
            for row in metric_report_csv_rows(report.per_embedding[backend]):
                writer.writerow(row[:3] + [vname] + row[3:])
        writer.writerow(["(transfer)", "TransferRecall@10", "m.i.", vname,
                         "n/a" if report.transfer_recall is None
                         else repr(report.transfer_recall)])
    return buf.getvalue()


def plot_recall_curves(report: TransferReport, path, title: str = "") -> Path:
    """Recall@k vs k per backend (m.i. context), written as SVG or PNG."""
    import matplotlib

    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "privkit"
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for name, rep in report.per_embedding.items():
        ks = list(rep.k_values)
        ax.plot(ks, [rep.recall_mi[k] for k in ks], marker="o", label=name)
    ax.set_xlabel("k")
    ax.set_ylabel("Recall@k (m.i.) %")
    ax.set_xscale("log")
    ax.set_ylim(0, 105)
    if title:
        ax.set_title(title)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, metadata={"Date": None} if path.suffix == ".svg" else None)
    plt.close(fig)
    return path
