"""Report emission: markdown and CSV tables, machine JSON, and figures."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from optagent.evaluation import Report


def report_to_markdown(report: Report) -> str:
    lines = [
        "| Dataset | Tasks | Accuracy % | Wrong Answer % | Compile Error % |",
        "| --- | ---: | ---: | ---: | ---: |",
    ]
    for row in report.rows:
        lines.append(
            f"| {row.dataset} | {row.task_count} | {row.accuracy:.2f} "
            f"| {row.wrong_rate:.2f} | {row.compile_rate:.2f} |"
        )
    lines.append(f"| Macro Avg | | {report.macro_avg:.2f} | | |")
    if report.metadata:
        lines.append("")
        lines.append("Run configuration:")
        for key in sorted(report.metadata):
            lines.append(f"- {key}: {report.metadata[key]}")
    return "\n".join(lines) + "\n"


def _write_csv(report: Report, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["dataset", "task_count", "accuracy", "wrong_rate", "compile_rate"])
        for row in report.rows:
            writer.writerow(
                [row.dataset, row.task_count, f"{row.accuracy:.2f}",
                 f"{row.wrong_rate:.2f}", f"{row.compile_rate:.2f}"]
            )
        writer.writerow(["macro_avg", "", f"{report.macro_avg:.2f}", "", ""])


def _accuracy_figure(report: Report, path: Path) -> None:
    datasets = [row.dataset for row in report.rows]
    accuracy = [row.accuracy for row in report.rows]
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(datasets)), 3.2))
    ax.bar(datasets, accuracy, color="#4878d0")
    ax.set_ylabel("pass@1 (%)")
    ax.set_ylim(0, 100)
    ax.set_title("Accuracy by dataset")
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _error_figure(report: Report, path: Path) -> None:
    datasets = [row.dataset for row in report.rows]
    wrong = [row.wrong_rate for row in report.rows]
    compile_ = [row.compile_rate for row in report.rows]
    positions = range(len(datasets))
    width = 0.38
    fig, ax = plt.subplots(figsize=(max(4, 1.2 * len(datasets)), 3.2))
    ax.bar([p - width / 2 for p in positions], wrong, width, label="wrong answer", color="#d65f5f")
    ax.bar([p + width / 2 for p in positions], compile_, width, label="compile error", color="#ee854a")
    ax.set_xticks(list(positions))
    ax.set_xticklabels(datasets, rotation=20)
    ax.set_ylabel("rate (%)")
    ax.set_title("Error decomposition by dataset")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_report(report: Report, out_dir: str | Path, name: str = "report") -> dict[str, Path]:
    """Emit every report artifact; returns the paths written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    figures = out / "figures"
    figures.mkdir(exist_ok=True)

    paths = {
        "json": out / f"{name}.json",
        "markdown": out / f"{name}.md",
        "csv": out / f"{name}.csv",
        "accuracy_figure": figures / f"{name}_accuracy.png",
        "error_figure": figures / f"{name}_errors.png",
    }
    paths["json"].write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )
    paths["markdown"].write_text(report_to_markdown(report), encoding="utf-8")
    _write_csv(report, paths["csv"])
    _accuracy_figure(report, paths["accuracy_figure"])
    _error_figure(report, paths["error_figure"])
    return paths


def ablation_markdown(reports: dict[str, Report]) -> str:
    datasets: list[str] = []
    for report in reports.values():
        for row in report.rows:
            if row.dataset not in datasets:
                datasets.append(row.dataset)
    header = "| Variant | " + " | ".join(datasets) + " | Macro Avg |"
    rule = "| --- |" + " ---: |" * (len(datasets) + 1)
    lines = [header, rule]
    for variant, report in reports.items():
        by_dataset = {row.dataset: row.accuracy for row in report.rows}
        cells = [f"{by_dataset.get(d, float('nan')):.2f}" for d in datasets]
        lines.append(f"| {variant} | " + " | ".join(cells) + f" | {report.macro_avg:.2f} |")
    return "\n".join(lines) + "\n"


def _ablation_error_figure(reports: dict[str, Report], path: Path) -> None:
    variants = list(reports)
    wrong = []
    compile_ = []
    for report in reports.values():
        # Unweighted mean over datasets, same convention as the macro average.
        wrong.append(sum(r.wrong_rate for r in report.rows) / len(report.rows))
        compile_.append(sum(r.compile_rate for r in report.rows) / len(report.rows))
    positions = range(len(variants))
    width = 0.38
    fig, ax = plt.subplots(figsize=(max(4, 1.4 * len(variants)), 3.2))
    ax.bar([p - width / 2 for p in positions], wrong, width, label="wrong answer", color="#d65f5f")
    ax.bar([p + width / 2 for p in positions], compile_, width, label="compile error", color="#ee854a")
    ax.set_xticks(list(positions))
    ax.set_xticklabels(variants)
    ax.set_ylabel("mean rate (%)")
    ax.set_title("Error rates by configuration")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_ablation_report(
    reports: dict[str, Report], out_dir: str | Path, name: str = "ablation"
) -> dict[str, Path]:
    """Per-variant artifacts plus a combined table and error figure."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    figures = out / "figures"
    figures.mkdir(exist_ok=True)

    paths: dict[str, Path] = {}
    for variant, report in reports.items():
        paths.update(
            {
                f"{variant}_{kind}": path
                for kind, path in write_report(report, out, name=f"{name}_{variant}").items()
            }
        )
    combined_md = out / f"{name}.md"
    combined_md.write_text(ablation_markdown(reports), encoding="utf-8")
    paths["combined_markdown"] = combined_md
    combined_fig = figures / f"{name}_error_rates.png"
    _ablation_error_figure(reports, combined_fig)
    paths["combined_error_figure"] = combined_fig
    return paths
