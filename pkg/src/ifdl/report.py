"""Render tables and static plots from a run directory."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from ifdl.evaluation import markdown_table, report_markdown  # noqa: E402
from ifdl.judge.protocol import SCORE_FIELDS  # noqa: E402
from ifdl.judge.user_study import Vote  # noqa: E402

JUDGE_COLUMNS = SCORE_FIELDS + ("overall_text", "overall")


class NothingToReport(RuntimeError):
    pass


def _read_jsonl(path: Path) -> list[dict]:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def judge_table(summary: dict) -> str:
    """Per-dimension mean ± std for each judged model, two decimals."""
    rows = []
    for key, name in (("model_a", "A"), ("model_b", "B")):
        stats = summary.get(key)
        if stats:
            rows.append([name] + [f"{stats[c]['mean']:.2f} ± {stats[c]['std']:.2f}" for c in JUDGE_COLUMNS])
    header = ["model"] + list(JUDGE_COLUMNS)
    text = markdown_table(header, rows)
    if summary.get("failed"):
        text += f"\n\nFailed samples ({len(summary['failed'])}): " + ", ".join(summary["failed"])
    return text


def pie_labels(percent: dict[str, float]) -> list[str]:
    return [f"{v.value} {percent[v.value]:.1f}%" for v in Vote]


def plot_preferences(tally: dict, path: Path) -> list[str]:
    labels = pie_labels(tally["percent"])
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.pie([tally["proportions"][v.value] for v in Vote], labels=labels, startangle=90, counterclock=False)
    ax.set_title("Preference")
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)
    return labels


def plot_losses(histories: dict[str, list[dict]], path: Path) -> None:
    fig, axes = plt.subplots(1, len(histories), figsize=(5 * len(histories), 3.5), squeeze=False)
    for ax, (name, hist) in zip(axes[0], histories.items()):
        steps = [r["step"] for r in hist]
        for key in ("total", "bce", "dice", "ce"):
            if key in hist[0]:
                ax.plot(steps, [r[key] for r in hist], label=key)
        ax.set_title(name)
        ax.set_xlabel("step")
        ax.set_yscale("log")
        ax.legend()
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)


def plot_alpha_sweep(sweep: list[dict], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    alphas = [s["alpha"] for s in sweep]
    for key in ("bleu1", "rouge_l", "css_weighted"):
        ax.plot(alphas, [s[key] for s in sweep], marker="o", label=key)
    ax.set_xlabel("alpha")
    ax.legend()
    fig.savefig(path, dpi=100, bbox_inches="tight")
    plt.close(fig)


def render_report(run_dir: str | Path, out_dir: str | Path | None = None) -> dict:
    """Write report.md plus PNG plots for whatever the run directory holds.

    Raises NothingToReport when no training log, evaluation, judge summary or vote tally is found.
    """
    run_dir = Path(run_dir)
    out_dir = Path(out_dir) if out_dir is not None else run_dir / "report"
    sections: list[str] = []
    files: list[str] = []
    pending = []

    histories = {}
    for stage in ("stage1", "stage2"):
        path = run_dir / stage / "loss_history.jsonl"
        if path.is_file():
            hist = _read_jsonl(path)
            if hist:
                histories[stage] = hist
    if histories:
        pending.append(("loss_curves.png", lambda p: plot_losses(histories, p)))
        rows = [(k, len(h), h[0]["total"], h[-1]["total"]) for k, h in histories.items()]
        sections.append("## Training\n\n" + markdown_table(("stage", "steps", "first loss", "last loss"), rows))

    eval_path = run_dir / "eval" / "report.json"
    if eval_path.is_file():
        ev = json.loads(eval_path.read_text(encoding="utf-8"))
        sections.append(report_markdown(ev).replace("# Evaluation", "## Evaluation", 1).replace("\n## ", "\n### "))
        if ev.get("alpha_sweep"):
            pending.append(("alpha_sweep.png", lambda p: plot_alpha_sweep(ev["alpha_sweep"], p)))

    judge_path = run_dir / "judge" / "summary.json"
    if judge_path.is_file():
        summary = json.loads(judge_path.read_text(encoding="utf-8"))
        sections.append(f"## Judge ({summary.get('n_ok', 0)}/{summary.get('n', 0)} samples)\n\n" + judge_table(summary))

    votes_path = run_dir / "user_study.json"
    pie = None
    if votes_path.is_file():
        tally = json.loads(votes_path.read_text(encoding="utf-8"))
        rows = [(v.value, tally["counts"][v.value], f"{tally['percent'][v.value]:.1f}%") for v in Vote]
        sections.append("## Preference votes\n\n" + markdown_table(("option", "votes", "share"), rows))
        pending.append(("preference_pie.png", lambda p: plot_preferences(tally, p)))
        pie = pie_labels(tally["percent"])

    if not sections:
        raise NothingToReport(f"nothing to report in {run_dir}")
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, draw in pending:
        draw(out_dir / name)
        files.append(name)
    text = f"# Run report: {run_dir}\n\n" + "\n\n".join(sections) + "\n"
    (out_dir / "report.md").write_text(text, encoding="utf-8")
    return {"markdown": text, "plots": files, "pie_labels": pie, "out_dir": str(out_dir)}
