"""Command-line entry point.

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure,
3 partial success (some judge samples failed).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

from ifdl.config import ConfigError, RunConfig, load_config, parse_override

log = logging.getLogger("ifdl")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME, EXIT_PARTIAL = 0, 1, 2, 3


class CommandError(Exception):
    def __init__(self, message: str, code: int = EXIT_INVALID):
        super().__init__(message)
        self.code = code


def _config(args, extra: dict | None = None) -> RunConfig:
    """Defaults < config file < --set < dedicated flags; prints where each non-default came from."""
    overrides = [parse_override(o) for o in args.set or []]
    overrides += [(k.split("."), v) for k, v in (extra or {}).items()]
    loaded = load_config(args.config, overrides)
    print(loaded.describe(), file=sys.stderr)
    return loaded.config


# ---------------------------------------------------------------------------
# commands


def cmd_fixture(args) -> int:
    from ifdl.data import generate_fixture

    extra = {}
    if args.seed is not None:
        extra["seed"] = args.seed
    if args.out is not None:
        extra["fixture_dir"] = args.out
    config = _config(args, extra)
    out = Path(config.fixture_dir)
    tmp = out.parent / f".{out.name}.partial-{os.getpid()}"
    if tmp.exists():
        shutil.rmtree(tmp)
    try:
        manifest = generate_fixture(config.fixture, config.seed, tmp)
        if out.exists():
            shutil.rmtree(out)
        tmp.rename(out)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp)
    print(f"wrote {len(manifest)} samples to {out / 'manifest.jsonl'}")
    return EXIT_OK


def _train(args, stage: int) -> int:
    from ifdl import pipeline

    config = _config(args)
    paths = pipeline.run_paths(config)
    if stage == 2 and config.eval.mask_source == "predicted" and not pipeline.has_checkpoint(paths.stage1):
        raise CommandError(
            f"evaluation uses predicted masks but there is no stage-1 checkpoint in {paths.stage1}; "
            "run train-stage1 first or set eval.mask_source=\"ground_truth\""
        )
    run = pipeline.run_stage1 if stage == 1 else pipeline.run_stage2
    state = run(config, resume=args.resume, stop_at=args.stop_at)
    last = state.loss_history[-1]["total"] if state.loss_history else float("nan")
    where = paths.stage1 if stage == 1 else paths.stage2
    print(f"stage {stage}: step {state.step}, last loss {last:.6g}, checkpoint {where}")
    return EXIT_OK


def cmd_train_stage1(args) -> int:
    return _train(args, 1)


def cmd_train_stage2(args) -> int:
    return _train(args, 2)


def cmd_eval(args) -> int:
    from ifdl import pipeline
    from ifdl.evaluation import evaluate, oracle_outputs, stage1_outputs, write_eval
    from ifdl.metrics.css import get_embedder

    extra = {}
    if args.perturb:
        extra["eval.perturb"] = list(args.perturb)
    if args.oracle:
        extra["eval.predictions"] = "oracle"
    if args.split:
        extra["eval.split"] = args.split
    config = _config(args, extra)
    ev = config.eval
    paths = pipeline.run_paths(config)
    data = pipeline.load_split_tensors(config, ev.split)
    oracle = ev.predictions == "oracle"
    if oracle:
        outputs = oracle_outputs(data)
        explainer = None
    else:
        outputs = stage1_outputs(pipeline.load_stage1(config, paths), data, ev.threshold, ev.batch_size)
        explainer = pipeline.load_stage2(config, paths) if pipeline.has_checkpoint(paths.stage2) else None
        if explainer is None and (ev.perturb or args.alpha_sweep):
            raise CommandError(f"--perturb / --alpha-sweep need a stage-2 checkpoint in {paths.stage2}")
    result = evaluate(
        data,
        outputs,
        get_embedder(ev.embedder),
        explainer=explainer,
        mask_source=ev.mask_source,
        alpha=ev.alpha,
        perturb=ev.perturb,
        alpha_grid=ev.alpha_grid if args.alpha_sweep else None,
        oracle_text=oracle,
        batch_size=ev.batch_size,
    )
    out = write_eval(result, paths.eval)
    pipeline.write_resolved_config(config, paths.root)
    print((out / "report.md").read_text(encoding="utf-8"))
    return EXIT_OK


def _judge_requests(config: RunConfig, run_a: Path, run_b: Path):
    from ifdl.data import ExplanationSections, encode_mask_png, load_manifest, read_mask
    from ifdl.judge.protocol import JudgeRequest, format_explanation

    records = {r.id: r for r in load_manifest(config.data.manifest).records}

    def load(run: Path) -> dict[str, dict]:
        path = run / "per_sample.jsonl"
        if not path.is_file():
            raise CommandError(f"no evaluation output in {run}; run eval first")
        rows = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
        return {r["id"]: r for r in rows if "explanation" in r}

    a, b = load(run_a), load(run_b)
    ids = sorted(set(a) & set(b))
    if not ids:
        raise CommandError("the two runs share no explained samples")
    requests = []
    for sid in ids:
        rec = records.get(sid)
        if rec is None or rec.mask_path is None or rec.explanation is None:
            raise CommandError(f"sample {sid} has no ground-truth mask/rationale in {config.data.manifest}")
        requests.append(
            JudgeRequest(
                sample_id=sid,
                tampered_image=Path(rec.image_path).read_bytes(),
                gt_mask=encode_mask_png(read_mask(rec.mask_path)),
                predicted_mask_a=(run_a / "masks" / f"{sid}.png").read_bytes(),
                predicted_mask_b=(run_b / "masks" / f"{sid}.png").read_bytes(),
                explanation_a=format_explanation(ExplanationSections.from_dict(a[sid]["explanation"])),
                explanation_b=format_explanation(ExplanationSections.from_dict(b[sid]["explanation"])),
                gt_rationale=format_explanation(rec.explanation),
                decoding=config.judge.decoding,
            )
        )
    return requests


def cmd_judge(args) -> int:
    from ifdl import pipeline
    from ifdl.judge.client import HTTPJudgeProvider, MockJudge
    from ifdl.judge.runner import run_judge, summarize_outcomes

    extra = {}
    if args.run_a:
        extra["judge.run_a"] = args.run_a
    if args.run_b:
        extra["judge.run_b"] = args.run_b
    if args.provider:
        extra["judge.provider"] = args.provider
    config = _config(args, extra)
    jc = config.judge
    paths = pipeline.run_paths(config)
    run_a = Path(jc.run_a) if jc.run_a else paths.eval
    run_b = Path(jc.run_b) if jc.run_b else run_a
    if run_b == run_a:
        log.warning("judging %s against itself (set judge.run_b for a real comparison)", run_a)
    requests = _judge_requests(config, run_a, run_b)
    if jc.provider == "mock":
        provider = MockJudge()
    else:
        provider = HTTPJudgeProvider(jc.endpoint, api_key_env=jc.api_key_env, timeout=jc.timeout)
    outcomes = run_judge(
        requests,
        provider,
        model=jc.model,
        cache_dir=paths.judge / "cache",
        max_attempts=jc.max_attempts,
        max_workers=jc.max_workers,
    )
    summary = summarize_outcomes(outcomes)
    summary["run_a"], summary["run_b"] = str(run_a), str(run_b)
    paths.judge.mkdir(parents=True, exist_ok=True)
    with (paths.judge / "scores.jsonl").open("w", encoding="utf-8") as fh:
        for o in outcomes:
            fh.write(json.dumps(o.to_dict(), sort_keys=True) + "\n")
    (paths.judge / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True), encoding="utf-8")
    print(f"judged {summary['n_ok']}/{summary['n']} samples; results in {paths.judge}")
    if summary["failed"]:
        print("failed samples: " + ", ".join(summary["failed"]), file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_tally(args) -> int:
    from ifdl import pipeline
    from ifdl.judge.user_study import tally_user_study

    config = _config(args)
    text = Path(args.votes).read_text(encoding="utf-8")
    try:
        votes = json.loads(text)
    except json.JSONDecodeError:
        votes = [line.strip() for line in text.splitlines() if line.strip()]
    tally = tally_user_study(votes)
    path = pipeline.run_paths(config).user_study
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(tally, indent=2), encoding="utf-8")
    print(" ".join(f"{k} {v:.1f}%" for k, v in tally["percent"].items()))
    return EXIT_OK


def cmd_report(args) -> int:
    from ifdl.report import render_report

    run_dir = args.run_dir
    if run_dir is None:
        run_dir = _config(args).output_dir
    result = render_report(run_dir, args.out)
    print(result["markdown"])
    print(f"report written to {result['out_dir']}")
    return EXIT_OK


def cmd_params(args) -> int:
    from ifdl.train.common import TrainState, param_table

    state = TrainState.load(args.checkpoint)
    for name, shape in param_table(state.model_state):
        print(f"{name}\t{'x'.join(map(str, shape)) or 'scalar'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ifdl", description="Two-stage forgery detection, localization and explanation."
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key (repeatable)")

    p = sub.add_parser("fixture", help="generate the synthetic forgery dataset")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: fixture_dir)")
    p.set_defaults(func=cmd_fixture)

    for name, func in (("train-stage1", cmd_train_stage1), ("train-stage2", cmd_train_stage2)):
        p = sub.add_parser(name, help=f"train {name[-6:]}")
        common(p)
        p.add_argument("--resume", action="store_true", help="continue from the checkpoint in the output directory")
        p.add_argument("--stop-at", type=int, help="stop (and checkpoint) after this optimizer step")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="evaluate a split")
    common(p)
    p.add_argument("--split", choices=("train", "val", "test"))
    p.add_argument("--perturb", nargs="+", metavar="OP:R", help="e.g. dilate:1 erode:1")
    p.add_argument("--alpha-sweep", action="store_true", help="rerun explanations over eval.alpha_grid")
    p.add_argument("--oracle", action="store_true", help="copy ground truth as predictions")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("judge", help="pairwise judge over two evaluation runs")
    common(p)
    p.add_argument("--run-a", help="eval directory of model A (default: <output_dir>/eval)")
    p.add_argument("--run-b", help="eval directory of model B (default: same as A)")
    p.add_argument("--provider", choices=("mock", "http"))
    p.set_defaults(func=cmd_judge)

    p = sub.add_parser("tally", help="tally user-study votes (A / B / Neither / Tie)")
    common(p)
    p.add_argument("votes", help="JSON list or one vote per line")
    p.set_defaults(func=cmd_tally)

    p = sub.add_parser("report", help="render tables and plots for a run directory")
    common(p)
    p.add_argument("run_dir", nargs="?", help="run directory (default: output_dir from the config)")
    p.add_argument("--out", help="report directory (default: <run_dir>/report)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("params", help="list tensor names and shapes in a checkpoint")
    p.add_argument("checkpoint")
    p.set_defaults(func=cmd_params)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    from ifdl.data import ManifestError
    from ifdl.judge.protocol import JudgeValidationError
    from ifdl.pipeline import MissingCheckpoint
    from ifdl.report import NothingToReport

    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except NothingToReport as exc:
        print(f"nothing to report: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, ManifestError, MissingCheckpoint, JudgeValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - one-line cause, nonzero exit
        log.debug("unhandled error", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
