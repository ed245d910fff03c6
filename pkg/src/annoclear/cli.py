"""Command-line front end.

Exit status: 0 on success, 1 when the pipeline fails, 2 on I/O, parse or
configuration errors. Outputs are written only after all computation has
succeeded.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from annoclear.annotations import (
    TableParseError,
    TableValidationError,
    read_table,
    write_cleaned,
    write_table,
)
from annoclear.annotator_scoring import read_score_history, score_annotators, write_score_history
from annoclear.config import Config, ConfigError, apply_overrides, load_config
from annoclear.evaluation import evaluate, write_metrics
from annoclear.merging import check_input, merge_confident, run_pipeline
from annoclear.nodule_scoring import (
    attach_confidences,
    read_nodule_scores,
    score_nodules,
    write_nodule_scores,
)
from annoclear.synthetic import (
    SCENARIOS,
    generate_ground_truth,
    generate_noisy,
    read_truth,
    scenario_profiles,
    write_truth,
)

logger = logging.getLogger("annoclear")


def _add(parser, flag, dest, **kwargs):
    parser.add_argument(flag, dest=dest, default=argparse.SUPPRESS, **kwargs)


def _common(parser):
    parser.add_argument("--config", type=Path, help="TOML config file; flags override it")
    _add(parser, "--threads", "threads", type=int)
    _add(parser, "--radius-mode", "radius_mode", choices=["radius", "diameter"])
    parser.add_argument("-v", "--verbose", action="store_true")


def _scoring_flags(parser):
    _add(parser, "--iterations", "scoring.iterations", type=int)
    _add(parser, "--tol", "scoring.tol", type=float)
    _add(parser, "--spacing", "scoring.spacing", type=float, nargs=3, metavar=("Z", "Y", "X"))
    _add(parser, "--pad", "scoring.pad", type=float)


def _nodule_flags(parser):
    _add(parser, "--alpha", "nodule_scoring.alpha", type=float)
    _add(parser, "--bandwidth", "nodule_scoring.kernel_bandwidth_mm", type=float)
    _add(parser, "--raw-sum", "nodule_scoring.raw_sum", action="store_const", const=True)


def _merge_flags(parser):
    _add(parser, "--q", "merging.q", type=float)
    _add(parser, "--threshold", "merging.threshold", type=float)


def _synthetic_flags(parser, with_scenario=True):
    if with_scenario:
        _add(parser, "--scenario", "synthetic.scenario", choices=SCENARIOS)
    _add(parser, "--n-images", "synthetic.n_images", type=int)
    _add(parser, "--seed", "synthetic.seed", type=int)
    _add(parser, "--volume", "synthetic.volume_mm", type=float, nargs=3)
    _add(parser, "--nodules-per-image", "synthetic.nodules_per_image", type=int, nargs=2)
    _add(parser, "--diameter-range", "synthetic.diameter_range", type=float, nargs=2)
    _add(parser, "--false-count-max", "synthetic.false_count_max", type=int)
    _add(parser, "--false-center-var", "synthetic.false_center_var", type=float, nargs=3)
    _add(parser, "--false-diameter-range", "synthetic.false_diameter_range", type=float, nargs=2)
    _add(parser, "--loc-var", "synthetic.loc_var", type=float, nargs=3)
    _add(parser, "--diam-sigma", "synthetic.diam_sigma", type=float)
    _add(parser, "--keep-prob", "synthetic.keep_prob", type=float)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="annoclear", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("score-doctors", help="iterative annotator scoring, writes the score history")
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, required=True)
    _common(p)
    _scoring_flags(p)

    p = sub.add_parser("score-nodules", help="per-nodule confidences")
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--scores", type=Path, help="score history CSV; last iteration is used")
    _common(p)
    _scoring_flags(p)
    _nodule_flags(p)

    p = sub.add_parser("merge", help="group, merge and filter scored nodules")
    p.add_argument("input", type=Path)
    p.add_argument("--nodule-scores", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _common(p)
    _merge_flags(p)

    p = sub.add_parser("clean", help="full pipeline")
    p.add_argument("input", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--emit-intermediates", action="store_true",
                   help="also write <out>.scores.csv and <out>.nodule_scores.csv")
    _common(p)
    _scoring_flags(p)
    _nodule_flags(p)
    _merge_flags(p)

    p = sub.add_parser("simulate", help="generate ground truth and a noisy annotation table")
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--noisy", type=Path, required=True)
    _common(p)
    _synthetic_flags(p)

    p = sub.add_parser("evaluate", help="pixelwise metrics against ground truth")
    p.add_argument("candidate", type=Path)
    p.add_argument("--truth", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _common(p)
    _add(p, "--eval-spacing", "evaluation.spacing", type=float, nargs=3)

    p = sub.add_parser("repro", help="run A1/A2/B1/B2 and print Markdown metric tables")
    p.add_argument("--out", type=Path, help="write the Markdown here instead of stdout")
    p.add_argument("--scenarios", nargs="+", choices=SCENARIOS, default=list(SCENARIOS))
    _common(p)
    _synthetic_flags(p, with_scenario=False)
    _scoring_flags(p)
    _nodule_flags(p)
    _merge_flags(p)
    _add(p, "--eval-spacing", "evaluation.spacing", type=float, nargs=3)
    return parser


def resolve_config(args: argparse.Namespace) -> Config:
    config = load_config(args.config)
    nested: dict = {}
    for key, value in vars(args).items():
        if key in ("threads", "radius_mode"):
            nested[key] = value
        elif "." in key:
            section, name = key.split(".", 1)
            nested.setdefault(section, {})[name] = value
    return apply_overrides(config, nested)


def _read_input(path: Path, config: Config):
    table = read_table(path, config.radius_mode)
    check_input(table)
    return table


def cmd_score_doctors(args, config: Config) -> None:
    table = _read_input(args.input, config)
    state = score_annotators(table, config.scoring_config())
    write_score_history(state, args.out)


def cmd_score_nodules(args, config: Config) -> None:
    table = _read_input(args.input, config)
    if args.scores is not None:
        scores = read_score_history(args.scores)
    else:
        scores = score_annotators(table, config.scoring_config())
    confidences = score_nodules(table, scores, config.nodule_scoring_config())
    write_nodule_scores(confidences, args.out)


def cmd_merge(args, config: Config) -> None:
    table = _read_input(args.input, config)
    confidences = attach_confidences(table, read_nodule_scores(args.nodule_scores))
    cleaned = merge_confident(table, confidences, config.merge_config(), config.threads)
    write_cleaned(cleaned, args.out)


def cmd_clean(args, config: Config) -> None:
    table = _read_input(args.input, config)
    result = run_pipeline(table, config.clean_config())
    write_cleaned(result.table, args.out)
    if args.emit_intermediates:
        write_score_history(result.scores, args.out.with_suffix(".scores.csv"))
        write_nodule_scores(result.confidences, args.out.with_suffix(".nodule_scores.csv"))


def cmd_simulate(args, config: Config) -> None:
    syn = config.synthetic
    truth = generate_ground_truth(syn.n_images, seed=syn.seed, **config.truth_kwargs())
    table = generate_noisy(truth, scenario_profiles(syn.scenario), config.noise_config())
    write_truth(truth, args.truth)
    write_table(table, args.noisy)


def cmd_evaluate(args, config: Config) -> None:
    candidate = read_table(args.candidate, config.radius_mode)
    truth = read_truth(args.truth)
    report = evaluate(candidate, truth, config.evaluation.spacing, config.threads)
    write_metrics(report, args.out)
    print(report.summary())


def repro_rows(config: Config, scenarios=SCENARIOS) -> dict:
    """Noised and cleaned aggregate metrics, plus final annotator scores, per scenario."""
    syn = config.synthetic
    out = {}
    for name in scenarios:
        truth = generate_ground_truth(syn.n_images, seed=syn.seed, **config.truth_kwargs())
        table = generate_noisy(truth, scenario_profiles(name), config.noise_config(name))
        result = run_pipeline(table, config.clean_config())
        noised = evaluate(table, truth, config.evaluation.spacing, config.threads).aggregate
        cleaned = evaluate(result.table, truth, config.evaluation.spacing, config.threads).aggregate
        out[name] = (noised, cleaned, result.scores)
        logger.info("%s done", name)
    return out


def format_repro(rows: dict) -> str:
    lines = []
    for title, attr, fmt in (("Sensitivity", "sensitivity", "{:.3f}"),
                             ("1 - Specificity", "one_minus_specificity", "{:.2e}"),
                             ("IoU", "iou", "{:.3f}")):
        lines += [f"### {title}", "", "| Setting | Noised | Cleaned |", "|---|---|---|"]
        for name, (noised, cleaned, _) in rows.items():
            lines.append(f"| {name} | {fmt.format(getattr(noised, attr))} | {fmt.format(getattr(cleaned, attr))} |")
        lines.append("")
    lines += ["### Annotator scores (final iteration)", ""]
    for name, (_, _, state) in rows.items():
        scores = ", ".join(f"{a}: {s:.3f}" for a, s in sorted(state.scores.items(), key=lambda kv: kv[0]))
        lines.append(f"- {name} (iterations {state.iteration}): {scores}")
    return "\n".join(lines) + "\n"


def cmd_repro(args, config: Config) -> None:
    text = format_repro(repro_rows(config, args.scenarios))
    if args.out is not None:
        args.out.write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


COMMANDS = {
    "score-doctors": cmd_score_doctors,
    "score-nodules": cmd_score_nodules,
    "merge": cmd_merge,
    "clean": cmd_clean,
    "simulate": cmd_simulate,
    "evaluate": cmd_evaluate,
    "repro": cmd_repro,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
    except (OSError, ConfigError) as exc:
        print(f"annoclear: {exc}", file=sys.stderr)
        return 2
    try:
        COMMANDS[args.command](args, config)
    except (OSError, TableParseError, TableValidationError) as exc:
        print(f"annoclear: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError) as exc:
        print(f"annoclear: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
