"""Command-line entry points.

All run configuration lives in one YAML spec file; flags override file
values. ``train`` and ``ablate`` require an explicit ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .evaluator import evaluate_dataset
from .experiments import (
    ExperimentSpec,
    emit_plots,
    export_transformed,
    load_spec,
    run_ablation_ladder,
    run_experiment,
    write_synthetic_dataset,
)
from .metrics import MetricsReport, render_comparison_table
from .preprocess import PreprocessConfig
from .state import load_checkpoint
from .synthetic import SyntheticConfig, load_cohort
from .trainer import VARIANTS


def _spec_from_args(args) -> ExperimentSpec:
    overrides = {
        "seed": args.seed,
        "variant": getattr(args, "variant", None),
        "output_dir": args.output,
        "direction": getattr(args, "direction", None),
    }
    return load_spec(args.spec, overrides)


def cmd_synth_data(args) -> int:
    cfg = SyntheticConfig(
        image_size=args.image_size,
        num_subjects_per_domain=args.subjects,
        num_shapes=args.shapes,
        slices_per_subject=args.slices,
        seed=args.seed,
    )
    src, tgt = write_synthetic_dataset(cfg, args.output)
    print(f"wrote {src} and {tgt}")
    return 0


def cmd_train(args) -> int:
    spec = _spec_from_args(args)
    result = run_experiment(spec)
    print(render_comparison_table({spec.variant: result.report}))
    if result.output_dir:
        print(f"artifacts in {result.output_dir}")
    return 0


def cmd_ablate(args) -> int:
    spec = _spec_from_args(args)
    results = run_ablation_ladder(spec)
    table = render_comparison_table({r.spec.variant: r.report for r in results})
    print(table)
    return 0


def cmd_evaluate(args) -> int:
    state = load_checkpoint(args.checkpoint)
    cohort = load_cohort(args.data)
    pre = PreprocessConfig(
        target_resolution=state.arch.input_resolution,
        slicing_axis=args.slicing_axis,
    )
    subjects = {
        "test": cohort.test_subjects,
        "train": cohort.train_subjects,
        "all": cohort.subjects,
    }[args.split]
    report = evaluate_dataset(state, subjects, pre)
    print(render_comparison_table({"checkpoint": report}))
    if args.output:
        out = Path(args.output)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.json", "w") as f:
            json.dump(report.to_dict(), f, indent=2)
        print(f"report written to {out / 'report.json'}")
    return 0


def cmd_export_transformed(args) -> int:
    state = load_checkpoint(args.checkpoint)
    cohort = load_cohort(args.data)
    pre = PreprocessConfig(
        target_resolution=state.arch.input_resolution,
        slicing_axis=args.slicing_axis,
    )
    written = export_transformed(state, cohort.subjects, pre, args.output)
    print(f"wrote {len(written)} translated slices to {args.output}")
    return 0


def cmd_plot(args) -> int:
    logs = {Path(p).parent.name or f"run{i}": p for i, p in enumerate(args.log)}
    reports = {}
    for p in args.report:
        with open(p) as f:
            d = json.load(f)
        reports[Path(p).parent.name or p] = MetricsReport.from_dict(d)
    written = emit_plots(logs, reports, args.output)
    print(f"wrote {len(written)} plots to {args.output}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dualalign",
        description="Unsupervised cross-modality adaptation of 2D segmentation "
        "networks via joint image and feature alignment.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate a synthetic two-domain dataset")
    p.add_argument("--output", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--image-size", type=int, default=64)
    p.add_argument("--subjects", type=int, default=8)
    p.add_argument("--shapes", type=int, default=2)
    p.add_argument("--slices", type=int, default=12)
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("train", help="train one variant from a spec file")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--output")
    p.add_argument("--direction", choices=("source_to_target", "target_to_source"))
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("ablate", help="run the full ablation ladder")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--output")
    p.add_argument("--direction", choices=("source_to_target", "target_to_source"))
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("evaluate", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("test", "train", "all"), default="test")
    p.add_argument("--slicing-axis", default="axial")
    p.add_argument("--output")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("export-transformed", help="write translated slices as images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--slicing-axis", default="axial")
    p.set_defaults(fn=cmd_export_transformed)

    p = sub.add_parser("plot", help="emit loss curves and Dice boxplots")
    p.add_argument("--log", action="append", default=[])
    p.add_argument("--report", action="append", default=[])
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_plot)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
