import argparse
import json
import logging
import os
import sys
from typing import List, Optional

from pydantic import ValidationError

from fusiondet.config import PipelineConfig, load_config, load_env_from_file
from fusiondet.evaluation import format_per_class, format_report_table
from fusiondet.exceptions import ConfigError, FusionDetError
from fusiondet.io import (
    parse_checkpoint,
    parse_detections,
    parse_scenes,
    write_checkpoint,
    write_detections,
    write_report,
    write_scenes,
)
from fusiondet.pipeline import FusionPipeline
from fusiondet.pseudolabel import pseudo_label_counts
from fusiondet.segregation import segregate_scene
from fusiondet.simulator import SimConfig, generate

log = logging.getLogger("fusiondet")

# flag -> PipelineConfig field
CONFIG_FLAGS = {
    "tau": float,
    "cross_iou": float,
    "score_thresh": float,
    "removal_iou": float,
    "match_iou": float,
    "epochs": int,
    "lr": float,
    "batch_size": int,
    "momentum": float,
    "box_weight": float,
    "hidden_dim": int,
    "trunk_dim": int,
    "seed": int,
    "fusion_score_thresh": float,
    "fusion_nms_iou": float,
    "shots": int,
    "workers": int,
    "preset": str,
}


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON file setting any pipeline flag")
    parser.add_argument("--env-file", help="JSON file exported as FUSIONDET_* env vars")
    parser.add_argument("--debug", action="store_true")
    for name, kind in CONFIG_FLAGS.items():
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fusiondet",
        description="Fuse a base-class and a novel-class detector's outputs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate synthetic scenes")
    p.add_argument("--config", help="simulator settings (JSON)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--scenes", dest="n_scenes", type=int, default=None)

    p = sub.add_parser("segregate", help="report proposal buckets per scene")
    p.add_argument("--scenes", required=True)
    p.add_argument("--assignments", action="store_true", help="print per-proposal buckets")
    _add_common(p)

    p = sub.add_parser("mine", help="append pseudo ground truth to training scenes")
    p.add_argument("--scenes", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("train", help="train the fusion network on mined scenes")
    p.add_argument("--scenes", required=True)
    p.add_argument("--checkpoint", required=True)
    _add_common(p)

    p = sub.add_parser("infer", help="segregate, fuse and merge detections")
    p.add_argument("--scenes", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    _add_common(p)

    p = sub.add_parser("eval", help="mAP50 report for a detections file")
    p.add_argument("--scenes", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", dest="per_class", action="store_true")
    _add_common(p)

    p = sub.add_parser("pipeline", help="mine, train, infer and evaluate end to end")
    p.add_argument("--train", dest="train_scenes", required=True)
    p.add_argument("--test", dest="test_scenes", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--per-class", dest="per_class", action="store_true")
    _add_common(p)
    return parser


def _config(args) -> PipelineConfig:
    if args.env_file:
        load_env_from_file(args.env_file, log=log)
    overrides = {name: getattr(args, name) for name in CONFIG_FLAGS}
    return load_config(args.config, overrides)


def _pipeline(args, header) -> FusionPipeline:
    return FusionPipeline.create(header, _config(args), debug=args.debug)


def cmd_simulate(args) -> int:
    values = {}
    if args.config:
        try:
            with open(args.config, "r") as f:
                values = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"cannot read config file {args.config}: {e}")
    if args.seed is not None:
        values["seed"] = args.seed
    if args.n_scenes is not None:
        values["scenes"] = args.n_scenes
    try:
        sim = SimConfig.parse_obj(values)
    except ValidationError as e:
        raise ConfigError(f"invalid simulator config: {e}")
    write_scenes(args.out, sim.header(), generate(sim))
    print(f"wrote {sim.scenes} scenes to {args.out}")
    return 0


def cmd_segregate(args) -> int:
    dataset = parse_scenes(args.scenes)
    pipeline = _pipeline(args, dataset.header)
    for scene in dataset.scenes:
        seg = segregate_scene(scene, pipeline.config.tau)
        row = {"image_id": scene.image_id, **seg.counts()}
        if args.assignments:
            row["valid_base"] = seg.valid_base
            row["valid_novel"] = seg.valid_novel
            row["overlapping"] = [[src.value, idx] for src, idx in seg.overlapping]
        print(json.dumps(row))
    return 0


def cmd_mine(args) -> int:
    dataset = parse_scenes(args.scenes)
    pipeline = _pipeline(args, dataset.header)
    mined = pipeline.mine(dataset.scenes)
    write_scenes(args.out, dataset.header, mined)
    counts = pseudo_label_counts(mined, dataset.partition)
    for name, n in counts.items():
        print(f"{name}: {n}")
    covered = sum(1 for n in counts.values() if n)
    print(f"{covered} of the {len(counts)} base classes received pseudo labels")
    return 0


def cmd_train(args) -> int:
    dataset = parse_scenes(args.scenes)
    pipeline = _pipeline(args, dataset.header)
    params, trace = pipeline.train(dataset.scenes)
    write_checkpoint(args.checkpoint, params)
    for epoch, value in enumerate(trace, start=1):
        print(f"epoch {epoch}: loss {value:.6f}")
    return 0


def cmd_infer(args) -> int:
    dataset = parse_scenes(args.scenes)
    pipeline = _pipeline(args, dataset.header)
    params = parse_checkpoint(args.checkpoint)
    detections = pipeline.infer(params, dataset.scenes)
    write_detections(args.out, dataset.partition, detections)
    print(f"wrote detections for {len(detections)} images to {args.out}")
    return 0


def _print_report(report, per_class: bool):
    print(format_report_table(report))
    if per_class:
        print(format_per_class(report))


def cmd_eval(args) -> int:
    dataset = parse_scenes(args.scenes)
    pipeline = _pipeline(args, dataset.header)
    partition, detections = parse_detections(args.detections)
    if partition != dataset.partition:
        raise ConfigError("detections file partition does not match the scenes file")
    report = pipeline.evaluate(dataset.scenes, detections)
    write_report(args.out, report)
    _print_report(report, args.per_class)
    return 0


def cmd_pipeline(args) -> int:
    train_set = parse_scenes(args.train_scenes)
    test_set = parse_scenes(args.test_scenes)
    pipeline = _pipeline(args, train_set.header)
    result = pipeline.run(train_set, test_set)

    os.makedirs(args.out_dir, exist_ok=True)
    write_checkpoint(os.path.join(args.out_dir, "fusion.ckpt"), result.params)
    write_detections(
        os.path.join(args.out_dir, "detections.jsonl"), test_set.partition, result.detections
    )
    write_report(os.path.join(args.out_dir, "report.json"), result.report)
    for name, report in result.baselines.items():
        write_report(os.path.join(args.out_dir, f"report_{name}.json"), report)

    _print_report(result.report, args.per_class)
    for name, report in result.baselines.items():
        print(format_report_table(report, label=name).splitlines()[-1])
    print(
        f"base-novel double detections: naive union {result.duplicates_before}, "
        f"merged {result.duplicates_after}"
    )
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "segregate": cmd_segregate,
    "mine": cmd_mine,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "pipeline": cmd_pipeline,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except FusionDetError as e:
        log.error(e.detail)
        return e.exit_code
    except OSError as e:
        log.error(f"{e.filename}: {e.strerror}")
        return 1


def run():
    sys.exit(main())
