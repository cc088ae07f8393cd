"""Command-line entry point: data generation, inspection, training, evaluation.

Exit codes: 0 success, 1 validation/usage error, 2 I/O error. Stochastic
subcommands default their --seed and print the effective value to stderr.
Numeric settings come from --config files; explicit flags override them.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import augment as aug
from . import data as skeldata
from . import evaluate as evalkit
from . import flops as flopskit
from .checkpoint import load_models
from .config import RunConfig, load_run_config
from .errors import SlimError, ValidationError
from .masking import MaskConfig, TokenGrid, generate_mask, mask_to_text
from .train import pretrain

log = logging.getLogger("slim")


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}\n{self.format_usage()}")


def _setup_logging():
    level = os.environ.get("SLIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_run_config(args.config)
    profile = getattr(args, "profile", None)
    return RunConfig.profile(profile) if profile else RunConfig()


def _announce_seed(seed: int):
    print(f"seed: {seed}", file=sys.stderr)


def _emit(doc: dict, as_json: bool, text: str | None = None):
    if as_json or text is None:
        print(json.dumps(doc, indent=2))
    else:
        print(text)


# ---------------------------------------------------------------------------
# Subcommands


def cmd_gen_data(args) -> int:
    topo = skeldata.load_topology(args.topology) if args.topology else skeldata.kinect25()
    cfg = skeldata.SyntheticConfig(
        num_classes=args.classes,
        sequences_per_class=args.per_class,
        frames=args.frames,
        noise_std=args.noise,
    )
    _announce_seed(args.seed)
    dataset = skeldata.gen_synthetic(cfg, topo, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    skeldata.save_topology(topo, out / "topology.json")
    records = []
    for i, (seq, label) in enumerate(zip(dataset.sequences, dataset.labels)):
        name = f"seq_{i:05d}.skel"
        skeldata.save_sequence(seq, out / name)
        records.append((name, int(label)))
    skeldata.save_dataset_index(records, out / "index.jsonl")
    print(f"wrote {len(records)} sequences to {out}", file=sys.stderr)
    return 0


def _parse_scale_factors(spec: str, topo) -> dict[str, float] | np.ndarray:
    if "=" not in spec:
        value = float(spec)
        return {name: value for name, _ in topo.groups}
    out = {}
    for part in spec.split(","):
        name, _, value = part.partition("=")
        if not value:
            raise ValidationError(f"bad scale spec component {part!r}")
        out[name.strip()] = float(value)
    return out


def cmd_augment(args) -> int:
    topo = skeldata.load_topology(args.topo) if args.topo else skeldata.kinect25()
    seq = skeldata.load_sequence(args.infile)
    explicit = args.rotate or args.mirror or args.scale
    if explicit:
        if args.rotate:
            try:
                a, b, g = (math.radians(float(v)) for v in args.rotate.split(","))
            except ValueError as exc:
                raise ValidationError(f"--rotate expects 'a,b,g' in degrees: {exc}") from exc
            seq = aug.rotate(seq, aug.RotationAngles(a, b, g))
        if args.mirror:
            seq = aug.mirror(seq, topo)
        if args.scale:
            seq = aug.scale_bones(seq, topo, _parse_scale_factors(args.scale, topo))
    else:
        run_cfg = _load_config(args)
        seed = args.seed if args.seed is not None else 0
        _announce_seed(seed)
        seq = aug.augment_sequence(seq, topo, run_cfg.augment, np.random.default_rng(seed))
    skeldata.save_sequence(seq, args.out)
    return 0


def cmd_mask(args) -> int:
    topo = skeldata.load_topology(args.topo) if args.topo else skeldata.kinect25()
    try:
        t_str, j_str = args.grid.lower().split("x")
        grid = TokenGrid(int(t_str), int(j_str))
    except ValueError as exc:
        raise ValidationError(f"--grid expects T'xJ' like 8x25: {exc}") from exc
    run_cfg = _load_config(args)
    mask_cfg = run_cfg.mask
    if args.ratio is not None:
        mask_cfg = MaskConfig(
            ratio_lo=args.ratio, ratio_hi=args.ratio, strategy=mask_cfg.strategy
        )
    if args.strategy:
        mask_cfg.strategy = args.strategy
    _announce_seed(args.seed)
    mask = generate_mask(grid, topo, mask_cfg, np.random.default_rng(args.seed))
    print(mask_to_text(mask))
    print(f"masked {mask.count}/{grid.size} tokens (target {mask.target})", file=sys.stderr)
    return 0


def cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    for name, value in (
        ("epochs", args.epochs),
        ("batch_size", args.batch_size),
        ("seed", args.seed),
        ("workers", args.workers),
        ("checkpoint_every", args.checkpoint_every),
    ):
        if value is not None:
            setattr(cfg.train, name, value)
    _announce_seed(cfg.train.seed)
    data_dir = Path(args.data)
    topo = skeldata.load_topology(data_dir / "topology.json")
    dataset = skeldata.load_dataset_index(data_dir / "index.jsonl", topo)
    final = pretrain(
        dataset,
        cfg,
        args.out,
        metrics_path=args.metrics_out,
        resume=args.resume,
        force=args.force,
    )
    print(f"checkpoint: {final}", file=sys.stderr)
    return 0


def _load_eval_inputs(args):
    student, teacher, cfg = load_models(args.ckpt)
    net = teacher if args.encoder == "teacher" else student
    reps = []
    labels = []
    for path_arg in (args.train, args.test):
        p = Path(path_arg)
        index = p if p.is_file() else p / "index.jsonl"
        topo = skeldata.load_topology(index.parent / "topology.json")
        ds = skeldata.load_dataset_index(index, topo)
        r, l = evalkit.dataset_representations(
            net.encoder, ds, source=args.source, frames=cfg.model.frames
        )
        reps.append(r)
        labels.append(l)
    return reps, labels


def cmd_probe(args) -> int:
    (train_r, test_r), (train_l, test_l) = _load_eval_inputs(args)
    acc = evalkit.linear_probe(train_r, train_l, test_r, test_l)
    doc = {
        "accuracy": acc,
        "n_train": len(train_l),
        "n_test": len(test_l),
        "source": args.source,
        "encoder": args.encoder,
    }
    _emit(doc, args.json, text=f"linear probe accuracy: {acc:.4f} ({len(test_l)} test)")
    return 0


def cmd_retrieve(args) -> int:
    (train_r, test_r), (train_l, test_l) = _load_eval_inputs(args)
    acc = evalkit.knn_retrieve(train_r, train_l, test_r, test_l, k=args.k)
    doc = {
        "accuracy": acc,
        "n_train": len(train_l),
        "n_test": len(test_l),
        "source": args.source,
        "k": args.k,
        "encoder": args.encoder,
    }
    _emit(doc, args.json, text=f"{args.k}-NN retrieval accuracy: {acc:.4f} ({len(test_l)} queries)")
    return 0


def cmd_flops(args) -> int:
    report = flopskit.flops_report()
    if args.tokens is not None:
        cfg = _load_config(args).model
        breakdown = flopskit.count_flops(cfg, args.tokens)
        report["breakdown"] = {"tokens": args.tokens, **breakdown.as_dict()}
    _emit(report, args.json, text=flopskit.format_report(report))
    return 0


# ---------------------------------------------------------------------------
# Parser wiring


def build_parser() -> Parser:
    parser = Parser(prog="slim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run-config file")
        p.add_argument("--profile", choices=["tiny", "paper"], help="built-in config profile")

    p = sub.add_parser("gen-data", help="generate a synthetic labeled dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--topology", help="topology JSON (default: shipped kinect25)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("augment", help="apply skeleton-aware transforms to a .skel file")
    common(p)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--topo", help="topology JSON (default: shipped kinect25)")
    p.add_argument("--rotate", help="explicit Euler angles 'a,b,g' in degrees")
    p.add_argument("--mirror", action="store_true")
    p.add_argument("--scale", help="per-group factors 'name=f,...' or one factor for all")
    p.add_argument("--seed", type=int, help="stochastic mode seed (used when no explicit transform)")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("mask", help="print a semantic tube mask as a text grid")
    common(p)
    p.add_argument("--grid", default="8x25", help="token grid T'xJ'")
    p.add_argument("--ratio", type=float, help="pin the mask ratio (lo = hi)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--topo", help="topology JSON (default: shipped kinect25)")
    p.add_argument("--strategy", choices=["tube", "independent"])
    p.set_defaults(func=cmd_mask)

    p = sub.add_parser("pretrain", help="run self-supervised pre-training")
    common(p)
    p.add_argument("--data", required=True, help="dataset directory (index.jsonl + topology.json)")
    p.add_argument("--out", required=True, help="checkpoint output directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--checkpoint-every", type=int)
    p.add_argument("--metrics-out", help="NDJSON metrics file (default: stdout)")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.add_argument("--force", action="store_true", help="ignore config-hash mismatch on resume")
    p.set_defaults(func=cmd_pretrain)

    for name, fn, extra in (
        ("probe", cmd_probe, ()),
        ("retrieve", cmd_retrieve, ("k",)),
    ):
        p = sub.add_parser(name, help=f"{name} a frozen pre-trained encoder")
        common(p)
        p.add_argument("--ckpt", required=True)
        p.add_argument("--train", required=True, help="training index file or dataset dir")
        p.add_argument("--test", required=True, help="test index file or dataset dir")
        p.add_argument("--source", choices=["cls", "patch_mean"], default="cls")
        p.add_argument("--encoder", choices=["teacher", "student"], default="teacher")
        p.add_argument("--json", action="store_true")
        if "k" in extra:
            p.add_argument("--k", type=int, default=1)
        p.set_defaults(func=fn)

    p = sub.add_parser("flops", help="analytic inference-cost report")
    common(p)
    p.add_argument("--tokens", type=int, help="also report a breakdown at this token count")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_flops)

    return parser


def run(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"slim: {exc}", file=sys.stderr)
        return 1
    except (SlimError, ValueError) as exc:
        print(f"slim: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"slim: i/o error: {exc}", file=sys.stderr)
        return 2


def main() -> int:
    return run()


if __name__ == "__main__":
    sys.exit(main())
