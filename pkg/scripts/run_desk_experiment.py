#!/usr/bin/env python3
"""End-to-end desk-scale experiment: generate data, pre-train, evaluate.

Produces the synthetic 4-class benchmark, pre-trains the tiny profile,
then compares linear-probe and retrieval accuracy of the pre-trained
encoder against a randomly initialized one, and prints the cost report.

    python3 scripts/run_desk_experiment.py --out runs/demo --epochs 30
"""

import argparse
import json
import time
from pathlib import Path

from slim.checkpoint import load_models
from slim.config import RunConfig
from slim.data import SyntheticConfig, gen_synthetic, kinect25
from slim.evaluate import dataset_representations, knn_retrieve, linear_probe
from slim.flops import flops_report, format_report
from slim.model import build_model
from slim.train import pretrain


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--classes", type=int, default=4)
    ap.add_argument("--per-class", type=int, default=100)
    ap.add_argument("--test-per-class", type=int, default=25)
    ap.add_argument("--noise", type=float, default=0.02)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--source", choices=["cls", "patch_mean"], default="cls")
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    topo = kinect25()
    print(f"generating {args.classes}-class dataset ...")
    train_ds = gen_synthetic(
        SyntheticConfig(args.classes, args.per_class, 64, args.noise), topo, seed=100
    )
    test_ds = gen_synthetic(
        SyntheticConfig(args.classes, args.test_per_class, 64, args.noise), topo, seed=200
    )

    cfg = RunConfig.tiny()
    cfg.train.epochs = args.epochs
    cfg.train.warmup_epochs = max(1, args.epochs // 10)
    cfg.train.batch_size = 32
    cfg.train.base_lr = 1e-3
    cfg.train.tau_start = 0.95
    cfg.train.tau_end = 0.999
    cfg.train.seed = args.seed
    # Desk-scale recipe: stronger spread penalty and clean contrastive
    # forwards keep the tiny model out of the uniform-target fixed point.
    cfg.distill.koleo_weight = 2.0
    cfg.distill.glcl_global_unmasked = True

    print(f"pre-training tiny profile for {args.epochs} epochs ...")
    t0 = time.time()
    ckpt = pretrain(train_ds, cfg, out, metrics_path=out / "metrics.ndjson")
    print(f"done in {(time.time() - t0) / 60:.1f} min -> {ckpt}")

    _, teacher, _ = load_models(ckpt)
    rand = build_model(cfg.model, seed=args.seed)
    results = {}
    for name, net in (("pretrained", teacher), ("random-init", rand)):
        tr_r, tr_l = dataset_representations(net.encoder, train_ds, source=args.source)
        te_r, te_l = dataset_representations(net.encoder, test_ds, source=args.source)
        probe = linear_probe(tr_r, tr_l, te_r, te_l)
        knn = knn_retrieve(tr_r, tr_l, te_r, te_l)
        results[name] = {"probe": probe, "knn": knn}
        print(f"{name:12s} probe={probe:.3f} knn={knn:.3f}")
    margin_p = results["pretrained"]["probe"] - results["random-init"]["probe"]
    margin_k = results["pretrained"]["knn"] - results["random-init"]["knn"]
    print(f"margins: probe {margin_p:+.3f}, knn {margin_k:+.3f}")

    print()
    print(format_report(flops_report()))
    (out / "results.json").write_text(json.dumps(results, indent=2))


if __name__ == "__main__":
    main()
