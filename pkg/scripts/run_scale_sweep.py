#!/usr/bin/env python3
"""Scaling-factor sweep for the parallel adapter at desk scale.

Trains one inner-inter run per row (the sequential variant, a learnable
scale, and each fixed scale in the roster) on the default synthetic corpus
and prints EER/minDCF per row.

Usage:
    python scripts/run_scale_sweep.py [--steps 400] [--scales 0.05 0.1 0.5 1.0 1.5 2.0]
"""

import argparse
import sys
import time

from svadapt.adapters import AdapterConfig
from svadapt.harness import (
    RunConfig,
    backbone_checkpoint,
    format_sweep_table,
    pretrain_backbone,
    sweep_scale,
)
from svadapt.synthdata import CorpusConfig, generate_corpus, generate_trials


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--pretrain-steps", type=int, default=300)
    ap.add_argument(
        "--scales", type=float, nargs="+", default=[0.05, 0.1, 0.5, 1.0, 1.5, 2.0]
    )
    ap.add_argument("--no-learnable", action="store_true")
    ap.add_argument("--no-sequential", action="store_true")
    args = ap.parse_args(argv)

    corpus = generate_corpus(CorpusConfig())
    trials = generate_trials(corpus.part("adapt"), 150, 150, seed=1)

    t0 = time.perf_counter()
    pre_cfg = RunConfig(
        mode="full-finetune",
        total_steps=args.pretrain_steps,
        warmup_steps=max(1, args.pretrain_steps // 10),
        seed=args.seed,
    )
    pre = pretrain_backbone(pre_cfg, corpus)
    backbone = backbone_checkpoint(pre.model, step=pre_cfg.total_steps)

    print(f"# pretrained in {time.perf_counter() - t0:.0f}s", file=sys.stderr)

    cfg = RunConfig(
        mode="inner-inter",
        adapter=AdapterConfig(bottleneck_dim=16, variant="parallel", scale=0.5),
        total_steps=args.steps,
        warmup_steps=max(1, args.steps // 10),
        seed=args.seed,
    )
    rows = sweep_scale(
        cfg,
        backbone,
        corpus,
        trials,
        scales=tuple(args.scales),
        include_learnable=not args.no_learnable,
        include_sequential=not args.no_sequential,
    )
    print(format_sweep_table(rows))


if __name__ == "__main__":
    main()
