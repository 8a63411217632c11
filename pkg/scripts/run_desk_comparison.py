#!/usr/bin/env python3
"""Desk-scale comparison of every tuning mode on the synthetic corpus.

Generates the default corpus, pretrains a small backbone on the pretrain
speakers, then trains and evaluates each tuning mode on the adaptation
speakers with a shared seed, printing a params/EER/minDCF table (and JSON
lines with --json). Runs in a few minutes on one CPU core.

Usage:
    python scripts/run_desk_comparison.py [--seeds 0 1 2] [--steps 400]
"""

import argparse
import json
import sys
import time

import numpy as np

from svadapt.adapters import AdapterConfig, count_trainable
from svadapt.harness import (
    RunConfig,
    backbone_checkpoint,
    evaluate,
    pretrain_backbone,
    train,
)
from svadapt.synthdata import CorpusConfig, generate_corpus, generate_trials

MODE_ROSTER = (
    ("full-finetune", None),
    ("linear-probe", None),
    ("weighted-sum", None),
    ("houlsby", AdapterConfig(bottleneck_dim=16, variant="sequential")),
    ("inner", AdapterConfig(bottleneck_dim=16, variant="parallel", scale=0.5)),
    ("inter", None),
    ("inner-inter", AdapterConfig(bottleneck_dim=16, variant="parallel", scale=0.5)),
)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--pretrain-steps", type=int, default=300)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args(argv)

    corpus = generate_corpus(CorpusConfig())
    trials = generate_trials(corpus.part("adapt"), 150, 150, seed=1)

    per_mode = {mode: [] for mode, _ in MODE_ROSTER}
    counts = {}
    for seed in args.seeds:
        t0 = time.perf_counter()
        pre_cfg = RunConfig(
            mode="full-finetune",
            total_steps=args.pretrain_steps,
            warmup_steps=max(1, args.pretrain_steps // 10),
            seed=seed,
        )
        pre = pretrain_backbone(pre_cfg, corpus)
        backbone = backbone_checkpoint(pre.model, step=pre_cfg.total_steps)

        print(
            f"# seed {seed}: pretrained {args.pretrain_steps} steps "
            f"(loss {pre.losses[0]:.3f} -> {pre.losses[-1]:.3f}, "
            f"{time.perf_counter() - t0:.0f}s)",
            file=sys.stderr,
        )
        for mode, acfg in MODE_ROSTER:
            cfg = RunConfig(
                mode=mode, adapter=acfg, total_steps=args.steps,
                warmup_steps=max(1, args.steps // 10), seed=seed,
            )
            run = train(cfg, backbone, corpus)
            res, _ = evaluate(run.model, corpus, trials)
            per_mode[mode].append((res.eer, res.min_dcf))
            counts[mode] = count_trainable(run.model)
            print(
                f"#   {mode:14s} EER {res.eer:.3f}  minDCF {res.min_dcf:.3f}",
                file=sys.stderr,
            )

    print(f"{'mode':<14} {'trainable':>12} {'pct':>7} {'EER':>7} {'minDCF':>8}")
    for mode, _ in MODE_ROSTER:
        eer = float(np.median([e for e, _ in per_mode[mode]]))
        dcf = float(np.median([d for _, d in per_mode[mode]]))
        c = counts[mode]
        print(
            f"{mode:<14} {c['pretrained_side_trainable']:>12,} "
            f"{c['pct_of_backbone']:>6.2f}% {eer:>7.3f} {dcf:>8.3f}"
        )
        if args.json:
            print(
                json.dumps(
                    {
                        "mode": mode,
                        "median_eer": eer,
                        "median_min_dcf": dcf,
                        "trainable": c["pretrained_side_trainable"],
                        "pct_of_backbone": c["pct_of_backbone"],
                        "seeds": args.seeds,
                    },
                    sort_keys=True,
                )
            )


if __name__ == "__main__":
    main()
