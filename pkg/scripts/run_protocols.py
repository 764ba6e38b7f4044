#!/usr/bin/env python3
"""Run every experiment protocol on synthetic data and write the reports.

    python3 scripts/run_protocols.py --out runs/protocols
    python3 scripts/run_protocols.py --out runs/quick --quick

Outputs one JSON report (and SVG curve where relevant) per protocol, plus a
``summary.txt`` with the headline numbers.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import time
from pathlib import Path

from clientprint import experiments as ex
from clientprint import ingest, knn, mlp, synth, tuning
from clientprint.dataset import subsample_balanced, train_test_split


@dataclasses.dataclass
class ProtocolConfig:
    seed: int = 42
    other_seed: int = 43
    separation: float = 2.0
    per_class: int = 3000
    ks: tuple = tuple(range(1, 21))
    sizes: tuple = (250, 500, 1000, 2000, 3000)
    cv_folds: int = 5
    search_trials: int = 30
    search_max_epochs: int = 200
    search_layers: tuple = (1, 10)
    search_sizes: tuple = (100, 2000)
    # rows per class used by the architecture search; the full space is expensive
    search_per_class: int = 300
    mlp_hidden: tuple = (391, 870)

    @classmethod
    def quick(cls, **kw) -> "ProtocolConfig":
        base = dict(per_class=500, ks=(1, 5, 9, 14), sizes=(100, 250, 500), cv_folds=3, search_trials=3,
                    search_max_epochs=10, search_layers=(1, 2), search_sizes=(16, 64),
                    search_per_class=100, mlp_hidden=(64, 64))
        base.update(kw)
        return cls(**base)


def write(report, out: Path, name: str, xlabel: str | None = None) -> None:
    (out / f"{name}.json").write_text(report.to_json())
    if xlabel and report.curve:
        ex.plot_curve(report, out / f"{name}.svg", xlabel)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True)
    ap.add_argument("--quick", action="store_true", help="small sizes for a smoke run")
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--separation", type=float, default=2.0)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    make = ProtocolConfig.quick if args.quick else ProtocolConfig
    cfg = make(seed=args.seed, separation=args.separation)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(dataclasses.asdict(cfg), indent=2) + "\n")
    summary = []

    gen = synth.default_config(per_class=cfg.per_class, seed=cfg.seed, separation=cfg.separation)
    default = synth.generate(gen, "default")
    other = synth.generate(dataclasses.replace(gen, seed=cfg.other_seed), "all_subnets")
    flags = synth.generate(dataclasses.replace(gen, seed=cfg.other_seed), "proposer_flags")
    for name, ds in (("default", default), ("all_subnets", other), ("proposer_flags", flags)):
        ingest.save_dataset(ds, out / f"data_{name}.jsonl")

    t0 = time.perf_counter()
    rep = ex.k_sweep(default, cfg.ks, cfg.cv_folds, cfg.seed)
    write(rep, out, "k_sweep", "k")
    best = max(rep.curve, key=lambda p: p["mean"])
    summary.append(f"k sweep: best k={best['x']} cv accuracy {best['mean']:.4f}")

    rep = ex.size_sweep(default, cfg.sizes, knn.KnnConfig(9), cfg.cv_folds, cfg.seed)
    write(rep, out, "size_sweep_knn", "samples per class")
    summary.append("size sweep (knn): " + ", ".join(f"{p['x']}:{p['mean']:.4f}" for p in rep.curve))

    space = tuning.SearchSpace(cfg.search_layers, cfg.search_sizes, cfg.search_trials, cfg.cv_folds, cfg.seed)
    sub = subsample_balanced(default, cfg.search_per_class, cfg.seed)
    trials = tuning.random_search_mlp(sub, space, mlp.MlpConfig(max_epochs=cfg.search_max_epochs, seed=cfg.seed))
    (out / "search_mlp.json").write_text(json.dumps([t.to_dict() for t in trials], indent=2) + "\n")
    summary.append(f"mlp search: best {trials[0].params['hidden_sizes']} cv accuracy {trials[0].mean_accuracy:.4f}")

    train, test = train_test_split(default, 0.2, cfg.seed)
    mlp_cfg = mlp.MlpConfig(hidden_sizes=cfg.mlp_hidden, seed=cfg.seed)
    for name, config in (("knn", knn.KnnConfig(9)), ("mlp", mlp_cfg)):
        rep = ex.evaluate(ex.fit_classifier(config, train, cfg.seed), test, kind=f"held_out_{name}")
        write(rep, out, f"held_out_{name}")
        summary.append(f"held-out {name}: {rep.accuracy:.4f}")

    _, test_other = train_test_split(other, 0.2, cfg.seed)
    _, test_flags = train_test_split(flags, 0.2, cfg.seed)
    for name, target in (("all_subnets", test_other), ("proposer_flags", test_flags)):
        same, transfer = ex.mode_transfer(train, test, target, knn.KnnConfig(9), cfg.seed)
        write(transfer, out, f"transfer_{name}")
        drops = {n: round(float(d), 4) for n, d in
                 zip(default.class_names, same.per_class_recall - transfer.per_class_recall)}
        summary.append(f"transfer to {name}: {same.accuracy:.4f} -> {transfer.accuracy:.4f}; recall drops {drops}")

    merged = ex.merged_training(default, other, knn.KnnConfig(9), cfg.seed, cfg.cv_folds)
    for rep in merged:
        write(rep, out, rep.kind)
    summary.append("merged: cv {:.4f}, test default {:.4f}, test all_subnets {:.4f}".format(
        *(r.accuracy for r in merged)))

    rep = ex.twelve_class_experiment(default, other, knn.KnnConfig(9), cfg.seed, cfg.cv_folds)
    write(rep, out, "twelve_class")
    summary.append(f"twelve-class: {rep.accuracy:.4f}, collapsed {rep.metrics['collapsed_accuracy']:.4f}")

    summary.append(f"elapsed {time.perf_counter() - t0:.1f} s")
    text = "\n".join(summary) + "\n"
    (out / "summary.txt").write_text(text)
    print(text, end="")


if __name__ == "__main__":
    main()
