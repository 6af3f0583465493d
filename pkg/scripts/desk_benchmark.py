"""Desk-scale benchmark: synthetic 6x6 dataset, training, matching accuracy, ablations and CD.

Writes every artifact plus results.json into --out. Stages whose outputs already exist
with the same configuration are reused, so a rerun only evaluates.

    python3 scripts/desk_benchmark.py --out runs/desk
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np
import torch

from lineinbet.evaluation import evaluate
from lineinbet.learn import TrainConfig, SampleFactory, matching_accuracy, select_pairs, train, write_loss_log
from lineinbet.model import ModelConfig, ModelParams, load_params, save_params
from lineinbet.synth import Dataset, SynthConfig, dataset_stats, generate_dataset

log = logging.getLogger("desk")

SYNTH = SynthConfig(n_figures=6, n_motions=6, frames_per_seq=24, canvas=128, seed=7)
MODEL = ModelConfig(channels=64, n_layers=2)
# 5000 correspondence-only steps at 1e-3, then 1000 full-loss steps at 1e-4 with fresh Adam moments
TRAIN = TrainConfig(learning_rate=1e-3, epochs_total=120, epochs_phase1=100, pairs_per_epoch=400, gap_min=1, gap_max=5,
                    lr_decay_epoch=100, lr_decay_factor=0.1, augment=True, reset_optimizer_at_phase2=True)
VARIANTS = {"full": {}, "no_position": {"use_position": False}, "no_topology": {"use_topology": False}}
MODERATE_SHIFT = 15.0
LARGE_SHIFT = 10.0
SMOOTH = 20


def _digest(*objs) -> str:
    blob = json.dumps([dataclasses.asdict(o) if dataclasses.is_dataclass(o) else o for o in objs], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def ensure_dataset(root: Path, cfg: SynthConfig) -> Dataset:
    stamp = root / "config.sha"
    if not (stamp.exists() and stamp.read_text() == _digest(cfg)):
        t0 = time.time()
        generate_dataset(cfg, root)
        stamp.write_text(_digest(cfg))
        log.info("generated dataset in %.0f s", time.time() - t0)
    return Dataset.open(root)


def smoothed(values, window=SMOOTH):
    v = np.asarray(values, dtype=np.float64)
    return np.array([v[max(0, i - window + 1):i + 1].mean() for i in range(len(v))])


def ensure_model(out: Path, name: str, dataset, factory, mcfg: ModelConfig, tcfg: TrainConfig, init_seed=0):
    path, stamp, loss = out / f"{name}.bin", out / f"{name}.sha", out / f"{name}_loss.csv"
    key = _digest(mcfg, tcfg, init_seed, dataset.manifest["config"])
    if path.exists() and stamp.exists() and stamp.read_text().split()[0] == key:
        return load_params(path), float(stamp.read_text().split()[1]), _read_loss(loss)
    t0 = time.time()
    res = train(dataset, tcfg, ModelParams.init(mcfg, init_seed), factory)
    seconds = time.time() - t0
    save_params(res.params, path)
    write_loss_log(res.log, loss)
    stamp.write_text(f"{key} {seconds:.1f}")
    log.info("trained %s: %d steps in %.0f s", name, len(res.log), seconds)
    return res.params, seconds, [r["L_c"] for r in res.log]


def _read_loss(path: Path):
    rows = path.read_text().splitlines()[1:]
    return [float(r.split(",")[2]) for r in rows]


def run(out, synth=SYNTH, model=MODEL, tcfg=TRAIN, variants=VARIANTS, cd_gaps=(1, 5, 9)) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    torch.set_num_threads(1)
    dataset = ensure_dataset(out / "data", synth)
    factory = SampleFactory(dataset, model.spectral_dim)
    moderate = select_pairs(dataset, range(tcfg.gap_min, tcfg.gap_max + 1), ("test",), max_shift=MODERATE_SHIFT)
    res = {"n_moderate_pairs": len(moderate), "train": dataclasses.asdict(tcfg), "model": dataclasses.asdict(model)}
    for name, flags in variants.items():
        mcfg = dataclasses.replace(model, **flags)
        params, seconds, lc = ensure_model(out, name, dataset, factory, mcfg, tcfg)
        s = smoothed(lc)
        res[name] = {"train_seconds": seconds, "steps": len(lc), "valid_acc": matching_accuracy(params, dataset,
                                                                                              moderate, factory)}
        if name == "full":
            k = min(200, len(s)) - 1
            res[name].update({"lc_smoothed_first": float(s[SMOOTH - 1]), "lc_smoothed_at_200": float(s[k]),
                              "lc_drop_200": float(1 - s[k] / s[SMOOTH - 1])})
            report = evaluate(params, dataset, gaps=cd_gaps, splits=("test",))
            report.write_csv(out / "report.csv")
            large = [r for r in report.pairs if r.avg_shift >= LARGE_SHIFT]
            res["cd"] = {
                "d": report.d,
                "mean_by_gap": {str(g): report.mean_cd(g) for g in cd_gaps},
                "baseline_by_gap": {str(g): report.mean_cd(g, baseline=True) for g in cd_gaps},
                "n_large_shift": len(large),
                "beats_baseline_large_shift": float(np.mean([r.cd < r.baseline_cd for r in large])) if large else None,
            }
        log.info("%s: valid acc %.4f", name, res[name]["valid_acc"])
    res["dataset_stats"] = {str(g): dataclasses.asdict(v) for g, v in dataset_stats(dataset).items()}
    (out / "results.json").write_text(json.dumps(res, indent=1, sort_keys=True))
    return res


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--lr", type=float, default=TRAIN.learning_rate)
    ap.add_argument("--epochs", type=int, default=TRAIN.epochs_total)
    ap.add_argument("--phase1-epochs", type=int, default=TRAIN.epochs_phase1)
    ap.add_argument("--pairs-per-epoch", type=int, default=TRAIN.pairs_per_epoch)
    ap.add_argument("--variants", default=",".join(VARIANTS))
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    tcfg = dataclasses.replace(TRAIN, learning_rate=args.lr, epochs_total=args.epochs,
                               epochs_phase1=args.phase1_epochs, pairs_per_epoch=args.pairs_per_epoch,
                               lr_decay_epoch=min(args.phase1_epochs, args.epochs))
    variants = {k: VARIANTS[k] for k in args.variants.split(",")}
    res = run(args.out, tcfg=tcfg, variants=variants)
    json.dump(res, sys.stdout, indent=1, sort_keys=True)
    print()


if __name__ == "__main__":
    main()
