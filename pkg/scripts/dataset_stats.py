"""Difficulty statistics per frame gap for a synthetic dataset (generated if missing).

    python3 scripts/dataset_stats.py --data runs/desk/data
    python3 scripts/dataset_stats.py --data /tmp/still --amplitude 0.5 --figures 2 --motions 2
"""
import argparse
from pathlib import Path

from lineinbet.synth import Dataset, SynthConfig, dataset_stats, generate_dataset


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data", required=True)
    ap.add_argument("--gaps", default="0,1,5,9")
    ap.add_argument("--figures", type=int, default=6)
    ap.add_argument("--motions", type=int, default=6)
    ap.add_argument("--frames", type=int, default=24)
    ap.add_argument("--canvas", type=int, default=128)
    ap.add_argument("--amplitude", type=float, default=1.0)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)
    root = Path(args.data)
    if not (root / "manifest.json").exists():
        generate_dataset(SynthConfig(args.figures, args.motions, args.frames, args.canvas, args.seed, args.amplitude),
                         root)
    gaps = [int(g) for g in args.gaps.split(",")]
    table = dataset_stats(Dataset.open(root), gaps)
    print(f"{'gap':>4} {'occlusion':>10} {'avg shift':>10} {'max shift':>10}")
    for g, s in table.items():
        print(f"{g:>4} {100 * s.occlusion_rate:>9.2f}% {s.avg_shift:>10.2f} {s.max_shift:>10.2f}")


if __name__ == "__main__":
    main()
