"""Time the encoder scan against naive attention over a range of lengths.

    python scripts/bench_scaling.py --lengths 1024,2048,4096,8192 --reps 15
"""

import argparse

from uma_stream.bench import bench_scaling, format_csv


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--lengths", default="1024,2048,4096,8192")
    ap.add_argument("--reps", type=int, default=15)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    lengths = [int(x) for x in args.lengths.split(",")]
    rows = bench_scaling(lengths, reps=args.reps, seed=args.seed)
    print(format_csv(rows, args.seed), end="")
    for a, b in zip(rows, rows[1:]):
        print(f"# {a[0]}->{b[0]}: scan x{b[1] / a[1]:.2f}, attention x{b[2] / a[2]:.2f}")


if __name__ == "__main__":
    main()
