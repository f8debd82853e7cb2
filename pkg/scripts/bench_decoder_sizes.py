"""Latency / RTF / size table over the six decoder configurations.

    python3 scripts/bench_decoder_sizes.py --enc-layers 2 --int8 --report bench.csv
"""

import argparse

from simulstream.bench import DECODER_GRID, bench, format_table, parse_configs, write_report


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--configs", help="e.g. 768x6,256x4 (default: all six)")
    ap.add_argument("--enc-layers", type=int, default=16)
    ap.add_argument("--k", type=int, default=25)
    ap.add_argument("--seconds", type=float, default=2.0)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--int8", action="store_true")
    ap.add_argument("--report")
    args = ap.parse_args()
    configs = parse_configs(args.configs) if args.configs else list(DECODER_GRID)
    report = bench(configs, int8=args.int8, repeat=args.repeat, enc_layers=args.enc_layers,
                   k=args.k, seconds=args.seconds)
    print(format_table(report))
    if args.report:
        write_report(report, args.report)


if __name__ == "__main__":
    main()
