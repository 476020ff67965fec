"""Run the full pipeline on a synthetic corpus and print the results table.

    python scripts/bench_synthetic.py --n 10000 --seed 7 --out bench-out
"""

import argparse
import time

from leakhound import pipeline as pl
from leakhound.config import PipelineConfig
from leakhound.pii import SyntheticSpec


def main() -> None:
    p = argparse.ArgumentParser()
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--pii-rate", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default="bench-out")
    p.add_argument("--no-explain", action="store_true")
    args = p.parse_args()

    cfg = PipelineConfig(seed=args.seed, output=args.out, threads=args.threads).validate()
    ws = pl.Workspace.create(cfg)
    started = time.perf_counter()
    pl.stage_generate(ws, SyntheticSpec(args.n, args.pii_rate, seed=args.seed))
    pl.run_pipeline(ws, explain=not args.no_explain)
    print(ws.path(pl.REPORT_TXT).read_text(encoding="utf-8"))
    print(f"total {time.perf_counter() - started:.1f}s, artifacts in {ws.out}")


if __name__ == "__main__":
    main()
