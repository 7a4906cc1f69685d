"""Sampler throughput (gene x timepoint x iteration per second) over a size grid.

    python3 scripts/throughput.py --genes 100 300 1000 --workers 1
"""
import argparse

from gmnb.gibbs import GibbsConfig, run_gibbs, throughput
from gmnb.model import GmnbHyper
from gmnb.synthetic import GENERATORS, SimSpec, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--genes", type=int, nargs="+", default=[100, 300, 1000])
    ap.add_argument("--generator", choices=GENERATORS, default="gmnb")
    ap.add_argument("--iters", type=int, default=2000)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    # warm the jit cache so the first row is not dominated by compilation
    warm = simulate(SimSpec(n_genes=10, generator=args.generator)).data_cond1
    run_gibbs(warm, GmnbHyper(), GibbsConfig(total_iters=20, burn_in=10))

    print("genes\tsamples\tseconds\tgene_time_iter_per_s")
    for K in args.genes:
        data = simulate(SimSpec(n_genes=K, generator=args.generator)).data_cond1
        cfg = GibbsConfig(total_iters=args.iters, burn_in=args.iters // 2,
                          workers=args.workers, parallel_genes=args.workers > 1)
        smp = run_gibbs(data, GmnbHyper(), cfg)
        print(f"{K}\t{data.n_samples}\t{smp.seconds:.2f}\t{throughput(smp):.0f}")


if __name__ == "__main__":
    main()
