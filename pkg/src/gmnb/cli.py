"""``gmnb`` command line.

Exit codes: 0 ok, 2 validation, 3 numeric, 4 I/O.  Failures print a single
``error=<kind> exit=<code> detail=<text>`` line on stderr.
"""
from __future__ import annotations

import argparse
import logging
import sys

from . import __version__, pipeline
from .bayes_factor import ESTIMATORS
from .distributions import CRT_EXACT_MAX
from .errors import GmnbError, ValidationError
from .gibbs import GibbsConfig
from .model import GmnbHyper
from .synthetic import GENERATORS, SimSpec

NORMALIZE_REFUSAL = (
    "--normalize is not supported: sequencing depth is modeled by the per-sample "
    "probabilities p_j^(t), so raw counts must be supplied")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _floats(text):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _pair(text):
    vals = _floats(text)
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected lo,hi, got {text!r}")
    return vals


def _add_gibbs(p):
    g = p.add_argument_group("sampler")
    g.add_argument("--iters", type=int, default=2000, help="total sweeps (default 2000)")
    g.add_argument("--burn-in", type=int, default=1000)
    g.add_argument("--thin", type=int, default=1)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--workers", type=int, default=1,
                   help="threads for the per-gene updates; results do not depend on it")
    g.add_argument("--crt-exact-max", type=int, default=CRT_EXACT_MAX,
                   help="largest count drawn with the exact CRT sum")
    h = p.add_argument_group("priors")
    for name in ("a0", "b0", "e-init", "f-init", "c0", "d0"):
        h.add_argument(f"--{name}", type=float, default=1.0)
    p.add_argument("--normalize", action="store_true", help=argparse.SUPPRESS)


def _add_sim(p, with_seed=True):
    g = p.add_argument_group("simulation")
    g.add_argument("--generator", choices=GENERATORS, default="gmnb")
    g.add_argument("--genes", type=int, default=1000)
    g.add_argument("--de-frac", type=float, default=0.10)
    g.add_argument("--reps", type=int, default=4)
    g.add_argument("--times", type=_floats, default=(0.0, 12.0, 24.0, 48.0, 72.0))
    g.add_argument("--size-factor-range", type=_pair, default=(0.8, 1.2))
    g.add_argument("--nb-dispersion", type=float, default=50.0,
                   help="count dispersion of the gp and nbar1 generators")
    g.add_argument("--m-range", type=_pair, default=(1000.0, 2000.0), help="gp mean range")
    g.add_argument("--beta-range", type=_pair, default=(4.5, 5.5), help="nbar1 log-mean range")
    if with_seed:
        g.add_argument("--seed", type=int, default=0)


def build_parser():
    parser = _Parser(prog="gmnb", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"gmnb {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a synthetic two-condition dataset")
    _add_sim(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fit", help="fit GMNB to one count matrix")
    p.add_argument("--counts", required=True)
    p.add_argument("--meta", required=True)
    p.add_argument("--out", required=True)
    _add_gibbs(p)

    p = sub.add_parser("de", help="rank genes by two-condition log Bayes factor")
    for i in (1, 2):
        p.add_argument(f"--counts{i}", required=True)
        p.add_argument(f"--meta{i}", required=True)
    p.add_argument("--estimator", choices=ESTIMATORS, default="harmonic-mean")
    p.add_argument("--out", required=True)
    _add_gibbs(p)

    p = sub.add_parser("eval", help="ROC / PR curves of a BF report against truth labels")
    p.add_argument("--report", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("bench", help="repeat simulate -> de -> eval over seeds")
    _add_sim(p, with_seed=False)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--estimator", choices=ESTIMATORS, default="harmonic-mean")
    p.add_argument("--timing", default=None, help="optional file for throughput numbers")
    p.add_argument("--out", required=True)
    _add_gibbs(p)
    return parser


def _hyper(a):
    return GmnbHyper(a.a0, a.b0, a.e_init, a.f_init, a.c0, a.d0)


def _gibbs(a):
    return GibbsConfig(total_iters=a.iters, burn_in=a.burn_in, thin=a.thin, seed=a.seed,
                       parallel_genes=a.workers > 1, workers=a.workers,
                       crt_exact_max=a.crt_exact_max)


def _sim(a):
    return SimSpec(n_genes=a.genes, de_fraction=a.de_frac, n_replicates=a.reps,
                   time_grid=tuple(a.times), size_factor_range=tuple(a.size_factor_range),
                   generator=a.generator, seed=a.seed, nb_dispersion=a.nb_dispersion,
                   m_range=tuple(a.m_range), beta_range=tuple(a.beta_range))


def resolve(args) -> pipeline.RunConfig:
    if getattr(args, "normalize", False):
        raise ValidationError(NORMALIZE_REFUSAL)
    cmd = args.subcommand
    kw = {"subcommand": cmd, "out": args.out}
    if cmd in ("fit", "de", "bench"):
        kw["hyper"] = _hyper(args)
        kw["gibbs"] = _gibbs(args)
    if cmd in ("simulate", "bench"):
        kw["sim"] = _sim(args)
    if cmd in ("de", "bench"):
        kw["estimator"] = args.estimator
    if cmd == "bench":
        kw["runs"] = args.runs
    keys = {"fit": ("counts", "meta"), "de": ("counts1", "meta1", "counts2", "meta2"),
            "eval": ("report", "truth")}.get(cmd, ())
    kw["inputs"] = {k: getattr(args, k) for k in keys}
    return pipeline.RunConfig(**kw)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        cfg = resolve(args)
        if cfg.subcommand == "bench":
            pipeline.cmd_bench(cfg, args.timing)
        else:
            getattr(pipeline, f"cmd_{cfg.subcommand}")(cfg)
    except GmnbError as exc:
        detail = " ".join(str(exc).split())
        print(f"error={exc.code} exit={exc.exit_code} detail={detail}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error=io exit=4 detail={exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
