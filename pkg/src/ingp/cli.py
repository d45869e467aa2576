"""``ingp`` command line.

Exit status: 0 ok, 2 config, 3 data, 4 numerical, 5 resource, 1 anything
else.  Ensembles are cached under ``--cache-dir`` (or ``$INGP_CACHE_DIR``).
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import workflows
from .bm_sim import SimConfig
from .cache import EnsembleStore, clear_cache, default_cache_dir, list_cache
from .config import load_config
from .errors import ConfigError, IngpError, ResourceError
from .geometry import resolve_domain

log = logging.getLogger("ingp")


def _store(args, cfg=None):
    cache = args.cache_dir or (cfg.cache_dir if cfg else None) or default_cache_dir()
    workers = args.workers or (cfg.workers if cfg else 1)
    return EnsembleStore(cache, workers)


def _load(args, expected):
    overrides = list(args.set or [])
    if args.workers:
        overrides.append(f"workers={args.workers}")
    cfg = load_config(args.config, overrides)
    if cfg.experiment not in expected:
        raise ConfigError(f"{args.config}: experiment {cfg.experiment!r} is not one of {expected}")
    if getattr(args, "output", None):
        cfg.output = Path(args.output)
    return cfg


def cmd_simulate(args):
    domain = resolve_domain(args.domain)
    pts, _ = workflows.read_points_csv(args.points, domain.dim, with_response=False)
    sim = SimConfig(args.paths, args.steps, args.dt, seed=args.seed)
    store = _store(args)
    if store.cache_dir is None:
        raise ConfigError("simulate needs --cache-dir or INGP_CACHE_DIR to keep the ensembles")
    for k, p in enumerate(pts):
        store.get(domain, p, sim)
        log.info("ensemble %d/%d done", k + 1, len(pts))
    print(f"{len(pts)} ensembles: {store.simulated} simulated, {store.loaded} already cached "
          f"in {store.cache_dir}")


def cmd_kernel_validate(args):
    if args.config:
        cfg = _load(args, ("table1",))
    else:
        from .config import parse_config

        cfg = parse_config({"experiment": "table1", "seed": args.seed,
                            "output": args.output or "results/table1"})
    if args.paths:
        cfg.params["n_paths"] = args.paths
    for n, med in workflows.run_table1(cfg):
        print(f"N={n:<8d} median relative error {med:.4f}")
    print(f"wrote {cfg.output / 'table1.csv'}")


def cmd_fit(args):
    cfg = _load(args, ("fit",))
    if args.inducing_grid and args.inducing_file:
        raise ConfigError("use only one of --inducing-grid and --inducing-file")
    if args.inducing_grid:
        cfg.inducing = ("grid", args.inducing_grid)
    elif args.inducing_file:
        cfg.inducing = ("file", Path(args.inducing_file))
    elif args.dense:
        cfg.inducing = None
    store = _store(args, cfg)
    out = workflows.run_fit(cfg, store)
    print(out.report, end="")
    pred = cfg.predict
    if pred and not args.no_predict:
        workflows.run_predict(cfg.output / "model.yaml", cfg.output, points_path=pred.get("points"),
                              grid_nx=pred.get("grid"), variance=pred.get("variance", False),
                              simulate_test=pred.get("simulate_test_ensembles", False), store=store)
    print(f"wrote {cfg.output}")


def cmd_predict(args):
    if (args.grid is None) == (args.points is None):
        raise ConfigError("give exactly one of --grid and --points")
    store = _store(args)
    pts, inside, pr = workflows.run_predict(
        args.model, args.output, points_path=args.points, grid_nx=args.grid,
        variance=args.variance, simulate_test=args.simulate_test_ensembles, store=store,
        image=not args.no_image)
    msg = f"{int(inside.sum())} of {len(pts)} points inside the domain"
    if pr.n_clipped:
        msg += f"; {pr.n_clipped} negative variances clipped to 0"
    print(msg)
    print(f"wrote {Path(args.output) / 'predictions.csv'}")


def cmd_benchmark(args):
    if args.config:
        cfg = _load(args, ("table2", "benchmark"))
    else:
        if not args.spec:
            raise ConfigError("benchmark needs --config or --spec")
        from .config import parse_config

        defaults = {"ushape": {"n_paths": 20000, "n_steps": 400, "dt": 0.01},
                    "swissroll": {"n_paths": 20000, "n_steps": 200, "dt": 0.5}}
        # same settings as configs/table3-*.yaml and configs/swissroll.yaml
        raw = {"experiment": "benchmark", "seed": args.seed, "simulation": defaults[args.spec],
               "window": {"mode": "fixed", "fixed_w": 0.2 if args.spec == "ushape" else 1.0},
               "benchmark": {"name": args.spec},
               "output": args.output or f"results/{args.spec}"}
        for o in args.set or []:
            from .config import apply_override

            apply_override(raw, o)
        cfg = parse_config(raw)
    if args.spec and cfg.experiment == "benchmark":
        cfg.params["name"] = args.spec
    if args.noise_db is not None:
        cfg.params.pop("noise_sd", None)
        cfg.params["noise_db"] = args.noise_db
    if args.replicates:
        cfg.params["replicates"] = args.replicates
    store = _store(args, cfg)
    if cfg.experiment == "table2":
        res = workflows.run_table2(cfg, store)
        r = res["rows"]
        print(f"normal GP: median l {np.median(r[:, 1]):.3f}, median sigma {np.median(r[:, 2]):.3f}")
        print(f"in-GP:     median l {np.median(r[:, 5]):.3f}, median sigma {np.median(r[:, 6]):.3f}")
        print(f"rank test p-values: l {res['p_l']:.3f}, sigma {res['p_sigma']:.3f}")
    else:
        res = workflows.run_benchmark(cfg, store)
        r = res["rows"]
        print(f"noise sd {res['noise_sd']:.4g}, {len(r)} replicates")
        print(f"in-GP     mean rms {r[:, 1].mean():.4f}")
        print(f"normal GP mean rms {r[:, 2].mean():.4f}")
    print(f"wrote {cfg.output}")


def cmd_cache(args):
    cache = args.cache_dir or default_cache_dir()
    if cache is None:
        raise ConfigError("no cache directory: pass --cache-dir or set INGP_CACHE_DIR")
    if args.action == "list":
        entries = list_cache(cache)
        for p, size, info in entries:
            print(f"{p.name}  {size} bytes  {info}")
        print(f"{len(entries)} entries")
    else:
        print(f"removed {clear_cache(cache)} entries")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--cache-dir", type=Path, help="ensemble cache (default $INGP_CACHE_DIR)")
    common.add_argument("--workers", type=int, help="parallel simulation workers")
    common.add_argument("-v", "--verbose", action="store_true")

    cfgp = argparse.ArgumentParser(add_help=False)
    cfgp.add_argument("--config", help="YAML run file")
    cfgp.add_argument("--set", action="append", metavar="KEY=VALUE",
                      help="override a config entry, e.g. simulation.n_paths=5000")
    cfgp.add_argument("--output", help="output directory (overrides the config)")

    p = argparse.ArgumentParser(prog="ingp", description="Gaussian process regression with heat kernels "
                                "estimated from simulated Brownian motion.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", parents=[common], help="simulate ensembles into the cache")
    s.add_argument("--domain", required=True, help="built-in name or domain file")
    s.add_argument("--points", required=True, help="CSV of start points (header row)")
    s.add_argument("--paths", type=int, default=20000)
    s.add_argument("--steps", type=int, default=200)
    s.add_argument("--dt", type=float, default=0.01)
    s.add_argument("--seed", type=int, required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("kernel-validate", parents=[common, cfgp],
                       help="estimated vs exact heat kernel on the real line")
    s.add_argument("--paths", type=int, nargs="+", help="ensemble sizes")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_kernel_validate)

    s = sub.add_parser("fit", parents=[common, cfgp], help="fit a model from a run file")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--inducing-grid", type=int, metavar="M")
    g.add_argument("--inducing-file")
    g.add_argument("--dense", action="store_true", help="ignore the config's inducing block")
    s.add_argument("--no-predict", action="store_true", help="skip the config's predict block")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("predict", parents=[common], help="predict from a model file")
    s.add_argument("--model", required=True)
    s.add_argument("--grid", type=int, metavar="NX", help="regular grid with NX columns")
    s.add_argument("--points", help="CSV of prediction points")
    s.add_argument("--output", required=True)
    s.add_argument("--variance", action="store_true")
    s.add_argument("--simulate-test-ensembles", action="store_true",
                   help="simulate ensembles at test points (dense variance)")
    s.add_argument("--no-image", action="store_true")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("benchmark", parents=[common, cfgp],
                       help="in-GP vs RBF GP replicates, or the 1-D hyperparameter study")
    s.add_argument("--spec", choices=["ushape", "swissroll"])
    s.add_argument("--noise-db", type=float)
    s.add_argument("--replicates", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("cache", parents=[common], help="inspect or clear the ensemble cache")
    s.add_argument("action", choices=["list", "clear"])
    s.set_defaults(func=cmd_cache)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except IngpError as exc:
        print(f"ingp {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, MemoryError) as exc:
        print(f"ingp {args.command}: resource error: {exc}", file=sys.stderr)
        return ResourceError.exit_code
    except KeyboardInterrupt:
        return 130
    return 0


if __name__ == "__main__":
    sys.exit(main())
