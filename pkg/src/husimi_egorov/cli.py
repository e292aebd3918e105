"""Command-line driver.

Subcommands::

    simulate  --config FILE [overrides...]   particle methods (and reference if configured)
    reference --config FILE [overrides...]   grid reference only
    converge  --inputs GLOB --output FILE    convergence table from series CSVs
    preset    NAME                           print a preset as INI text

``--config`` accepts a file path or a preset name. Exit status: 0 on success,
2 on configuration errors, 3 on numerical instability.
"""

import argparse
import json
import logging
import os
import sys

from .exceptions import ConfigError, ContractViolation, TrajectoryInstabilityError
from .experiment import (
    PRESETS,
    converge_files,
    load_config,
    preset_config,
    run_experiment,
    run_reference,
    serialize_config,
)

EXIT_OK, EXIT_CONFIG, EXIT_UNSTABLE = 0, 2, 3

log = logging.getLogger("husimi_egorov")


def _add_run_options(p):
    p.add_argument("--config", required=True, help="INI file or preset name")
    p.add_argument("--method", action="append", help="method (repeatable); replaces the configured list")
    p.add_argument("--epsilon", type=float, action="append", help="epsilon (repeatable)")
    p.add_argument("--n1", type=int)
    p.add_argument("--n2", type=int)
    p.add_argument("--h1", type=float)
    p.add_argument("--h2", type=float)
    p.add_argument("--t-final", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--output")
    p.add_argument("--threads", type=int, default=1)


def build_parser():
    parser = argparse.ArgumentParser(prog="husimi-egorov", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_options(sub.add_parser("simulate", help="run particle methods"))
    _add_run_options(sub.add_parser("reference", help="run the grid reference"))
    conv = sub.add_parser("converge", help="fit error-vs-epsilon slopes")
    conv.add_argument("--inputs", required=True, help="glob of series CSVs with reference columns")
    conv.add_argument("--output", required=True)
    pre = sub.add_parser("preset", help="print a preset configuration")
    pre.add_argument("name", choices=sorted(PRESETS))
    return parser


def _load(args):
    if os.path.exists(args.config):
        cfg = load_config(args.config)
    elif args.config in PRESETS:
        cfg = preset_config(args.config)
    else:
        raise ConfigError(f"{args.config!r} is neither a file nor a preset", field="config")
    if args.method:
        cfg.method = args.method
    if args.epsilon:
        # per-epsilon lists are kept only if they still line up
        chosen = [cfg.epsilon.index(e) if e in cfg.epsilon else None for e in args.epsilon]
        for key in ("n1", "n2", "h1", "h2", "reference_L", "reference_n", "reference_h"):
            values = getattr(cfg, key)
            if len(values) > 1:
                if None in chosen:
                    setattr(cfg, key, [values[0]])
                else:
                    setattr(cfg, key, [values[i] for i in chosen])
        cfg.epsilon = args.epsilon
    for key in ("n1", "n2", "h1", "h2"):
        value = getattr(args, key)
        if value is not None:
            setattr(cfg, key, [value])
    if args.t_final is not None:
        cfg.t_final = args.t_final
    if args.seed is not None:
        cfg.seed = args.seed
    if args.output:
        cfg.output = args.output
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1", field="threads")
    return cfg.validate()


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s"
    )
    try:
        if args.command == "preset":
            sys.stdout.write(serialize_config(preset_config(args.name)))
            return EXIT_OK
        if args.command == "converge":
            tables = converge_files(args.inputs, args.output)
            for method, tab in tables.items():
                print(f"{method}: slope {tab.slope:.3f} over {len(tab.epsilons)} epsilons")
            return EXIT_OK
        cfg = _load(args)
        os.makedirs(cfg.output, exist_ok=True)
        with open(os.path.join(cfg.output, f"{cfg.name}.ini"), "w") as fh:
            fh.write(serialize_config(cfg))
        if args.command == "reference":
            if cfg.reference_kind != "grid":
                raise ConfigError("configuration has no grid reference", field="kind")
            for k, eps in enumerate(cfg.epsilon):
                log.info("reference eps=%g", eps)
                run_reference(cfg, k, threads=args.threads, reuse=False)
            return EXIT_OK
        summary = run_experiment(cfg, threads=args.threads, log=log.info)
        print(json.dumps({"runs": summary["runs"], "slopes": summary["slopes"]}, indent=2))
        return EXIT_OK
    except (ConfigError, ContractViolation) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrajectoryInstabilityError as exc:
        print(f"numerical instability: {exc}", file=sys.stderr)
        return EXIT_UNSTABLE


if __name__ == "__main__":
    sys.exit(main())
