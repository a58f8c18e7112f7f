"""Command line: ``schemalearn run|plot|oracle|dump-matrix``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_SCENARIO = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="schemalearn", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    r = sub.add_parser("run", help="run a configured scenario and write its artifacts")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, action="append",
                   help="override the config seed; repeat for a seed list (one run directory per seed)")
    r.add_argument("--out")
    r.add_argument("--trials", type=int)

    p = sub.add_parser("plot", help="render a figure from a run directory")
    p.add_argument("run_dir")
    p.add_argument("figure", choices=["path", "mhm", "traces", "matrix"])
    p.add_argument("--out")
    p.add_argument("--trial", type=int)

    o = sub.add_parser("oracle", help="run reference checks")
    o.add_argument("suite", nargs="*", default=["all"], help="causal, gradient, dual-inverse or all")
    o.add_argument("--out")
    o.add_argument("--seed", type=int, default=0)

    d = sub.add_parser("dump-matrix", help="print a run's reliability matrix, or run the config and print it")
    src = d.add_mutually_exclusive_group(required=True)
    src.add_argument("--run-dir")
    src.add_argument("--config")
    d.add_argument("--seed", type=int)
    d.add_argument("--out")
    d.add_argument("--trials", type=int)
    return ap


def _cmd_run(a) -> int:
    from .config import load_config
    from .harness import run_experiment

    cfg = load_config(a.config)
    seeds = a.seed or [None]
    for s in seeds:
        c = cfg.with_overrides(seed=s, trials=a.trials, out=a.out)
        out = Path(c.experiment.out)
        if len(seeds) > 1:
            out = out / f"seed_{c.seed}"
        m = run_experiment(c, out)
        print(f"{out}\t{m.digest}")
    return EXIT_OK


def _cmd_plot(a) -> int:
    from .plots import plot

    print(plot(a.run_dir, a.figure, a.out, a.trial))
    return EXIT_OK


def _cmd_oracle(a) -> int:
    from .oracles import run_oracles

    try:
        reports = run_oracles(a.suite, a.out, a.seed)
    except KeyError as e:
        print(f"error: {e.args[0]}", file=sys.stderr)
        return EXIT_CONFIG
    for r in reports:
        sys.stdout.write(r.text())
    return EXIT_OK if all(r.passed for r in reports) else 1


def _cmd_dump(a) -> int:
    from .plots import MissingArtifact

    if a.run_dir:
        p = Path(a.run_dir) / "matrix.tsv"
        if not p.is_file():
            raise MissingArtifact(str(p))
        text = p.read_text()
    else:
        from .config import load_config
        from .harness import run_experiment

        c = load_config(a.config).with_overrides(seed=a.seed, trials=a.trials, out=a.out)
        run_experiment(c)
        text = (Path(c.experiment.out) / "matrix.tsv").read_text()
    sys.stdout.write(text)
    return EXIT_OK


def main(argv=None) -> int:
    from .config import ConfigError
    from .harness import ScenarioFailure
    from .plots import MissingArtifact

    a = _parser().parse_args(argv)
    handlers = {"run": _cmd_run, "plot": _cmd_plot, "oracle": _cmd_oracle, "dump-matrix": _cmd_dump}
    try:
        return handlers[a.cmd](a)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ScenarioFailure as e:
        print(f"scenario failure: {e}", file=sys.stderr)
        return EXIT_SCENARIO
    except MissingArtifact as e:
        print(f"missing artifact: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
