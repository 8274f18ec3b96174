"""Command-line entry point: ``prefbed {run,rank,report,oracle-test}``.

Exit codes: 0 ok, 1 unexpected run failure, 2 configuration, 3 data, 4 oracle.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .acquisition import child_seed
from .errors import ConfigError, ContractViolation, OracleError
from .metrics import rank_candidates, write_ratings_csv
from .runner import (
    ExperimentConfig,
    Method,
    aggregate,
    execute_run,
    load_records,
    run_path,
    write_aggregate_csv,
)

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DATA, EXIT_ORACLE = 0, 1, 2, 3, 4

log = logging.getLogger("prefbed")


# --------------------------------------------------------------------------
# configuration loading


def _key_lines(node, prefix: str = "") -> dict:
    """Map dotted keys of a composed YAML mapping to 1-based line numbers."""
    out = {}
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = f"{prefix}{k.value}"
            out[key] = k.start_mark.line + 1
            out.update(_key_lines(v, key + "."))
    return out


def _config_error(path, message: str, line: int | None = None) -> ConfigError:
    where = f"{path}:{line}" if line else str(path)
    return ConfigError(f"{where}: {message}")


def _parse_value(text: str):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def apply_overrides(doc: dict, overrides: list[str]) -> dict:
    """Apply ``key=value`` strings (dotted keys reach nested sections); values parse as YAML."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, _, raw = item.partition("=")
        parts = key.strip().split(".")
        if not all(parts):
            raise ConfigError(f"override {item!r} has an empty key")
        target = doc
        for p in parts[:-1]:
            nxt = target.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {item!r}: '{p}' is not a section")
            target = nxt
        target[parts[-1]] = _parse_value(raw)
    return doc


def load_config(path, overrides: list[str] = (), seed_list: str | None = None):
    """Read, override and validate a YAML experiment config.

    Returns ``(ExperimentConfig, resolved dict)``. Every problem surfaces as a
    ConfigError naming the file and, when known, the offending line.
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: config file not found")
    text = path.read_text()
    try:
        node = yaml.compose(text)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        problem = getattr(exc, "problem", None) or str(exc)
        raise _config_error(path, f"YAML syntax error: {problem}", line) from exc
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise _config_error(path, "top level must be a mapping", 1)
    lines = _key_lines(node)
    output_dir = doc.pop("output_dir", None)
    try:
        doc = apply_overrides(doc, list(overrides))
        if seed_list is not None:
            doc["seeds"] = [int(s) for s in seed_list.split(",") if s.strip()]
        cfg = ExperimentConfig.from_dict(doc)
    except ConfigError as exc:
        raise _config_error(path, str(exc), lines.get(getattr(exc, "key", None) or "")) from exc
    except ValueError as exc:
        raise _config_error(path, str(exc)) from exc
    resolved = cfg.to_dict()
    if output_dir is not None:
        resolved["output_dir"] = output_dir
    return cfg, resolved


def _output_dir(args, resolved: dict | None) -> Path:
    if args.output_dir:
        return Path(args.output_dir)
    if resolved and resolved.get("output_dir"):
        return Path(resolved["output_dir"])
    return Path("results")


# --------------------------------------------------------------------------
# subcommands


def _one_run(cfg_dict: dict, method: str, seed: int, out_dir: str):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    records = execute_run(cfg, method, seed, out_dir)
    return method, seed, len(records)


def cmd_run(args) -> int:
    cfg, resolved = load_config(args.config, args.set or [], args.seed_list)
    out = _output_dir(args, resolved)
    out.mkdir(parents=True, exist_ok=True)
    header = {
        "prefbed_version": __version__,
        "config_path": str(args.config),
        "overrides": list(args.set or []),
        "seed_list": args.seed_list,
        "config": resolved,
    }
    (out / "run_header.json").write_text(json.dumps(header, indent=2, default=str))
    cfg_dict = {k: v for k, v in resolved.items() if k != "output_dir"}
    jobs = [(m.value, int(s)) for m in cfg.methods for s in cfg.seeds]
    failures = []
    oracle_failed = False
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = {pool.submit(_one_run, cfg_dict, m, s, str(out)): (m, s) for m, s in jobs}
            for fut, (m, s) in futures.items():
                try:
                    fut.result()
                except OracleError as exc:
                    oracle_failed = True
                    failures.append((m, s, exc))
                except Exception as exc:  # noqa: BLE001 - reported per run below
                    failures.append((m, s, exc))
    else:
        for m, s in jobs:
            try:
                _one_run(cfg_dict, m, s, str(out))
            except OracleError as exc:
                oracle_failed = True
                failures.append((m, s, exc))
            except Exception as exc:  # noqa: BLE001
                failures.append((m, s, exc))
    for m, s, exc in failures:
        print(f"run {m} seed {s} failed: {exc}", file=sys.stderr)
    runs = [load_records(run_path(out, cfg, Method(m), s)) for m, s in jobs]
    runs = [r for r in runs if r]
    if runs:
        rows = aggregate(runs)
        write_aggregate_csv(rows, out / f"{cfg.benchmark.value}_aggregate.csv")
        _print_summary(runs)
    if failures:
        return EXIT_ORACLE if oracle_failed else EXIT_FAIL
    return EXIT_OK


def _print_summary(runs) -> None:
    finals: dict = {}
    for run in runs:
        last = run[-1]
        finals.setdefault(last.method, []).append(last.best_pref_so_far)
    for method in sorted(finals):
        v = np.array(finals[method])
        std = v.std(ddof=1) if v.size > 1 else 0.0
        print(f"{method}: final best_pref {v.mean():.4f} ± {std:.4f} (n={v.size})")


def _log_paths(args, cfg, out: Path) -> list[Path]:
    if args.logs:
        return [Path(p) for p in args.logs]
    return [run_path(out, cfg, m, s) for m in cfg.methods for s in cfg.seeds]


def cmd_rank(args) -> int:
    cfg, resolved = load_config(args.config, args.set or [], args.seed_list)
    out = _output_dir(args, resolved)
    paths = _log_paths(args, cfg, out)
    loaded = []
    for path in paths:  # validate every log before rating any of them
        if not path.exists():
            raise ContractViolation(f"{path}: run log not found")
        points = [y for r in load_records(path) for y in (r.y1, r.y2)]
        if len(points) < 2:
            raise ContractViolation(f"{path}: need at least 2 logged points to rank, found {len(points)}")
        loaded.append((path, points))
    oracle = cfg.oracle.build(cfg.bench)
    for path, points in loaded:
        rng = np.random.default_rng(child_seed(args.seed, path.name, "rank"))
        keep, ratings = rank_candidates(np.array(points), oracle, args.max_points, rng)
        dest = out / (path.stem + ".ratings.csv")
        dest.parent.mkdir(parents=True, exist_ok=True)
        write_ratings_csv(dest, keep, ratings)
        print(f"{path.name}: rated {len(keep)} points -> {dest}")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.output_dir or "results")
    paths = [Path(p) for p in args.logs] if args.logs else sorted(out.glob("*_*_*.jsonl"))
    paths = [p for p in paths if not p.name.endswith(".oracle.jsonl")]
    runs = [load_records(p) for p in paths]
    runs = [r for r in runs if r]
    if not runs:
        raise ContractViolation(f"no run logs found under {out}")
    by_bench: dict = {}
    for run in runs:
        by_bench.setdefault(run[0].benchmark, []).append(run)
    out.mkdir(parents=True, exist_ok=True)
    for bench, group in sorted(by_bench.items()):
        dest = out / f"{bench}_report.csv"
        write_aggregate_csv(aggregate(group), dest)
        print(f"[{bench}] -> {dest}")
        _print_summary(group)
    return EXIT_OK


def cmd_oracle_test(args) -> int:
    if args.config:
        cfg, _ = load_config(args.config, args.set or [])
    else:
        doc = apply_overrides({}, list(args.set or []))
        try:
            cfg = ExperimentConfig.from_dict(doc)
        except ConfigError as exc:
            raise ConfigError(f"--set: {exc}") from exc
    bench = cfg.bench
    oracle = cfg.oracle.build(bench)
    x1, x2 = bench.probe_pair
    y1, y2 = bench(x1), bench(x2)
    verdict = oracle.compare(y1, y2, np.random.default_rng(args.seed))
    print(f"Benchmark: {bench.id.value} ({cfg.oracle.backend} oracle)")
    print(f"y1 = {np.round(y1, 4).tolist()}")
    print(f"y2 = {np.round(y2, 4).tolist()}")
    print(f"Verdict: {int(verdict.choice)}")
    if verdict.raw_response is not None:
        print(f"Raw response: {verdict.raw_response}")
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prefbed", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="YAML experiment config")
        p.add_argument("--output-dir", help="where logs and tables go (default: config or ./results)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config value; dotted keys reach sections (repeatable)")
        p.add_argument("--seed-list", help="comma-separated seeds replacing the config's seeds")

    p = sub.add_parser("run", help="run every (method, seed) of a config")
    common(p)
    p.add_argument("--jobs", type=int, default=1, help="parallel runs (default 1)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("rank", help="TrueSkill-rate the logged observables of finished runs")
    common(p)
    p.add_argument("logs", nargs="*", help="run logs (default: the config's runs in output dir)")
    p.add_argument("--max-points", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("report", help="aggregate run logs into plot-ready CSV")
    p.add_argument("--output-dir", help="directory holding run logs (default ./results)")
    p.add_argument("logs", nargs="*", help="explicit run logs")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("oracle-test", help="send the benchmark's probe pair through the oracle")
    p.add_argument("--config", help="YAML experiment config (optional)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_oracle_test)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContractViolation as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OracleError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE


if __name__ == "__main__":
    sys.exit(main())
