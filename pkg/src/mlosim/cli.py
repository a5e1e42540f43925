"""Command-line frontend for single runs, capacity searches, and sweeps.

Configs are JSON files whose keys mirror ScenarioConfig; the empty object
{} reproduces the default setup (greedy policy, two 40 MHz links, AR
traffic, ten seeds).  Everything is written atomically to the output
directory together with a manifest recording the resolved configuration,
so any result directory can be reproduced from its own manifest.

Exit codes: 0 success, 1 usage or config error, 2 internal error.
"""
import argparse
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__, mld
from .scenario import (ScenarioConfig, equivalent_single_link, expand_links,
                       links_label, run_seeds, streams_of)
from .stats import (capacity_search, evaluate, export_ccdf, format_capacity,
                    format_ccdf, format_delay, format_records, format_summary)
from .traffic import StreamConfig

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_INTERNAL = 2

SCENARIO_KEYS = ("policy", "links", "n_sta", "cell_radius_m", "sim_duration_s",
                 "activation_window_s", "seeds", "traffic", "buffer_cap",
                 "count_own_tx", "update_period_s", "ma_window",
                 "rate_control", "fixed_mcs")
CAPACITY_KEYS = ("max_sta",)
SWEEP_KEYS = ("policies", "link_sets", "sta_counts")
TRAFFIC_KINDS = ("dl_video", "ul_video", "pose")


class ConfigError(ValueError):
    pass


def load_config(path) -> dict:
    try:
        with open(path) as f:
            raw = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}")
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must be a JSON object")
    return raw


def _check_keys(raw: dict, allowed) -> None:
    for key in raw:
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r}")


def _check_traffic(overrides: dict) -> None:
    if not isinstance(overrides, dict):
        raise ConfigError("config key 'traffic' must be an object")
    fields = set(StreamConfig.__dataclass_fields__)
    for kind, repl in overrides.items():
        if kind == "enabled":
            if not isinstance(repl, list):
                raise ConfigError("traffic key 'enabled' must be a list")
            for k in repl:
                if k not in TRAFFIC_KINDS:
                    raise ConfigError(f"unknown traffic kind {k!r} in 'enabled'")
            continue
        if kind not in TRAFFIC_KINDS:
            raise ConfigError(f"unknown traffic kind {kind!r}")
        for field in repl:
            if field not in fields:
                raise ConfigError(f"unknown traffic field {field!r} under {kind!r}")


def resolve_config(raw: dict, seeds=None, extra_keys=()) -> ScenarioConfig:
    """Build a validated ScenarioConfig from a parsed config dict.

    seeds, when given, overrides the config's seed list (the --seeds flag).
    extra_keys lists command-specific keys tolerated alongside the scenario
    ones.
    """
    _check_keys(raw, SCENARIO_KEYS + tuple(extra_keys))
    kwargs = {}
    try:
        if "policy" in raw:
            kwargs["policy"] = mld.canonical_policy(raw["policy"])
        if "links" in raw:
            kwargs["links"] = expand_links(raw["links"])
        if "traffic" in raw:
            _check_traffic(raw["traffic"])
            kwargs["traffic_overrides"] = raw["traffic"]
        for key in ("n_sta", "cell_radius_m", "sim_duration_s",
                    "activation_window_s", "buffer_cap", "count_own_tx",
                    "update_period_s", "ma_window", "rate_control",
                    "fixed_mcs"):
            if key in raw:
                kwargs[key] = raw[key]
        if seeds is not None:
            kwargs["seeds"] = tuple(seeds)
        elif "seeds" in raw:
            kwargs["seeds"] = tuple(raw["seeds"])
        cfg = ScenarioConfig(**kwargs)
        cfg.validate()
        streams_of(cfg)  # validates traffic overrides end to end
    except ConfigError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigError(str(e))
    return cfg


def config_to_dict(cfg: ScenarioConfig) -> dict:
    """Resolved-config echo; resolve_config on the result yields cfg back."""
    out = {
        "policy": cfg.policy,
        "links": links_label(cfg.links),
        "n_sta": cfg.n_sta,
        "cell_radius_m": cfg.cell_radius_m,
        "sim_duration_s": cfg.sim_duration_s,
        "activation_window_s": cfg.activation_window_s,
        "seeds": list(cfg.seeds),
        "buffer_cap": cfg.buffer_cap,
        "count_own_tx": cfg.count_own_tx,
        "update_period_s": cfg.update_period_s,
        "ma_window": cfg.ma_window,
        "rate_control": cfg.rate_control,
        "fixed_mcs": cfg.fixed_mcs,
    }
    if cfg.traffic_overrides is not None:
        out["traffic"] = cfg.traffic_overrides
    return out


def write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def write_manifest(out_dir: Path, command: str, config_path, cfg_echo: dict,
                   runtime_s: float) -> None:
    manifest = {
        "tool": "mlosim",
        "version": __version__,
        "command": command,
        "config_path": str(config_path),
        "config": cfg_echo,
        "out_dir": str(out_dir),
        "runtime_s": round(runtime_s, 3),
    }
    write_atomic(out_dir / "manifest.json", json.dumps(manifest, indent=2) + "\n")


def _write_run_outputs(out_dir: Path, rows, streams) -> list:
    write_atomic(out_dir / "delays.csv", format_records(rows))
    for s in streams:
        ccdf = export_ccdf(rows, s.kind)
        write_atomic(out_dir / f"ccdf_{s.kind}.csv", format_ccdf(ccdf))
    verdicts = evaluate(rows, streams)
    write_atomic(out_dir / "summary.txt", format_summary(verdicts))
    return verdicts


def cmd_run(args) -> int:
    cfg = resolve_config(load_config(args.config), seeds=args.seeds)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    rows = run_seeds(cfg, workers=args.workers)
    verdicts = _write_run_outputs(out_dir, rows, streams_of(cfg))
    write_manifest(out_dir, "run", args.config, config_to_dict(cfg),
                   time.perf_counter() - t0)
    for line in format_summary(verdicts).splitlines():
        print(line)
    return EXIT_OK


def cmd_capacity(args) -> int:
    raw = load_config(args.config)
    max_n = raw.get("max_sta", 64)
    if not isinstance(max_n, int) or max_n < 1:
        raise ConfigError("config key 'max_sta' must be a positive integer")
    cfg = resolve_config(raw, seeds=args.seeds, extra_keys=CAPACITY_KEYS)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = capacity_search(cfg, max_n=max_n, workers=args.workers)
    write_atomic(out_dir / "capacity.txt", format_capacity(result))
    lines = ["n,stream,worst_p99_us,pdb_us,verdict"]
    for n, verdicts, _ in result.per_n:
        for v in verdicts:
            lines.append(f"{n},{v.stream},{format_delay(v.worst_p99_us)},"
                         f"{v.pdb_us},{'PASS' if v.passed else 'FAIL'}")
    write_atomic(out_dir / "per_n.csv", "\n".join(lines) + "\n")
    write_manifest(out_dir, "capacity", args.config, config_to_dict(cfg),
                   time.perf_counter() - t0)
    print(f"policy={result.policy} links={result.links_label} "
          f"max_sta={result.max_sta}")
    if result.max_sta == 0:
        print("warning: capacity is 0, a single station already fails")
    return EXIT_OK


def _sweep_cell(base_cfg: ScenarioConfig, policy: str, links, n: int,
                workers: int):
    if policy == mld.SL and len(links) > 1:
        links = equivalent_single_link(links)
    cfg = replace(base_cfg, policy=policy, links=links, n_sta=n)
    cfg.validate()
    rows = run_seeds(cfg, workers=workers)
    return links_label(links), evaluate(rows, streams_of(cfg))


def cmd_sweep(args) -> int:
    raw = load_config(args.config)
    policies = raw.get("policies", list(mld.POLICIES))
    link_sets = raw.get("link_sets", ["2x40"])
    sta_counts = raw.get("sta_counts")
    if not sta_counts:
        raise ConfigError("sweep config requires key 'sta_counts'")
    try:
        policies = [mld.canonical_policy(p) for p in policies]
        for name in link_sets:
            expand_links(name)
    except ValueError as e:
        raise ConfigError(str(e))
    if any(not isinstance(n, int) or n < 1 for n in sta_counts):
        raise ConfigError("config key 'sta_counts' must list positive integers")
    base_raw = {k: v for k, v in raw.items() if k not in SWEEP_KEYS}
    base_raw.pop("policy", None)
    base_raw.pop("links", None)
    base_raw.pop("n_sta", None)
    base_cfg = resolve_config(base_raw, seeds=args.seeds)
    kinds = [s.kind for s in streams_of(base_cfg)]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    header = ["policy", "links", "n_sta"]
    header += [f"{k}_p99_us" for k in kinds] + ["overall"]
    lines = [",".join(header)]
    failures = 0
    for policy in policies:
        for link_name in link_sets:
            links = expand_links(link_name)
            for n in sta_counts:
                try:
                    label, verdicts = _sweep_cell(base_cfg, policy, links, n,
                                                  args.workers)
                    by_kind = {v.stream: v for v in verdicts}
                    cells = [format_delay(by_kind[k].worst_p99_us) for k in kinds]
                    overall = "PASS" if all(v.passed for v in verdicts) else "FAIL"
                except Exception as e:
                    log.error("sweep cell (%s, %s, %d) failed: %s",
                              policy, link_name, n, e)
                    label = link_name
                    cells = ["ERROR"] * len(kinds)
                    overall = "ERROR"
                    failures += 1
                lines.append(",".join([policy, label, str(n)] + cells + [overall]))
                log.info("sweep cell done: %s", lines[-1])
    write_atomic(out_dir / "sweep.csv", "\n".join(lines) + "\n")
    echo = config_to_dict(base_cfg)
    echo.update({"policies": list(policies), "link_sets": list(link_sets),
                 "sta_counts": list(sta_counts)})
    write_manifest(out_dir, "sweep", args.config, echo,
                   time.perf_counter() - t0)
    if failures:
        print(f"warning: {failures} sweep cell(s) failed, see log")
    print(f"wrote {len(lines) - 1} sweep rows to {out_dir / 'sweep.csv'}")
    return EXIT_OK


def _parse_seeds(text: str) -> tuple:
    try:
        seeds = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise ConfigError(f"--seeds expects comma-separated integers, got {text!r}")
    if not seeds:
        raise ConfigError("--seeds list is empty")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlosim",
        description="Multi-link 802.11 AR-traffic simulator")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, doc in (
            ("run", cmd_run, "simulate one configuration over its seeds"),
            ("capacity", cmd_capacity,
             "find the largest station count whose streams all pass"),
            ("sweep", cmd_sweep,
             "run a policies x link-sets x station-counts cross-product")):
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=None,
                       help="output directory (default $MLOSIM_OUT or ./out)")
        p.add_argument("--seeds", default=None,
                       help="comma-separated seed list overriding the config")
        p.add_argument("--workers", type=int, default=None,
                       help="max parallel seed runs (default: CPU count)")
        p.add_argument("--log-level", default="warning",
                       choices=("debug", "info", "warning", "error"))
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper()),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.out is None:
        args.out = os.environ.get("MLOSIM_OUT", "out")
    if args.workers is None:
        args.workers = os.cpu_count() or 1
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.seeds = _parse_seeds(args.seeds) if args.seeds else None
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001 - last-resort mapping to exit code
        log.exception("internal error")
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
