"""Command-line surface: episode runs, parameter sweeps, standalone discovery.

Configs are flat ``key = value`` text files; every key can also be overridden
on the command line with ``--set key=value``.  Runs emit one CSV per episode,
an aggregate CSV, rendered figures and a manifest that lists every artifact
with its hash so a run can be replayed and verified bit-for-bit.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from pathlib import Path

from . import idiscovery, odiscovery
from .experiment import (
    SWEEPABLE,
    AggregateResult,
    EpisodeConfig,
    EpisodeResult,
    aggregate,
    episode_seeds,
    run_episodes,
    sweep,
)
from .odiscovery import DiscoveryConfig
from .scm import ScmConfig, Series, series_from_csv


class ConfigError(ValueError):
    pass


# key -> (section, field, parser); sections address the nested config objects
_BOOLPAIR = {"deps", "indeps"}


def _parse_mode(raw: str) -> str:
    return raw.strip()


_KEYS: dict[str, tuple[str, str, type]] = {
    "n_total": ("scm", "n_total", int),
    "n_observed": ("scm", "n_observed", int),
    "n_links": ("scm", "n_links", int),
    "frac_contemporaneous": ("scm", "frac_contemporaneous", float),
    "max_attempts": ("scm", "max_attempts", int),
    "t_init": ("", "t_init", int),
    "t_max": ("", "t_max", int),
    "intervention_fraction": ("", "intervention_fraction", float),
    "eps0": ("", "eps0", float),
    "decay": ("", "decay", float),
    "alpha_obs": ("discovery", "alpha_obs", float),
    "tau_max": ("discovery", "tau_max", int),
    "k": ("discovery", "k", int),
    "p_max": ("discovery", "p_max", int),
    "max_combinations": ("discovery", "max_combinations", int),
    "alpha_dep": ("", "alpha_dep", float),
    "alpha_indep": ("", "alpha_indep", float),
    "prune_list": ("", "prune_list", str),
    "mode": ("", "mode", str),
    "horizon": ("", "horizon", int),
    "mag_cap": ("", "mag_cap", int),
    "objective_mode": ("", "objective_mode", str),
    "discovery_stride": ("", "discovery_stride", int),
    "seed": ("", "seed", int),
}
_RANGE_KEYS = {
    "auto_range": ("scm", "auto_range"),
    "coeff_range": ("scm", "coeff_range"),
    "noise_range": ("scm", "noise_range"),
}
_RUN_KEYS = {"episodes": int}


def parse_config_text(text: str, source: str) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def build_config(
    file_values: dict[str, str], overrides: dict[str, str]
) -> tuple[EpisodeConfig, int, dict[str, dict[str, str]]]:
    """Resolve (episode config, episode count, provenance map)."""
    provenance: dict[str, dict[str, str]] = {}
    merged: dict[str, tuple[str, str]] = {}
    for key, value in file_values.items():
        merged[key] = (value, "file")
    for key, value in overrides.items():
        merged[key] = (value, "override")

    scm_kwargs: dict = {}
    disc_kwargs: dict = {}
    top_kwargs: dict = {}
    episodes = 1
    for key, (raw, source) in merged.items():
        try:
            if key in _KEYS:
                section, fieldname, caster = _KEYS[key]
                value = caster(raw)
                if section == "scm":
                    scm_kwargs[fieldname] = value
                elif section == "discovery":
                    disc_kwargs[fieldname] = value
                else:
                    top_kwargs[fieldname] = value
            elif key in _RANGE_KEYS:
                lo, hi = (float(part) for part in raw.split(","))
                scm_kwargs[_RANGE_KEYS[key][1]] = (lo, hi)
            elif key in _RUN_KEYS:
                episodes = int(raw)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad value for config key {key!r}: {raw!r} ({exc})") from exc
        provenance[key] = {"value": raw, "source": source}
    try:
        cfg = EpisodeConfig(
            scm=ScmConfig(**scm_kwargs),
            discovery=DiscoveryConfig(**disc_kwargs),
            **top_kwargs,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    if episodes < 1:
        raise ConfigError("bad value for config key 'episodes': must be positive")
    return cfg, episodes, provenance


def _flat_config(cfg: EpisodeConfig, episodes: int) -> dict[str, object]:
    out: dict[str, object] = {}
    for key, (section, fieldname, _) in _KEYS.items():
        obj = cfg
        if section == "scm":
            obj = cfg.scm
        elif section == "discovery":
            obj = cfg.discovery
        out[key] = getattr(obj, fieldname)
    for key, (_, fieldname) in _RANGE_KEYS.items():
        out[key] = list(getattr(cfg.scm, fieldname))
    out["episodes"] = episodes
    return out


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    digest.update(path.read_bytes())
    return digest.hexdigest()


def _write_manifest(
    out_dir: Path,
    command: dict[str, object],
    cfg: EpisodeConfig,
    episodes: int,
    provenance: dict[str, dict[str, str]],
    seeds: list[int],
    artifacts: list[Path],
    wall_clock: dict[str, float],
) -> Path:
    manifest = {
        "command": command,
        "config": _flat_config(cfg, episodes),
        "config_provenance": provenance,
        "seeds": seeds,
        "artifacts": {
            str(path.relative_to(out_dir)): _sha256(path) for path in sorted(artifacts)
        },
        "wall_clock_seconds": wall_clock,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _episode_csv(result: EpisodeResult, path: Path) -> None:
    with path.open("w") as fp:
        fp.write("t,acted,variable,value,was_alternative,eps,y_actual,y_oracle,regret_increment\n")
        for rec in result.records:
            fp.write(
                ",".join(
                    [
                        str(rec.t),
                        str(int(rec.acted)),
                        "" if rec.variable is None else str(rec.variable),
                        "" if rec.value is None else repr(float(rec.value)),
                        "" if rec.was_alternative is None else str(int(rec.was_alternative)),
                        repr(float(rec.eps)),
                        repr(float(rec.y_actual)),
                        repr(float(rec.y_oracle)),
                        repr(float(rec.regret_increment)),
                    ]
                )
                + "\n"
            )


def _aggregate_row(agg: AggregateResult) -> str:
    return ",".join(
        [
            str(agg.episodes),
            repr(agg.mean_avg_regret),
            repr(agg.q1),
            repr(agg.median),
            repr(agg.q3),
            repr(agg.min),
            repr(agg.max),
            repr(agg.mean_optimal_fraction),
        ]
    )


def _resolve_seed(args: argparse.Namespace, overrides: dict[str, str]) -> None:
    """CLI --seed wins, then config, then the CCL_SEED environment default."""
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    elif "seed" not in overrides and os.environ.get("CCL_SEED"):
        overrides.setdefault("seed", os.environ["CCL_SEED"])


def _load_config(path: str | None) -> dict[str, str]:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file {path!r} does not exist")
    return parse_config_text(p.read_text(), path)


def _overrides(pairs: list[str]) -> dict[str, str]:
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"--set expects key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def cmd_run(args: argparse.Namespace) -> int:
    overrides = _overrides(args.set or [])
    _resolve_seed(args, overrides)
    cfg, episodes, provenance = build_config(_load_config(args.config), overrides)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    results = run_episodes(cfg, episodes, jobs=args.jobs)
    t1 = time.perf_counter()

    artifacts: list[Path] = []
    for idx, result in enumerate(results):
        path = out_dir / f"episode_{idx:04d}.csv"
        _episode_csv(result, path)
        artifacts.append(path)
    agg = aggregate(results)
    agg_path = out_dir / "aggregate.csv"
    with agg_path.open("w") as fp:
        fp.write("episodes,mean_avg_regret,q1,median,q3,min,max,mean_optimal_fraction\n")
        fp.write(_aggregate_row(agg) + "\n")
    artifacts.append(agg_path)
    episodes_path = out_dir / "episodes.csv"
    with episodes_path.open("w") as fp:
        fp.write("episode,seed,avg_regret,optimal_fraction\n")
        for idx, seed, regret, fraction in agg.per_episode:
            fp.write(f"{idx},{seed},{regret!r},{fraction!r}\n")
    artifacts.append(episodes_path)
    t2 = time.perf_counter()

    if not args.no_figures:
        from . import plotting

        artifacts.extend(plotting.render_run_figures(results, out_dir / "figures"))
    t3 = time.perf_counter()

    _write_manifest(
        out_dir,
        {"subcommand": "run", "jobs": args.jobs},
        cfg,
        episodes,
        provenance,
        [r.seed for r in results],
        artifacts,
        {"episodes": t1 - t0, "write": t2 - t1, "figures": t3 - t2},
    )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    overrides = _overrides(args.set or [])
    _resolve_seed(args, overrides)
    cfg, _, provenance = build_config(_load_config(args.config), overrides)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values must list at least one value")
    if args.param not in SWEEPABLE:
        raise ConfigError(
            f"unknown sweep parameter {args.param!r}; valid: {', '.join(SWEEPABLE)}"
        )
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    table = sweep(cfg, args.param, values, args.episodes, jobs=args.jobs)
    t1 = time.perf_counter()

    artifacts = []
    sweep_path = out_dir / "sweep.csv"
    with sweep_path.open("w") as fp:
        fp.write(
            "param_value,episodes,mean_avg_regret,q1,median,q3,min,max,mean_optimal_fraction\n"
        )
        for value, agg in table:
            fp.write(f"{value},{_aggregate_row(agg)}\n")
    artifacts.append(sweep_path)
    box_path = out_dir / "boxplot.csv"
    with box_path.open("w") as fp:
        fp.write("param_value,episode,seed,avg_regret,optimal_fraction\n")
        for value, agg in table:
            for idx, seed, regret, fraction in agg.per_episode:
                fp.write(f"{value},{idx},{seed},{regret!r},{fraction!r}\n")
    artifacts.append(box_path)
    t2 = time.perf_counter()

    if not args.no_figures:
        from . import plotting

        artifacts.extend(plotting.render_sweep_figure(args.param, table, out_dir / "figures"))
    t3 = time.perf_counter()

    _write_manifest(
        out_dir,
        {
            "subcommand": "sweep",
            "param": args.param,
            "values": values,
            "episodes": args.episodes,
            "jobs": args.jobs,
        },
        cfg,
        args.episodes,
        provenance,
        episode_seeds(cfg.seed, args.episodes),
        artifacts,
        {"episodes": t1 - t0, "write": t2 - t1, "figures": t3 - t2},
    )
    return 0


def cmd_discover(args: argparse.Namespace) -> int:
    data_path = Path(args.data)
    if not data_path.exists():
        raise ConfigError(f"data file {args.data!r} does not exist")
    try:
        with data_path.open() as fp:
            series = series_from_csv(fp)
    except ValueError as exc:
        raise ConfigError(f"cannot parse {args.data!r}: {exc}") from exc

    overrides = _overrides(args.set or [])
    cfg, _, _ = build_config({}, overrides)

    if args.constraints:
        cpath = Path(args.constraints)
        if not cpath.exists():
            raise ConfigError(f"constraints file {args.constraints!r} does not exist")
        with cpath.open() as fp:
            constraints = idiscovery.constraints_from_csv(fp)
    elif series.do_mask.any():
        constraints = idiscovery.discover_interventional(
            series, cfg.discovery.tau_max, cfg.alpha_dep, cfg.alpha_indep, cfg.prune_list
        )
    else:
        constraints = idiscovery.ConstraintList()

    pag, _store = odiscovery.discover(series, constraints, cfg.discovery)

    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(pag.to_text())
    constraints_path = out_path.with_suffix(out_path.suffix + ".constraints.csv")
    with constraints_path.open("w") as fp:
        constraints.to_csv(fp)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ccl",
        description="Simulate, discover and control linear time-series causal models.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    run = sub.add_parser("run", help="run control episodes and write CSVs + figures")
    run.add_argument("--config", help="flat key=value config file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--set", action="append", metavar="KEY=VALUE")
    run.add_argument("--no-figures", action="store_true")
    run.set_defaults(func=cmd_run)

    sw = sub.add_parser("sweep", help="sweep one parameter over a value list")
    sw.add_argument("--config", help="flat key=value config file")
    sw.add_argument("--param", required=True)
    sw.add_argument("--values", required=True, help="comma-separated values")
    sw.add_argument("--episodes", type=int, required=True)
    sw.add_argument("--out", required=True)
    sw.add_argument("--seed", type=int, default=None)
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--set", action="append", metavar="KEY=VALUE")
    sw.add_argument("--no-figures", action="store_true")
    sw.set_defaults(func=cmd_sweep)

    disc = sub.add_parser("discover", help="discover a graph from a series CSV")
    disc.add_argument("--data", required=True, help="series CSV file")
    disc.add_argument("--constraints", help="external constraint CSV to inject")
    disc.add_argument("--out", required=True, help="output graph text file")
    disc.add_argument("--set", action="append", metavar="KEY=VALUE")
    disc.set_defaults(func=cmd_discover)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failures map to exit code 2
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
