"""``stcm`` command-line entry point.

Configuration is a TOML file with one table per module (``[run]``,
``[synth]``, ``[clutter]``, ``[generator]``, ``[eval]``, ``[llm]``).
Precedence is flags > environment > file > built-in defaults. Every command
that writes files also writes ``<output>.manifest.json`` recording the merged
configuration, its hash, the seed, library versions and SHA-256 hashes of all
inputs and outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import platform
import sys
from dataclasses import asdict, dataclass, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import generator as gen
from .clutter import ClutterParams
from .errors import StcmError
from .evaluation import (Benchmark, BenchmarkConfig, collaborative, observation_scene, single_observation,
                         theta_for)
from .fidelity import ccdf, fidelity_report
from .llm_parser import LlmClient, LlmEndpointConfig
from .semantics import encode_scene, serialize_scene, validate_scene
from .synthesizer import ArraySpec, SimConfig, simulate, write_path_table, write_snapshots
from .target import read_library, synth_library, write_library

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("stcm")

THREADS_ENV = "STCM_THREADS"

DEFAULTS = {
    "run": {"seed": 0, "threads": 1, "log_level": "WARNING"},
    "synth": {"f_c": 10e9, "bandwidth": 400e6, "n_subcarriers": 256, "dt": 1e-3, "n_snapshots": 1,
              "tx": [0.0, 0.0, 0.0], "rx": [0.0, 0.0, 0.0], "n_tx": 1, "n_rx": 1, "spacing": 0.5,
              "noise_power": 0.0, "mb_pairs": 32, "mb_loss_db": 10.0,
              "include_clutter": True, "include_multibounce": True},
    "clutter": {},
    "generator": {"k": gen.DEFAULT_K, "jitter": gen.DEFAULT_JITTER, "range_m": 40.0},
    "eval": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(BenchmarkConfig()).items()},
    "llm": {"base_url": "", "model_name": "", "timeout": 30.0, "max_retries": 2, "temperature": 0.0},
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    sections: dict
    seed: int
    threads: int
    log_level: str

    def config_hash(self) -> str:
        blob = json.dumps(self.sections, sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def sim_config(self) -> SimConfig:
        s = self.sections["synth"]
        return SimConfig(f_c=float(s["f_c"]), bandwidth=float(s["bandwidth"]),
                         n_subcarriers=int(s["n_subcarriers"]), dt=float(s["dt"]),
                         n_snapshots=int(s["n_snapshots"]), tx=tuple(map(float, s["tx"])),
                         rx=tuple(map(float, s["rx"])), tx_array=ArraySpec(int(s["n_tx"]), float(s["spacing"])),
                         rx_array=ArraySpec(int(s["n_rx"]), float(s["spacing"])),
                         noise_power=float(s["noise_power"]), seed=self.seed, mb_pairs=int(s["mb_pairs"]),
                         mb_loss_db=float(s["mb_loss_db"]), include_clutter=bool(s["include_clutter"]),
                         include_multibounce=bool(s["include_multibounce"]),
                         clutter_overrides=tuple(sorted(self.sections["clutter"].items())))

    def bench_config(self) -> BenchmarkConfig:
        e = dict(self.sections["eval"])
        e["classes"] = tuple(e["classes"])
        return BenchmarkConfig(**e)


def load_toml(path) -> dict:
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    unknown = set(data) - set(DEFAULTS)
    if unknown:
        raise UsageError(f"{path}: unknown config section(s) {sorted(unknown)}")
    for section, values in data.items():
        if section == "clutter":
            names = {f.name for f in fields(ClutterParams)}
            bad = set(values) - names
        else:
            bad = set(values) - set(DEFAULTS[section])
        if bad:
            raise UsageError(f"{path}: unknown key(s) {sorted(bad)} in [{section}]")
    return data


def resolve_config(config_path, env, flags: dict) -> RunConfig:
    """Merge defaults, file, environment and flags; ``flags`` maps "section.key" to values (None = unset)."""
    sections = {k: dict(v) for k, v in DEFAULTS.items()}
    if config_path:
        for section, values in load_toml(config_path).items():
            sections[section].update(values)
    if env.get(THREADS_ENV):
        try:
            sections["run"]["threads"] = int(env[THREADS_ENV])
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env[THREADS_ENV]!r}") from None
    for dotted, value in flags.items():
        if value is None:
            continue
        section, key = dotted.split(".", 1)
        sections[section][key] = value
    run = sections["run"]
    if int(run["threads"]) < 1:
        raise UsageError("--threads must be >= 1")
    return RunConfig(sections, int(run["seed"]), int(run["threads"]), str(run["log_level"]))


# ---------------------------------------------------------------------------
# provenance


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(target, command: str, rc: RunConfig, inputs, outputs) -> Path:
    target = Path(target)
    path = target / "manifest.json" if target.is_dir() else target.with_name(target.name + ".manifest.json")
    manifest = {
        "command": command,
        "config": rc.sections,
        "config_hash": rc.config_hash(),
        "seed": rc.seed,
        "threads": rc.threads,
        "versions": {"stcm": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "inputs": {str(p): file_sha256(p) for p in inputs},
        "outputs": {str(p): file_sha256(p) for p in outputs},
        "created": datetime.now(timezone.utc).isoformat(),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in row])


def _read_scene(path):
    return validate_scene(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# commands


def cmd_validate(args, rc: RunConfig) -> int:
    scene = validate_scene(Path(args.file).read_text(encoding="utf-8"), strict=not args.lenient)
    print(f"{args.file}: valid scene {scene.scene_id!r} ({len(scene.targets)} targets, "
          f"{len(scene.background)} background objects)")
    return 0


def cmd_parse(args, rc: RunConfig) -> int:
    llm = rc.sections["llm"]
    cfg = LlmEndpointConfig(base_url=llm["base_url"], model_name=llm["model_name"],
                            max_retries=int(llm["max_retries"]), timeout=float(llm["timeout"]),
                            temperature=float(llm["temperature"]))
    client = LlmClient(cfg)
    scene = client.parse(Path(args.input).read_text(encoding="utf-8"))
    Path(args.out).write_text(serialize_scene(scene) + "\n", encoding="utf-8")
    log.info("parsed after %d retries", client.last_retries)
    write_manifest(args.out, "parse", rc, [args.input], [args.out])
    return 0


def cmd_synth_library(args, rc: RunConfig) -> int:
    lib = synth_library(args.cls, args.views, rc.seed)
    write_library(lib, args.out)
    write_manifest(args.out, "dataset synth-library", rc, [], [args.out])
    return 0


def training_pairs(library, range_m: float):
    return [(encode_scene(observation_scene(m.cls, m.view_dir, range_m)), theta_for(m)) for m in library]


def cmd_fit(args, rc: RunConfig) -> int:
    g = rc.sections["generator"]
    library = [m for path in args.library for m in read_library(path)]
    pairs = training_pairs(library, float(g["range_m"]))
    model = gen.fit_baseline(pairs) if args.baseline else gen.fit(pairs, int(g["k"]), float(g["jitter"]))
    gen.save(model, args.out)
    write_manifest(args.out, "fit", rc, args.library, [args.out])
    return 0


def cmd_generate(args, rc: RunConfig) -> int:
    scene = _read_scene(args.scene)
    model = gen.load(args.model)
    thetas = gen.generate(model, encode_scene(scene), rc.seed, args.n)
    gen.write_thetas(thetas, args.out)
    write_manifest(args.out, "generate", rc, [args.scene, args.model], [args.out])
    return 0


def cmd_synth(args, rc: RunConfig) -> int:
    scene = _read_scene(args.scene)
    cfg = rc.sim_config()
    theta = None
    inputs = [args.scene] + ([args.config] if args.config else [])
    if args.theta:
        thetas = gen.read_thetas(args.theta)
        if not 0 <= args.theta_index < len(thetas):
            raise UsageError(f"--theta-index {args.theta_index} out of range (file has {len(thetas)})")
        theta = thetas[args.theta_index]
        inputs.append(args.theta)
    snaps = simulate(scene, theta, cfg, threads=rc.threads)
    write_snapshots(snaps, cfg, args.out)
    outputs = [args.out]
    if args.paths:
        write_path_table(snaps, args.paths)
        outputs.append(args.paths)
    write_manifest(args.out, "synth", rc, inputs, outputs)
    return 0


def _eval_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_eval_tms(args, rc: RunConfig) -> int:
    out = _eval_dir(args.out_dir)
    bench = Benchmark(rc.bench_config())
    res = single_observation(bench, threads=rc.threads)
    outputs = []
    for src in ("reference", "model", "baseline"):
        x, p = ccdf(getattr(res, src))
        path = out / f"ccdf_{src}.csv"
        _write_csv(path, ["tms", "ccdf"], zip(x, p))
        outputs.append(path)
    path = out / "tms_scores.csv"
    _write_csv(path, ["library_index", "class", "reference", "model", "baseline"],
               zip(bench.test_idx, res.classes, res.reference, res.model, res.baseline))
    outputs.append(path)
    summary = {"kind": "tms", "threshold": res.threshold, "reference_exceedance": res.reference_exceedance,
               "model_exceedance": res.model_exceedance, "baseline_exceedance": res.baseline_exceedance,
               "per_class": res.per_class(), "n_observations": len(bench.test_idx)}
    path = out / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    outputs.append(path)
    write_manifest(out, "eval tms", rc, [], outputs)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_eval_collab(args, rc: RunConfig) -> int:
    out = _eval_dir(args.out_dir)
    bench = Benchmark(rc.bench_config())
    res = collaborative(bench, args.instances, args.stations, threads=rc.threads)
    path = out / "pvalues.csv"
    _write_csv(path, ["instance", "model_p", "baseline_p"],
               zip(range(args.instances), res.model_pvalues, res.baseline_pvalues))
    outputs = [path]
    for src in ("model", "baseline"):
        x, p = ccdf(getattr(res, f"{src}_pvalues"))
        path = out / f"pvalue_ccdf_{src}.csv"
        _write_csv(path, ["p_value", "ccdf"], zip(x, p))
        outputs.append(path)
    summary = {"kind": "collab", "alpha": args.alpha, "n_instances": args.instances, "n_stations": args.stations,
               "model_fraction_above_alpha": res.fraction_above(args.alpha),
               "baseline_fraction_above_alpha": float(np.mean(res.baseline_pvalues > args.alpha)),
               "model_median_p": float(np.median(res.model_pvalues)),
               "baseline_median_p": float(np.median(res.baseline_pvalues))}
    path = out / "summary.json"
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    outputs.append(path)
    write_manifest(out, "eval collab", rc, [], outputs)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_eval_fidelity(args, rc: RunConfig) -> int:
    G = np.array([t.values for t in gen.read_thetas(args.generated)])
    R = np.array([t.values for t in gen.read_thetas(args.reference)])
    report = fidelity_report(G, R, n_proj=args.projections, seed=rc.seed)
    Path(args.out).write_text(report.to_json() + "\n", encoding="utf-8")
    write_manifest(args.out, "eval fidelity", rc, [args.generated, args.reference], [args.out])
    return 0


def cmd_report(args, rc: RunConfig) -> int:
    """Collect evaluation summaries into one structured-text report, keyed by input name."""
    entries = {}
    for path in args.inputs:
        p = Path(path)
        name = p.name if p.is_dir() else p.stem
        p = p / "summary.json" if p.is_dir() else p
        if name in entries:
            raise UsageError(f"duplicate report input name {name!r}")
        entries[name] = json.loads(p.read_text(encoding="utf-8"))
    Path(args.out).write_text(json.dumps({"stcm_version": __version__, "results": entries},
                                         indent=2, sort_keys=True) + "\n", encoding="utf-8")
    inputs = [Path(p) / "summary.json" if Path(p).is_dir() else p for p in args.inputs]
    write_manifest(args.out, "report", rc, inputs, [args.out])
    return 0


# ---------------------------------------------------------------------------
# parser


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="TOML configuration file")
    p.add_argument("--seed", type=int, dest="run.seed", help="master seed")
    p.add_argument("--threads", type=int, dest="run.threads", help=f"worker threads (env {THREADS_ENV})")
    p.add_argument("--log-level", dest="run.log_level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="stcm", description="Semantics-driven ISAC channel twin.")
    parser.add_argument("--version", action="version", version=f"stcm {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("validate", parents=[common], help="validate a scene document")
    p.add_argument("file")
    p.add_argument("--lenient", action="store_true", help="drop unknown fields instead of failing")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("parse", parents=[common], help="free text to scene document via an LLM endpoint")
    p.add_argument("--input", required=True)
    p.add_argument("--endpoint", dest="llm.base_url")
    p.add_argument("--model", dest="llm.model_name")
    p.add_argument("--max-retries", type=int, dest="llm.max_retries")
    p.add_argument("--timeout", type=float, dest="llm.timeout")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("dataset", help="dataset utilities")
    dsub = p.add_subparsers(dest="dataset_command", required=True, metavar="ACTION")
    q = dsub.add_parser("synth-library", parents=[common], help="synthetic scattering-center library")
    q.add_argument("--class", dest="cls", required=True, choices=["vehicle", "uav"])
    q.add_argument("--views", type=int, required=True)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_synth_library)

    p = sub.add_parser("fit", parents=[common], help="fit the conditional generator on libraries")
    p.add_argument("--library", action="append", required=True, help="library file (repeatable)")
    p.add_argument("--k", type=int, dest="generator.k")
    p.add_argument("--jitter", type=float, dest="generator.jitter")
    p.add_argument("--baseline", action="store_true", help="fit the coarse-statistics baseline instead")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("generate", parents=[common], help="sample parameter vectors for a scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("synth", parents=[common], help="synthesize channel snapshots")
    p.add_argument("--scene", required=True)
    p.add_argument("--theta", help="parameter file from `stcm generate`")
    p.add_argument("--theta-index", type=int, default=0)
    p.add_argument("--snapshots", type=int, dest="synth.n_snapshots")
    p.add_argument("--paths", help="also write the path table as CSV")
    p.add_argument("--out", required=True)
    for f in fields(ClutterParams):
        p.add_argument(f"--clutter.{f.name}", dest=f"clutter.{f.name}",
                       type=int if f.name in ("n_clusters", "rays_per_cluster") else float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("eval", help="evaluations")
    esub = p.add_subparsers(dest="eval_command", required=True, metavar="KIND")
    bench_flags = _Parser(add_help=False)
    bench_flags.add_argument("--views", type=int, dest="eval.n_views")
    bench_flags.add_argument("--out-dir", required=True)
    q = esub.add_parser("tms", parents=[common, bench_flags], help="single-observation TMS CCDFs")
    q.set_defaults(func=cmd_eval_tms)
    q = esub.add_parser("collab", parents=[common, bench_flags], help="multi-station K-S p-values")
    q.add_argument("--instances", type=int, default=100)
    q.add_argument("--stations", type=int, default=10)
    q.add_argument("--alpha", type=float, default=0.05)
    q.set_defaults(func=cmd_eval_collab)
    q = esub.add_parser("fidelity", parents=[common], help="Wasserstein distances between theta ensembles")
    q.add_argument("--generated", required=True)
    q.add_argument("--reference", required=True)
    q.add_argument("--projections", type=int, default=128)
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_eval_fidelity)

    p = sub.add_parser("report", parents=[common], help="merge evaluation summaries")
    p.add_argument("inputs", nargs="+", help="eval output directories or summary files")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)
    _tidy_metavars(parser)
    return parser


def _tidy_metavars(parser: argparse.ArgumentParser) -> None:
    """Show ``--seed SEED`` rather than the dotted config destination."""
    for action in parser._actions:
        if "." in action.dest and action.metavar is None and action.option_strings and action.nargs != 0 \
                and action.choices is None:
            action.metavar = action.option_strings[0].lstrip("-").replace("-", "_").replace(".", "_").upper()
        if isinstance(action, argparse._SubParsersAction):
            for child in action.choices.values():
                _tidy_metavars(child)


def main(argv=None, env=None) -> int:
    env = os.environ if env is None else env
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError:
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    try:
        flags = {k: v for k, v in vars(args).items() if "." in k}
        rc = resolve_config(getattr(args, "config", None), env, flags)
        logging.basicConfig(level=rc.log_level, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args, rc)
    except UsageError as exc:
        print(f"stcm: error: {exc}", file=sys.stderr)
        return 1
    except (StcmError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"stcm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
