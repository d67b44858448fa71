"""Experiment command line: scenario configs in, CSV artifacts out.

Subcommands::

    tessfuse run      --config CFG --experiment TAG [--taus 1,3,5]
                      [--seed S] [--out DIR] [--jobs J] [--n-grid A:B:STEP]
    tessfuse validate --config CFG
    tessfuse bench    --config CFG [--n-grid 50:500:50] [--out DIR]

Experiments: ``curves`` (theoretical fused error pseudo-variances),
``compare_local`` (per-sensor vs fused filter), ``mean_vs_N`` (running mean
of the fused filter error), ``timing`` (reduced-order vs widely linear
wall clock), ``validate`` (Monte Carlo and second-order-equivalence
reports).  Outputs are RFC-4180-style CSVs with round-trip-exact floats, a
column dictionary, and a manifest with config hash and per-file checksums;
a given (config, seed) pair reproduces the byte-identical artifact set.

The environment variable ``TESSFUSE_OUT`` overrides the default output
directory; an explicit ``--out`` wins over both.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .algebra import SingularMatrixError
from .sensing import (
    Bernoulli,
    Discrete,
    FadingLaw,
    Uniform,
    check_properness,
    verify_second_order_equivalence,
)
from .simkit import (
    MCReport,
    Scenario,
    build_bundle,
    build_network,
    run_monte_carlo,
    timing_benchmark,
    timing_ratios,
)

__all__ = [
    "ConfigError",
    "ExperimentError",
    "ExperimentConfig",
    "CsvArtifact",
    "parse_config",
    "run_experiment",
    "emit_report",
    "bundled_config",
    "main",
]

EXPERIMENTS = ("curves", "compare_local", "mean_vs_N", "timing", "validate")
SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Configuration file rejected; the message names field and reason."""


class ExperimentError(RuntimeError):
    """An experiment failed; the message carries experiment/time context."""


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario
    experiment: str
    taus: tuple = (1, 3, 5)
    out_dir: Path = Path("tessfuse-results")
    jobs: int = 1
    n_grid: tuple = tuple(range(50, 501, 50))
    bench_n: int = 1000
    repeats: int = 5


@dataclass(frozen=True)
class CsvArtifact:
    name: str
    header: tuple
    rows: tuple
    columns: dict


def bundled_config(name: str) -> Path:
    """Path to a packaged scenario config (t1_scenario.json, t2_scenario.json)."""
    return Path(str(resources.files("tessfuse").joinpath("configs", name)))


# -- config parsing ----------------------------------------------------------


def _need(obj: dict, key: str, typ, where: str):
    if key not in obj:
        raise ConfigError(f"{where}.{key}: missing")
    val = obj[key]
    if typ is float and isinstance(val, int):
        val = float(val)
    if not isinstance(val, typ):
        raise ConfigError(f"{where}.{key}: expected {typ.__name__}, "
                          f"got {type(val).__name__}")
    return val


def _parse_dist(spec: dict, where: str):
    kind = _need(spec, "kind", str, where)
    try:
        if kind == "uniform":
            return Uniform(_need(spec, "low", float, where),
                           _need(spec, "high", float, where))
        if kind == "discrete":
            return Discrete(tuple(_need(spec, "values", list, where)),
                            tuple(_need(spec, "probs", list, where)))
        if kind == "bernoulli":
            return Bernoulli(_need(spec, "p", float, where))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}.kind: unknown distribution {kind!r}")


def _parse_fading(spec: dict, where: str) -> FadingLaw:
    if "kind" in spec:
        return FadingLaw.same(_parse_dist(spec, where))
    parts = {}
    for nu in ("r", "i", "j", "k"):
        if nu not in spec:
            raise ConfigError(f"{where}.{nu}: missing (per-part form needs "
                              f"all of r, i, j, k)")
        parts[nu] = (_parse_dist(spec[nu], f"{where}.{nu}"),)
    return FadingLaw(n=1, dists=parts)


def parse_config(path) -> tuple:
    """Load and validate a scenario config; returns (Scenario, warnings)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc

    version = _need(raw, "schema_version", int, "config")
    if version != SCHEMA_VERSION:
        raise ConfigError(f"config.schema_version: expected {SCHEMA_VERSION}, "
                          f"got {version}")
    label = _need(raw, "label", str, "config")
    order = _need(raw, "properness_order", int, "config")
    if order not in (1, 2):
        raise ConfigError("config.properness_order: must be 1 or 2")
    horizon = _need(raw, "horizon", int, "config")
    if horizon < 1:
        raise ConfigError("config.horizon: must be >= 1")

    sig = _need(raw, "signal", dict, "config")
    a = tuple(_need(sig, f"a{m}", float, "config.signal") for m in (1, 2, 3, 4))
    w4 = np.array([[a[0], 0, a[2], a[3]], [0, a[1], a[3], a[2]],
                   [a[2], a[3], a[0], 0], [a[3], a[2], 0, a[1]]])
    eig = np.linalg.eigvalsh(w4)
    if eig.min() < -1e-12 * max(1.0, abs(eig).max()):
        raise ConfigError("config.signal: increment covariance not positive "
                          f"semidefinite (min eigenvalue {eig.min():.3g})")

    noise = _need(raw, "noise", dict, "config")
    scales = tuple(float(v) for v in _need(noise, "scales", list, "config.noise"))
    if any(v <= 0 for v in scales):
        raise ConfigError("config.noise.scales: all entries must be positive")
    base = np.asarray(_need(noise, "base_covariance", list, "config.noise"),
                      dtype=float)
    if base.shape != (4, 4):
        raise ConfigError("config.noise.base_covariance: expected a 4 x 4 matrix")
    beig = np.linalg.eigvalsh(0.5 * (base + base.T))
    if beig.min() < -1e-12 * max(1.0, abs(beig).max()):
        raise ConfigError("config.noise.base_covariance: not positive semidefinite")

    sensors = _need(raw, "sensors", list, "config")
    if len(sensors) < len(scales):
        raise ConfigError(f"config.sensors[{len(sensors)}]: missing "
                          f"(expected {len(scales)} sensor blocks, one per "
                          f"noise scale)")
    if len(sensors) > len(scales):
        raise ConfigError(f"config.sensors: {len(sensors)} blocks for "
                          f"{len(scales)} noise scales")
    fading = []
    for idx, s in enumerate(sensors):
        if not isinstance(s, dict) or "fading" not in s:
            raise ConfigError(f"config.sensors[{idx}].fading: missing")
        fading.append(_parse_fading(s["fading"], f"config.sensors[{idx}].fading"))

    replications = int(raw.get("replications", 10_000))
    seed = int(raw.get("seed", 0))

    sc = Scenario(label=label, k=order, a=a, lambdas=scales, noise_base=base,
                  fading=tuple(fading), horizon=horizon,
                  replications=replications, seed=seed)

    warnings = []
    net = build_network_quiet(sc)
    report = check_properness(net, order)
    if not report.ok:
        warnings.append(f"scenario is not order-{order} proper: {report.first()}")
    if order == 1:
        r2only = check_properness(net, 2)
        if r2only.ok and not report.ok:
            warnings.append("scenario satisfies order 2; consider "
                            "properness_order = 2")
    return sc, warnings


def build_network_quiet(sc: Scenario):
    """Network construction without the declared-order properness gate."""
    from .models import wiener_model
    from .sensing import NoiseLaw, SensorNetwork

    fact, cov = wiener_model(sc.a, sc.horizon)
    noise = NoiseLaw.scaled(sc.lambdas, sc.noise_base)
    return SensorNetwork(fact=fact, cov=cov, fading=sc.fading, noise=noise)


# -- experiments --------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _curves(cfg: ExperimentConfig):
    from .fusion import FusionPipeline

    sc = cfg.scenario
    taus = tuple(cfg.taus)
    pad = max(taus) if taus else 0
    net = build_network(sc.with_horizon(sc.horizon + pad))
    bundle = build_bundle(sc.with_horizon(sc.horizon + pad), net=net)
    pipe = FusionPipeline(bundle)
    n = bundle.n
    header = (["t", "p_filter"]
              + [f"p_pred_tau{v}" for v in taus]
              + [f"p_smooth_tau{v}" for v in taus])
    rows = []
    for t in range(1, sc.horizon + 1):
        row = [t, float(np.trace(pipe.fused_cov(t, t)[1].r[:n, :n]))]
        for tau in taus:
            row.append(float(np.trace(pipe.fused_cov(t + tau, t)[1].r[:n, :n])))
        for tau in taus:
            row.append(float(np.trace(pipe.fused_cov(t, t + tau)[1].r[:n, :n])))
        rows.append(tuple(row))
    cols = {"t": "signal time",
            "p_filter": "real trace of the fused filtering error pseudo-variance"}
    for tau in taus:
        cols[f"p_pred_tau{tau}"] = f"fused prediction error, {tau} steps ahead"
        cols[f"p_smooth_tau{tau}"] = f"fused smoothing error, lag {tau}"
    return [CsvArtifact("curves.csv", tuple(header), tuple(rows), cols)]


def _compare_local(cfg: ExperimentConfig):
    from .fusion import FusionPipeline

    sc = cfg.scenario
    net = build_network(sc)
    bundle = build_bundle(sc, net=net)
    pipe = FusionPipeline(bundle)
    n = bundle.n
    r = bundle.n_sensors
    header = ["t"] + [f"p_local_{a + 1}" for a in range(r)] + ["p_distributed"]
    rows = []
    for t in range(1, sc.horizon + 1):
        row = [t]
        for a in range(r):
            row.append(float(np.trace(pipe.local_cov(a, t, t).r[:n, :n])))
        row.append(float(np.trace(pipe.fused_cov(t, t)[1].r[:n, :n])))
        rows.append(tuple(row))
    cols = {"t": "signal time",
            "p_distributed": "fused filtering error pseudo-variance (real trace)"}
    for a in range(r):
        cols[f"p_local_{a + 1}"] = f"sensor {a + 1} local filtering error"
    return [CsvArtifact("compare_local.csv", tuple(header), tuple(rows), cols)]


def _mean_vs_n(cfg: ExperimentConfig):
    from .fusion import FusionPipeline

    sc = cfg.scenario
    net = build_network(sc)
    bundle = build_bundle(sc, net=net)
    pipe = FusionPipeline(bundle)
    n = bundle.n
    traces = [float(np.trace(pipe.fused_cov(t, t)[1].r[:n, :n]))
              for t in range(1, sc.horizon + 1)]
    grid = [v for v in range(10, sc.horizon + 1, 10)] or [sc.horizon]
    rows = [(nv, float(np.mean(traces[:nv]))) for nv in grid]
    cols = {"n": "number of observations",
            "mean_p_filter": "mean fused filtering error pseudo-variance over t <= n"}
    return [CsvArtifact("mean_vs_n.csv", ("n", "mean_p_filter"), tuple(rows), cols)]


def _timing(cfg: ExperimentConfig):
    rows = timing_benchmark(cfg.scenario, n_grid=cfg.n_grid, repeats=cfg.repeats)
    ratios = timing_ratios(rows)
    art1 = CsvArtifact(
        "timing.csv", ("variant", "n", "seconds"),
        tuple((r.variant, r.n, r.seconds) for r in rows),
        {"variant": "tk = reduced-order processing, wl = widely linear",
         "n": "number of observations",
         "seconds": "median wall-clock seconds of the fused filtering pass"})
    art2 = CsvArtifact(
        "timing_ratio.csv", ("n", "wl_over_tk"),
        tuple((n, v) for n, v in ratios.items()),
        {"n": "number of observations",
         "wl_over_tk": "widely linear / reduced-order wall-clock ratio"})
    return [art1, art2]


def _validate(cfg: ExperimentConfig):
    sc = cfg.scenario
    net = build_network(sc)
    report = run_monte_carlo(sc, kinds=("filter", "predictor", "smoother"),
                             taus=cfg.taus, jobs=cfg.jobs, net=net)
    rows = tuple((r.kind, r.tau, r.t, r.s, r.theory, r.empirical, r.se,
                  r.rel_dev, r.bias_se_multiple, int(r.precise))
                 for r in report.rows)
    art1 = CsvArtifact(
        "validate_mc.csv",
        ("kind", "tau", "t", "s", "theory", "empirical", "se", "rel_dev",
         "bias_se_multiple", "precise"),
        rows,
        {"kind": "estimator kind", "tau": "lead or lag",
         "t": "signal time", "s": "data horizon",
         "theory": "real trace of the fused error pseudo-variance",
         "empirical": "Monte Carlo mean squared error",
         "se": "standard error of the empirical value",
         "rel_dev": "|empirical - theory| / theory",
         "bias_se_multiple": "max |mean error| in standard errors",
         "precise": "1 when uncertainty bands are tight enough to judge"})
    rng = np.random.default_rng(np.random.SeedSequence(
        entropy=sc.seed, spawn_key=(777,)))
    eq = verify_second_order_equivalence(
        net, sc.k, grid=range(1, min(5, sc.horizon) + 1),
        draws=min(100_000, max(10_000, sc.replications)), rng=rng)
    art2 = CsvArtifact(
        "validate_equivalence.csv",
        ("kind", "alpha", "beta", "t", "s", "deviation", "se"),
        tuple((r.kind, r.alpha, r.beta, r.t, r.s, r.deviation, r.se)
              for r in eq.rows),
        {"kind": "obs-signal or obs-obs moment",
         "alpha": "first sensor", "beta": "second sensor (-1 for signal)",
         "t": "first time", "s": "second time",
         "deviation": "max abs difference, empirical vs analytic model",
         "se": "Monte Carlo standard-error bound"})
    return [art1, art2]


_RUNNERS = {
    "curves": _curves,
    "compare_local": _compare_local,
    "mean_vs_N": _mean_vs_n,
    "timing": _timing,
    "validate": _validate,
}


def run_experiment(cfg: ExperimentConfig):
    """Produce the artifact set for one experiment tag."""
    if cfg.experiment not in _RUNNERS:
        raise ConfigError(f"unknown experiment {cfg.experiment!r}; "
                          f"choose from {', '.join(EXPERIMENTS)}")
    try:
        return _RUNNERS[cfg.experiment](cfg)
    except SingularMatrixError as exc:
        raise ExperimentError(
            f"experiment {cfg.experiment!r} on scenario "
            f"{cfg.scenario.label!r}: {exc}") from exc


# -- report emission -----------------------------------------------------------


def emit_report(artifacts: Sequence[CsvArtifact], out_dir: Path,
                config_raw: bytes, seed: int) -> dict:
    """Write CSVs, a column dictionary and a checksum manifest; returns it."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    checksums = {}
    columns = {}
    for art in artifacts:
        path = out_dir / art.name
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(art.header)
            for row in art.rows:
                writer.writerow([_fmt(v) for v in row])
        checksums[art.name] = hashlib.sha256(path.read_bytes()).hexdigest()
        columns[art.name] = art.columns
    cols_path = out_dir / "columns.json"
    cols_path.write_text(json.dumps(columns, indent=2, sort_keys=True) + "\n")
    checksums["columns.json"] = hashlib.sha256(cols_path.read_bytes()).hexdigest()
    manifest = {
        "config_sha256": hashlib.sha256(config_raw).hexdigest(),
        "seed": seed,
        "version": __version__,
        "files": checksums,
    }
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


# -- entry point -----------------------------------------------------------------


def _parse_grid(text: str) -> tuple:
    try:
        lo, hi, step = (int(v) for v in text.split(":"))
        grid = tuple(range(lo, hi + 1, step))
        if not grid:
            raise ValueError
        return grid
    except ValueError as exc:
        raise ConfigError(f"--n-grid: expected LO:HI:STEP, got {text!r}") from exc


def _parse_taus(text: str) -> tuple:
    if text.strip() == "":
        return ()
    try:
        taus = tuple(int(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError("--taus: expected comma-separated integers") from exc
    if any(v < 1 for v in taus):
        raise ConfigError("--taus: values must be >= 1")
    return taus


def _default_out() -> Path:
    return Path(os.environ.get("TESSFUSE_OUT", "tessfuse-results"))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tessfuse",
        description="Distributed fusion estimation experiments for proper "
                    "tessarine signals under fading measurements.")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment and emit CSV artifacts")
    run.add_argument("--config", required=True)
    run.add_argument("--experiment", required=True, choices=EXPERIMENTS)
    run.add_argument("--taus", default="1,3,5")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out", default=None)
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--n-grid", default="50:500:50")
    run.add_argument("--repeats", type=int, default=5)

    val = sub.add_parser("validate", help="check a config and report properness")
    val.add_argument("--config", required=True)

    bench = sub.add_parser("bench", help="timing benchmark over a grid of N")
    bench.add_argument("--config", required=True)
    bench.add_argument("--n-grid", default="50:500:50")
    bench.add_argument("--seed", type=int, default=None)
    bench.add_argument("--out", default=None)
    bench.add_argument("--repeats", type=int, default=5)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        sc, warnings = parse_config(args.config)
        for w in warnings:
            print(f"warning: {w}", file=sys.stderr)

        if args.command == "validate":
            print(f"config ok: scenario {sc.label}, order {sc.k}, "
                  f"{sc.n_sensors} sensors, horizon {sc.horizon}")
            return 0

        if getattr(args, "seed", None) is not None:
            sc = replace(sc, seed=args.seed)
        out_dir = Path(args.out) if args.out else _default_out()
        if args.command == "bench":
            cfg = ExperimentConfig(scenario=sc, experiment="timing",
                                   out_dir=out_dir,
                                   n_grid=_parse_grid(args.n_grid),
                                   repeats=args.repeats)
        else:
            cfg = ExperimentConfig(scenario=sc, experiment=args.experiment,
                                   taus=_parse_taus(args.taus),
                                   out_dir=out_dir, jobs=args.jobs,
                                   n_grid=_parse_grid(args.n_grid),
                                   repeats=args.repeats)
        artifacts = run_experiment(cfg)
        manifest = emit_report(artifacts, cfg.out_dir,
                               Path(args.config).read_bytes(), sc.seed)
        print(f"wrote {len(manifest['files'])} files to {cfg.out_dir}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ExperimentError, SingularMatrixError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
