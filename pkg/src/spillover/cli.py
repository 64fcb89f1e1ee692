"""Command-line interface.

Every command reads one YAML configuration (``--config``, merged over the
bundled defaults); flags override config values.  Each output directory
receives ``provenance.json`` with the resolved configuration and SHA-256
digests of all input files.  Failures print a JSON error object on stderr
and exit with 2 (configuration), 3 (data) or 4 (numerical).
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import os
import shutil
import sys
import tempfile
from importlib import resources
from pathlib import Path

import click
import yaml
from threadpoolctl import threadpool_limits

from spillover import __version__
from spillover.effects import curves_frame, moderator_curves, zone_effects
from spillover.errors import ConfigError, DataError, SpilloverError
from spillover.estimate import ModelSpec, fit
from spillover.ingest import load_dataset, load_topology, read_fuel_prices, read_hydro, write_topology
from spillover.metrics import CarbonContent, MetricsTables, Thresholds, build_tables
from spillover.sensitivity import (
    SweepResult,
    aggregation_sweep,
    estimator_comparison,
    leave_one_out,
    weights_variant,
)
from spillover.synth import DgpConfig, MeritOrderConfig, generate_hourly, generate_panel

logger = logging.getLogger("spillover")

CACHE_ENV = "SPILLOVER_CACHE"


# -- configuration ----------------------------------------------------------


def _bundled(name: str) -> str:
    return resources.files("spillover").joinpath("data", name).read_text()


def default_config() -> dict:
    return yaml.safe_load(_bundled("default_config.yaml"))


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict) and base[key] and isinstance(value, dict):
            out[key] = _merge(base[key], value, f"{where}{key}.")
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> dict:
    config = default_config()
    if path is None:
        return config
    try:
        doc = yaml.safe_load(Path(path).read_text()) or {}
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return _merge(config, doc)


def _set(config: dict, section: str, key: str, value) -> None:
    if value is not None:
        config[section][key] = value


def model_spec(config: dict) -> ModelSpec:
    doc = dict(config["model"])
    doc.setdefault("thresholds", config["metrics"]["thresholds"])
    if not isinstance(doc["thresholds"], dict):
        raise ConfigError("metrics.thresholds must be a mapping")
    return ModelSpec.from_dict(doc)


def _thresholds(config: dict) -> Thresholds:
    try:
        return Thresholds(**config["metrics"]["thresholds"])
    except TypeError as exc:
        raise ConfigError(f"metrics.thresholds: {exc}") from exc


def _carbon(config: dict) -> CarbonContent:
    try:
        return CarbonContent(**config["metrics"]["carbon"])
    except TypeError as exc:
        raise ConfigError(f"metrics.carbon: {exc}") from exc


# -- inputs -----------------------------------------------------------------


def cache_dir() -> Path:
    root = os.environ.get(CACHE_ENV)
    return Path(root) if root else Path.home() / ".cache" / "spillover"


def fixture_dir() -> Path:
    """Directory holding the bundled synthetic fixture, generated on first use."""
    text = _bundled("fixture.yaml")
    digest = hashlib.sha256(f"{__version__}\n{text}".encode()).hexdigest()[:16]
    target = cache_dir() / f"fixture-{digest}"
    if (target / "hourly.csv").exists():
        return target
    target.parent.mkdir(parents=True, exist_ok=True)
    cfg = MeritOrderConfig.from_dict(yaml.safe_load(text))
    logger.info("generating fixture into %s", target)
    tmp = Path(tempfile.mkdtemp(dir=target.parent, prefix=".fixture-"))
    try:
        generate_hourly(cfg).write(tmp)
        try:
            tmp.rename(target)
        except OSError:  # another process won the race
            shutil.rmtree(tmp, ignore_errors=True)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return target


class Inputs:
    """Resolves the configured data source and remembers every file it read."""

    def __init__(self, config: dict):
        self.config = config
        self.files: dict[str, Path] = {}
        src = config["inputs"]
        if src.get("metrics"):
            self.kind, self.root = "metrics", Path(src["metrics"])
        elif src.get("data"):
            self.kind, self.root = "data", Path(src["data"])
        elif src.get("fixture"):
            self.kind, self.root = "fixture", fixture_dir()
        else:
            raise ConfigError("no input: set inputs.data, inputs.metrics or inputs.fixture")
        if not self.root.is_dir():
            raise DataError(f"input directory not found: {self.root}")
        self._hourly = None
        self.cache: dict[str, MetricsTables] = {}

    def _need(self, name: str, optional: bool = False) -> Path | None:
        path = self.root / name
        if not path.exists():
            if optional:
                return None
            raise DataError(f"missing input file: {path}")
        self.files[name] = path
        return path

    def hourly(self):
        """(store, topology, fuel, hydro, report) from a raw data directory."""
        if self.kind == "metrics":
            raise ConfigError("this command needs hourly data (inputs.data or the fixture), not a metrics directory")
        if self._hourly is None:
            topology = load_topology(self._need("topology.yaml"))
            store, report = load_dataset([self._need("hourly.csv")], [self._need("exchanges.csv")], topology)
            fuel_path, hydro_path = self._need("fuel_prices.csv", True), self._need("hydro.csv", True)
            fuel = read_fuel_prices(fuel_path) if fuel_path else None
            hydro = read_hydro(hydro_path, topology) if hydro_path else None
            self._hourly = (store, topology, fuel, hydro, report)
        return self._hourly

    def tables(self, aggregation: str) -> MetricsTables:
        if self.kind == "metrics":
            for name in ("meta.json", "metrics.csv", "controls.csv", "interconnectors.csv", "zone_ic.csv", "exclusions.csv", "topology.yaml"):
                self._need(name)
            tables = MetricsTables.read(self.root)
            if tables.aggregation != aggregation:
                raise ConfigError(
                    f"metrics directory holds {tables.aggregation} data but {aggregation} was requested"
                )
            return tables
        if aggregation not in self.cache:
            store, topology, fuel, hydro, _ = self.hourly()
            self.cache[aggregation] = build_tables(
                store, topology, aggregation, fuel, hydro, _thresholds(self.config), _carbon(self.config)
            )
        return self.cache[aggregation]

    def digests(self) -> dict[str, str]:
        return {name: _sha256(path) for name, path in sorted(self.files.items())}


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# -- outputs ----------------------------------------------------------------


def _json_dump(doc, path: Path) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_provenance(out: Path, command: str, config: dict, digests: dict[str, str]) -> None:
    doc = {"command": command, "version": __version__, "config": config, "inputs": digests}
    doc["config_sha256"] = hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()
    _json_dump(doc, out / "provenance.json")


def _outdir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_fit(result, out: Path, stem: str) -> None:
    (out / f"{stem}.json").write_text(result.to_json())
    (out / f"{stem}.txt").write_text(result.to_text())


def _write_effects(result, tables: MetricsTables, out: Path, stem: str) -> None:
    curves = curves_frame(moderator_curves(result))
    curves.to_csv(out / f"{stem}_curves.csv", index=False, float_format="%.17g", lineterminator="\n")
    if "interconnector" in result.design.centers:
        ic = tables.zone_ic.set_index("zone")["ic_normalized"]
        zone_effects(result, ic).to_csv(out / f"{stem}_zone_effects.csv", index=False, float_format="%.17g", lineterminator="\n")


# -- commands ---------------------------------------------------------------


class _State:
    def __init__(self, config: dict, threads: int):
        self.config = config
        self.threads = threads


pass_state = click.make_pass_decorator(_State)


def _input_options(f):
    f = click.option("--data", type=click.Path(), help="Directory with hourly.csv, exchanges.csv, topology.yaml.")(f)
    f = click.option("--metrics", "metrics_dir", type=click.Path(), help="Directory written by `metrics`.")(f)
    return f


def _model_options(f):
    f = click.option("--technology", type=click.Choice(["wind", "solar"]))(f)
    f = click.option("--aggregation", type=click.Choice(["hourly", "daily", "monthly", "annual"]))(f)
    f = click.option("--estimator", type=click.Choice(["rewb", "fe"]))(f)
    f = click.option("--weights", type=click.Choice(["ic_weighted", "binary_uniform"]))(f)
    f = click.option("--hac-lags", type=int)(f)
    return f


def _apply(state: _State, data=None, metrics_dir=None, **model) -> dict:
    config = copy.deepcopy(state.config)
    if data is not None:
        config["inputs"].update(data=data, metrics=None)
    if metrics_dir is not None:
        config["inputs"].update(metrics=metrics_dir, data=None)
    for key, value in model.items():
        _set(config, "model", key, value)
    return config


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--config", "config_path", type=click.Path(), help="YAML configuration file.")
@click.option("--threads", type=click.IntRange(min=1), default=1, show_default=True, help="Parallel refits in sweeps.")
@click.option("-v", "--verbose", count=True, help="More logging (repeatable).")
@click.version_option(__version__)
@click.pass_context
def main(ctx, config_path, threads, verbose):
    """Cross-border renewable value spillover panel toolkit."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = _State(load_config(config_path), threads)


@main.command()
@click.option("--hourly", "hourly_paths", multiple=True, required=True, type=click.Path())
@click.option("--exchanges", "exchange_paths", multiple=True, required=True, type=click.Path())
@click.option("--topology", required=True, type=click.Path())
@click.option("--fuel-prices", type=click.Path())
@click.option("--hydro", type=click.Path())
@click.option("--out", required=True, type=click.Path())
@pass_state
def ingest(state, hourly_paths, exchange_paths, topology, fuel_prices, hydro, out):
    """Validate raw files and write a canonical data directory."""
    paths = [Path(p) for p in (*hourly_paths, *exchange_paths, topology, fuel_prices, hydro) if p]
    for p in paths:
        if not p.exists():
            raise DataError(f"missing input file: {p}")
    topo = load_topology(topology)
    store, report = load_dataset(hourly_paths, exchange_paths, topo)
    dest = _outdir(out)
    store.write(dest)
    write_topology(topo, dest / "topology.yaml")
    if fuel_prices:
        read_fuel_prices(fuel_prices)
        shutil.copyfile(fuel_prices, dest / "fuel_prices.csv")
    if hydro:
        read_hydro(hydro, topo)
        shutil.copyfile(hydro, dest / "hydro.csv")
    report.rejections.to_csv(dest / "rejections.csv", index=False, lineterminator="\n")
    _json_dump(report.to_dict(), dest / "load_report.json")
    digests = {str(p): _sha256(p) for p in sorted(paths)}
    write_provenance(dest, "ingest", state.config, digests)
    click.echo(json.dumps({"rows": report.rows, "exchange_rows": report.exchange_rows, "rejected": len(report.rejections)}))


@main.command()
@_input_options
@click.option("--aggregation", type=click.Choice(["hourly", "daily", "monthly", "annual"]))
@click.option("--out", required=True, type=click.Path())
@pass_state
def metrics(state, data, metrics_dir, aggregation, out):
    """Aggregate hourly data into zone-period metrics."""
    config = _apply(state, data, metrics_dir, aggregation=aggregation)
    inputs = Inputs(config)
    if inputs.kind == "metrics":
        raise ConfigError("metrics needs hourly data (inputs.data or the fixture)")
    tables = inputs.tables(config["model"]["aggregation"])
    dest = _outdir(out)
    tables.write(dest)
    write_provenance(dest, "metrics", config, inputs.digests())


@main.command("fit")
@_input_options
@_model_options
@click.option("--out", required=True, type=click.Path())
@pass_state
def fit_cmd(state, data, metrics_dir, out, **model):
    """Estimate the panel model; writes result JSON and a text table."""
    config = _apply(state, data, metrics_dir, **model)
    spec = model_spec(config)
    inputs = Inputs(config)
    result = fit(spec, inputs.tables(spec.aggregation))
    dest = _outdir(out)
    _write_fit(result, dest, "result")
    result.design.to_csv(dest / "design.csv", result.y)
    write_provenance(dest, "fit", config, inputs.digests())
    click.echo(result.to_text(), nl=False)


@main.command()
@_input_options
@_model_options
@click.option("--out", required=True, type=click.Path())
@pass_state
def effects(state, data, metrics_dir, out, **model):
    """Conditional effect curves and per-zone effects."""
    config = _apply(state, data, metrics_dir, **model)
    spec = model_spec(config)
    inputs = Inputs(config)
    tables = inputs.tables(spec.aggregation)
    result = fit(spec, tables)
    dest = _outdir(out)
    _write_effects(result, tables, dest, "effects")
    write_provenance(dest, "effects", config, inputs.digests())


@main.command()
@click.argument("kind", type=click.Choice(["loo", "aggregation", "weights", "estimators"]))
@_input_options
@_model_options
@click.option("--levels", help="Comma-separated aggregation levels (aggregation sweep).")
@click.option("--out", required=True, type=click.Path())
@pass_state
def sensitivity(state, kind, data, metrics_dir, levels, out, **model):
    """Robustness sweeps: loo | aggregation | weights | estimators."""
    config = _apply(state, data, metrics_dir, **model)
    if levels:
        config["sensitivity"]["levels"] = [lv.strip() for lv in levels.split(",") if lv.strip()]
    spec = model_spec(config)
    inputs = Inputs(config)
    result = run_sweep(kind, spec, inputs, config, state.threads)
    dest = _outdir(out)
    result.write(dest)
    write_provenance(dest, f"sensitivity {kind}", config, inputs.digests())
    click.echo(json.dumps(result.summary, sort_keys=True, default=float))


def run_sweep(kind: str, spec: ModelSpec, inputs: Inputs, config: dict, workers: int) -> SweepResult:
    if kind == "aggregation":
        store, topology, fuel, hydro, _ = inputs.hourly()
        return aggregation_sweep(
            spec, store, topology, fuel, hydro,
            levels=tuple(config["sensitivity"]["levels"]),
            thresholds=_thresholds(config), carbon=_carbon(config), workers=workers, cache=inputs.cache,
        )
    tables = inputs.tables(spec.aggregation)
    if kind == "loo":
        return leave_one_out(spec, tables, zones=config["sensitivity"]["zones"], workers=workers)
    if kind == "weights":
        return weights_variant(spec, tables, workers=workers)
    return estimator_comparison(spec, tables, workers=workers)


@main.group()
def synth():
    """Synthetic data generators."""


@synth.command("panel")
@click.option("--seed", type=int)
@click.option("--technology", type=click.Choice(["wind", "solar"]))
@click.option("--out", required=True, type=click.Path())
@pass_state
def synth_panel(state, seed, technology, out):
    """Panel with known coefficients: metrics tables plus truth.json."""
    config = copy.deepcopy(state.config)
    _set(config["synth"], "panel", "seed", seed)
    doc = dict(config["synth"]["panel"])
    if technology is not None:
        doc["spec"] = {**doc.get("spec", {}), "technology": technology}
    cfg = _dgp_config(doc)
    tables, truth = generate_panel(cfg)
    dest = _outdir(out)
    tables.write(dest)
    (dest / "truth.json").write_text(truth.to_json())
    write_provenance(dest, "synth panel", config, {})


def _dgp_config(doc: dict) -> DgpConfig:
    doc = dict(doc)
    if "spec" in doc:
        doc["spec"] = ModelSpec.from_dict(doc["spec"])
    for key in ("own_level", "cross_level"):
        if key in doc:
            doc[key] = tuple(doc[key])
    try:
        return DgpConfig(**doc)
    except TypeError as exc:
        raise ConfigError(f"synth.panel: {exc}") from exc


@synth.command("hourly")
@click.option("--seed", type=int)
@click.option("--zones", "n_zones", type=int)
@click.option("--years", type=int)
@click.option("--out", required=True, type=click.Path())
@pass_state
def synth_hourly(state, seed, n_zones, years, out):
    """Merit-order market simulation in ingest-ready CSV files."""
    config = copy.deepcopy(state.config)
    for key, value in (("seed", seed), ("n_zones", n_zones), ("years", years)):
        _set(config["synth"], "hourly", key, value)
    market = generate_hourly(MeritOrderConfig.from_dict(config["synth"]["hourly"]))
    dest = _outdir(out)
    market.write(dest)
    write_provenance(dest, "synth hourly", config, {})


@main.command()
@_input_options
@click.option("--out", required=True, type=click.Path())
@pass_state
def report(state, data, metrics_dir, out):
    """Run the whole pipeline and bundle every output in one directory."""
    config = _apply(state, data, metrics_dir)
    inputs = Inputs(config)
    base = model_spec(config)
    dest = _outdir(out)
    tables = inputs.tables(base.aggregation)
    tables.write(dest / "metrics")
    summary = {}
    for tech in config["report"]["technologies"]:
        spec = base.replace(technology=tech)
        result = fit(spec, tables)
        _write_fit(result, dest, f"fit_{tech}")
        _write_effects(result, tables, dest, f"effects_{tech}")
        sweeps = {}
        for kind in ("loo", "weights", "estimators") + (("aggregation",) if inputs.kind != "metrics" else ()):
            sweep = run_sweep(kind, spec, inputs, config, state.threads)
            sweep.write(dest / f"sensitivity_{tech}")
            sweeps[kind] = sweep.summary
        summary[tech] = {
            "n_obs": result.n_obs,
            "adjusted_r2": result.adjusted_r2,
            "coefficients": {k: float(v) for k, v in result.params.items()},
            "sensitivity": sweeps,
        }
    _json_dump(json.loads(json.dumps(summary, default=float)), dest / "summary.json")
    write_provenance(dest, "report", config, inputs.digests())


# -- entry point ------------------------------------------------------------


def _fail(kind: str, message: str, code: int) -> int:
    click.echo(json.dumps({"error": kind, "message": message, "exit_code": code}), err=True)
    return code


def run(argv=None) -> int:
    """Invoke the CLI and return the exit code instead of exiting."""
    try:
        with threadpool_limits(limits=1):
            main.main(args=argv, prog_name="spillover", standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.exceptions.Abort:
        return _fail("Aborted", "aborted", 1)
    except click.ClickException as exc:
        return _fail("UsageError", exc.format_message(), ConfigError.exit_code)
    except SpilloverError as exc:
        return _fail(type(exc).__name__, str(exc), exc.exit_code)
    except FileNotFoundError as exc:
        return _fail("DataError", str(exc), DataError.exit_code)


def cli() -> None:
    sys.exit(run())


if __name__ == "__main__":
    cli()
