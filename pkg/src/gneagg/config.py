"""Experiment configuration: schema-versioned JSON files, presets and overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from ._json import JSONDecodeError, read_json
from .errors import ConfigError, InvalidGamma, InvalidParams
from .game import CournotParams, GameInstance, build_cournot, game_from_dict
from .network import MixingVariant, ScheduleKind, SmallWorld, kind_from_dict, kind_to_dict
from .steps import GammaSpec, PowerLaw, gamma_from_dict, gamma_to_dict, parse_gamma

SCHEMA_VERSION = 1
ALGORITHMS = ("1", "2", "3")


@dataclass(frozen=True)
class InstanceConfig:
    """Either generator parameters and a seed, or a saved instance file."""

    params: CournotParams = field(default_factory=CournotParams)
    seed: int = 0
    file: Path | None = None

    def build(self) -> GameInstance:
        if self.file is not None:
            return game_from_dict(read_json(self.file))
        return build_cournot(self.params, self.seed)


@dataclass(frozen=True)
class NetworkConfig:
    kind: ScheduleKind = field(default_factory=SmallWorld)
    variant: MixingVariant = MixingVariant.SAFE_DIAGONAL
    horizon: int = 1000
    seed: int = 0
    cycle: bool = True


@dataclass(frozen=True)
class StepsConfig:
    tau_margin: float = 0.05
    gamma: GammaSpec = PowerLaw(0.51)
    alpha_scale: float = 1.0
    unsafe_gamma: bool = False


@dataclass(frozen=True)
class RunConfig:
    algorithms: tuple[str, ...] = ("1", "3")
    max_iter: int = 20_000
    kkt_tol: float = 1e-8
    fix_tol: float = 1e-9
    dual_cap: float | None = None
    y_tracking: str = "cta"
    snapshot_every: int = 100
    reference_tol: float = 1e-10
    reference_max_iter: int = 200_000


@dataclass(frozen=True)
class OutputConfig:
    """Where artifacts go and which optional diagnostics are computed."""

    directory: Path = Path("results")
    cache: Path | None = None
    bounds: bool = True
    series: bool = False


@dataclass(frozen=True)
class ExperimentConfig:
    instance: InstanceConfig = field(default_factory=InstanceConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    steps: StepsConfig = field(default_factory=StepsConfig)
    run: RunConfig = field(default_factory=RunConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    label: str = ""

    def to_dict(self) -> dict[str, Any]:
        instance: dict[str, Any] = {"seed": self.instance.seed, "params": self.instance.params.to_dict()}
        if self.instance.file is not None:
            instance["file"] = str(self.instance.file)
        return {
            "schema_version": SCHEMA_VERSION,
            "label": self.label,
            "instance": instance,
            "network": {
                "kind": kind_to_dict(self.network.kind),
                "variant": self.network.variant.value,
                "horizon": self.network.horizon,
                "seed": self.network.seed,
                "cycle": self.network.cycle,
            },
            "steps": {
                "tau_margin": self.steps.tau_margin,
                "gamma": gamma_to_dict(self.steps.gamma),
                "alpha_scale": self.steps.alpha_scale,
                "unsafe_gamma": self.steps.unsafe_gamma,
            },
            "run": {**dataclasses.asdict(self.run), "algorithms": list(self.run.algorithms)},
            "output": {
                "directory": str(self.output.directory),
                "cache": None if self.output.cache is None else str(self.output.cache),
                "bounds": self.output.bounds,
                "series": self.output.series,
            },
        }


def _section(doc: dict[str, Any], name: str, allowed: set[str], required: set[str] = frozenset()) -> dict[str, Any]:
    section = doc.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"'{name}' must be an object")
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in '{name}': {sorted(unknown)}")
    missing = required - set(section)
    if missing:
        raise ConfigError(f"'{name}' is missing {sorted(missing)}")
    return section


def _path(value: Any, base_dir: Path | None) -> Path:
    path = Path(value)
    return path if path.is_absolute() or base_dir is None else base_dir / path


def _seed(value: Any, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ConfigError(f"{name} must be a non-negative integer")
    return value


def config_from_dict(doc: dict[str, Any], base_dir: Path | None = None) -> ExperimentConfig:
    """Validates a configuration document.

    Relative file references resolve against ``base_dir``.

    Raises:
        ConfigError: On unknown keys, missing seeds, bad values or missing files.
    """
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a JSON object")
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {doc.get('schema_version')!r}; expected {SCHEMA_VERSION}")
    unknown = set(doc) - {"schema_version", "label", "instance", "network", "steps", "run", "output"}
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    try:
        inst = _section(doc, "instance", {"params", "seed", "file"}, {"seed"})
        file = None
        if inst.get("file") is not None:
            file = _path(inst["file"], base_dir)
            if not file.is_file():
                raise ConfigError(f"instance file not found: {file}")
        instance = InstanceConfig(
            params=CournotParams.from_dict(inst.get("params", {})),
            seed=_seed(inst["seed"], "instance.seed"),
            file=file,
        )
        instance.params.validate()

        net = _section(doc, "network", {"kind", "variant", "horizon", "seed", "cycle"}, {"seed"})
        network = NetworkConfig(
            kind=kind_from_dict(net["kind"]) if "kind" in net else SmallWorld(),
            variant=MixingVariant(net.get("variant", MixingVariant.SAFE_DIAGONAL.value)),
            horizon=int(net.get("horizon", 1000)),
            seed=_seed(net["seed"], "network.seed"),
            cycle=bool(net.get("cycle", True)),
        )
        if network.horizon < 1:
            raise ConfigError("network.horizon must be at least 1")

        st = _section(doc, "steps", {"tau_margin", "gamma", "alpha_scale", "unsafe_gamma"})
        gamma = st.get("gamma", gamma_to_dict(PowerLaw(0.51)))
        steps = StepsConfig(
            tau_margin=float(st.get("tau_margin", 0.05)),
            gamma=parse_gamma(gamma) if isinstance(gamma, str) else gamma_from_dict(gamma),
            alpha_scale=float(st.get("alpha_scale", 1.0)),
            unsafe_gamma=bool(st.get("unsafe_gamma", False)),
        )

        fields = {f.name for f in dataclasses.fields(RunConfig)}
        rn = _section(doc, "run", fields)
        run = dataclasses.replace(RunConfig(), **rn)
        run = dataclasses.replace(run, algorithms=tuple(str(a) for a in run.algorithms))
        _check_run(run)

        out = _section(doc, "output", {"directory", "cache", "bounds", "series"})
        output = OutputConfig(
            directory=_path(out.get("directory", "results"), base_dir),
            cache=None if out.get("cache") is None else _path(out["cache"], base_dir),
            bounds=bool(out.get("bounds", True)),
            series=bool(out.get("series", False)),
        )
    except (InvalidParams, InvalidGamma, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return ExperimentConfig(instance, network, steps, run, output, str(doc.get("label", "")))


def _check_run(run: RunConfig) -> None:
    bad = [a for a in run.algorithms if a not in ALGORITHMS]
    if bad or not run.algorithms:
        raise ConfigError(f"run.algorithms must be a non-empty subset of {ALGORITHMS}, got {list(run.algorithms)}")
    if run.max_iter < 0:
        raise ConfigError("run.max_iter must be non-negative")
    if run.dual_cap is not None and run.dual_cap <= 0:
        raise ConfigError("run.dual_cap must be positive")
    if run.y_tracking not in ("cta", "atc"):
        raise ConfigError("run.y_tracking must be 'cta' or 'atc'")


def load_config(path: str | Path) -> ExperimentConfig:
    """Reads and validates a configuration file.

    Raises:
        ConfigError: If the file is missing, unreadable or invalid.
    """
    source = Path(path)
    try:
        doc = read_json(source)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {source}") from None
    except (JSONDecodeError, ValueError) as exc:
        raise ConfigError(f"config file {source} is not valid JSON: {exc}") from exc
    return config_from_dict(doc, source.parent)


PRESETS: dict[str, ExperimentConfig] = {
    "cournot-benchmark": ExperimentConfig(
        instance=InstanceConfig(CournotParams(), seed=0),
        network=NetworkConfig(SmallWorld(neighbors=4, rewire=0.2), MixingVariant.SAFE_DIAGONAL, 1000, seed=0),
        steps=StepsConfig(tau_margin=0.05, gamma=PowerLaw(0.51)),
        run=RunConfig(algorithms=("1", "3"), max_iter=20_000),
        label="cournot-benchmark",
    ),
}


def preset(name: str) -> ExperimentConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def with_overrides(
    config: ExperimentConfig,
    *,
    algorithms: tuple[str, ...] | None = None,
    gamma: str | None = None,
    seed: int | None = None,
    out: str | Path | None = None,
    dual_cap: float | None = None,
    unsafe_gamma: bool | None = None,
    max_iter: int | None = None,
    alpha_scale: float | None = None,
) -> ExperimentConfig:
    """Applies command-line overrides; ``seed`` reseeds both the instance and the network."""
    try:
        steps = config.steps
        if gamma is not None:
            steps = dataclasses.replace(steps, gamma=parse_gamma(gamma))
        if unsafe_gamma is not None:
            steps = dataclasses.replace(steps, unsafe_gamma=unsafe_gamma)
        if alpha_scale is not None:
            if alpha_scale <= 0:
                raise ConfigError("alpha_scale must be positive")
            steps = dataclasses.replace(steps, alpha_scale=alpha_scale)
    except InvalidGamma as exc:
        raise ConfigError(str(exc)) from exc
    run = config.run
    if algorithms is not None:
        run = dataclasses.replace(run, algorithms=tuple(algorithms))
    if dual_cap is not None:
        run = dataclasses.replace(run, dual_cap=dual_cap)
    if max_iter is not None:
        run = dataclasses.replace(run, max_iter=max_iter)
    _check_run(run)
    instance, network = config.instance, config.network
    if seed is not None:
        _seed(seed, "seed")
        instance = dataclasses.replace(instance, seed=seed)
        network = dataclasses.replace(network, seed=seed)
    output = config.output if out is None else dataclasses.replace(config.output, directory=Path(out))
    return dataclasses.replace(config, instance=instance, network=network, steps=steps, run=run, output=output)
