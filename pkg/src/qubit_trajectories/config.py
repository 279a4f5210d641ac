"""
Configuration management for Qubit Trajectories.

A run is configured by flat ``key = value`` text. Values are layered, later
layers winning:

  1. built-in defaults,
  2. the named ``preset`` (physics keys only),
  3. the configuration file,
  4. ``QUBIT_TRAJ_<KEY>`` environment variables,
  5. command-line flags.

Every value is validated before any simulation starts; errors name the key
and where the value came from.
"""

from __future__ import annotations

import math
import os
from collections.abc import Mapping
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Callable
from zoneinfo import ZoneInfo, ZoneInfoNotFoundError

from qubit_trajectories.experiments.models import (
    DEFAULT_CHUNK_SIZE,
    OUTPUTS,
    PLANES,
    EnsembleSpec,
)
from qubit_trajectories.experiments.presets import (
    PHYSICS_KEYS,
    PresetCatalog,
    apply_overrides,
    load_presets,
)
from qubit_trajectories.models import (
    NAMED_STATES,
    SUBSETS,
    PhysicsParams,
    named_state,
)

ENV_PREFIX = "QUBIT_TRAJ_"

MODES: tuple[str, ...] = (
    "generate",
    "reconstruct",
    "average",
    "validate",
    "histogram",
    "sweep",
    "grid",
)
FORMATS: tuple[str, ...] = ("csv", "ndjson", "bin")
REQUIRED_KEYS: tuple[str, ...] = ("mode", "n_traj", "master_seed")
LOG_LEVELS: tuple[str, ...] = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")
# Modes that run one ensemble and write the requested outputs from it.
ENSEMBLE_MODES: tuple[str, ...] = ("generate", "average", "validate", "histogram")

# Start of the mean-trajectory overlay when overlay_trim is on.
OVERLAY_TRIM_US = 0.2


class ConfigError(ValueError):
    """Invalid configuration, with the key and origin of the offending value."""

    def __init__(
        self, message: str, key: str | None = None, origin: str | None = None
    ) -> None:
        prefix = ""
        if key and origin:
            prefix = f"{key} ({origin}): "
        elif key:
            prefix = f"{key}: "
        elif origin:
            prefix = f"{origin}: "
        super().__init__(prefix + message)
        self.key = key
        self.origin = origin


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration of one run."""

    params: PhysicsParams
    mode: str
    n_traj: int
    master_seed: int
    subset: str = "uvw"
    preset: str | None = None
    out_dir: Path = Path("runs")
    formats: tuple[str, ...] = ("csv", "ndjson")
    workers: int = 1
    chunk_size: int = DEFAULT_CHUNK_SIZE
    initial_state: str = "g"
    phi_unraveling: str = "diffusive"
    records_path: Path | None = None
    presets_path: Path | None = None
    validation_time_us: float = 10.0
    bin_width: float = 0.01
    min_bin_count: int = 50
    histogram_bins: int = 61
    taus_us: tuple[float, ...] = (6.5,)
    planes: tuple[str, ...] = ("xy", "xz", "yz")
    asymmetry_x0: float = 0.3
    overlay_trim: bool = False
    lump_innovations: bool = False
    compare_subsets: bool = False
    sweep_span: float = 0.05
    sweep_step: float = 0.01
    outputs: tuple[str, ...] | None = None
    log_level: str = "INFO"
    log_timezone: str = "UTC"
    log_max_size_mb: int = 10
    log_backup_count: int = 3
    # Effective flat key/value pairs, in key order, for manifests.
    snapshot: dict[str, str] = field(default_factory=dict, compare=False)

    @property
    def log_path(self) -> Path:
        return self.out_dir / "logs" / "run.log"

    @property
    def overlay_trim_us(self) -> float:
        return OVERLAY_TRIM_US if self.overlay_trim else 0.0

    @property
    def requested_outputs(self) -> frozenset[str]:
        """The ``outputs`` key, or the mode's own output when it is unset."""
        return frozenset(self.outputs) if self.outputs else default_outputs(self.mode)

    def ensemble_spec(self, **changes: Any) -> EnsembleSpec:
        """Ensemble over this configuration's trajectories."""
        spec = EnsembleSpec(
            params=self.params,
            n_traj=self.n_traj,
            master_seed=self.master_seed,
            subset=self.subset,
            outputs=self.requested_outputs,
            workers=self.workers,
            chunk_size=self.chunk_size,
            lump=self.lump_innovations,
            phi_unraveling=self.phi_unraveling,  # type: ignore[arg-type]
            config_id=self.preset or "custom",
        )
        return replace(spec, **changes) if changes else spec


# ---------------------------------------------------------------------------
# Value parsers
# ---------------------------------------------------------------------------


def _parse_float(text: str) -> float:
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"must be finite, got {text!r}")
    return value


def _rate(text: str) -> float:
    value = _parse_float(text)
    if value < 0:
        raise ValueError(f"must be a rate >= 0, got {value}")
    return value


def _positive(text: str) -> float:
    value = _parse_float(text)
    if value <= 0:
        raise ValueError(f"must be positive, got {value}")
    return value


def _non_negative(text: str) -> float:
    value = _parse_float(text)
    if value < 0:
        raise ValueError(f"must be >= 0, got {value}")
    return value


def _efficiency(text: str) -> float:
    value = _parse_float(text)
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"must be between 0 and 1, got {value}")
    return value


def _int_at_least(minimum: int) -> Callable[[str], int]:
    def parse(text: str) -> int:
        try:
            value = int(text)
        except ValueError:
            raise ValueError(f"must be an integer, got {text!r}") from None
        if value < minimum:
            raise ValueError(f"must be at least {minimum}, got {value}")
        return value

    return parse


def _choice(options: tuple[str, ...]) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"must be one of {', '.join(options)}, got {text!r}")
        return text

    return parse


def _bool(text: str) -> bool:
    lowered = text.lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"must be true or false, got {text!r}")


def _sign(text: str) -> float:
    if text in ("+1", "1", "1.0", "+1.0"):
        return 1.0
    if text in ("-1", "-1.0"):
        return -1.0
    raise ValueError(f"must be +1 or -1, got {text!r}")


def _list_of(item: Callable[[str], Any]) -> Callable[[str], tuple[Any, ...]]:
    def parse(text: str) -> tuple[Any, ...]:
        parts = [part.strip() for part in text.split(",") if part.strip()]
        if not parts:
            raise ValueError("must list at least one value")
        values = tuple(item(part) for part in parts)
        if len(set(values)) != len(values):
            raise ValueError(f"must not repeat values, got {text!r}")
        return values

    return parse


def _timezone(text: str) -> str:
    try:
        ZoneInfo(text)
    except (ZoneInfoNotFoundError, ValueError):
        raise ValueError(f"unknown IANA timezone {text!r}") from None
    return text


def _path(text: str) -> Path:
    return Path(text).expanduser()


def _level(text: str) -> str:
    return _choice(LOG_LEVELS)(text.upper())


# Every supported key and its parser; physics keys first.
KEY_PARSERS: dict[str, Callable[[str], Any]] = {
    "gamma1_per_us": _rate,
    "gamma_d_per_us": _rate,
    "gamma_phi_per_us": _rate,
    "rabi_per_us": _parse_float,
    "eta_f": _efficiency,
    "eta_d": _efficiency,
    "dt_record_us": _positive,
    "dt_int_us": _positive,
    "duration_us": _positive,
    "initial_state": _choice(tuple(NAMED_STATES)),
    "w_sign": _sign,
    "phi_unraveling": _choice(("diffusive", "jump")),
    "n_traj": _int_at_least(1),
    "master_seed": _int_at_least(0),
    "subset": _choice(SUBSETS),
    "mode": _choice(MODES),
    "preset": str,
    "out_dir": _path,
    "formats": _list_of(_choice(FORMATS)),
    "workers": _int_at_least(1),
    "chunk_size": _int_at_least(1),
    "records_path": _path,
    "presets_path": _path,
    "validation_time_us": _positive,
    "bin_width": _positive,
    "min_bin_count": _int_at_least(1),
    "histogram_bins": _int_at_least(1),
    "taus_us": _list_of(_non_negative),
    "planes": _list_of(_choice(tuple(PLANES))),
    "asymmetry_x0": _non_negative,
    "overlay_trim": _bool,
    "lump_innovations": _bool,
    "compare_subsets": _bool,
    "sweep_span": _non_negative,
    "sweep_step": _positive,
    "outputs": _list_of(_choice(tuple(sorted(OUTPUTS)))),
    "log_level": _level,
    "log_timezone": _timezone,
    "log_max_size_mb": _int_at_least(1),
    "log_backup_count": _int_at_least(0),
}

_PHYSICS_FIELDS = {"initial_state", "w_sign", *PHYSICS_KEYS}


def _reject_unknown_key(key: str, origin: str) -> None:
    if key not in KEY_PARSERS:
        raise ConfigError(f"Unsupported configuration key: {key}", origin=origin)


def _read_lines(text: str, source: str) -> dict[str, tuple[str, str]]:
    """Parse ``key = value`` lines into ``{key: (value, origin)}``."""
    entries: dict[str, tuple[str, str]] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        origin = f"{source}, line {number}"
        if "=" not in line:
            raise ConfigError(
                f"expected 'key = value', got {raw.strip()!r}", origin=origin
            )
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError("missing key before '='", origin=origin)
        _reject_unknown_key(key, origin)
        if key in entries:
            raise ConfigError(
                f"duplicate key (first set at {entries[key][1]})",
                key=key,
                origin=origin,
            )
        if not value:
            raise ConfigError("missing value", key=key, origin=origin)
        entries[key] = (value, origin)
    return entries


def _read_environment(environ: Mapping[str, str]) -> dict[str, tuple[str, str]]:
    entries: dict[str, tuple[str, str]] = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX) :].lower()
        origin = f"environment variable {name}"
        _reject_unknown_key(key, origin)
        entries[key] = (value.strip(), origin)
    return entries


def parse_config(
    text: str,
    *,
    environ: Mapping[str, str] | None = None,
    overrides: Mapping[str, str] | None = None,
    source: str = "<config>",
    catalog: PresetCatalog | None = None,
) -> RunConfig:
    """Parse and validate a flat configuration.

    Args:
        text: Configuration file contents.
        environ: Environment to read ``QUBIT_TRAJ_*`` overrides from
            (defaults to ``os.environ``).
        overrides: Values from command-line flags, highest precedence.
        source: Name used in error messages.
        catalog: Preset catalog; loaded from ``presets_path`` or the bundled
            file when omitted.

    Raises:
        ConfigError: Unknown or duplicate key, unparsable or out-of-range
            value, missing required key, or inconsistent physics parameters.
    """
    entries = _read_lines(text, source)
    entries.update(_read_environment(os.environ if environ is None else environ))
    for key, value in (overrides or {}).items():
        _reject_unknown_key(key, "command line")
        entries[key] = (str(value), "command line")

    missing = [key for key in REQUIRED_KEYS if key not in entries]
    if missing:
        raise ConfigError(
            f"missing required keys: {', '.join(missing)} "
            f"(required: {', '.join(REQUIRED_KEYS)})",
            origin=source,
        )

    values: dict[str, Any] = {}
    for key, (raw, origin) in entries.items():
        try:
            values[key] = KEY_PARSERS[key](raw)
        except ValueError as exc:
            raise ConfigError(str(exc), key=key, origin=origin) from None

    preset_overrides: dict[str, float] = {}
    if "preset" in values:
        try:
            if catalog is None:
                catalog = load_presets(values.get("presets_path"))
            preset_overrides = catalog.resolve(values["preset"])
        except (OSError, ValueError) as exc:
            origin = entries["preset"][1]
            raise ConfigError(str(exc), key="preset", origin=origin) from None

    physics = {
        **preset_overrides,
        **{k: v for k, v in values.items() if k in PHYSICS_KEYS},
    }
    try:
        params = apply_overrides(PhysicsParams(), physics)
        params = replace(
            params,
            initial_state=named_state(values.get("initial_state", "g")),
            w_sign=values.get("w_sign", 1.0),
        )
    except ValueError as exc:
        raise ConfigError(
            f"inconsistent physics parameters: {exc}", origin=source
        ) from None

    options = {
        key: value
        for key, value in values.items()
        if key not in _PHYSICS_FIELDS or key == "initial_state"
    }
    if "out_dir" not in options:
        options["out_dir"] = Path("runs")
    known = {f.name for f in fields(RunConfig)}
    snapshot = _snapshot(params, values, preset_overrides)
    config = RunConfig(
        params=params,
        snapshot=snapshot,
        **{k: v for k, v in options.items() if k in known},
    )
    _check_consistency(config, entries)
    return config


def _snapshot(
    params: PhysicsParams,
    values: dict[str, Any],
    preset_overrides: dict[str, float],
) -> dict[str, str]:
    """Effective flat configuration, physics included, in key order."""
    effective: dict[str, Any] = {
        "gamma1_per_us": params.gamma1,
        "gamma_d_per_us": params.gamma_d,
        "gamma_phi_per_us": params.gamma_phi,
        "rabi_per_us": params.rabi_per_us,
        "eta_f": params.eta_f,
        "eta_d": params.eta_d,
        "dt_record_us": params.dt_record,
        "dt_int_us": params.dt_int,
        "duration_us": params.duration,
        "w_sign": params.w_sign,
    }
    for key, value in values.items():
        if key not in effective:
            effective[key] = value
    snapshot = {}
    for key in KEY_PARSERS:
        if key in effective:
            value = effective[key]
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            snapshot[key] = repr(value) if isinstance(value, float) else str(value)
    return snapshot


def _check_consistency(config: RunConfig, entries: dict[str, tuple[str, str]]) -> None:
    duration = config.params.duration
    if config.mode == "reconstruct" and config.records_path is None:
        raise ConfigError("mode reconstruct needs records_path", key="records_path")
    if config.outputs is not None and config.mode not in ENSEMBLE_MODES:
        raise ConfigError(
            f"only applies to modes {', '.join(ENSEMBLE_MODES)}, not {config.mode}",
            key="outputs",
            origin=entries["outputs"][1],
        )
    validating = config.mode == "sweep" or "validation" in config.requested_outputs
    if validating and config.validation_time_us > duration + 1e-9:
        raise ConfigError(
            f"must not exceed duration_us ({duration})",
            key="validation_time_us",
            origin=entries.get("validation_time_us", ("", None))[1],
        )
    if "histograms" in config.requested_outputs:
        late = [tau for tau in config.taus_us if tau > duration + 1e-9]
        if late:
            raise ConfigError(
                f"{late[0]} exceeds duration_us ({duration})",
                key="taus_us",
                origin=entries.get("taus_us", ("", None))[1],
            )
    if config.bin_width > 2:
        raise ConfigError(
            "must be at most 2", key="bin_width", origin=entries["bin_width"][1]
        )


def load_config(
    path: str | Path,
    *,
    environ: Mapping[str, str] | None = None,
    overrides: Mapping[str, str] | None = None,
) -> RunConfig:
    """Read and validate a configuration file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(
            f"cannot read configuration file: {exc}", origin=str(path)
        ) from None
    return parse_config(text, environ=environ, overrides=overrides, source=str(path))


def default_outputs(mode: str) -> frozenset[str]:
    """Ensemble outputs a mode produces."""
    by_mode = {
        "average": {"raw_average"},
        "grid": {"raw_average"},
        "validate": {"validation"},
        "sweep": {"validation"},
        "histogram": {"histograms"},
    }
    outputs = frozenset(by_mode.get(mode, {"purity_curve"}))
    assert outputs <= OUTPUTS
    return outputs
