"""
Named parameter presets and the configuration grid.

Presets live in a versioned YAML file bundled with the package
(``qubit_trajectories.defaults/presets.yaml``); a different file can be
passed explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from qubit_trajectories.experiments.models import EnsembleSpec
from qubit_trajectories.models import PhysicsParams

BUNDLED_PRESETS = "presets.yaml"

# Flat configuration keys that map onto PhysicsParams fields.
PHYSICS_KEYS: dict[str, str] = {
    "gamma1_per_us": "gamma1",
    "gamma_d_per_us": "gamma_d",
    "gamma_phi_per_us": "gamma_phi",
    "rabi_per_us": "omega",
    "eta_f": "eta_f",
    "eta_d": "eta_d",
    "dt_record_us": "dt_record",
    "dt_int_us": "dt_int",
    "duration_us": "duration",
}


def apply_overrides(
    params: PhysicsParams, overrides: dict[str, float]
) -> PhysicsParams:
    """Return ``params`` with flat physics keys applied.

    The Rabi frequency is given as Omega/2pi.
    """
    changes: dict[str, float] = {}
    for key, value in overrides.items():
        if key not in PHYSICS_KEYS:
            raise ValueError(f"Unsupported preset key: {key}")
        value = float(value)
        if key == "rabi_per_us":
            value = 2.0 * math.pi * value
        changes[PHYSICS_KEYS[key]] = value
    return replace(params, **changes)


@dataclass(frozen=True)
class PresetCatalog:
    """Parsed preset file."""

    version: int
    presets: dict[str, dict[str, float]]
    grid: dict[str, Any]
    device: dict[str, float] = field(default_factory=dict)
    source: str = BUNDLED_PRESETS

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.presets)

    def resolve(self, name: str) -> dict[str, float]:
        """Flat overrides of a named preset, following aliases."""
        seen: set[str] = set()
        while True:
            if name not in self.presets:
                raise ValueError(
                    f"unknown preset {name!r}; available: {', '.join(self.names)}"
                )
            if name in seen:
                raise ValueError(f"preset alias cycle at {name!r}")
            seen.add(name)
            entry = self.presets[name]
            if "alias" in entry:
                name = str(entry["alias"])
                continue
            return dict(entry)

    def grid_points(self) -> list[tuple[str, dict[str, float]]]:
        """The grid as ``(config_id, overrides)`` pairs, drive-major order."""
        rabi_values = [float(v) for v in self.grid["rabi_per_us"]]
        dephasing = self.grid["gamma_d_per_us"]
        gamma_d_values = np.geomspace(
            float(dephasing["start"]),
            float(dephasing["stop"]),
            int(dephasing["count"]),
        )
        shared = {
            key: float(self.grid[key])
            for key in ("dt_int_us", "duration_us")
            if key in self.grid
        }
        points = []
        for i, rabi in enumerate(rabi_values):
            for j, gamma_d in enumerate(gamma_d_values):
                overrides = {
                    "rabi_per_us": rabi,
                    "gamma_d_per_us": float(gamma_d),
                    **shared,
                }
                points.append((f"grid-r{i}-d{j}", overrides))
        return points


def _require_mapping(value: Any, section: str) -> dict[str, Any]:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ValueError(f"{section} must be a mapping")
    return value


def parse_presets(text: str, source: str = BUNDLED_PRESETS) -> PresetCatalog:
    """Parse and validate preset YAML."""
    data = _require_mapping(yaml.safe_load(text), "preset file")
    version = data.get("version")
    if not isinstance(version, int) or version < 1:
        raise ValueError(f"{source}: version must be a positive integer")
    presets: dict[str, dict[str, float]] = {}
    for name, entry in _require_mapping(data.get("presets"), "presets").items():
        entry = _require_mapping(entry, f"presets.{name}")
        if "alias" in entry:
            if len(entry) != 1:
                raise ValueError(
                    f"{source}: alias preset {name} must not set other keys"
                )
            presets[str(name)] = {"alias": entry["alias"]}
            continue
        for key in entry:
            if key not in PHYSICS_KEYS:
                raise ValueError(
                    f"{source}: Unsupported configuration key: presets.{name}.{key}"
                )
        presets[str(name)] = {key: float(value) for key, value in entry.items()}
    grid = _require_mapping(data.get("grid"), "grid")
    if grid:
        for key in ("rabi_per_us", "gamma_d_per_us"):
            if key not in grid:
                raise ValueError(f"{source}: grid.{key} is required")
    device_section = _require_mapping(data.get("device"), "device")
    device = {str(k): float(v) for k, v in device_section.items()}
    return PresetCatalog(
        version=version, presets=presets, grid=grid, device=device, source=source
    )


def load_presets(path: str | Path | None = None) -> PresetCatalog:
    """Load presets from ``path`` or the bundled file."""
    if path is not None:
        path = Path(path)
        return parse_presets(path.read_text(encoding="utf-8"), source=str(path))
    bundled = resources.files("qubit_trajectories.defaults").joinpath(BUNDLED_PRESETS)
    return parse_presets(bundled.read_text(encoding="utf-8"))


def preset_params(
    name: str,
    base: PhysicsParams | None = None,
    catalog: PresetCatalog | None = None,
) -> PhysicsParams:
    """Physics parameters of a named preset on top of ``base``."""
    catalog = catalog or load_presets()
    return apply_overrides(base or PhysicsParams(), catalog.resolve(name))


def config_grid(
    catalog: PresetCatalog | None = None,
    *,
    base: PhysicsParams | None = None,
    n_traj: int = 1000,
    master_seed: int = 0,
    **spec_options: Any,
) -> list[EnsembleSpec]:
    """One raw-average ensemble per grid point of the preset file."""
    catalog = catalog or load_presets()
    if not catalog.grid:
        raise ValueError(f"{catalog.source} declares no grid")
    base = base or PhysicsParams()
    return [
        EnsembleSpec(
            params=apply_overrides(base, overrides),
            n_traj=n_traj,
            master_seed=master_seed,
            config_id=config_id,
            **spec_options,
        )
        for config_id, overrides in catalog.grid_points()
    ]
