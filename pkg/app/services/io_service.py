"""
Configuration files, initial data, and output bundles.

Config files are INI text: a [run] section with the scalar settings and one
[potential.<slot>] section per non-zero kernel, e.g.

    [run]
    solver = eulerian
    n_rho = 160
    n_eta = 150
    sigma = 1
    horizon = 5

    [potential.k_rho]
    family = gaussian_exp
    amplitude = -1
    exponent = 3
"""

import configparser
import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import numpy as np
import pandas as pd
import structlog
from pydantic import BaseModel, ValidationError

from app.config import settings
from app.core.errors import ConfigError, InputError
from app.core.rng import SPECIES_STREAMS, species_generator
from app.models.measure import AtomicMeasure
from app.schemas.config import (
    LAGRANGIAN_SOLVERS,
    InitialLayout,
    SimConfig,
    VelocityScaling,
)
from app.schemas.potential import POTENTIAL_SLOTS
from app.schemas.run import RunMetadata

logger = structlog.get_logger(__name__)

SCHEMA_VERSION = 1
RUN_SECTION = "run"
POTENTIAL_PREFIX = "potential."
LIST_FIELDS = {
    "velocity_range",
    "position_range",
    "positions_rho",
    "positions_eta",
    "velocities_rho",
    "velocities_eta",
}

PathLike = Union[str, Path]


# =======================
# Config parsing
# =======================

def _option_line(text: str, section: str, key: str) -> Optional[int]:
    """1-based line of `key` inside [section], if present."""
    current = None
    header = re.compile(r"^\s*\[([^\]]+)\]")
    option = re.compile(r"^\s*([^=:#;\s]+)\s*[=:]")
    for number, line in enumerate(text.splitlines(), start=1):
        match = header.match(line)
        if match:
            current = match.group(1).strip()
            continue
        match = option.match(line)
        if match and current == section and match.group(1).strip().lower() == key.lower():
            return number
    return None


def _section_line(text: str, section: str) -> Optional[int]:
    for number, line in enumerate(text.splitlines(), start=1):
        if line.strip() == f"[{section}]":
            return number
    return None


def _parse_value(key: str, raw: str) -> Any:
    value = raw.strip()
    if key in LIST_FIELDS:
        return [item.strip() for item in value.split(",") if item.strip()]
    if key == "seed" and value.lower() in ("none", ""):
        return None
    return value


def parse_config_text(text: str, source: str = "<config>") -> SimConfig:
    """Parse INI text into a validated SimConfig; errors carry line and field."""
    parser = configparser.ConfigParser(
        interpolation=None,
        inline_comment_prefixes=("#", ";"),
        strict=True,
    )
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as e:
        raise ConfigError(f"{source}: missing section header", line=e.lineno)
    except configparser.ParsingError as e:
        line = e.errors[0][0] if e.errors else None
        raise ConfigError(f"{source}: cannot parse line {line}", line=line)
    except (configparser.DuplicateOptionError, configparser.DuplicateSectionError) as e:
        raise ConfigError(f"{source}: {e.message}", line=e.lineno)

    raw: Dict[str, Any] = {}
    potentials: Dict[str, Dict[str, str]] = {}
    for section in parser.sections():
        if section == RUN_SECTION:
            for key, value in parser.items(section):
                raw[key] = _parse_value(key, value)
        elif section.startswith(POTENTIAL_PREFIX):
            slot = section[len(POTENTIAL_PREFIX):].lower()
            if slot not in POTENTIAL_SLOTS:
                raise ConfigError(
                    f"{source}: unknown potential slot '{slot}'",
                    line=_section_line(text, section),
                    field=f"potentials.{slot}",
                )
            potentials[slot] = dict(parser.items(section))
        else:
            raise ConfigError(f"{source}: unknown section [{section}]", line=_section_line(text, section))
    if potentials:
        raw["potentials"] = potentials

    try:
        return SimConfig.model_validate(raw)
    except ValidationError as e:
        error = e.errors()[0]
        loc = [str(part) for part in error["loc"]]
        field = ".".join(loc) if loc else None
        line = None
        if loc and loc[0] == "potentials" and len(loc) >= 3:
            line = _option_line(text, f"{POTENTIAL_PREFIX}{loc[1]}", loc[2])
        elif loc:
            line = _option_line(text, RUN_SECTION, loc[0])
        where = f"line {line}, " if line else ""
        raise ConfigError(f"{source}: {where}{field or 'config'}: {error['msg']}", line=line, field=field)


def load_config(path: PathLike) -> SimConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    config = parse_config_text(text, source=str(path))
    logger.info("Loaded config", path=str(path), solver=config.solver.value, hash=config_hash(config)[:12])
    return config


def _format_value(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return ", ".join(_format_value(item) for item in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dump_config(config: SimConfig) -> str:
    """INI text that loads back to an identical config (same hash)."""
    data = config.model_dump(mode="json")
    potentials = data.pop("potentials")
    lines = [f"[{RUN_SECTION}]"]
    for key, value in data.items():
        if value is None:
            if key == "seed":
                lines.append("seed = none")
            continue
        lines.append(f"{key} = {_format_value(value)}")
    for slot in POTENTIAL_SLOTS:
        spec = potentials[slot]
        if spec["family"] == "zero":
            continue
        lines.append("")
        lines.append(f"[{POTENTIAL_PREFIX}{slot}]")
        for key, value in spec.items():
            lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def canonical_json(config: SimConfig) -> str:
    return json.dumps(config.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))


def config_hash(config: SimConfig) -> str:
    """SHA-256 of the canonical JSON of the validated config."""
    return hashlib.sha256(canonical_json(config).encode("utf-8")).hexdigest()


# =======================
# Initial data
# =======================

@dataclass(frozen=True)
class InitialData:
    """Sorted initial positions and matching velocities per species."""

    rho_positions: np.ndarray
    rho_velocities: np.ndarray
    eta_positions: np.ndarray
    eta_velocities: np.ndarray


def build_initial_data(config: SimConfig) -> InitialData:
    """Initial positions and velocities; random draws come from one stream per species."""
    seed = config.seed if config.seed is not None else 0
    if config.solver in LAGRANGIAN_SOLVERS:
        counts = {"rho": config.grid_size, "eta": config.grid_size}
    else:
        counts = {"rho": config.rho_count, "eta": config.eta_count}

    arrays: Dict[str, np.ndarray] = {}
    for name in SPECIES_STREAMS:
        count = int(counts[name])
        rng = species_generator(seed, name)
        low, high = config.position_range
        if config.initial_layout == InitialLayout.EXPLICIT:
            positions = np.asarray(getattr(config, f"positions_{name}"), dtype=float)
        elif config.initial_layout == InitialLayout.RANDOM_SORTED:
            positions = rng.uniform(low, high, count)
        else:
            positions = np.linspace(low, high, count)

        explicit_velocities = getattr(config, f"velocities_{name}")
        v_low, v_high = config.velocity_range
        if explicit_velocities is not None:
            velocities = np.asarray(explicit_velocities, dtype=float)
        elif v_low == v_high:
            velocities = np.full(count, v_low)
        else:
            velocities = rng.uniform(v_low, v_high, count)

        if config.velocity_scaling == VelocityScaling.OVERDAMPED:
            if not np.isfinite(config.damping):
                raise ConfigError("overdamped velocity scaling needs a finite sigma", field="velocity_scaling")
            velocities = config.damping * velocities

        order = np.argsort(positions, kind="stable")
        arrays[f"{name}_positions"] = positions[order]
        arrays[f"{name}_velocities"] = velocities[order]

    return InitialData(**arrays)


# =======================
# Output bundles
# =======================

def resolve_output_dir(requested: Optional[PathLike], default: PathLike = "runs") -> Path:
    """STICKYLAB_OUTPUT_DIR wins over the command-line value."""
    if settings.output_dir:
        return Path(settings.output_dir)
    return Path(requested) if requested is not None else Path(default)


def write_csv(frame: pd.DataFrame, path: PathLike) -> Path:
    """CSV with a schema header line and 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        handle.write(f"# schema_version: {SCHEMA_VERSION}\n")
        frame.to_csv(handle, index=False, float_format="%.17g", lineterminator="\n")
    return path


def read_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", float_precision="round_trip")


def read_measure_csv(path: PathLike) -> AtomicMeasure:
    """Atomic measure from a CSV with columns position, mass."""
    try:
        frame = read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise InputError(f"cannot read measure file {path}: {e}")
    missing = {"position", "mass"} - set(frame.columns)
    if missing:
        raise InputError(f"measure file {path} lacks columns {sorted(missing)}")
    return AtomicMeasure.from_atoms(zip(frame["position"].tolist(), frame["mass"].tolist()))


def to_jsonable(payload: Any) -> Any:
    if isinstance(payload, BaseModel):
        return payload.model_dump(mode="json")
    if isinstance(payload, Mapping):
        return {str(k): to_jsonable(v) for k, v in payload.items()}
    if isinstance(payload, (list, tuple)):
        return [to_jsonable(v) for v in payload]
    if isinstance(payload, np.generic):
        return payload.item()
    if isinstance(payload, np.ndarray):
        return payload.tolist()
    return payload


def write_json(payload: Any, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_jsonable(payload), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def build_metadata(config: SimConfig, wall_time_seconds: float) -> RunMetadata:
    return RunMetadata(
        app_name=settings.app_name,
        version=settings.app_version,
        solver=config.solver.value,
        config_hash=config_hash(config),
        seed=config.seed,
        wall_time_seconds=wall_time_seconds,
        config=config.model_dump(mode="json"),
    )


def write_bundle(
    out_dir: PathLike,
    config: SimConfig,
    wall_time_seconds: float,
    frames: Mapping[str, pd.DataFrame],
    summary: Optional[Any] = None,
) -> List[Path]:
    """Config snapshot, metadata, CSV series and optional summary in one directory."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [
        write_json(config, out / "config.json"),
        write_json(build_metadata(config, wall_time_seconds), out / "metadata.json"),
    ]
    (out / "config.cfg").write_text(dump_config(config), encoding="utf-8")
    written.append(out / "config.cfg")
    for name, frame in frames.items():
        written.append(write_csv(frame, out / f"{name}.csv"))
    if summary is not None:
        written.append(write_json(summary, out / "summary.json"))
    logger.info("Wrote output bundle", out_dir=str(out), files=len(written))
    return written
