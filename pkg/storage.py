"""CSV and JSON persistence with provenance headers.

CSV files start with ``# key: value`` comment lines (config hash, seed, version
and any extras) followed by a comma-separated table written by pandas.
"""
import json
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config import VERSION, get_logger
from errors import ConfigError
from nonlocal_ops import Grid1D, GridField
from simulate import EnsembleResult, Trajectory

logger = get_logger("storage")

PathLike = Union[str, Path]
FLOAT_FORMAT = "%.12g"


def provenance(config_sha256: Optional[str] = None, seed: Optional[int] = None, **extra: Any) -> Dict[str, Any]:
    header = {"config_sha256": config_sha256 or "none", "seed": "none" if seed is None else int(seed),
              "version": VERSION}
    header.update(extra)
    return header


def write_csv(path: PathLike, frame: pd.DataFrame, header: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        for key, value in header.items():
            handle.write(f"# {key}: {value}\n")
        frame.to_csv(handle, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info(f"Wrote {path}")
    return path


def read_csv(path: PathLike) -> Tuple[pd.DataFrame, Dict[str, str]]:
    """Table and the header comment lines as a dict of strings."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    header: Dict[str, str] = {}
    with path.open("r", encoding="utf-8") as handle:
        for line in handle:
            if not line.startswith("#"):
                break
            key, _, value = line[1:].partition(":")
            header[key.strip()] = value.strip()
    return pd.read_csv(path, comment="#"), header


def write_grid_field(path: PathLike, field: GridField, header: Optional[Mapping[str, Any]] = None) -> Path:
    meta = dict(header or provenance())
    meta.update({"half_width": repr(field.grid.half_width), "n_points": field.grid.n_points, "kind": field.kind})
    return write_csv(path, pd.DataFrame({"x": field.x, "value": field.values}), meta)


def read_grid_field(path: PathLike) -> GridField:
    frame, header = read_csv(path)
    try:
        grid = Grid1D(float(header["half_width"]), int(header["n_points"]))
    except KeyError as e:
        raise ConfigError(f"{path} has no grid header line {e}")
    field = GridField(grid, frame["value"].to_numpy(dtype=float), header.get("kind", "generic"))
    if not np.allclose(frame["x"].to_numpy(dtype=float), grid.x, rtol=0.0, atol=1e-9 * grid.half_width):
        raise ConfigError(f"{path}: x column does not match the grid header")
    return field


def write_ensemble(path: PathLike, result: EnsembleResult, header: Mapping[str, Any]) -> Path:
    return write_csv(path, result.to_frame(), header)


def write_trajectories(path: PathLike, paths: Sequence[Trajectory], header: Mapping[str, Any]) -> Path:
    """Long table of per-path states: path, t, x (x1..xn in several dimensions)."""
    frame = pd.concat([p.to_frame(i) for i, p in enumerate(paths)], ignore_index=True)
    meta = dict(header)
    meta["flagged_paths"] = ",".join(str(i) for i, p in enumerate(paths) if p.flagged) or "none"
    return write_csv(path, frame, meta)


def write_response(path: PathLike, curve, header: Mapping[str, Any]) -> Path:
    meta = dict(header)
    meta.update({"observable": curve.observable_name, "perturbation": curve.perturbation_name})
    return write_csv(path, curve.to_frame(), meta)


def _to_jsonable(value):
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_jsonable(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if np.isfinite(value) else None
    return value


def write_json(path: PathLike, payload: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        json.dump(_to_jsonable(payload), handle, indent=2, sort_keys=True)
        handle.write("\n")
    logger.info(f"Wrote {path}")
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"file not found: {path}")
    return json.loads(path.read_text(encoding="utf-8"))
