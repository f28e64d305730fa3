"""
INI run configs merged with command-line flags and environment settings.

Precedence: flag > config file > TETRASOLVE_* environment > schema defaults.
"""

import configparser
import logging
import os
from typing import Any, Dict, Optional

from pydantic import ValidationError as PydanticValidationError

from core.config import Settings, get_settings
from core.exceptions import ValidationError
from schemas.config import RunConfig, default_levels

logger = logging.getLogger(__name__)

FLOAT_LISTS = {("mesh", "extents"), ("mesh", "layer_interfaces"), ("greens", "planted")}
INT_LISTS = {("mesh", "divisions")}


def _list(value: str, kind):
    return [kind(v) for v in value.replace(",", " ").split()]


def _parse_ini(path: str) -> configparser.ConfigParser:
    if not os.path.exists(path):
        raise ValidationError(f"config file {path} does not exist")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as e:
        raise ValidationError(f"cannot parse config file {path}: {e}") from e
    return parser


def _section(parser: configparser.ConfigParser, name: str) -> Dict[str, Any]:
    if not parser.has_section(name):
        return {}
    out = {}
    for key, value in parser.items(name):
        try:
            if (name, key) in FLOAT_LISTS:
                out[key] = _list(value, float)
            elif (name, key) in INT_LISTS:
                out[key] = _list(value, int)
            else:
                out[key] = value
        except ValueError as e:
            raise ValidationError(f"[{name}] {key}: {e}") from e
    return out


def _defaults(settings: Settings) -> Dict[str, Any]:
    return {
        "solver": {
            "outer_tol": settings.OUTER_TOL,
            "outer_max_iter": settings.OUTER_MAX_ITER,
            "batch_size": settings.BATCH_SIZE,
            "aggregate_size": settings.AGGREGATE_SIZE,
            "residual_stride": settings.RESIDUAL_STRIDE,
            "workers": settings.WORKERS,
        },
        "output_dir": settings.OUTPUT_DIR,
        "seed": settings.SEED,
    }


def load_run_config(
    path: Optional[str] = None,
    workers: Optional[int] = None,
    seed: Optional[int] = None,
    out: Optional[str] = None,
    batch: Optional[int] = None,
    compare_single: bool = False,
    settings: Optional[Settings] = None,
) -> RunConfig:
    settings = settings or get_settings()
    data = _defaults(settings)
    solver = data["solver"]

    if path is not None:
        parser = _parse_ini(path)
        known = {"mesh", "materials", "solver", "level0", "level1", "level2", "rhs", "fault",
                 "observations", "greens", "inversion", "run"}
        unknown = set(parser.sections()) - known
        if unknown:
            raise ValidationError(f"unknown config sections: {sorted(unknown)}")

        mesh = _section(parser, "mesh")
        if "path" in mesh:
            data["mesh_path"] = mesh.pop("path")
        if mesh:
            data["mesh"] = mesh
        data["materials_path"] = _section(parser, "materials").get("path")
        solver.update(_section(parser, "solver"))
        levels = [_section(parser, f"level{i}") for i in range(3)]
        if any(levels):
            base = [lvl.model_dump() for lvl in default_levels()]
            solver["levels"] = [{**b, **lvl} for b, lvl in zip(base, levels)]
        if parser.has_section("rhs"):
            data["rhs"] = _section(parser, "rhs")
        data["fault_path"] = _section(parser, "fault").get("path")
        data["observations_path"] = _section(parser, "observations").get("path")
        greens = _section(parser, "greens")
        data["greens_path"] = greens.get("path")
        data["planted_slip"] = greens.get("planted", [])
        if parser.has_section("inversion"):
            data["inversion"] = _section(parser, "inversion")
        run = _section(parser, "run")
        for key in ("output_dir", "seed", "export_vtk", "compare_single"):
            if key in run:
                data[key] = run[key]
        if "workers" in run:
            solver["workers"] = run["workers"]

    if workers is not None:
        solver["workers"] = workers
    if batch is not None:
        solver["batch_size"] = batch
    if seed is not None:
        data["seed"] = seed
    if out is not None:
        data["output_dir"] = out
    if compare_single:
        data["compare_single"] = True

    try:
        cfg = RunConfig.model_validate(data)
    except PydanticValidationError as e:
        raise ValidationError(f"invalid run configuration: {e}") from e

    for key in ("mesh_path", "materials_path", "fault_path"):
        value = getattr(cfg, key)
        if value is not None and not os.path.exists(value):
            raise ValidationError(f"{key.replace('_', ' ')} {value} does not exist")
    logger.info(f"Run config: output_dir={cfg.output_dir} seed={cfg.seed} workers={cfg.solver.workers} "
                f"batch={cfg.solver.batch_size} method={cfg.solver.method.value}")
    return cfg
