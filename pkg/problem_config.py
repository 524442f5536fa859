import json
import os
from typing import Any

from errors import ConfigError, ExpressionSyntaxError
from expression import Expression, VectorExpression, parse_expression
from fem_assembly import BoundaryCondition, ProblemSpec
from mesh_io import read_mesh
from problems import PROBLEMS, BuiltinProblem, get_problem

REQUIRED_FIELDS = ("dim", "mu", "mu_star", "regions", "bc", "mesh")


def extract_field(config: dict, key: str, field_type: str, default: Any = None) -> Any:
    """Read one configuration field and check its type."""
    if not isinstance(config, dict):
        raise ConfigError(f"problem config: expected an object holding '{key}', got {config!r}")
    if key not in config:
        if default is not None:
            return default
        raise ConfigError(f"problem config: missing field '{key}'")
    value = config[key]
    if field_type == "number":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"problem config: '{key}' must be a number, got {value!r}")
        return float(value)
    elif field_type == "integer":
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"problem config: '{key}' must be an integer, got {value!r}")
        return value
    elif field_type == "list":
        if not isinstance(value, list):
            raise ConfigError(f"problem config: '{key}' must be a list")
        return value
    elif field_type == "string":
        if not isinstance(value, str):
            raise ConfigError(f"problem config: '{key}' must be a string")
        return value
    raise ValueError(f"unknown field type {field_type}")


def parse_scalar(value, where: str) -> Expression | float:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, str):
        try:
            return parse_expression(value)
        except ExpressionSyntaxError as e:
            raise ConfigError(f"problem config: {where}: {e}") from e
    raise ConfigError(f"problem config: {where} must be a number or an expression string")


def parse_vector(values, dim: int, where: str) -> VectorExpression:
    if not isinstance(values, list) or len(values) != dim:
        raise ConfigError(f"problem config: {where} needs {dim} components")
    components = []
    for value in values:
        scalar = parse_scalar(value, where)
        components.append(scalar if isinstance(scalar, Expression) else parse_expression(repr(scalar)))
    return VectorExpression(components)


def parse_k_inverse(value, region_id):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if isinstance(value, list) and all(isinstance(row, list) for row in value):
        return value
    raise ConfigError(f"problem config: region {region_id} k_inverse must be a scalar or a matrix")


def problem_from_config(config: dict, base_dir: str = ".", target_h: float | None = None) -> BuiltinProblem:
    missing = [key for key in REQUIRED_FIELDS if key not in config]
    if missing:
        raise ConfigError(f"problem config: missing fields {', '.join(missing)}")
    dim = extract_field(config, "dim", "integer")
    if dim not in (2, 3):
        raise ConfigError(f"problem config: dim must be 2 or 3, got {dim}")

    regions = {}
    for entry in extract_field(config, "regions", "list"):
        region_id = extract_field(entry, "id", "integer")
        regions[region_id] = parse_k_inverse(entry.get("k_inverse"), region_id)

    bc = {}
    for entry in extract_field(config, "bc", "list"):
        tag = extract_field(entry, "tag", "integer")
        kind = extract_field(entry, "kind", "string")
        value = parse_vector(entry.get("value", [0] * dim), dim, f"bc tag {tag} value")
        bc[tag] = BoundaryCondition(kind, value)

    body_force = parse_vector(config.get("body_force", [0] * dim), dim, "body_force")
    mass_source = parse_scalar(config.get("mass_source", 0), "mass_source")
    spec = ProblemSpec(
        dim=dim,
        mu=extract_field(config, "mu", "number"),
        mu_star=extract_field(config, "mu_star", "number"),
        regions=regions,
        bc=bc,
        body_force=body_force,
        mass_source=mass_source,
    )

    mesh_ref = extract_field(config, "mesh", "string")
    if mesh_ref in PROBLEMS:
        mesh = get_problem(mesh_ref, target_h).mesh
    else:
        mesh_path = mesh_ref if os.path.isabs(mesh_ref) else os.path.join(base_dir, mesh_ref)
        if not os.path.exists(mesh_path):
            raise FileNotFoundError(f"Mesh file not found: {mesh_path}")
        mesh = read_mesh(mesh_path)
    spec.check_mesh(mesh)

    name = config.get("name") or os.path.splitext(os.path.basename(mesh_ref))[0]
    return BuiltinProblem(name=name, mesh=mesh, spec=spec, description=config.get("description", ""))


def load_problem_config(path: str, target_h: float | None = None) -> BuiltinProblem:
    """Read a JSON problem description (see README for the schema)."""
    if not os.path.exists(path):
        raise FileNotFoundError(f"Problem config not found: {path}")
    with open(path) as f:
        try:
            config = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return problem_from_config(config, os.path.dirname(os.path.abspath(path)), target_h)
