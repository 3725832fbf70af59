"""Experiment configuration: JSON schema, validation and bundled presets."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path or '<root>'}: {message}")


_NUM = {"type": "number"}
_POS = {"type": "number", "exclusiveMinimum": 0}
_POINT = {"type": "array", "items": _NUM, "minItems": 2, "maxItems": 2}
_MATRIX = {"type": "array", "items": _POINT, "minItems": 2, "maxItems": 2}
_RADII = {"type": "array", "items": _POS, "minItems": 1}

_FIELD = {
    "type": "object",
    "required": ["type"],
    "properties": {
        "type": {"enum": ["zero", "constant", "linear", "cracktip_trace", "mixed", "harmonic_polynomial"]},
        "value": _NUM,
        "C": {"type": "number", "minimum": 0},
        "a": _NUM,
        "b": _NUM,
        "c": _NUM,
        "frame_angle": _NUM,
        "terms": {
            "type": "array",
            "items": {"type": "array", "items": _NUM, "minItems": 3, "maxItems": 3},
        },
        "center": _POINT,
    },
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["name", "crack", "domain_radius", "g"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "crack": {
            "type": "object",
            "required": ["generator"],
            "additionalProperties": False,
            "properties": {
                "generator": {"enum": ["segment", "polyline", "diameter", "spiral", "two_scale"]},
                "params": {"type": "object"},
            },
        },
        "domain_radius": _POS,
        "domain_center": _POINT,
        "coefficients": {
            "type": "object",
            "required": ["type"],
            "additionalProperties": False,
            "properties": {
                "type": {"enum": ["identity", "constant", "holder"]},
                "matrix": _MATRIX,
                "delta": {"type": "number", "minimum": 0},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                "M": _MATRIX,
                "x0": _POINT,
            },
        },
        "lambda": {"type": "number", "minimum": 0},
        "f": _FIELD,
        "g": _FIELD,
        "mesh": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "target_h": _POS,
                "tip_grading_exponent": {"type": "number", "minimum": 0, "maximum": 1},
                "min_h": _POS,
                "boundary_h": _POS,
                "levels": {"type": "integer", "minimum": 1, "maximum": 6},
            },
        },
        "schedule": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "radii": _RADII,
                "ratio": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "r_max": _POS,
                "r_min": _POS,
            },
        },
        "correction": {
            "type": "object",
            "required": ["mode"],
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["harmonic", "holder", "second_member"]},
                "C": {"oneOf": [{"type": "number", "minimum": 0}, {"const": "auto"}]},
                "alpha": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "checks": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "sif": {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["expected_C0"],
                    "properties": {
                        "expected_C0": {"type": "number", "minimum": 0},
                        "C0_rtol": _POS,
                        "C_rtol": _POS,
                        "max_tip_size": _POS,
                        "max_seconds": _POS,
                    },
                },
                "profile_constancy": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"r_min": _POS, "r_max": _POS, "tol": _POS},
                },
                "monotonicity": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"slack": {"type": "number", "minimum": 0}},
                },
                "blowup": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "radii": _RADII,
                        "slack": {"type": "number", "minimum": 0},
                        "gradient_factor": _POS,
                    },
                },
                "null_sif": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"fraction": _POS},
                },
                "gauss_green": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"radii": _RADII, "tol": _POS, "contraction": _POS},
                },
                "arc_flux": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"radii": _RADII, "tol": _POS},
                },
                "change_of_variable": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {"r": _POS, "analytic_rtol": _POS, "fem_rtol": _POS},
                },
            },
        },
        "outputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "results": {"type": "string"},
                "report": {"type": "string"},
                "profile_svg": {"type": "string"},
                "blowup_svg": {"type": "string"},
            },
        },
    },
}

DEFAULT_OUTPUTS = {
    "results": "results.csv",
    "report": "report.json",
    "profile_svg": "profile.svg",
    "blowup_svg": "blowup.svg",
}

DEFAULT_MESH = {"target_h": 0.1, "tip_grading_exponent": 0.7, "min_h": 2e-5, "levels": 3}

_VALIDATOR = jsonschema.Draft202012Validator(SCHEMA)


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated experiment description (see SCHEMA for the fields)."""

    name: str
    crack: dict
    domain_radius: float
    domain_center: tuple[float, float]
    coefficients: dict
    lam: float
    f: dict
    g: dict
    mesh: dict
    schedule: dict
    correction: dict
    checks: dict
    outputs: dict
    description: str = ""
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = validate_document(doc)
        return cls(
            name=doc["name"],
            crack={"generator": doc["crack"]["generator"], "params": dict(doc["crack"].get("params", {}))},
            domain_radius=float(doc["domain_radius"]),
            domain_center=tuple(float(v) for v in doc.get("domain_center", (0.0, 0.0))),
            coefficients=dict(doc.get("coefficients", {"type": "identity"})),
            lam=float(doc.get("lambda", 0.0)),
            f=dict(doc.get("f", {"type": "zero"})),
            g=dict(doc["g"]),
            mesh={**DEFAULT_MESH, **doc.get("mesh", {})},
            schedule=dict(doc.get("schedule", {})),
            correction=dict(doc.get("correction", {"mode": "harmonic"})),
            checks=copy.deepcopy(doc.get("checks", {})),
            outputs={**DEFAULT_OUTPUTS, **doc.get("outputs", {})},
            description=doc.get("description", ""),
            raw=copy.deepcopy(doc),
        )

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)


def validate_document(doc) -> dict:
    """Schema and semantic checks; raises ConfigError naming the first bad field."""
    if not isinstance(doc, dict):
        raise ConfigError("", "configuration must be a JSON object")
    errors = sorted(_VALIDATOR.iter_errors(doc), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        e = errors[0]
        path = _path(e.absolute_path)
        if e.validator == "required":
            missing = e.message.split("'")[1] if "'" in e.message else ""
            path = f"{path}.{missing}" if path else missing
        raise ConfigError(path, e.message)
    _semantic_checks(doc)
    return doc


def _semantic_checks(doc: dict):
    lam = float(doc.get("lambda", 0.0))
    f = doc.get("f", {"type": "zero"})
    if lam == 0 and not _is_zero_field(f):
        raise ConfigError("f", "lambda = 0 requires the zero source term")
    coef = doc.get("coefficients", {"type": "identity"})
    kind = coef["type"]
    if kind == "constant":
        if "matrix" not in coef:
            raise ConfigError("coefficients.matrix", "constant coefficients need a matrix")
        M = np.asarray(coef["matrix"], dtype=float)
        if not np.allclose(M, M.T, atol=1e-12):
            raise ConfigError("coefficients.matrix", "matrix must be symmetric")
        if np.linalg.eigvalsh(M)[0] < 0.1:
            raise ConfigError("coefficients.matrix", "smallest eigenvalue must be at least 0.1")
    elif kind == "holder":
        for key in ("delta", "alpha", "M"):
            if key not in coef:
                raise ConfigError(f"coefficients.{key}", "required for holder coefficients")
        M = np.asarray(coef["M"], dtype=float)
        if not np.allclose(M, M.T, atol=1e-12):
            raise ConfigError("coefficients.M", "M must be symmetric")
        R = float(doc["domain_radius"])
        c = np.asarray(doc.get("domain_center", (0.0, 0.0)), dtype=float)
        x0 = np.asarray(coef.get("x0", c), dtype=float)
        reach = R + float(np.linalg.norm(x0 - c))
        gamma = 1.0 - float(coef["delta"]) * float(np.linalg.norm(M, 2)) * reach ** float(coef["alpha"])
        if gamma < 0.1:
            raise ConfigError("coefficients.delta", f"coercivity {gamma:.4g} below 0.1 on the domain")
    g = doc["g"]
    for where, fld in (("g", g), ("f", f)):
        if fld["type"] == "constant" and "value" not in fld:
            raise ConfigError(f"{where}.value", "constant field needs a value")
        if fld["type"] == "harmonic_polynomial" and not fld.get("terms"):
            raise ConfigError(f"{where}.terms", "harmonic polynomial needs terms")
        if fld["type"] in ("cracktip_trace", "mixed") and where == "f":
            raise ConfigError("f.type", "cracktip fields are boundary data only")
    corr = doc.get("correction", {"mode": "harmonic"})
    if corr["mode"] == "holder" and kind != "holder":
        raise ConfigError("correction.mode", "holder correction requires holder coefficients")
    sch = doc.get("schedule", {})
    if "r_min" in sch and "r_max" in sch and sch["r_min"] >= sch["r_max"]:
        raise ConfigError("schedule.r_min", "r_min must be smaller than r_max")
    R = float(doc["domain_radius"])
    for i, r in enumerate(sch.get("radii", [])):
        if r >= R:
            raise ConfigError(f"schedule.radii[{i}]", "radius must be smaller than domain_radius")


def _is_zero_field(fld: dict) -> bool:
    t = fld["type"]
    if t == "zero":
        return True
    if t == "constant":
        return float(fld.get("value", 0.0)) == 0.0
    if t == "linear":
        return all(float(fld.get(k, 0.0)) == 0.0 for k in "abc")
    if t == "harmonic_polynomial":
        return all(a == 0 and b == 0 for _, a, b in fld.get("terms", []))
    return False


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError("", f"no such file: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return ExperimentConfig.from_dict(doc)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def _preset_dir():
    return resources.files("cracktip").joinpath("presets")


def preset_path(name: str) -> Path:
    p = Path(str(_preset_dir().joinpath(f"{name}.json")))
    if not p.is_file():
        raise ConfigError("name", f"unknown preset {name!r}; available: {', '.join(preset_names())}")
    return p


def preset_names() -> list[str]:
    return sorted(
        Path(str(p)).stem for p in _preset_dir().iterdir() if str(p).endswith(".json")
    )


def list_presets() -> list[tuple[str, str]]:
    """Preset names with their one-line descriptions."""
    out = []
    for name in preset_names():
        doc = json.loads(preset_path(name).read_text())
        out.append((name, doc.get("description", "")))
    return out


def load_preset(name: str) -> ExperimentConfig:
    return load_config(preset_path(name))


def resolve(config_or_name) -> ExperimentConfig:
    """A config path, a preset name or an ExperimentConfig."""
    if isinstance(config_or_name, ExperimentConfig):
        return config_or_name
    if isinstance(config_or_name, dict):
        return ExperimentConfig.from_dict(config_or_name)
    p = Path(config_or_name)
    if p.suffix == ".json" or p.exists():
        return load_config(p)
    return load_preset(str(config_or_name))

