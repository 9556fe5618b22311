"""Manifold configuration files: schema, loading and the shipped catalog."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

import jsonschema

from . import frobman, poisson, virasoro
from .symcore import Expr, ParseError, parse


class ConfigError(ValueError):
    pass


_EXPR = {"type": "string", "minLength": 1}
_RATIONAL = {"oneOf": [{"type": "integer"}, {"type": "string", "pattern": r"^-?\d+(/\d+)?$"}]}
_RECORD5 = {
    "type": "array",
    "prefixItems": [{"type": "integer", "minimum": 0}] + [{"type": "integer", "minimum": 0}] + [{"type": "integer", "minimum": 1}] * 2 + [_EXPR],
    "minItems": 5,
    "maxItems": 5,
}
_COEFF_RECORD = {
    "type": "array",
    "prefixItems": [{"type": "integer", "minimum": -1}, {"type": "integer", "minimum": 1}, {"type": "integer", "minimum": 0},
                    {"type": "integer", "minimum": 1}, {"type": "integer", "minimum": 0}, _RATIONAL],
    "minItems": 6,
    "maxItems": 6,
}
VIRASORO_SCHEMA = {
    "type": "object",
    "required": ["mmax", "pmax", "a", "b", "c"],
    "properties": {
        "mmax": {"type": "integer", "minimum": -1},
        "pmax": {"type": "integer", "minimum": 0},
        "trace": _RATIONAL,
        "a": {"type": "array", "items": _COEFF_RECORD},
        "b": {"type": "array", "items": _COEFF_RECORD},
        "c": {"type": "array", "items": _COEFF_RECORD},
    },
    "additionalProperties": False,
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["name", "n", "potential", "euler", "charge", "mu"],
    "properties": {
        "name": {"type": "string"},
        "n": {"type": "integer", "minimum": 1},
        "potential": _EXPR,
        "euler": {"type": "array", "items": _EXPR},
        "charge": _RATIONAL,
        "mu": {"type": "array", "items": _RATIONAL},
        "R": {"type": "array", "items": {"type": "array", "items": _RATIONAL}},
        "canonical": {
            "type": "object",
            "properties": {
                "u_of_v": {"type": "array", "items": _EXPR},
                "v_of_u": {"type": "array", "items": _EXPR},
            },
            "additionalProperties": False,
        },
        "pencil": {
            "type": "object",
            "properties": {
                "first": {"type": "array", "items": _RECORD5},
                "second": {"type": "array", "items": _RECORD5},
            },
            "additionalProperties": False,
        },
        "F1": _EXPR,
        "fixtures": {
            "type": "object",
            "properties": {
                "virasoro": {"oneOf": [{"type": "string"}, VIRASORO_SCHEMA]},
                "B": {
                    "type": "array",
                    "items": {
                        "type": "array",
                        "prefixItems": [{"type": "integer", "minimum": 1}, {"type": "integer", "minimum": 1}, _EXPR],
                        "minItems": 3,
                        "maxItems": 3,
                    },
                },
            },
            "additionalProperties": False,
        },
        "truncation": {
            "type": "object",
            "properties": {
                "pmax": {"type": "integer", "minimum": 0},
                "mmax": {"type": "integer", "minimum": -1},
                "gmax": {"type": "integer", "minimum": 0},
                "window": {"type": "integer", "minimum": 0},
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}


def _expr(text: str, where: str) -> Expr:
    try:
        return parse(text)
    except ParseError as exc:
        raise ConfigError(f"{where}: {exc}") from None


@dataclass
class ManifoldConfig:
    data: dict
    base_dir: Path | None = None

    @property
    def name(self) -> str:
        return self.data["name"]

    @property
    def n(self) -> int:
        return self.data["n"]

    def truncation(self, key: str, default: int) -> int:
        return int(self.data.get("truncation", {}).get(key, default))

    def manifold(self) -> frobman.FrobeniusManifold:
        d = self.data
        try:
            return frobman.FrobeniusManifold(
                d["n"],
                _expr(d["potential"], "potential"),
                [_expr(e, f"euler[{i}]") for i, e in enumerate(d["euler"])],
                str(d["charge"]),
                [str(m) for m in d["mu"]],
                [[str(x) for x in row] for row in d["R"]] if "R" in d else None,
                name=d["name"],
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    def chart(self, M: frobman.FrobeniusManifold | None = None) -> frobman.CanonicalChart:
        M = M or self.manifold()
        can = self.data.get("canonical", {})
        u = [_expr(e, "canonical.u_of_v") for e in can["u_of_v"]] if "u_of_v" in can else None
        v = [_expr(e, "canonical.v_of_u") for e in can["v_of_u"]] if "v_of_u" in can else None
        return frobman.canonical_chart(M, u, v)

    def pencil(self, M: frobman.FrobeniusManifold | None = None) -> poisson.PoissonPencil:
        M = M or self.manifold()
        base = poisson.genus0_pencil(M)
        given = self.data.get("pencil", {})

        def recs(key):
            return [(g, k, a, b, _expr(e, f"pencil.{key}")) for g, k, a, b, e in given.get(key, [])]

        return poisson.PoissonPencil(poisson.deform(base.first, recs("first")), poisson.deform(base.second, recs("second")))

    def F1(self) -> Expr | None:
        return _expr(self.data["F1"], "F1") if "F1" in self.data else None

    def has_virasoro(self) -> bool:
        return "virasoro" in self.data.get("fixtures", {})

    def virasoro_coeffs(self) -> virasoro.VirasoroCoeffs:
        fx = self.data.get("fixtures", {})
        if "virasoro" not in fx:
            raise virasoro.MissingFixture(f"{self.name}: no Virasoro coefficient fixture")
        rec = fx["virasoro"]
        if isinstance(rec, str):
            rec = _load_json(_resolve(rec, self.base_dir))
            try:
                jsonschema.validate(rec, VIRASORO_SCHEMA)
            except jsonschema.ValidationError as exc:
                raise ConfigError(f"virasoro fixture: {exc.message}") from None
        return virasoro.coeffs_from_records(self.n, rec, [str(m) for m in self.data["mu"]])

    def b_fixture(self) -> dict:
        recs = self.data.get("fixtures", {}).get("B", [])
        return {(i, r): _expr(e, f"fixtures.B[{i},{r}]") for i, r, e in recs}


def _resolve(ref: str, base_dir: Path | None) -> Path:
    if ref.startswith("catalog:"):
        return Path(str(resources.files("frobvir") / "catalog" / ref.split(":", 1)[1]))
    p = Path(ref)
    if not p.is_absolute() and base_dir is not None:
        p = base_dir / p
    return p


def _load_json(path: Path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def from_dict(data: dict, base_dir: Path | None = None) -> ManifoldConfig:
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"schema: {loc}: {exc.message}") from None
    n = data["n"]
    if len(data["euler"]) != n or len(data["mu"]) != n:
        raise ConfigError("euler and mu must have n entries")
    if "R" in data and (len(data["R"]) != n or any(len(r) != n for r in data["R"])):
        raise ConfigError("R must be n x n")
    cfg = ManifoldConfig(data, base_dir)
    # every expression must parse
    cfg.manifold()
    cfg.F1()
    cfg.b_fixture()
    for key in ("u_of_v", "v_of_u"):
        for e in data.get("canonical", {}).get(key, []):
            _expr(e, f"canonical.{key}")
    for key in ("first", "second"):
        for rec in data.get("pencil", {}).get(key, []):
            _expr(rec[4], f"pencil.{key}")
    return cfg


def load(path: str | Path) -> ManifoldConfig:
    p = _resolve(str(path), None)
    return from_dict(_load_json(p), p.parent)


def catalog_names() -> list[str]:
    root = resources.files("frobvir") / "catalog"
    return sorted(f.name[:-5] for f in root.iterdir() if f.name.endswith(".json") and not f.name.startswith("fixture_"))


def catalog(name: str) -> ManifoldConfig:
    return load(f"catalog:{name}.json")
