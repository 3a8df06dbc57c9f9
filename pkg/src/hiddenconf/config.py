"""Scenario configuration files (TOML) with a strict JSON schema.

Every table rejects unknown keys, so a typo such as ``t_finl`` stops the run
with an error naming the offending key instead of silently using a default.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any

import jsonschema

from .errors import ConfigError, FieldError, GridError, ScenarioError
from .measurement import (CouplingSpec, MeasurementScenario, PacketSpec, PointerSpec, default_scenario,
                          repeated_scenario)
from .scenarios import Packet, PacketScenario, free_scenario, harmonic_scenario

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

PACKET_KINDS = ("free_packet", "harmonic", "custom")
MEASUREMENT_KINDS = ("two_packet_measurement", "repeated_measurement")
FORMATS = ("json", "csv", "hcf")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_nonneg = {"type": "number", "minimum": 0}
_complex = {"oneOf": [_num, {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}]}
_vector = {"oneOf": [_num, {"type": "array", "items": _num, "minItems": 1, "maxItems": 3}]}
_pos_vector = {"oneOf": [_pos, {"type": "array", "items": _pos, "minItems": 1, "maxItems": 3}]}


def _table(properties: dict, required: tuple = ()) -> dict:
    out = {"type": "object", "additionalProperties": False, "properties": properties}
    if required:
        out["required"] = list(required)
    return out


_packet1d = _table({"center": _num, "sigma": _pos, "k": _num}, ("center",))
_pointer = _table({"sigma": _pos, "mass": _pos, "center": _num})
_coupling = _table({"t_on": _nonneg, "t_off": _pos, "shift": _pos, "width": _pos, "boundary": _num},
                   ("t_on", "t_off", "shift"))

SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "hiddenconf scenario configuration",
    **_table({
        "kind": {"enum": list(PACKET_KINDS + MEASUREMENT_KINDS)},
        "name": {"type": "string", "pattern": "^[A-Za-z0-9_.-]+$"},
        "grid": _table({
            "extents": {"type": "array", "minItems": 1, "maxItems": 3,
                        "items": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}},
            "points": {"type": "array", "minItems": 1, "maxItems": 3, "items": {"type": "integer", "minimum": 8}},
        }, ("extents", "points")),
        "physics": _table({
            "hbar": _pos,
            "masses": {"oneOf": [_pos, {"type": "array", "items": _pos, "minItems": 1, "maxItems": 3}]},
            "alpha": {"oneOf": [_nonneg, {"type": "array", "items": _nonneg, "minItems": 1}]},
        }),
        "potential": _table({"kind": {"enum": ["free", "harmonic"]}, "omega": _pos}),
        "packets": {"type": "array", "minItems": 1,
                    "items": _table({"center": _vector, "sigma": _pos_vector, "k": _vector,
                                     "amplitude": _complex}, ("center",))},
        "measurement": _table({
            "c1": _complex, "c2": _complex, "particle_mass": _pos,
            "packet1": _packet1d, "packet2": _packet1d,
            "pointer": _pointer, "coupling": _coupling,
            "second_pointer": _pointer, "second_coupling": _coupling,
            "eps_branch": _pos, "monitor_every": {"type": "integer", "minimum": 1},
        }),
        "run": _table({
            "dt": _pos, "t_final": _pos,
            "snapshot_times": {"type": "array", "items": _nonneg, "minItems": 1},
            "n": {"type": "integer", "minimum": 1},
            "seed": {"type": "integer", "minimum": 0},
            "substeps": {"type": "integer", "minimum": 1},
            "bins": {"oneOf": [{"type": "integer", "minimum": 1},
                               {"type": "array", "items": {"type": "integer", "minimum": 1},
                                "minItems": 1, "maxItems": 3}]},
        }),
        "output": _table({
            "directory": {"type": "string", "minLength": 1},
            "formats": {"type": "array", "items": {"enum": list(FORMATS)}, "uniqueItems": True},
            "trajectory_members": {"type": "integer", "minimum": 0},
        }),
    }, ("kind",)),
}


@dataclass(frozen=True)
class ScenarioConfig:
    kind: str
    name: str
    scenario: PacketScenario | MeasurementScenario
    alphas: tuple[float, ...]
    n: int
    seed: int
    substeps: int
    bins: tuple[int, ...] | None
    directory: str
    formats: tuple[str, ...]
    trajectory_members: int
    raw: dict
    source: Path | None = None

    @property
    def is_measurement(self) -> bool:
        return self.kind in MEASUREMENT_KINDS


def _tuple(v) -> tuple:
    return tuple(v) if isinstance(v, list) else (v,)


def _complex_of(v) -> complex:
    return complex(v[0], v[1]) if isinstance(v, list) else complex(v)


def validate_document(doc: dict) -> None:
    """Check ``doc`` against :data:`SCHEMA`; raise :class:`ConfigError` naming the problem."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: (len(e.path), list(map(str, e.path))))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        where = ".".join(str(p) for p in err.absolute_path) or "<top level>"
        raise ConfigError(f"{where}: {err.message}")


def parse_config(text: str, source: str = "<string>") -> ScenarioConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    validate_document(doc)
    try:
        return _build(doc)
    except (ScenarioError, GridError, FieldError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def bundled_configs() -> dict[str, Path]:
    """Configurations shipped with the package, keyed by file name."""
    folder = Path(__file__).parent / "configs"
    return {p.name: p for p in sorted(folder.glob("*.toml"))}


def resolve_config_path(path: str | Path) -> Path:
    """``path`` itself if it exists, else a bundled configuration of that name."""
    path = Path(path)
    if not path.exists():
        bundled = bundled_configs()
        name = path.name if path.suffix else path.name + ".toml"
        if name in bundled and path.parent == Path("."):
            return bundled[name]
    return path


def load_config(path: str | Path) -> ScenarioConfig:
    path = resolve_config_path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return replace(parse_config(text, str(path)), source=path)


def _build(doc: dict) -> ScenarioConfig:
    kind = doc["kind"]
    run = doc.get("run", {})
    physics = doc.get("physics", {})
    output = doc.get("output", {})
    name = doc.get("name", kind)
    if kind in PACKET_KINDS:
        if "measurement" in doc:
            raise ConfigError(f"[measurement] does not apply to kind {kind!r}")
        scenario = _packet_scenario(kind, doc, physics, run)
    else:
        for key in ("packets", "potential"):
            if key in doc:
                raise ConfigError(f"[{key}] does not apply to kind {kind!r}")
        if "masses" in physics:
            raise ConfigError("physics.masses does not apply to measurement kinds; set measurement masses")
        scenario = _measurement_scenario(kind, doc, physics, run)
    scenario.validate()
    alphas = tuple(float(a) for a in _tuple(physics.get("alpha", 0.0)))
    bins = run.get("bins")
    if bins is not None:
        bins = _tuple(bins)
        if len(bins) == 1:
            bins = bins * len(scenario.points)
        if len(bins) != len(scenario.points):
            raise ConfigError(f"run.bins: need {len(scenario.points)} entries")
    if isinstance(scenario, PacketScenario) and bins is not None:
        scenario = replace(scenario, bins=tuple(bins))
    default_n = 2000 if kind == "repeated_measurement" else 10_000
    return ScenarioConfig(
        kind=kind, name=name, scenario=scenario, alphas=alphas,
        n=int(run.get("n", default_n)), seed=int(run.get("seed", 0)), substeps=int(run.get("substeps", 1)),
        bins=tuple(bins) if bins is not None else None,
        directory=output.get("directory", name),
        formats=tuple(output.get("formats", FORMATS)),
        trajectory_members=int(output.get("trajectory_members", 1000)),
        raw=doc,
    )


def _packet_scenario(kind: str, doc: dict, physics: dict, run: dict) -> PacketScenario:
    base = {"free_packet": free_scenario(), "harmonic": harmonic_scenario(),
            "custom": free_scenario(kind="custom")}[kind]
    changes: dict[str, Any] = {}
    if kind == "custom":
        for key in ("grid", "packets"):
            if key not in doc:
                raise ConfigError(f"kind 'custom' requires [{key}]")
    if "grid" in doc:
        changes["extents"] = tuple(tuple(float(v) for v in e) for e in doc["grid"]["extents"])
        changes["points"] = tuple(int(n) for n in doc["grid"]["points"])
        if len(changes["extents"]) != len(changes["points"]):
            raise ConfigError("grid.extents and grid.points have different lengths")
    if "packets" in doc:
        changes["packets"] = tuple(
            Packet(tuple(float(v) for v in _tuple(p["center"])),
                   tuple(float(v) for v in _tuple(p.get("sigma", 1.0))),
                   tuple(float(v) for v in _tuple(p.get("k", 0.0))),
                   _complex_of(p.get("amplitude", 1.0)))
            for p in doc["packets"])
    pot = doc.get("potential", {})
    if "kind" in pot:
        changes["potential"] = pot["kind"]
    if "omega" in pot:
        changes["omega"] = float(pot["omega"])
    if kind == "free_packet" and changes.get("potential", "free") != "free":
        raise ConfigError("kind 'free_packet' needs potential.kind = 'free'")
    if kind == "harmonic" and changes.get("potential", "harmonic") != "harmonic":
        raise ConfigError("kind 'harmonic' needs potential.kind = 'harmonic'")
    if "hbar" in physics:
        changes["hbar"] = float(physics["hbar"])
    if "masses" in physics:
        changes["masses"] = tuple(float(m) for m in _tuple(physics["masses"]))
    for key in ("dt", "t_final"):
        if key in run:
            changes[key] = float(run[key])
    if "snapshot_times" in run:
        changes["snapshot_times"] = tuple(float(t) for t in run["snapshot_times"])
    scenario = replace(base, **changes)
    if "grid" in doc and "bins" not in run:
        scenario = replace(scenario, bins=tuple(min(64, n) for n in scenario.points))
    return scenario


def _measurement_scenario(kind: str, doc: dict, physics: dict, run: dict) -> MeasurementScenario:
    base = default_scenario() if kind == "two_packet_measurement" else repeated_scenario()
    m = doc.get("measurement", {})
    changes: dict[str, Any] = {}
    for key in ("c1", "c2"):
        if key in m:
            changes[key] = _complex_of(m[key])
    for key in ("packet1", "packet2"):
        if key in m:
            changes[key] = PacketSpec(float(m[key]["center"]), float(m[key].get("sigma", 1.0)),
                                      float(m[key].get("k", 0.0)))
    for key in ("pointer", "second_pointer"):
        if key in m:
            ref = getattr(base, key) or PointerSpec()
            changes[key] = replace(ref, **{k: float(v) for k, v in m[key].items()})
    for key in ("coupling", "second_coupling"):
        if key in m:
            changes[key] = CouplingSpec(**{k: float(v) for k, v in m[key].items()})
    if "particle_mass" in m:
        changes["particle_mass"] = float(m["particle_mass"])
    if "eps_branch" in m:
        changes["eps_branch"] = float(m["eps_branch"])
    if "monitor_every" in m:
        changes["monitor_every"] = int(m["monitor_every"])
    if "grid" in doc:
        changes["extents"] = tuple(tuple(float(v) for v in e) for e in doc["grid"]["extents"])
        changes["points"] = tuple(int(n) for n in doc["grid"]["points"])
    if "hbar" in physics:
        changes["hbar"] = float(physics["hbar"])
    for key in ("dt", "t_final"):
        if key in run:
            changes[key] = float(run[key])
    if "snapshot_times" in run:
        changes["record_times"] = tuple(float(t) for t in run["snapshot_times"])
    return replace(base, **changes)
