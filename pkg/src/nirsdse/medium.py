"""Layered planar scene: tissue slabs, optical property tables, SAL plane, detectors.

Coordinates: z grows downward into the tissue, the source sits at the origin
on the surface and detector centres lie on the +x axis. Lengths are in mm,
coefficients in 1/mm, wavelengths in nm.
"""
from __future__ import annotations

import hashlib
import math
from bisect import bisect_right
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .configtext import ConfigError, ConfigSyntaxError, Section, parse_range, parse_sections

__all__ = [
    "DetectorSpec",
    "Layer",
    "MissingWavelengthError",
    "OpticalProperties",
    "SceneConfig",
    "SceneValidationError",
    "SuperAbsorbentLayer",
    "DEFAULT_WAVELENGTHS",
    "compile_scene",
    "dump_scene",
    "layer_at_depth",
    "load_scene",
    "load_scene_file",
    "properties_for",
    "scene_hash",
]

DEFAULT_WAVELENGTHS = (650.0, 700.0, 750.0, 800.0, 850.0, 900.0, 950.0)
SEMI_INFINITE = math.inf

# Finite SAL coefficients must dwarf every tissue absorption coefficient.
FINITE_SAL_MARGIN = 1e3


class SceneValidationError(ConfigError):
    """A scene parsed fine but violates a physical or geometric invariant."""


class MissingWavelengthError(LookupError):
    def __init__(self, layer: str, wavelength: float):
        self.layer = layer
        self.wavelength = wavelength
        super().__init__(f"layer '{layer}' has no optical properties at {wavelength:g} nm")


@dataclass(frozen=True)
class OpticalProperties:
    mu_a: float
    mu_s: float
    g: float
    n: float

    def validate(self, where: str = "") -> None:
        what = f" ({where})" if where else ""
        if not (self.mu_a >= 0 and self.mu_s >= 0):
            raise SceneValidationError(f"mu_a and mu_s must be non-negative{what}")
        if not self.mu_a + self.mu_s > 0:
            raise SceneValidationError(f"mu_a + mu_s must be positive{what}")
        if not -1.0 <= self.g <= 1.0:
            raise SceneValidationError(f"anisotropy g must lie in [-1, 1]{what}")
        if not self.n >= 1.0:
            raise SceneValidationError(f"refractive index must be >= 1{what}")

    @property
    def mu_t(self) -> float:
        return self.mu_a + self.mu_s


@dataclass(frozen=True)
class Layer:
    name: str
    thickness: float  # math.inf marks the semi-infinite bottom layer
    properties: dict = field(default_factory=dict)  # wavelength nm -> OpticalProperties

    @property
    def semi_infinite(self) -> bool:
        return math.isinf(self.thickness)


@dataclass(frozen=True)
class SuperAbsorbentLayer:
    depth: float
    mode: str = "perfect"  # "perfect" | "finite"
    mu_a: float | None = None
    thickness: float = 1.0  # slab thickness used by finite mode only


@dataclass(frozen=True)
class DetectorSpec:
    distances: tuple = tuple(10.0 + 5.0 * i for i in range(16))
    radius: float = 1.41
    geometry: str = "disc"  # "disc" | "annulus"

    def validate(self) -> None:
        if not self.distances:
            raise SceneValidationError("at least one detector distance is required")
        if self.radius <= 0:
            raise SceneValidationError("detector radius must be positive")
        if self.geometry not in ("disc", "annulus"):
            raise SceneValidationError(f"unknown detector geometry {self.geometry!r}")
        for a, b in zip(self.distances, self.distances[1:]):
            if not b > a:
                raise SceneValidationError("detector distances must be strictly increasing")
            if not b - a > 2 * self.radius:
                raise SceneValidationError(
                    f"overlapping detectors: centres {a:g} and {b:g} mm are closer than 2 x radius {self.radius:g} mm")
        if self.geometry == "annulus" and self.distances[0] <= self.radius:
            raise SceneValidationError("annulus detectors need distance > radius")


@dataclass(frozen=True)
class SceneConfig:
    layers: tuple
    detectors: DetectorSpec = field(default_factory=DetectorSpec)
    sal: SuperAbsorbentLayer | None = None
    ambient_n: float = 1.0

    @property
    def wavelengths(self) -> tuple:
        return tuple(sorted(self.layers[0].properties)) if self.layers else ()

    @property
    def boundaries(self) -> list[float]:
        """Depths of the layer tops, followed by the bottom of the stack."""
        z = [0.0]
        for layer in self.layers:
            z.append(z[-1] + layer.thickness)
        return z

    @property
    def total_depth(self) -> float:
        return self.boundaries[-1]

    def with_sal(self, sal: SuperAbsorbentLayer | None) -> "SceneConfig":
        scene = replace(self, sal=sal)
        scene.validate()
        return scene

    def validate(self) -> None:
        if not self.layers:
            raise SceneValidationError("scene needs at least one [layer]")
        if not self.ambient_n >= 1.0:
            raise SceneValidationError("ambient_n must be >= 1")
        names = set()
        grid = set(self.layers[0].properties)
        for i, layer in enumerate(self.layers):
            if layer.name in names:
                raise SceneValidationError(f"duplicate layer name '{layer.name}'")
            names.add(layer.name)
            if layer.semi_infinite and i != len(self.layers) - 1:
                raise SceneValidationError(f"only the bottom layer may be semi-infinite ('{layer.name}')")
            if not layer.thickness > 0:
                raise SceneValidationError(f"layer '{layer.name}' needs a positive thickness")
            if not layer.properties:
                raise SceneValidationError(f"layer '{layer.name}' has no props_<nm> rows")
            missing = grid.symmetric_difference(layer.properties)
            if missing:
                raise SceneValidationError(
                    f"missing wavelength row: layers disagree on {', '.join(f'{w:g}' for w in sorted(missing))} nm "
                    f"(layer '{layer.name}')")
            for wl, props in layer.properties.items():
                if not wl > 0:
                    raise SceneValidationError(f"wavelength must be positive in layer '{layer.name}'")
                props.validate(f"layer '{layer.name}', {wl:g} nm")
        self.detectors.validate()
        if self.sal is not None:
            self._validate_sal()

    def _validate_sal(self) -> None:
        sal = self.sal
        if not sal.depth > 0:
            raise SceneValidationError("SAL depth must be positive")
        if sal.mode not in ("perfect", "finite"):
            raise SceneValidationError(f"unknown SAL mode {sal.mode!r}")
        if not self.layers[-1].semi_infinite and not sal.depth < self.total_depth:
            raise SceneValidationError(
                f"SAL depth {sal.depth:g} mm must lie inside the {self.total_depth:g} mm layer stack")
        if sal.mode == "finite":
            max_mu_a = max(p.mu_a for layer in self.layers for p in layer.properties.values())
            if sal.mu_a is None or not sal.mu_a > FINITE_SAL_MARGIN * max_mu_a:
                raise SceneValidationError(
                    f"finite SAL mu_a must exceed {FINITE_SAL_MARGIN:g} x the largest tissue mu_a ({max_mu_a:g} 1/mm)")
            if not sal.thickness > 0:
                raise SceneValidationError("finite SAL thickness must be positive")


def layer_at_depth(scene: SceneConfig, z: float) -> int:
    """Index of the layer whose half-open interval [top, bottom) holds ``z``."""
    tops = scene.boundaries[:-1]
    return min(max(bisect_right(tops, z) - 1, 0), len(scene.layers) - 1)


def properties_for(scene: SceneConfig, layer_index: int, wavelength: float) -> OpticalProperties:
    layer = scene.layers[layer_index]
    try:
        return layer.properties[float(wavelength)]
    except KeyError:
        raise MissingWavelengthError(layer.name, float(wavelength)) from None


# --- text format -----------------------------------------------------------

def _read_props(section: Section, key: str) -> OpticalProperties:
    values = section.floats(key)
    if len(values) != 4:
        raise ConfigSyntaxError("props rows need 'mu_a, mu_s, g, n'", section.line_of(key), key)
    props = OpticalProperties(*values)
    try:
        props.validate(key)
    except SceneValidationError as exc:
        raise SceneValidationError(f"line {section.line_of(key)}: {exc}") from None
    return props


def _read_layer(section: Section) -> Layer:
    for key, (_, line) in section.entries.items():
        if key not in ("name", "thickness_mm") and not key.startswith("props_"):
            raise ConfigSyntaxError("unknown field in [layer]", line, key)
    name = section.raw("name")
    if section.raw("thickness_mm") == "semi_infinite":
        thickness = SEMI_INFINITE
    else:
        thickness = section.float("thickness_mm")
    props = {}
    for key in section.entries:
        if not key.startswith("props_"):
            continue
        try:
            wl = float(key[len("props_"):])
        except ValueError:
            raise ConfigSyntaxError("props key must be props_<wavelength nm>", section.line_of(key), key) from None
        props[wl] = _read_props(section, key)
    return Layer(name, thickness, props)


def _read_detectors(section: Section) -> DetectorSpec:
    section.unknown_keys(("distances_mm", "range", "radius_mm", "geometry"))
    if section.has("distances_mm") and section.has("range"):
        raise ConfigSyntaxError("give either distances_mm or range, not both", section.line, "range")
    if section.has("range"):
        distances = parse_range(section, "range")
    elif section.has("distances_mm"):
        distances = section.floats("distances_mm")
    else:
        distances = list(DetectorSpec().distances)
    return DetectorSpec(
        distances=tuple(distances),
        radius=section.float("radius_mm", DetectorSpec.radius),
        geometry=section.choice("geometry", ("disc", "annulus"), "disc"),
    )


def _read_sal(section: Section) -> SuperAbsorbentLayer:
    section.unknown_keys(("depth_mm", "mode", "mu_a", "thickness_mm"))
    mode = section.choice("mode", ("perfect", "finite"), "perfect")
    return SuperAbsorbentLayer(
        depth=section.float("depth_mm"),
        mode=mode,
        mu_a=section.float("mu_a") if section.has("mu_a") else None,
        thickness=section.float("thickness_mm", 1.0),
    )


def load_scene(source: str) -> SceneConfig:
    """Parse and validate scene text; raises ConfigSyntaxError or SceneValidationError."""
    ambient_n = 1.0
    layers, sal, detectors = [], None, DetectorSpec()
    seen = set()
    for section in parse_sections(source):
        if section.name != "layer":
            if section.name in seen:
                raise ConfigSyntaxError(f"section [{section.name}] may appear only once", section.line)
            seen.add(section.name)
        if section.name == "scene":
            section.unknown_keys(("ambient_n",))
            ambient_n = section.float("ambient_n", 1.0)
        elif section.name == "layer":
            layers.append(_read_layer(section))
        elif section.name == "sal":
            sal = _read_sal(section)
        elif section.name == "detectors":
            detectors = _read_detectors(section)
        else:
            raise ConfigSyntaxError(f"unknown section [{section.name}]", section.line)
    scene = SceneConfig(tuple(layers), detectors, sal, ambient_n)
    scene.validate()
    return scene


def load_scene_file(path) -> SceneConfig:
    return load_scene(Path(path).read_text(encoding="utf-8"))


def _fmt(x: float) -> str:
    return repr(float(x))


def _fmt_wavelength(wl: float) -> str:
    text = repr(float(wl))
    return text[:-2] if text.endswith(".0") else text


def dump_scene(scene: SceneConfig) -> str:
    """Serialise to the text format; ``load_scene(dump_scene(s)) == s``."""
    out = ["[scene]", f"ambient_n = {_fmt(scene.ambient_n)}", ""]
    for layer in scene.layers:
        out.append("[layer]")
        out.append(f"name = {layer.name}")
        out.append("thickness_mm = " + ("semi_infinite" if layer.semi_infinite else _fmt(layer.thickness)))
        for wl in sorted(layer.properties):
            p = layer.properties[wl]
            out.append(f"props_{_fmt_wavelength(wl)} = {_fmt(p.mu_a)}, {_fmt(p.mu_s)}, {_fmt(p.g)}, {_fmt(p.n)}")
        out.append("")
    if scene.sal is not None:
        out += ["[sal]", f"depth_mm = {_fmt(scene.sal.depth)}", f"mode = {scene.sal.mode}"]
        if scene.sal.mu_a is not None:
            out.append(f"mu_a = {_fmt(scene.sal.mu_a)}")
        out += [f"thickness_mm = {_fmt(scene.sal.thickness)}", ""]
    d = scene.detectors
    out += ["[detectors]",
            "distances_mm = " + ", ".join(_fmt(x) for x in d.distances),
            f"radius_mm = {_fmt(d.radius)}",
            f"geometry = {d.geometry}", ""]
    return "\n".join(out)


def scene_hash(scene: SceneConfig) -> str:
    """Provenance hash of the scene with its SAL removed."""
    text = dump_scene(replace(scene, sal=None))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


# --- kernel arrays ---------------------------------------------------------

# columns of the region table handed to the transport kernel
Z_TOP, Z_BOT, MU_A, MU_S, G, N, IS_SAL = range(7)


@dataclass(frozen=True)
class CompiledScene:
    """Flat arrays for one wavelength, ready for the transport kernel."""

    regions: np.ndarray  # (R, 7) float64
    n_above: float
    n_below: float
    sal_z: float  # perfect-absorber plane, inf when inactive
    detector_distances: np.ndarray
    detector_radius: float
    annulus: bool


def compile_scene(scene: SceneConfig, wavelength: float, use_sal: bool = True) -> CompiledScene:
    """Resolve one wavelength into kernel arrays.

    With ``use_sal`` False (tag mode, baselines) the SAL is ignored. A finite
    SAL is inserted as an extra non-scattering slab that inherits the host
    refractive index, so it never reflects.
    """
    rows = []
    z = 0.0
    for i, layer in enumerate(scene.layers):
        p = properties_for(scene, i, wavelength)
        rows.append([z, z + layer.thickness, p.mu_a, p.mu_s, p.g, p.n, 0.0])
        z += layer.thickness
    sal_z = math.inf
    sal = scene.sal if use_sal else None
    if sal is not None and sal.mode == "perfect":
        sal_z = float(sal.depth)
    elif sal is not None:
        rows = _insert_slab(rows, sal.depth, sal.depth + sal.thickness, sal.mu_a)
    return CompiledScene(
        regions=np.array(rows, dtype=np.float64),
        n_above=float(scene.ambient_n),
        n_below=float(scene.ambient_n),
        sal_z=sal_z,
        detector_distances=np.array(scene.detectors.distances, dtype=np.float64),
        detector_radius=float(scene.detectors.radius),
        annulus=scene.detectors.geometry == "annulus",
    )


def _insert_slab(rows, top, bottom, mu_a):
    out = []
    for r in rows:
        z0, z1 = r[Z_TOP], r[Z_BOT]
        if z1 <= top or z0 >= bottom:
            out.append(r)
            continue
        if z0 < top:
            out.append([z0, top] + r[2:])
        out.append([max(z0, top), min(z1, bottom), mu_a, 0.0, 0.0, r[N], 1.0])
        if z1 > bottom:
            out.append([bottom, z1] + r[2:])
    return out
