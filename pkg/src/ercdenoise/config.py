"""``key=value`` run configuration.

One setting per line, ``#`` starts a comment, and dotted prefixes name the
section::

    seed = 7
    profile.preset = inflatable
    sampler.patch_radius = 1
    coil.p0 = 238, 100

Unknown keys are rejected so typos fail loudly.  Relative paths are resolved
against the directory holding the config file.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ConfigError, ErcDenoiseError
from .phantom import Lesion, PhantomSpec, validate_spec
from .profile import PRESETS, CoilGeometry, CoilKind, ErcSnrProfile
from .sampler import SamplerConfig


def _int(text):
    return int(text, 10)


def _float(text):
    value = float(text)
    if not math.isfinite(value):
        raise ValueError("not finite")
    return value


def _seed(text):
    value = int(text, 10)
    if not 0 <= value < 2**64:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return value


def _numbers(text, n, conv=float):
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != n:
        raise ValueError(f"expected {n} comma-separated numbers")
    return tuple(conv(p) for p in parts)


def _pair(text):
    return _numbers(text, 2)


def _optional(conv):
    def parse(text):
        return None if text.lower() == "none" else conv(text)
    return parse


def _box(text):
    return _numbers(text, 4, int)


def _lesions(text):
    if text.lower() == "none":
        return ()
    out = []
    for item in text.split(";"):
        r, c, radius = _numbers(item, 3)
        out.append(Lesion((r, c), radius))
    return tuple(out)


def _preset(text):
    if text not in PRESETS:
        raise ValueError(f"unknown preset; choose one of {', '.join(PRESETS)}")
    return text


def _kind(text):
    return CoilKind(text)


@dataclass(frozen=True)
class FitSettings:
    """Window layout for the local noise fits behind the scale map."""

    window_radius: int = 4
    stride: int = 4
    max_signal_ratio: float = 2.0


@dataclass(frozen=True)
class RegionPaths:
    """Mask files for the metrics: noise region, signal region, edge region."""

    background: Path | None = None
    foreground: Path | None = None
    edge: Path | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    threads: int = 1
    profile_preset: str = "rigid"
    profile: ErcSnrProfile = field(default_factory=ErcSnrProfile.rigid)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    fit: FitSettings = field(default_factory=FitSettings)
    phantom: PhantomSpec = field(default_factory=PhantomSpec)
    regions: RegionPaths = field(default_factory=RegionPaths)
    input: Path | None = None
    output: Path | None = None
    scale_map: Path | None = None

    @property
    def coil(self) -> CoilGeometry:
        return self.phantom.coil

    def echo(self) -> dict:
        """Every resolved setting as a JSON-ready flat mapping, sorted by key."""
        flat = {
            "seed": self.seed,
            "threads": self.threads,
            "profile.preset": self.profile_preset,
            "coil.kind": self.coil.kind.value,
            "coil.p0": list(self.coil.p0),
            "coil.p1": None if self.coil.p1 is None else list(self.coil.p1),
            "coil.spacing_mm": self.coil.spacing_mm,
            "phantom.lesions": [[*l.center, l.radius_mm] for l in self.phantom.lesions],
            "paths.input": _path_str(self.input),
            "paths.output": _path_str(self.output),
            "paths.scale_map": _path_str(self.scale_map),
        }
        for section, obj in (("profile", self.profile), ("sampler", self.sampler),
                             ("fit", self.fit), ("regions", self.regions)):
            for f in dataclasses.fields(obj):
                value = getattr(obj, f.name)
                flat[f"{section}.{f.name}"] = _path_str(value) if section == "regions" else value
        for name in _PHANTOM_KEYS:
            value = getattr(self.phantom, name)
            flat[f"phantom.{name}"] = list(value) if isinstance(value, tuple) else value
        return {k: flat[k] for k in sorted(flat)}


def _path_str(p):
    return None if p is None else str(p)


_PROFILE_KEYS = {f.name: _float for f in dataclasses.fields(ErcSnrProfile)}
_SAMPLER_KEYS = {
    "search_radius": _int, "patch_radius": _int, "target_accepted": _int,
    "max_draws": _int, "acceptance_scale": _float,
}
_FIT_KEYS = {"window_radius": _int, "stride": _int, "max_signal_ratio": _float}
_PHANTOM_KEYS = {
    "rows": _int, "cols": _int, "spacing_mm": _float,
    "background_level": _float, "prostate_level": _float, "lesion_level": _float,
    "urethra_level": _float, "wall_level": _float,
    "prostate_center": _pair, "prostate_semi_axes_mm": _pair,
    "urethra_center": _optional(_pair), "urethra_radius_mm": _float,
    "wall_box": _optional(_box), "sigma0": _float,
}
_COIL_KEYS = {"kind": _kind, "p0": _pair, "p1": _optional(_pair), "spacing_mm": _float}
_REGION_KEYS = ("background", "foreground", "edge")
_PATH_KEYS = ("input", "output", "scale_map")

KNOWN_KEYS = frozenset(
    ["seed", "threads", "profile.preset", "phantom.lesions"]
    + [f"profile.{k}" for k in _PROFILE_KEYS]
    + [f"sampler.{k}" for k in _SAMPLER_KEYS]
    + [f"fit.{k}" for k in _FIT_KEYS]
    + [f"phantom.{k}" for k in _PHANTOM_KEYS]
    + [f"coil.{k}" for k in _COIL_KEYS]
    + [f"regions.{k}" for k in _REGION_KEYS]
    + [f"paths.{k}" for k in _PATH_KEYS]
)


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Split config text into ``{key: (value, line_number)}``; no type conversion."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key '{key}'")
        if not value:
            raise ConfigError(f"{source}:{lineno}: '{key}' has no value")
        if key in entries:
            raise ConfigError(f"{source}:{lineno}: '{key}' set twice")
        entries[key] = (value, lineno)
    return entries


def build_config(entries: dict, source: str = "<config>", base_dir: Path | None = None) -> RunConfig:
    """Convert parsed entries into a validated :class:`RunConfig`."""
    def get(key, conv):
        value, lineno = entries[key]
        try:
            return conv(value)
        except (ValueError, ErcDenoiseError) as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for '{key}': {exc}") from None

    def section(prefix, keys):
        return {k: get(f"{prefix}.{k}", conv) for k, conv in keys.items()
                if f"{prefix}.{k}" in entries}

    def path(key):
        if key not in entries:
            return None
        p = Path(entries[key][0])
        return p if p.is_absolute() or base_dir is None else base_dir / p

    def build(what, fn):
        try:
            return fn()
        except (ValueError, ErcDenoiseError) as exc:
            raise ConfigError(f"{source}: invalid {what} settings: {exc}") from None

    seed = get("seed", _seed) if "seed" in entries else 0
    preset = get("profile.preset", _preset) if "profile.preset" in entries else "rigid"
    profile = build("profile", lambda: replace(PRESETS[preset](), **section("profile", _PROFILE_KEYS)))
    sampler = build("sampler", lambda: SamplerConfig(seed=seed, **section("sampler", _SAMPLER_KEYS)))
    fit = FitSettings(**section("fit", _FIT_KEYS))
    if fit.window_radius < 2 or fit.stride < 1 or not fit.max_signal_ratio > 0:
        raise ConfigError(f"{source}: fit needs window_radius >= 2, stride >= 1 and a "
                          "positive max_signal_ratio")

    phantom_over = section("phantom", _PHANTOM_KEYS)
    if "phantom.lesions" in entries:
        phantom_over["lesions"] = get("phantom.lesions", _lesions)
    default_coil = PhantomSpec().coil
    coil_over = section("coil", _COIL_KEYS)
    coil_over.setdefault("spacing_mm", phantom_over.get("spacing_mm", default_coil.spacing_mm))
    coil = build("coil", lambda: replace(default_coil, **coil_over))
    phantom = replace(PhantomSpec(), coil=coil, **phantom_over)
    build("phantom", lambda: validate_spec(phantom))

    threads = get("threads", _int) if "threads" in entries else 1
    if threads < 1:
        raise ConfigError(f"{source}: threads must be >= 1")
    return RunConfig(
        seed=seed,
        threads=threads,
        profile_preset=preset,
        profile=profile,
        sampler=sampler,
        fit=fit,
        phantom=phantom,
        regions=RegionPaths(*(path(f"regions.{k}") for k in _REGION_KEYS)),
        input=path("paths.input"),
        output=path("paths.output"),
        scale_map=path("paths.scale_map"),
    )


def load_config(path=None) -> RunConfig:
    """Read a config file, or return the defaults when ``path`` is None."""
    if path is None:
        return build_config({})
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from None
    return build_config(parse_config_text(text, str(p)), str(p), p.parent)
