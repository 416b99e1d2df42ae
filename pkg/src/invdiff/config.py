"""Flat text configuration for the command-line tools.

Files hold one ``key = value`` pair per line; ``#`` starts a comment, blank
lines are skipped, and every key must be known — a typo is an error, not a
silent default. Values are plain scalars, comma-separated lists, or a
semicolon-separated emitter list.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from .operator import SigmaGrid
from .physics import PhysicalParams, Source
from .solver import SolverConfig


def _to_float(key, text):
    try:
        return float(text)
    except ValueError:
        raise ValueError(f"config key {key}: expected a number, got {text!r}") from None


def _to_int(key, text):
    try:
        return int(text, 10)
    except ValueError:
        raise ValueError(f"config key {key}: expected an integer, got {text!r}") from None


def _to_bool(key, text):
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"config key {key}: expected true/false, got {text!r}")


def _to_str(key, text):
    return text.strip()


@dataclass(frozen=True)
class RunConfig:
    """Typed view of a configuration file; see _SCHEMA for defaults."""

    # transport / imaging physics
    kappa_a: float
    kappa_d: float
    diffusion: float
    horizon: float
    pixel_pitch: float
    psf_sigma: float
    # image geometry
    rows: int
    cols: int
    # scale grid
    sigma_boundaries: str
    support_bins: str
    # free-motion-time tabulation
    tau_steps: int
    phi_eps: float
    # kernel construction
    quad_order: int
    # reconstruction
    lam: float
    max_iters: int
    rel_tol: float
    step_safety: float
    restart: bool
    power_iters: int
    # camera
    noise_sigma: float
    bits: int
    # synthetic emitters
    num_sources: int
    source_rate: float
    source_t_start: float
    source_t_stop: float
    source_min_separation: float
    border_margin: int
    sources: str
    # detection / scoring
    detect_rel_threshold: float
    detect_min_separation: int
    match_radius: float
    # misc
    seed: int
    weights_path: str
    mask_path: str

    @property
    def shape(self) -> tuple[int, int]:
        if self.rows < 1 or self.cols < 1:
            raise ValueError(f"rows/cols must be positive, got {self.rows} x {self.cols}")
        return (self.rows, self.cols)

    def physical_params(self) -> PhysicalParams:
        return PhysicalParams(
            kappa_a=self.kappa_a,
            kappa_d=self.kappa_d,
            diffusion=self.diffusion,
            horizon=self.horizon,
            pixel_pitch=self.pixel_pitch,
        )

    def sigma_grid(self) -> SigmaGrid:
        bounds = _parse_float_list("sigma_boundaries", self.sigma_boundaries)
        bins = _parse_int_list("support_bins", self.support_bins)
        return SigmaGrid(boundaries=np.asarray(bounds), support_set=tuple(bins))

    def solver_config(self) -> SolverConfig:
        return SolverConfig(
            lam=self.lam,
            max_iters=self.max_iters,
            rel_tol=self.rel_tol,
            step_safety=self.step_safety,
            restart=self.restart,
            power_iters=self.power_iters,
        )

    def effective_t_stop(self) -> float:
        return self.horizon if self.source_t_stop < 0 else self.source_t_stop

    def explicit_sources(self) -> list[Source] | None:
        """Emitters given literally as ``m:n[:rate[:t_start[:t_stop]]];...``."""
        text = self.sources.strip()
        if not text:
            return None
        out = []
        for item in text.split(";"):
            item = item.strip()
            if not item:
                continue
            parts = item.split(":")
            if len(parts) < 2 or len(parts) > 5:
                raise ValueError(
                    f"config key sources: expected m:n[:rate[:t_start[:t_stop]]], got {item!r}"
                )
            m = _to_int("sources", parts[0])
            n = _to_int("sources", parts[1])
            rate = _to_float("sources", parts[2]) if len(parts) > 2 else self.source_rate
            t0 = _to_float("sources", parts[3]) if len(parts) > 3 else self.source_t_start
            t1 = _to_float("sources", parts[4]) if len(parts) > 4 else self.effective_t_stop()
            out.append(Source(m=m, n=n, rate=rate, t_start=t0, t_stop=t1))
        if not out:
            raise ValueError("config key sources: no emitters in list")
        return out


def _parse_float_list(key, text):
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise ValueError(f"config key {key}: empty list")
    return [_to_float(key, s) for s in items]


def _parse_int_list(key, text):
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise ValueError(f"config key {key}: empty list")
    return [_to_int(key, s) for s in items]


# key -> (converter, default); key "lambda" maps to field "lam"
_SCHEMA = {
    "kappa_a": (_to_float, 2e-7),
    "kappa_d": (_to_float, 0.0),
    "diffusion": (_to_float, 1e-10),
    "horizon": (_to_float, 3600.0),
    "pixel_pitch": (_to_float, 1e-5),
    "psf_sigma": (_to_float, 0.0),
    "rows": (_to_int, 128),
    "cols": (_to_int, 128),
    "sigma_boundaries": (_to_str, "0,2,15,20,30,40,50,70"),
    "support_bins": (_to_str, "1,2,3,4,5,6,7"),
    "tau_steps": (_to_int, 4096),
    "phi_eps": (_to_float, 1e-6),
    "quad_order": (_to_int, 16),
    "lambda": (_to_float, 1e-3),
    "max_iters": (_to_int, 500),
    "rel_tol": (_to_float, 1e-6),
    "step_safety": (_to_float, 0.95),
    "restart": (_to_bool, True),
    "power_iters": (_to_int, 60),
    "noise_sigma": (_to_float, 0.01),
    "bits": (_to_int, 12),
    "num_sources": (_to_int, 20),
    "source_rate": (_to_float, 1.0),
    "source_t_start": (_to_float, 0.0),
    "source_t_stop": (_to_float, -1.0),
    "source_min_separation": (_to_float, 10.0),
    "border_margin": (_to_int, 12),
    "sources": (_to_str, ""),
    "detect_rel_threshold": (_to_float, 0.05),
    "detect_min_separation": (_to_int, 4),
    "match_radius": (_to_float, 4.0),
    "seed": (_to_int, 12345),
    "weights_path": (_to_str, ""),
    "mask_path": (_to_str, ""),
}

_KEY_TO_FIELD = {key: ("lam" if key == "lambda" else key) for key in _SCHEMA}

# sanity: schema and dataclass must agree
assert sorted(_KEY_TO_FIELD.values()) == sorted(f.name for f in fields(RunConfig))


def parse_config_text(text: str, origin: str = "<config>") -> RunConfig:
    """Parse configuration text; unknown or repeated keys are errors."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{origin}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, val = line.partition("=")
        key = key.strip()
        val = val.strip()
        if key not in _SCHEMA:
            raise ValueError(f"{origin}:{lineno}: unknown config key {key!r}")
        if key in values:
            raise ValueError(f"{origin}:{lineno}: duplicate config key {key!r}")
        conv, _default = _SCHEMA[key]
        values[key] = conv(key, val)
    merged = {
        _KEY_TO_FIELD[key]: values.get(key, default)
        for key, (_conv, default) in _SCHEMA.items()
    }
    return RunConfig(**merged)


def parse_config(path) -> RunConfig:
    """Parse a configuration file."""
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), origin=str(path))


def default_config() -> RunConfig:
    """Configuration with every key at its default."""
    return parse_config_text("")
