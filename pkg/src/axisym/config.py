"""Plain-text run configuration (INI sections, strict keys)."""
from __future__ import annotations

import configparser
import hashlib
from importlib import resources
from pathlib import Path

from .evolve import EvolveConfig, InitialDatum
from .field import Grid


class ConfigError(ValueError):
    pass


KEYS = {
    "grid": {"r_max": float, "z_max": float, "nr": int, "nz": int},
    "evolve": {"dt": float, "t_end": float, "nonlinear": bool, "checkpoint_every": int,
               "cfl": float, "trace_every": int},
    "initial": {"preset": str, "impulse": float, "modes": str, "checkpoint": str},
}


def parse_modes(text: str):
    """'0,1:0.1; 1,0:-0.05' -> [((0, 1), 0.1), ((1, 0), -0.05)]"""
    out = []
    for item in filter(None, (s.strip() for s in text.split(";"))):
        try:
            lbl, amp = item.split(":")
            l, n = (int(v) for v in lbl.split(","))
            out.append(((l, n), float(amp)))
        except ValueError as exc:
            raise ConfigError(f"bad mode entry {item!r} (expected 'l,n:amplitude')") from exc
    return out


def preset_path(name: str) -> Path:
    return Path(str(resources.files("axisym") / "presets" / name))


def resolve(path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    bundled = preset_path(p.name)
    if bundled.exists():
        return bundled
    raise ConfigError(f"config file {path} not found")


def read_text(path) -> str:
    return resolve(path).read_text()


def digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def parse(text: str, base_dir: Path | None = None) -> EvolveConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    vals = {}
    for sec in cp.sections():
        if sec not in KEYS:
            raise ConfigError(f"unknown section [{sec}]")
        for key, raw in cp.items(sec):
            if key not in KEYS[sec]:
                raise ConfigError(f"unknown key {sec}.{key}")
            typ = KEYS[sec][key]
            try:
                if typ is bool:
                    v = cp.getboolean(sec, key)
                else:
                    v = typ(raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {sec}.{key}: {raw!r}") from exc
            vals[f"{sec}.{key}"] = v
    g = Grid(vals.get("grid.r_max", 12.0), vals.get("grid.z_max", 12.0),
             vals.get("grid.nr", 256), vals.get("grid.nz", 256))
    ckpt = vals.get("initial.checkpoint")
    if ckpt and base_dir is not None and not Path(ckpt).is_absolute():
        ckpt = str(base_dir / ckpt)
    try:
        ini = InitialDatum(vals.get("initial.preset", "scaled_attractor"),
                           vals.get("initial.impulse", 1.0),
                           parse_modes(vals.get("initial.modes", "")), ckpt)
        return EvolveConfig(grid=g, dt=vals.get("evolve.dt", 2e-3),
                            t_end=vals.get("evolve.t_end", 10.0),
                            nonlinear_on=vals.get("evolve.nonlinear", True),
                            checkpoint_every=vals.get("evolve.checkpoint_every", 0),
                            cfl=vals.get("evolve.cfl", 0.5),
                            trace_every=vals.get("evolve.trace_every", 1),
                            initial=ini)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load(path) -> tuple[EvolveConfig, str]:
    p = resolve(path)
    text = p.read_text()
    return parse(text, p.parent), text
