"""Flat key-value configuration with section headers.

All tunable constants of the simulator live here, frozen as defaults.
A config file (INI syntax) and repeated ``--set section.key=value``
overrides can change them; unknown keys are rejected so typos fail loudly.
Values are coerced to the type of the default (float lists are
comma-separated; location lists are semicolon-separated x,y pairs).
"""

import configparser
import hashlib
import io

from .errors import ConfigError

DEFAULTS = {
    "sensor": {
        "magnet_id": 2,
        "gap_mm": 3.0,
    },
    "elastomer": {
        "modulus_kpa": 83.0,
        "fa1_thickness_mm": 0.5,
        "sa2_thickness_mm": 3.0,
        "gauge_factor": 2.0,
        "rest_resistance": 845.0,
        "backlash_mm": 0.015,
        "dead_zone_mm": 0.2,
    },
    "noise": {
        "fa1_sigma_counts": 2.0,
        "sa2_sigma_ut": 1.0,
        "quantization_ut": 0.15,
    },
    "environment": {
        "earth_field_ut": (38.031, 0.0, 32.460),
        "seed": 20260814,
    },
    "stream": {
        "rate_hz": 250,
        "fingers": 2,
        "init_samples": 300,
        "baseline_tail": 100,
        "ma_window": 6,
        "duration_s": 1.0,
        "binary": False,
    },
    "characterize": {
        "locations": "4.5,4.5;8.0,4.5;6.25,6.25;4.5,8.0;8.0,8.0",
        "force_max_n": 2.0,
        "force_step_n": 0.25,
        "shear_max_n": 1.0,
        "shear_step_n": 0.25,
        "shear_hold_n": 1.0,
        "probe_radius_mm": 5.3,
        "dwell_frames": 40,
        "tail_frames": 20,
    },
    "disturbance": {
        "rotation_deg": 60.0,
        "repeats": 3,
        "dwell_frames": 150,
        "tail_frames": 50,
    },
    "snr": {
        "dy_min_mm": 4.0,
        "dy_max_mm": 30.0,
        "dy_step_mm": 1.0,
    },
    "grasp": {
        "object": "egg",
        "policy": "single",
        "threshold": 700.0,
        "close_above": 900.0,
        "release_below": 500.0,
        "hold_s": 2.0,
        "blend": 0.3,
        "opening_mm": 50.0,
        "pinion_radius_mm": 6.0,
        "increment_deg": 1.5,
        "max_travel_deg": 200.0,
        "max_ticks": 2500,
        "egg_size_mm": 45.0,
        "egg_stiffness_n_mm": 5.0,
        "egg_crush_n": 25.0,
        "rigid_size_mm": 40.0,
        "rigid_stiffness_n_mm": 500.0,
        "tweezers_size_mm": 6.0,
        "tweezers_width_mm": 30.0,
        "tweezers_tip_gap_mm": 12.0,
        "tweezers_arm_rate_n_mm": 0.02,
        "tweezers_spring_n_mm": 0.2,
        "tweezers_sizes_mm": (2.0, 4.0, 6.0, 8.0, 10.0),
    },
}


def _coerce(section: str, key: str, raw, default):
    if isinstance(raw, type(default)) and not isinstance(raw, str):
        return raw
    text = str(raw).strip()
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.split(","))
        return text
    except ValueError as exc:
        raise ConfigError(f"bad value for {section}.{key}: {raw!r}") from exc


class Config:
    """Validated effective configuration (defaults + file + overrides)."""

    def __init__(self, values: dict):
        self._values = values

    def get(self, section: str, key: str):
        return self._values[section][key]

    def section(self, section: str) -> dict:
        return dict(self._values[section])

    def canonical_text(self) -> str:
        lines = []
        for section in sorted(self._values):
            for key in sorted(self._values[section]):
                value = self._values[section][key]
                if isinstance(value, tuple):
                    value = ",".join(repr(float(v)) for v in value)
                lines.append(f"{section}.{key}={value}")
        return "\n".join(lines)

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]

    def locations(self) -> list[tuple[float, float]]:
        out = []
        for chunk in self.get("characterize", "locations").split(";"):
            x, y = chunk.split(",")
            out.append((float(x), float(y)))
        return out


def load_config(path=None, overrides=(), seed=None) -> Config:
    values = {sec: dict(keys) for sec, keys in DEFAULTS.items()}

    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config file {path}: {exc}") from exc
        for section in parser.sections():
            if section not in values:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in values[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                values[section][key] = _coerce(section, key, raw, DEFAULTS[section][key])

    for item in overrides:
        key_path, sep, raw = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        section, dot, key = key_path.partition(".")
        if not dot or section not in values or key not in values[section]:
            raise ConfigError(f"unknown config key {key_path!r}")
        values[section][key] = _coerce(section, key, raw, DEFAULTS[section][key])

    if seed is not None:
        values["environment"]["seed"] = int(seed)
    return Config(values)


def dump_default_config() -> str:
    """Render the built-in defaults as an INI document."""
    parser = configparser.ConfigParser()
    for section, keys in DEFAULTS.items():
        parser[section] = {}
        for key, value in keys.items():
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            parser[section][key] = str(value)
    buf = io.StringIO()
    parser.write(buf)
    return buf.getvalue()
