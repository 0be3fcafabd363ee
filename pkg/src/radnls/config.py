"""Experiment configuration: TOML key paths with a strict schema.

Every field has a default; unknown keys, wrong types and out-of-range
values are rejected with the offending key path.  ``resolved()`` gives
the fully materialized config that is embedded in every report.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .geometry import INFINITY, ManifoldProfile

_NUM = (int, float)

# section -> key -> (types, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "profile": {
        "n": (int, 4),
        "k": ((int, str), "inf"),
    },
    "model": {
        "sigma": (_NUM, 0.4),
        "mode": (str, "nonlinear"),
    },
    "grid": {
        "r_max": (_NUM, 120.0),
        "m": (int, 16384),
    },
    "time": {
        "dt": (_NUM, 1e-3),
        "t_final": (_NUM, 40.0),
        "sample_every": (_NUM, 0.5),
    },
    "data": {
        "kind": (str, "gaussian"),
        "amplitude": (_NUM, 1.0),
        "width": (_NUM, 1.5),
        "r_lo": (_NUM, 1.0),
        "r_hi": (_NUM, 3.0),
    },
    "diagnostics": {
        "morawetz": (bool, True),
        "virial": (bool, True),
        "defects": (bool, True),
        "defect_times": (list, [5.0, 10.0, 20.0, 40.0]),
        "profile": (bool, True),
        "profile_times": (list, [20.0, 40.0]),
        "t_min_profile": (_NUM, 5.0),
        "rho_min": (_NUM, 0.5),
        "rho_max": (_NUM, 6.0),
        "n_rho": (int, 600),
        "phase": (bool, True),
        "phase_window": (list, []),
        "phase_rho": (_NUM, 0.0),
        "lambda_phase": (_NUM, math.nan),
        "longrange": (bool, False),
        "longrange_window": (list, []),
        "psi_r_lo": (_NUM, 1.0),
        "psi_r_hi": (_NUM, 3.0),
        "saturation_fraction": (_NUM, 0.02),
    },
    "solver": {
        "solver_tol": (_NUM, 1e-10),
        "leak_threshold": (_NUM, 1e-4),
        "max_group_velocity": (_NUM, 1.0),
        "resource_ceiling": (_NUM, 2e10),
        "mass_tol": (_NUM, 1e-8),
    },
    "run": {
        "seed": (int, 0),
        "output_dir": (str, "radnls_out"),
        "checkpoint_every": (_NUM, 0.0),
        "restart": (str, ""),
    },
}

MODES = ("nonlinear", "free")
DATA_KINDS = ("gaussian", "bump")


def _defaults():
    return {sec: {k: copy.deepcopy(v[1]) for k, v in keys.items()} for sec, keys in SCHEMA.items()}


def _check_type(path, value, types):
    tt = types if isinstance(types, tuple) else (types,)
    if isinstance(value, bool) and bool not in tt:
        raise ConfigError(path, f"expected {_tname(types)}, got bool")
    if not isinstance(value, tt):
        raise ConfigError(path, f"expected {_tname(types)}, got {type(value).__name__}")


def _tname(types):
    if isinstance(types, tuple):
        return " or ".join(t.__name__ for t in types)
    return types.__name__


def _parse_k(value):
    if isinstance(value, str):
        if value.strip().lower() == "inf":
            return INFINITY
        raise ConfigError("profile.k", f'must be a non-negative integer or "inf", got {value!r}')
    if value < 0:
        raise ConfigError("profile.k", f"must be >= 0, got {value}")
    return int(value)


def _multiple(a, b, tol=1e-9):
    x = a / b
    return abs(x - round(x)) <= tol * max(1.0, abs(x))


@dataclass
class ExperimentConfig:
    """Validated run configuration; ``raw`` holds every resolved key."""

    raw: dict

    # -- construction ---------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict | None = None, *, validate: bool = True) -> "ExperimentConfig":
        cfg = _defaults()
        for sec, body in (data or {}).items():
            if sec not in SCHEMA:
                raise ConfigError(sec, "unknown section")
            if not isinstance(body, dict):
                raise ConfigError(sec, "expected a table of key = value entries")
            for key, value in body.items():
                path = f"{sec}.{key}"
                if key not in SCHEMA[sec]:
                    raise ConfigError(path, "unknown key")
                types = SCHEMA[sec][key][0]
                _check_type(path, value, types)
                if types == _NUM:
                    value = float(value)
                if isinstance(value, list):
                    for i, v in enumerate(value):
                        _check_type(f"{path}[{i}]", v, _NUM)
                    value = [float(v) for v in value]
                cfg[sec][key] = value
        out = cls(cfg)
        if validate:
            out.validate()
        return out

    @classmethod
    def from_toml(cls, text: str, **kw) -> "ExperimentConfig":
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError("<file>", f"not valid TOML: {exc}") from None
        return cls.from_dict(data, **kw)

    @classmethod
    def load(cls, path, **kw) -> "ExperimentConfig":
        return cls.from_toml(Path(path).read_text(), **kw)

    def with_overrides(self, **paths) -> "ExperimentConfig":
        """Copy with ``section__key=value`` overrides, revalidated."""
        data = copy.deepcopy(self.raw)
        for name, value in paths.items():
            sec, key = name.split("__", 1)
            data.setdefault(sec, {})[key] = value
        return ExperimentConfig.from_dict(data)

    # -- accessors ----------------------------------------------------------------

    def __getitem__(self, path: str) -> Any:
        sec, key = path.split(".", 1)
        return self.raw[sec][key]

    @property
    def profile(self) -> ManifoldProfile:
        return ManifoldProfile(self["profile.n"], _parse_k(self["profile.k"]))

    @property
    def nonlinear(self) -> bool:
        return self["model.mode"] == "nonlinear"

    @property
    def sigma(self):
        return self["model.sigma"]

    def steps(self) -> int:
        return int(round(self["time.t_final"] / self["time.dt"]))

    def r_data(self) -> float:
        if self["data.kind"] == "gaussian":
            return 4.0 * self["data.width"]
        return self["data.r_hi"]

    def required_r_max(self) -> float:
        """Domain sizing: r_data + 2 c_max t_final, c_max = min(pi/h, velocity cap)."""
        h = self["grid.r_max"] / (self["grid.m"] + 1)
        c_max = min(math.pi / h, self["solver.max_group_velocity"])
        return self.r_data() + 2.0 * c_max * self["time.t_final"]

    def resolved(self) -> dict:
        out = copy.deepcopy(self.raw)
        k = _parse_k(out["profile"]["k"])
        out["profile"]["k"] = "inf" if k == INFINITY else int(k)
        return out

    # -- validation ------------------------------------------------------------------

    def validate(self):
        n = self["profile.n"]
        if n < 2:
            raise ConfigError("profile.n", f"must be >= 2, got {n}")
        _parse_k(self["profile.k"])
        mode = self["model.mode"]
        if mode not in MODES:
            raise ConfigError("model.mode", f"must be one of {MODES}, got {mode!r}")
        sigma = self.sigma
        if self.nonlinear:
            if n < 4:
                raise ConfigError("profile.n", f"nonlinear runs need n >= 4, got {n}")
            top = 2.0 / (n - 2)
            if not (0 < sigma < top):
                raise ConfigError(
                    "model.sigma",
                    f"nonlinear runs need 0 < sigma < 2/(n-2) = {top:.6g} "
                    f"(energy-subcritical scattering range), got {sigma}",
                )
        elif not sigma > 0:
            raise ConfigError("model.sigma", "must be > 0 (used for the energy functional)")
        r_max, m = self["grid.r_max"], self["grid.m"]
        if not (r_max > 0 and math.isfinite(r_max)):
            raise ConfigError("grid.r_max", "must be positive and finite")
        if m < 3:
            raise ConfigError("grid.m", "must be >= 3")
        dt, tf, se = self["time.dt"], self["time.t_final"], self["time.sample_every"]
        for key, v in (("time.dt", dt), ("time.t_final", tf), ("time.sample_every", se)):
            if not (v > 0 and math.isfinite(v)):
                raise ConfigError(key, "must be positive and finite")
        if not _multiple(se, dt):
            raise ConfigError("time.sample_every", f"must be a multiple of dt = {dt}")
        if not _multiple(tf, se):
            raise ConfigError("time.t_final", f"must be a multiple of sample_every = {se}")
        kind = self["data.kind"]
        if kind not in DATA_KINDS:
            raise ConfigError("data.kind", f"must be one of {DATA_KINDS}, got {kind!r}")
        if self["data.amplitude"] < 0:
            raise ConfigError("data.amplitude", "must be >= 0")
        if kind == "gaussian":
            w = self["data.width"]
            if not w > 0:
                raise ConfigError("data.width", "must be > 0")
            if w > r_max / 8:
                raise ConfigError("data.width", f"must be <= r_max/8 = {r_max / 8:.6g}")
        elif not 0 <= self["data.r_lo"] < self["data.r_hi"] <= r_max:
            raise ConfigError("data.r_hi", "bump support must satisfy 0 <= r_lo < r_hi <= r_max")
        need = self.required_r_max()
        if r_max < need:
            raise ConfigError(
                "grid.r_max",
                f"domain too small: r_max = {r_max:.6g} < r_data + 2 c_max t_final = {need:.6g}",
            )
        cost = m * self.steps()
        if cost > self["solver.resource_ceiling"]:
            raise ConfigError(
                "grid.m", f"m * steps = {cost:.3g} exceeds solver.resource_ceiling = {self['solver.resource_ceiling']:.3g}"
            )
        for key in ("solver.solver_tol", "solver.leak_threshold", "solver.max_group_velocity", "solver.mass_tol"):
            if not self[key] > 0:
                raise ConfigError(key, "must be > 0")
        # only the time lists of enabled diagnostics are checked
        active = [("diagnostics.defect_times", self["diagnostics.defects"] and self.nonlinear),
                  ("diagnostics.profile_times", self["diagnostics.profile"] and not self.nonlinear)]
        for key, on in active:
            for t in self[key] if on else ():
                if not (0 <= t <= tf) or (t != 0 and not _multiple(t, se)):
                    raise ConfigError(key, f"time {t} must lie in [0, t_final] on the sampling grid")
        for key in ("diagnostics.phase_window", "diagnostics.longrange_window"):
            win = self[key]
            if win and (len(win) != 2 or not 0 <= win[0] < win[1] <= tf):
                raise ConfigError(key, "must be [] or [t_lo, t_hi] with 0 <= t_lo < t_hi <= t_final")
        if not 0 < self["diagnostics.rho_min"] < self["diagnostics.rho_max"]:
            raise ConfigError("diagnostics.rho_min", "need 0 < rho_min < rho_max")
        if self["diagnostics.n_rho"] < 2:
            raise ConfigError("diagnostics.n_rho", "must be >= 2")
        if self["diagnostics.longrange"] and not self.nonlinear:
            raise ConfigError("diagnostics.longrange", "needs mode = nonlinear")
        if not 0 <= self["diagnostics.psi_r_lo"] < self["diagnostics.psi_r_hi"] <= r_max:
            raise ConfigError("diagnostics.psi_r_hi", "test function support must lie in [0, r_max]")
        ce = self["run.checkpoint_every"]
        if ce < 0 or (ce > 0 and not _multiple(ce, se)):
            raise ConfigError("run.checkpoint_every", "must be 0 or a multiple of sample_every")


def dump_toml(raw: dict) -> str:
    """Minimal TOML writer for resolved configs (flat tables only)."""
    lines = []
    for sec, body in raw.items():
        lines.append(f"[{sec}]")
        for key, v in body.items():
            lines.append(f"{key} = {_toml_value(v)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)
