"""Run configuration from plain ``key = value`` files.

One key per line, ``#`` starts a comment.  Unknown keys are rejected so a
typo never silently falls back to a default.  ``format_config`` writes the
effective configuration back in the same syntax; the output can be read
again with :func:`load_config`.

Keys (defaults in brackets):

solver
    ``lambda_v`` [0.01], ``max_dist_m`` [1.0], ``max_vel_err_mps`` [2.0],
    ``geometric_k`` [0.5], ``doppler_k`` [0.2],
    ``robust_kernel_start_iter`` [2], ``rejection_start_iter`` [2],
    ``max_iters`` [100], ``conv_trans_tol_m`` [1e-6],
    ``conv_rot_tol_rad`` [1e-6], ``mode`` [DICP], ``metric``
    [point_to_plane], ``seed_mode`` [constant_velocity], ``normals_k`` [20]
calibration
    ``calib_translation`` [0,0,0] (t_VL, m), ``calib_rotvec`` [0,0,0]
    (axis-angle of R_VL, rad)
noise
    ``range_sigma_m`` [0.02], ``doppler_sigma_mps`` [0.03], ``rng_seed`` [0]
sequence
    ``sequence`` [straight_walls] picks a preset; ``scene``, ``trajectory``,
    ``speed_mps``, ``n_scans``, ``rate_hz``, ``arc_radius_m`` override it.
    ``n_azimuth``, ``n_elevation``, ``fov_azimuth_deg``,
    ``fov_elevation_deg``, ``max_range_m`` set the scan pattern.  Any key
    ``scene_<name>`` is passed to the scene builder as ``<name>``
    (e.g. ``scene_panel_depth_m = 0.5``, ``scene_actor_velocity = 5,0,0``).
output
    ``ply_precision`` [float] (``float`` or ``double``)
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import scenarios, sim
from .errors import ConfigError
from .objectives import Calibration
from .se3 import so3_exp, so3_log
from .solver import GeometricMetric, Mode, SeedMode, SolverParams

_SOLVER_KEYS = {f.name: f.type for f in fields(SolverParams)}
_NOISE_KEYS = ("range_sigma_m", "doppler_sigma_mps", "rng_seed")
_SEQUENCE_KEYS = ("scene", "trajectory", "speed_mps", "n_scans", "rate_hz", "arc_radius_m")
_PATTERN_KEYS = ("n_azimuth", "n_elevation", "fov_azimuth_deg", "fov_elevation_deg", "max_range_m")
_INT_KEYS = {"robust_kernel_start_iter", "rejection_start_iter", "max_iters", "normals_k", "rng_seed",
             "n_scans", "n_azimuth", "n_elevation"}
_STR_KEYS = {"mode", "metric", "seed_mode", "sequence", "scene", "trajectory", "ply_precision"}
_VEC_KEYS = {"calib_translation", "calib_rotvec"}
_OTHER_KEYS = {"seed_mode", "normals_k", "sequence", "ply_precision", *_VEC_KEYS}


@dataclass(frozen=True)
class RunConfig:
    solver: SolverParams = field(default_factory=SolverParams)
    calib: Calibration = field(default_factory=Calibration)
    sequence: scenarios.SequenceSpec = field(default_factory=lambda: scenarios.preset("straight_walls"))
    preset: str = "straight_walls"
    seed_mode: SeedMode = SeedMode.CONSTANT_VELOCITY
    normals_k: int = 20
    ply_precision: str = "float"

    @property
    def noise(self) -> sim.NoiseSpec:
        return self.sequence.noise


def _known(key: str) -> bool:
    return (key in _SOLVER_KEYS or key in _NOISE_KEYS or key in _SEQUENCE_KEYS or key in _PATTERN_KEYS
            or key in _OTHER_KEYS or key.startswith("scene_"))


def _convert(key: str, text: str):
    text = text.strip()
    try:
        if key in _STR_KEYS:
            if not text:
                raise ValueError("empty value")
            return text
        if key in _VEC_KEYS:
            vec = [float(v) for v in text.split(",")]
            if len(vec) != 3:
                raise ValueError("expected three comma-separated numbers")
            return np.array(vec)
        if key in _INT_KEYS:
            return int(text)
        if key.startswith("scene_"):
            if text.lower() == "none":
                return None
            if "," in text:
                return tuple(float(v) for v in text.split(","))
            return float(text)
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {text!r} ({exc})") from None


def parse_config(text: str, source: str = "<config>") -> dict:
    """Parse ``key = value`` text into a dict of typed values."""
    cp = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#",),
                                   inline_comment_prefixes=("#",), interpolation=None,
                                   strict=True, empty_lines_in_values=False)
    try:
        cp.read_string("[run]\n" + text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    values = {}
    for key, raw in cp.items("run"):
        if not _known(key):
            raise ConfigError(f"{source}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    return values


def build_config(values: dict) -> RunConfig:
    """Assemble a validated :class:`RunConfig` from parsed values."""
    values = dict(values)
    try:
        solver_kw = {k: values.pop(k) for k in list(values) if k in _SOLVER_KEYS}
        solver = SolverParams(**solver_kw)
        t = values.pop("calib_translation", None)
        rv = values.pop("calib_rotvec", None)
        calib = Calibration(None if rv is None else so3_exp(rv), t)

        name = values.pop("sequence", "straight_walls")
        try:
            spec = scenarios.preset(name)
        except KeyError as exc:
            raise ConfigError(str(exc.args[0])) from None
        noise_kw = {k: values.pop(k) for k in list(values) if k in _NOISE_KEYS}
        noise = replace(spec.noise, **noise_kw)
        pattern_kw = {k: values.pop(k) for k in list(values) if k in _PATTERN_KEYS}
        pattern = replace(spec.pattern, **pattern_kw)
        seq_kw = {k: values.pop(k) for k in list(values) if k in _SEQUENCE_KEYS}
        scene_kw = dict(spec.scene_params)
        scene_kw.update({k[len("scene_"):]: values.pop(k) for k in list(values) if k.startswith("scene_")})
        spec = replace(spec, noise=noise, pattern=pattern, scene_params=scene_kw, **seq_kw)
        sim.SceneKind(spec.scene)
        sim.TrajectoryKind(spec.trajectory)
        if spec.n_scans < 2:
            raise ValueError("n_scans must be at least 2")
        if not spec.rate_hz > 0 or not spec.speed_mps >= 0:
            raise ValueError("rate_hz must be positive and speed_mps non-negative")

        seed_mode = SeedMode(values.pop("seed_mode", SeedMode.CONSTANT_VELOCITY))
        normals_k = values.pop("normals_k", 20)
        if normals_k < 3:
            raise ValueError("normals_k must be at least 3")
        precision = values.pop("ply_precision", "float")
        if precision not in ("float", "double"):
            raise ValueError("ply_precision must be 'float' or 'double'")
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if values:
        raise ConfigError(f"unknown keys: {sorted(values)}")
    return RunConfig(solver, calib, spec, name, seed_mode, normals_k, precision)


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read ``path`` (optional) and apply ``overrides`` on top."""
    values = {}
    if path is not None:
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        values = parse_config(text, str(path))
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    return build_config(values)


def _fmt(v) -> str:
    if isinstance(v, (SeedMode, Mode, GeometricMetric)):
        return v.value
    if isinstance(v, np.ndarray):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, (tuple, list)):
        return ",".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def effective_items(cfg: RunConfig) -> list[tuple[str, str]]:
    """Every setting of ``cfg`` as ``(key, text)`` in a fixed order."""
    items = [(f.name, _fmt(getattr(cfg.solver, f.name))) for f in fields(SolverParams)]
    items += [("seed_mode", _fmt(cfg.seed_mode)), ("normals_k", str(cfg.normals_k))]
    items += [("calib_translation", _fmt(cfg.calib.t_VL)), ("calib_rotvec", _fmt(so3_log(cfg.calib.R_VL)))]
    seq = cfg.sequence
    items += [("sequence", cfg.preset)]
    items += [(k, _fmt(getattr(seq, k))) for k in _SEQUENCE_KEYS]
    items += [(k, _fmt(getattr(seq.pattern, k))) for k in _PATTERN_KEYS]
    items += [(k, _fmt(getattr(seq.noise, k))) for k in _NOISE_KEYS]
    items += [(f"scene_{k}", "none" if v is None else _fmt(v)) for k, v in sorted(seq.scene_params.items())]
    items += [("ply_precision", cfg.ply_precision)]
    return items


def format_config(cfg: RunConfig) -> str:
    lines = ["# effective configuration"]
    lines += [f"{k} = {v}" for k, v in effective_items(cfg)]
    return "\n".join(lines) + "\n"
