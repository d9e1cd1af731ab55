"""Ready-made simulated sequences used by the CLI, tests and benchmarks."""

from __future__ import annotations

from dataclasses import dataclass, field

from . import sim
from .objectives import Calibration


@dataclass(frozen=True)
class SequenceSpec:
    """Everything needed to regenerate a simulated sequence."""

    scene: str = "straight_walls"
    trajectory: str = "straight"
    speed_mps: float = 10.0
    n_scans: int = 20
    rate_hz: float = 10.0
    arc_radius_m: float = 100.0
    pattern: sim.ScanPattern = field(default_factory=sim.ScanPattern)
    noise: sim.NoiseSpec = field(default_factory=sim.NoiseSpec)
    scene_params: dict = field(default_factory=dict)

    @property
    def duration_s(self) -> float:
        return (self.n_scans - 1) / self.rate_hz


@dataclass(eq=False)
class Sequence:
    scans: list
    samples: list
    labels: list
    scene: sim.Scene

    @property
    def ground_truth(self):
        return [s.pose for s in self.samples]


PRESETS = {
    "straight_walls": dict(scene="straight_walls", trajectory="straight"),
    "curved_walls": dict(scene="curved_walls", trajectory="arc"),
    "feature_rich": dict(scene="feature_rich", trajectory="straight"),
    "with_actor": dict(scene="with_actor", trajectory="straight", speed_mps=5.0),
}


def preset(name: str, **overrides) -> SequenceSpec:
    if name not in PRESETS:
        raise KeyError(f"unknown sequence preset {name!r}; choose from {sorted(PRESETS)}")
    return SequenceSpec(**{**PRESETS[name], **overrides})


def build(spec: SequenceSpec, calib: Calibration | None = None) -> Sequence:
    scene_params = dict(spec.scene_params)
    if spec.scene == "curved_walls":
        scene_params.setdefault("arc_radius_m", spec.arc_radius_m)
    scene = sim.make_scene(spec.scene, **scene_params)
    samples = sim.make_trajectory(spec.trajectory, spec.speed_mps, spec.duration_s, spec.rate_hz,
                                  spec.arc_radius_m if spec.trajectory == "arc" else None)
    scans, labels = sim.simulate_sequence(scene, samples, spec.pattern, spec.noise, calib, return_labels=True)
    return Sequence(scans, samples, labels, scene)
