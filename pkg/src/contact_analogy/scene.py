"""Scene files, trajectory files, and match reports.

A scene file is JSON naming the demonstration (masks, annotated contact
points, trajectory, feature source) and one or more targets, with optional
static obstacle masks and config overrides.  All paths are resolved relative
to the scene file's directory.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .errors import SceneError
from .geometry import BinaryMask, Point2, Similarity2
from .maskio import read_mask
from .matching import MatchConfig, ReferenceDemo
from .motion import Trajectory2D

_CONFIG_KEYS = {
    "lambda": "lam", "k": "k", "m": "m", "alpha": "alpha", "delta": "delta",
    "pyramid": "pyramid", "max_sim_candidates": "max_sim_candidates",
    "grid_n": "grid_n", "pca_dim": "pca_dim", "nms_radius": "nms_radius",
    "object_stride": "object_stride", "object_max": "object_max",
    "contact_gap_max": "contact_gap_max", "clearance_min": "clearance_min",
    "fallback_select": "fallback_select",
}


def save_trajectory(path: str | Path, traj: Trajectory2D) -> None:
    poses = [{"t": float(t), "theta": p.rotation,
              "dx": p.translation[0], "dy": p.translation[1]}
             for t, p in zip(traj.times, traj.poses)]
    data = {"poses": poses,
            "contact_phase": list(traj.contact_phase) if traj.contact_phase else None}
    Path(path).write_text(json.dumps(data, indent=2))


def load_trajectory(path: str | Path) -> Trajectory2D:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SceneError(f"cannot read trajectory file {path}: {exc}") from exc
    return trajectory_from_dict(data, source=str(path))


def trajectory_from_dict(data: dict, source: str = "<inline>") -> Trajectory2D:
    try:
        times = [p["t"] for p in data["poses"]]
        poses = [Similarity2(rotation=float(p["theta"]),
                             translation=(float(p["dx"]), float(p["dy"])))
                 for p in data["poses"]]
        phase = data.get("contact_phase")
        phase = tuple(int(i) for i in phase) if phase is not None else None
        return Trajectory2D(times=np.asarray(times, dtype=float), poses=poses,
                            contact_phase=phase)
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneError(f"bad trajectory in {source}: {exc}") from exc


def config_from_dict(overrides: dict | None) -> MatchConfig:
    kwargs = {}
    for key, value in (overrides or {}).items():
        if key not in _CONFIG_KEYS:
            raise SceneError(f"unknown config key: {key}")
        kwargs[_CONFIG_KEYS[key]] = value
    try:
        return MatchConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise SceneError(f"bad config: {exc}") from exc


@dataclass
class SceneTarget:
    tool_mask: BinaryMask
    tool_path: Path
    feature_stem: str | None


@dataclass
class Scene:
    path: Path
    demo: ReferenceDemo
    targets: list[SceneTarget]
    object_mask: BinaryMask
    object_path: Path
    statics: list[BinaryMask]
    static_paths: list[Path]
    config: MatchConfig
    metadata: dict = field(default_factory=dict)


def _read_mask_checked(base: Path, rel: str) -> tuple[BinaryMask, Path]:
    path = (base / rel).resolve()
    if not path.exists():
        raise SceneError(f"missing mask file: {path}")
    try:
        return read_mask(path), path
    except Exception as exc:
        raise SceneError(f"cannot read mask {path}: {exc}") from exc


def _point_in_bounds(p: list, mask: BinaryMask, what: str) -> Point2:
    try:
        pt = Point2(float(p[0]), float(p[1]))
    except (TypeError, ValueError, IndexError) as exc:
        raise SceneError(f"bad {what} annotation: {p!r}") from exc
    if not (0 <= pt.x < mask.width and 0 <= pt.y < mask.height):
        raise SceneError(f"{what} annotation ({pt.x:g}, {pt.y:g}) outside mask bounds")
    return pt


def _feature_stem(base: Path, value) -> str | None:
    if value is None or value == "fallback":
        return None
    return str((base / str(value)).resolve())


def load_scene(path: str | Path) -> Scene:
    path = Path(path)
    if not path.exists():
        raise SceneError(f"missing scene file: {path}")
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SceneError(f"cannot parse scene file {path}: {exc}") from exc
    base = path.parent

    try:
        demo_spec = data["demo"]
    except KeyError as exc:
        raise SceneError(f"scene {path} has no 'demo' section") from exc
    demo_tool, _ = _read_mask_checked(base, demo_spec["tool_mask"])
    demo_object, _ = _read_mask_checked(base, demo_spec["object_mask"])
    p_tool = _point_in_bounds(demo_spec["p_tool"], demo_tool, "tool point")
    p_object = _point_in_bounds(demo_spec["p_object"], demo_object, "object point")
    traj_spec = demo_spec["trajectory"]
    if isinstance(traj_spec, dict):
        trajectory = trajectory_from_dict(traj_spec, source=str(path))
    else:
        traj_path = (base / traj_spec).resolve()
        if not traj_path.exists():
            raise SceneError(f"missing trajectory file: {traj_path}")
        trajectory = load_trajectory(traj_path)
    try:
        demo = ReferenceDemo(tool_mask=demo_tool, object_mask=demo_object,
                             p_tool=p_tool, p_object=p_object,
                             trajectory=trajectory,
                             feature_stem=_feature_stem(base, demo_spec.get("features")))
    except ValueError as exc:
        raise SceneError(f"bad demo in {path}: {exc}") from exc

    if "target" in data:
        tool_specs = [data["target"]]
    elif "tools" in data:
        tool_specs = list(data["tools"])
    else:
        raise SceneError(f"scene {path} names neither 'target' nor 'tools'")
    if not tool_specs:
        raise SceneError(f"scene {path} has an empty tool list")
    object_spec = data["target"] if "target" in data else data
    if "object_mask" not in object_spec:
        raise SceneError(f"scene {path} names no target object mask")
    object_mask, object_path = _read_mask_checked(base, object_spec["object_mask"])

    targets = []
    for spec in tool_specs:
        mask, tool_path = _read_mask_checked(base, spec["tool_mask"])
        targets.append(SceneTarget(tool_mask=mask, tool_path=tool_path,
                                   feature_stem=_feature_stem(base, spec.get("features"))))

    statics, static_paths = [], []
    for rel in data.get("statics", []):
        mask, spath = _read_mask_checked(base, rel)
        statics.append(mask)
        static_paths.append(spath)

    config = config_from_dict(data.get("config"))
    return Scene(path=path, demo=demo, targets=targets, object_mask=object_mask,
                 object_path=object_path, statics=statics, static_paths=static_paths,
                 config=config, metadata=data.get("metadata", {}))


@dataclass
class MatchReport:
    """Lossless JSON-backed record of one matching run."""

    data: dict

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "MatchReport":
        return MatchReport(data=json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @staticmethod
    def load(path: str | Path) -> "MatchReport":
        return MatchReport.from_json(Path(path).read_text())

    def __eq__(self, other) -> bool:
        return isinstance(other, MatchReport) and self.data == other.data
