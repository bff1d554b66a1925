"""Scripted scenarios: keyframed joint trajectories plus static scene objects.

Scenario JSON layout::

    {
      "name": "red-cube",                  # optional
      "tick_hz": 30,                       # optional, default 30
      "duration_ms": 2000,
      "repeat_every": null,                # optional, ticks
      "radii": {"RightHand": 0.1, ...},    # optional, overrides defaults
      "objects": [
        {"object_id": "cube", "shape": {"type": "aabb", "min": [..], "max": [..]}},
        {"object_id": "ball", "shape": {"type": "sphere", "center": [..], "radius": 0.2}}
      ],
      "users": [
        {"user_id": 1, "keyframes": [{"t_ms": 0, "joints": [[x, y, z], ... 20 rows]}, ...]}
      ]
    }
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .body import (
    DEFAULT_RADII,
    N_JOINTS,
    BodyPart,
    SkeletonFrame,
    is_user_id,
    parse_part_mapping,
    standing_skeleton,
    validate_radii,
)
from .collision import Aabb, SceneObject, Sphere, WorldState

DEFAULT_TICK_HZ = 30.0

HAND_RIGHT = (10, 11)  # WristRight, HandRight
HAND_LEFT = (6, 7)


class ScenarioError(ValueError):
    pass


@dataclass
class UserTrack:
    user_id: int
    times: np.ndarray   # (K,) strictly increasing, ms
    joints: np.ndarray  # (K, 20, 3)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.joints = np.asarray(self.joints, dtype=float)
        if not is_user_id(self.user_id):
            raise ScenarioError(f"user_id {self.user_id!r} must be in 1..200")
        if len(self.times) == 0:
            raise ScenarioError(f"user {self.user_id}: no keyframes")
        if self.joints.shape != (len(self.times), N_JOINTS, 3):
            raise ScenarioError(
                f"user {self.user_id}: joints shape {self.joints.shape}, "
                f"expected ({len(self.times)}, {N_JOINTS}, 3)")
        if not (np.all(np.isfinite(self.times)) and np.all(np.isfinite(self.joints))):
            raise ScenarioError(f"user {self.user_id}: non-finite keyframe data")
        bad = np.nonzero(np.diff(self.times) <= 0)[0]
        if len(bad):
            i = bad[0]
            raise ScenarioError(
                f"user {self.user_id}: keyframes not time-sorted "
                f"(t_ms={self.times[i + 1]:g} follows t_ms={self.times[i]:g})")

    def pose_at(self, t_ms: float) -> np.ndarray:
        """Linear interpolation between keyframes, clamped outside their span."""
        times = self.times
        if t_ms <= times[0]:
            return self.joints[0].copy()
        if t_ms >= times[-1]:
            return self.joints[-1].copy()
        i = int(np.searchsorted(times, t_ms, side="right")) - 1
        w = (t_ms - times[i]) / (times[i + 1] - times[i])
        return (1.0 - w) * self.joints[i] + w * self.joints[i + 1]


@dataclass
class Scenario:
    users: list[UserTrack]
    duration_ms: float
    objects: list[SceneObject] = field(default_factory=list)
    tick_hz: float = DEFAULT_TICK_HZ
    radii: dict[BodyPart, float] = field(default_factory=lambda: dict(DEFAULT_RADII))
    repeat_every: int | None = None
    name: str = "scenario"

    def __post_init__(self):
        if not self.users:
            raise ScenarioError("scenario needs at least one user")
        ids = [u.user_id for u in self.users]
        if len(set(ids)) != len(ids):
            raise ScenarioError(f"duplicate user ids {ids}")
        if not (math.isfinite(self.tick_hz) and self.tick_hz > 0):
            raise ScenarioError(f"tick_hz must be > 0, got {self.tick_hz}")
        if not (math.isfinite(self.duration_ms) and self.duration_ms >= 0):
            raise ScenarioError(f"duration_ms must be >= 0, got {self.duration_ms}")
        if self.repeat_every is not None and self.repeat_every <= 0:
            raise ScenarioError(f"repeat_every must be a positive tick count, got {self.repeat_every}")
        try:
            self.radii = validate_radii(self.radii)
        except ValueError as exc:
            raise ScenarioError(str(exc)) from exc

    @property
    def user_ids(self) -> list[int]:
        return [u.user_id for u in self.users]

    @property
    def tick_ms(self) -> float:
        return 1000.0 / self.tick_hz

    @property
    def n_ticks(self) -> int:
        return int(math.floor(self.duration_ms * self.tick_hz / 1000.0 + 1e-9)) + 1

    def tick_time(self, k: int) -> float:
        return k * 1000.0 / self.tick_hz

    def world_at(self, t_ms: float) -> WorldState:
        frames = [SkeletonFrame(u.user_id, t_ms, u.pose_at(t_ms)) for u in self.users]
        return WorldState(frames, list(self.objects), t_ms)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "tick_hz": self.tick_hz,
            "duration_ms": self.duration_ms,
            "repeat_every": self.repeat_every,
            "radii": {p.label: r for p, r in self.radii.items()},
            "objects": [_object_to_json(o) for o in self.objects],
            "users": [
                {"user_id": u.user_id,
                 "keyframes": [{"t_ms": float(t), "joints": j.tolist()}
                               for t, j in zip(u.times, u.joints)]}
                for u in self.users
            ],
        }


def _object_to_json(obj: SceneObject) -> dict:
    s = obj.shape
    if isinstance(s, Sphere):
        shape = {"type": "sphere", "center": list(s.center), "radius": s.radius}
    else:
        shape = {"type": "aabb", "min": list(s.min), "max": list(s.max)}
    return {"object_id": obj.object_id, "shape": shape}


def _parse_object(raw, where: str) -> SceneObject:
    try:
        shape = raw["shape"]
        kind = shape["type"].lower()
        if kind == "sphere":
            s = Sphere(tuple(shape["center"]), float(shape["radius"]))
        elif kind == "aabb":
            s = Aabb(tuple(shape["min"]), tuple(shape["max"]))
        else:
            raise ScenarioError(f"{where}.shape.type: unknown shape {shape['type']!r}")
        return SceneObject(str(raw["object_id"]), s)
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {type(exc).__name__}: {exc}") from exc


def _parse_user(raw, where: str) -> UserTrack:
    try:
        uid = raw["user_id"]
        kfs = raw["keyframes"]
        times = [float(k["t_ms"]) for k in kfs]
        joints = [k["joints"] for k in kfs]
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"{where}: {type(exc).__name__}: {exc}") from exc
    for i, j in enumerate(joints):
        arr = np.asarray(j, dtype=object)
        if arr.shape != (N_JOINTS, 3):
            raise ScenarioError(f"{where}.keyframes[{i}].joints: expected {N_JOINTS}x3 array")
    try:
        return UserTrack(uid, np.array(times), np.array(joints, dtype=float))
    except ScenarioError as exc:
        raise ScenarioError(f"{where}: {exc}") from exc


def scenario_from_json(raw: dict, source: str = "<scenario>") -> Scenario:
    if not isinstance(raw, dict):
        raise ScenarioError(f"{source}: top level must be an object")
    try:
        users = [_parse_user(u, f"users[{i}]") for i, u in enumerate(raw.get("users", []))]
        objects = [_parse_object(o, f"objects[{i}]") for i, o in enumerate(raw.get("objects", []))]
        radii = dict(DEFAULT_RADII)
        if raw.get("radii") is not None:
            radii.update(parse_part_mapping(raw["radii"], "radii"))
        if "duration_ms" not in raw:
            raise ScenarioError("duration_ms: missing")
        return Scenario(
            users=users,
            duration_ms=float(raw["duration_ms"]),
            objects=objects,
            tick_hz=float(raw.get("tick_hz", DEFAULT_TICK_HZ)),
            radii=radii,
            repeat_every=raw.get("repeat_every"),
            name=str(raw.get("name", Path(source).stem)),
        )
    except ScenarioError as exc:
        raise ScenarioError(f"{source}: {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"{source}: {exc}") from exc


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    return scenario_from_json(raw, str(path))


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario.to_json(), indent=1))


# -- built-in scenarios ------------------------------------------------------

def red_cube_scenario(user_id: int = 1) -> Scenario:
    """One user reaches a right hand into a 0.3 m cube at the origin over 2 s.

    The hand joints start 1 m from the cube center and end on it; the rest of
    the body stays well clear.
    """
    body = standing_skeleton(root=(1.6, -1.0, -0.3), facing=-1.0)
    start, end = body.copy(), body.copy()
    # HandRight ends at the cube center, the wrist trails 8 cm behind it
    for joints, hand_x in ((start, 1.0), (end, 0.0)):
        joints[11] = (hand_x, 0.0, 0.0)
        joints[10] = (hand_x + 0.08, 0.0, 0.0)
    # raise the elbow toward the reach so the arm reads naturally
    for joints in (start, end):
        joints[9] = (1.35, 0.15, -0.2)
    cube = SceneObject("cube", Aabb.cube((0.0, 0.0, 0.0), 0.3))
    return Scenario(
        users=[UserTrack(user_id, np.array([0.0, 2000.0]), np.stack([start, end]))],
        duration_ms=2000.0,
        objects=[cube],
        tick_hz=DEFAULT_TICK_HZ,
        name="red-cube",
    )


def _reach(body: np.ndarray, joints: Sequence[int], hand_at, forward: float) -> np.ndarray:
    out = body.copy()
    wrist, hand = joints
    out[hand] = hand_at
    out[wrist] = np.asarray(hand_at) - (forward * 0.08, 0.0, 0.0)
    return out


def touch_pair_keyframes(a_x: float, b_x: float, z: float, t_touch: float, hold_ms: float,
                         approach_ms: float = 300.0):
    """Keyframes for two facing users: A's right hand meets B's left hand.

    A stands at ``a_x`` facing +x, B at ``b_x`` facing -x; hands meet midway
    at chest height for ``hold_ms`` starting at ``t_touch``.
    """
    # A faces +x so its right side is +z; B faces -x so its left side is +z too
    a_body = standing_skeleton(root=(a_x, 0.0, z - 0.25), facing=1.0)
    b_body = standing_skeleton(root=(b_x, 0.0, z - 0.25), facing=-1.0)
    mid = (a_x + b_x) / 2.0
    meet_a = (mid - 0.05, 1.2, z)
    meet_b = (mid + 0.05, 1.2, z)
    rest_a = (a_x + 0.35, 1.2, z)
    rest_b = (b_x - 0.35, 1.2, z)
    times = [t_touch - approach_ms, t_touch, t_touch + hold_ms, t_touch + hold_ms + approach_ms]
    a = [_reach(a_body, HAND_RIGHT, p, 1.0) for p in (rest_a, meet_a, meet_a, rest_a)]
    b = [_reach(b_body, HAND_LEFT, p, -1.0) for p in (rest_b, meet_b, meet_b, rest_b)]
    return times, a, b


def two_avatar_touch_scenario(user_a: int = 1, user_b: int = 2, hold_ms: float = 1000.0) -> Scenario:
    """User A's right hand holds user B's left hand for ``hold_ms``."""
    times, a, b = touch_pair_keyframes(-0.7, 0.7, 0.0, t_touch=500.0, hold_ms=hold_ms)
    times = [0.0] + times
    a = [a[0]] + a
    b = [b[0]] + b
    return Scenario(
        users=[UserTrack(user_a, np.array(times), np.stack(a)),
               UserTrack(user_b, np.array(times), np.stack(b))],
        duration_ms=times[-1] + 500.0,
        name="two-avatar-touch",
    )


def touch_cycle_scenario(n_avatars: int = 4, duration_ms: float = 60_000.0,
                         period_ms: float = 1000.0, hold_ms: float = 400.0,
                         repeat_every: int | None = None, tick_hz: float = DEFAULT_TICK_HZ) -> Scenario:
    """Pairs of avatars (1,2), (3,4), ... shake hands once every ``period_ms``.

    Pairs stand 3 m apart along z so only partners ever touch.
    """
    if n_avatars < 2 or n_avatars % 2:
        raise ScenarioError("touch_cycle_scenario needs an even number of avatars >= 2")
    approach = min(150.0, (period_ms - hold_ms) / 4)
    users = []
    for pair in range(n_avatars // 2):
        z = 3.0 * pair
        times, a, b = [], [], []
        t = approach + pair * (period_ms / (n_avatars // 2)) * 0.5
        t0 = t
        while t + hold_ms + approach <= duration_ms:
            tt, aa, bb = touch_pair_keyframes(-0.7, 0.7, z, t, hold_ms, approach)
            times += tt
            a += aa
            b += bb
            t += period_ms
        if not times:
            tt, aa, bb = touch_pair_keyframes(-0.7, 0.7, z, t0, hold_ms, approach)
            times, a, b = [tt[0]], [aa[0]], [bb[0]]
        users.append(UserTrack(2 * pair + 1, np.array(times), np.stack(a)))
        users.append(UserTrack(2 * pair + 2, np.array(times), np.stack(b)))
    return Scenario(users=users, duration_ms=duration_ms, tick_hz=tick_hz,
                    repeat_every=repeat_every, name=f"touch-cycle-{n_avatars}")
