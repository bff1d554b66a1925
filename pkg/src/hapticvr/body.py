"""Avatar skeleton, wire-level body parts and the part -> motor channel map."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

N_JOINTS = 20
N_CHANNELS = 10
MIN_USER_ID = 1
MAX_USER_ID = 200


class BodyPart(enum.IntEnum):
    HEAD = 0
    TORSO = 1
    LEFT_UPPER_ARM = 2
    LEFT_HAND = 3
    RIGHT_UPPER_ARM = 4
    RIGHT_HAND = 5
    LEFT_LEG = 6
    LEFT_FOOT = 7
    RIGHT_LEG = 8
    RIGHT_FOOT = 9

    @property
    def label(self) -> str:
        """CamelCase name used in JSON files, e.g. ``RightHand``."""
        return "".join(w.capitalize() for w in self.name.split("_"))

    @classmethod
    def from_code(cls, code: int) -> "BodyPart":
        if not isinstance(code, (int, np.integer)) or not 0 <= code < len(cls):
            raise ValueError(f"invalid body part code {code!r}")
        return cls(int(code))

    @classmethod
    def parse(cls, name: str) -> "BodyPart":
        """Accept ``RightHand``, ``right_hand`` or ``RIGHT_HAND``."""
        key = name.replace("_", "").replace("-", "").lower()
        for part in cls:
            if part.name.replace("_", "").lower() == key:
                return part
        raise ValueError(f"unknown body part {name!r}")


# Kinect v1 joint order.
JOINT_NAMES = (
    "HipCenter", "Spine", "ShoulderCenter", "Head",
    "ShoulderLeft", "ElbowLeft", "WristLeft", "HandLeft",
    "ShoulderRight", "ElbowRight", "WristRight", "HandRight",
    "HipLeft", "KneeLeft", "AnkleLeft", "FootLeft",
    "HipRight", "KneeRight", "AnkleRight", "FootRight",
)

_JOINT_PARTS = (
    BodyPart.TORSO, BodyPart.TORSO, BodyPart.TORSO, BodyPart.HEAD,
    BodyPart.LEFT_UPPER_ARM, BodyPart.LEFT_UPPER_ARM, BodyPart.LEFT_HAND, BodyPart.LEFT_HAND,
    BodyPart.RIGHT_UPPER_ARM, BodyPart.RIGHT_UPPER_ARM, BodyPart.RIGHT_HAND, BodyPart.RIGHT_HAND,
    BodyPart.LEFT_LEG, BodyPart.LEFT_LEG, BodyPart.LEFT_FOOT, BodyPart.LEFT_FOOT,
    BodyPart.RIGHT_LEG, BodyPart.RIGHT_LEG, BodyPart.RIGHT_FOOT, BodyPart.RIGHT_FOOT,
)

# joint indices belonging to each part, ordered by part code
PART_JOINTS: dict[BodyPart, tuple[int, ...]] = {
    part: tuple(j for j, p in enumerate(_JOINT_PARTS) if p is part) for part in BodyPart
}

DEFAULT_RADII: dict[BodyPart, float] = {
    BodyPart.HEAD: 0.15,
    BodyPart.TORSO: 0.25,
    BodyPart.LEFT_UPPER_ARM: 0.08,
    BodyPart.RIGHT_UPPER_ARM: 0.08,
    BodyPart.LEFT_HAND: 0.10,
    BodyPart.RIGHT_HAND: 0.10,
    BodyPart.LEFT_LEG: 0.10,
    BodyPart.RIGHT_LEG: 0.10,
    BodyPart.LEFT_FOOT: 0.10,
    BodyPart.RIGHT_FOOT: 0.10,
}

IDENTITY_MOTOR_MAP: dict[BodyPart, int] = {part: int(part) for part in BodyPart}


class MotorMapError(ValueError):
    pass


def joint_to_body_part(joint_index: int) -> BodyPart:
    if not isinstance(joint_index, (int, np.integer)) or not 0 <= joint_index < N_JOINTS:
        raise ValueError(f"joint index {joint_index!r} outside 0..{N_JOINTS - 1}")
    return _JOINT_PARTS[joint_index]


def is_user_id(value) -> bool:
    return isinstance(value, (int, np.integer)) and MIN_USER_ID <= value <= MAX_USER_ID


@dataclass(frozen=True, eq=False)
class SkeletonFrame:
    """One user's 20 tracked joints (meters) at ``timestamp_ms``."""

    user_id: int
    timestamp_ms: float
    joints: np.ndarray

    def __post_init__(self):
        if not is_user_id(self.user_id):
            raise ValueError(f"user_id {self.user_id!r} outside {MIN_USER_ID}..{MAX_USER_ID}")
        joints = np.array(self.joints, dtype=float)
        if joints.shape != (N_JOINTS, 3):
            raise ValueError(f"expected ({N_JOINTS}, 3) joints, got {joints.shape}")
        if not np.all(np.isfinite(joints)):
            raise ValueError("joint coordinates must be finite")
        joints.setflags(write=False)
        object.__setattr__(self, "joints", joints)

    def __eq__(self, other):
        if not isinstance(other, SkeletonFrame):
            return NotImplemented
        return (self.user_id == other.user_id and self.timestamp_ms == other.timestamp_ms
                and np.array_equal(self.joints, other.joints))

    def translated(self, offset) -> "SkeletonFrame":
        return SkeletonFrame(self.user_id, self.timestamp_ms, self.joints + np.asarray(offset, float))


def validate_radii(radii: Mapping[BodyPart, float]) -> dict[BodyPart, float]:
    out = {}
    for part in BodyPart:
        if part not in radii:
            raise ValueError(f"missing radius for {part.label}")
        r = float(radii[part])
        if not math.isfinite(r) or r <= 0:
            raise ValueError(f"radius for {part.label} must be finite and > 0, got {r}")
        out[part] = r
    return out


def proxy_spheres(frame: SkeletonFrame, radii: Mapping[BodyPart, float] = DEFAULT_RADII):
    """Return ``[(part, center, radius), ...]`` ordered by part code.

    Each center is the mean of the part's member joints.
    """
    return [
        (part, frame.joints[list(PART_JOINTS[part])].mean(axis=0), float(radii[part]))
        for part in BodyPart
    ]


def validate_motor_map(motor_map: Mapping[BodyPart, int]) -> None:
    """Raise MotorMapError unless the map is total over BodyPart and injective."""
    for part in BodyPart:
        if part not in motor_map:
            raise MotorMapError(f"missing body part {part.label}")
    owner: dict[int, BodyPart] = {}
    for part in BodyPart:
        channel = motor_map[part]
        if not isinstance(channel, (int, np.integer)) or not 0 <= channel < N_CHANNELS:
            raise MotorMapError(f"{part.label}: channel {channel!r} outside 0..{N_CHANNELS - 1}")
        if channel in owner:
            raise MotorMapError(
                f"duplicate channel {channel} ({owner[channel].label} and {part.label})")
        owner[channel] = part


def parse_part_mapping(obj: Mapping[str, float], what: str = "value") -> dict[BodyPart, float]:
    """Turn a JSON ``{"RightHand": x, ...}`` object into a BodyPart-keyed dict."""
    if not isinstance(obj, Mapping):
        raise ValueError(f"{what} mapping must be a JSON object")
    return {BodyPart.parse(k): v for k, v in obj.items()}


def standing_skeleton(root=(0.0, 0.0, 0.0), facing: float = 1.0) -> np.ndarray:
    """Rest pose joints for a ~1.75 m figure standing at ``root`` (floor level).

    ``facing`` is +1 or -1: the figure looks along +x or -x. Arms hang at the
    sides; y is up.
    """
    f = 1.0 if facing >= 0 else -1.0
    # (forward, up, right) offsets; right is +z when facing +x
    local = np.array([
        [0.0, 0.95, 0.0], [0.0, 1.20, 0.0], [0.0, 1.45, 0.0], [0.0, 1.65, 0.0],
        [0.0, 1.42, -0.20], [0.0, 1.15, -0.25], [0.0, 0.92, -0.27], [0.0, 0.85, -0.28],
        [0.0, 1.42, 0.20], [0.0, 1.15, 0.25], [0.0, 0.92, 0.27], [0.0, 0.85, 0.28],
        [0.0, 0.92, -0.10], [0.0, 0.50, -0.11], [0.0, 0.08, -0.11], [0.08, 0.02, -0.11],
        [0.0, 0.92, 0.10], [0.0, 0.50, 0.11], [0.0, 0.08, 0.11], [0.08, 0.02, 0.11],
    ])
    out = np.empty_like(local)
    out[:, 0] = f * local[:, 0]
    out[:, 1] = local[:, 1]
    out[:, 2] = f * local[:, 2]
    return out + np.asarray(root, dtype=float)
