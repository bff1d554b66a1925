"""Contact detection between avatars and scene objects, plus rising-edge debouncing."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence, Union

import numpy as np

from .body import DEFAULT_RADII, BodyPart, SkeletonFrame, proxy_spheres


@dataclass(frozen=True)
class Sphere:
    center: tuple[float, float, float]
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        if not (math.isfinite(self.radius) and self.radius > 0):
            raise ValueError(f"sphere radius must be > 0, got {self.radius}")


@dataclass(frozen=True)
class Aabb:
    min: tuple[float, float, float]
    max: tuple[float, float, float]

    def __post_init__(self):
        lo, hi = _vec3(self.min, "min"), _vec3(self.max, "max")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"box min {lo} exceeds max {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @classmethod
    def cube(cls, center, edge: float) -> "Aabb":
        c = np.asarray(center, float)
        return cls(tuple(c - edge / 2), tuple(c + edge / 2))


Shape = Union[Sphere, Aabb]


@dataclass(frozen=True)
class SceneObject:
    object_id: str
    shape: Shape


def _vec3(v, name) -> tuple[float, float, float]:
    t = tuple(float(x) for x in v)
    if len(t) != 3 or not all(math.isfinite(x) for x in t):
        raise ValueError(f"{name} must be 3 finite coordinates, got {v!r}")
    return t


@dataclass(frozen=True)
class Contact:
    """``source`` touched ``target_user`` on ``target_part``.

    ``source`` is a user id (int) or an object id (str).
    """

    source: Union[int, str]
    target_user: int
    target_part: BodyPart

    @property
    def key(self):
        return (self.source, self.target_user, self.target_part)

    @property
    def from_object(self) -> bool:
        return isinstance(self.source, str)


def _source_key(source):
    # users before objects so mixed int/str sources sort deterministically
    return (1, source) if isinstance(source, str) else (0, source)


def contact_sort_key(c: Contact):
    return (c.target_user, int(c.target_part), _source_key(c.source))


@dataclass
class WorldState:
    skeletons: Sequence[SkeletonFrame]
    objects: Sequence[SceneObject] = ()
    tick_ms: float = 0.0

    def __post_init__(self):
        ids = [s.user_id for s in self.skeletons]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate user ids in world: {ids}")
        for s in self.skeletons:
            if s.timestamp_ms != self.tick_ms:
                raise ValueError(
                    f"user {s.user_id} frame at {s.timestamp_ms} ms, world tick is {self.tick_ms} ms")
        oids = [o.object_id for o in self.objects]
        if len(set(oids)) != len(oids):
            raise ValueError(f"duplicate object ids in world: {oids}")


def sphere_sphere(c1, r1: float, c2, r2: float) -> bool:
    return math.dist(c1, c2) <= r1 + r2


def closest_point_on_box(c, box: Aabb) -> tuple[float, ...]:
    return tuple(min(max(x, lo), hi) for x, lo, hi in zip(c, box.min, box.max))


def sphere_aabb(c, r: float, box: Aabb) -> bool:
    return math.dist(c, closest_point_on_box(c, box)) <= r


def _shape_hits(shape: Shape, center, radius: float) -> bool:
    if isinstance(shape, Sphere):
        return sphere_sphere(center, radius, shape.center, shape.radius)
    return sphere_aabb(center, radius, shape)


def detect_contacts(world: WorldState,
                    radii: Mapping[BodyPart, float] = DEFAULT_RADII) -> list[Contact]:
    """All avatar-avatar and object-avatar contacts in the world, sorted and deduplicated.

    A body-body overlap between users A and B yields one contact in each
    direction. A user's own parts never contact each other.
    """
    spheres = {s.user_id: proxy_spheres(s, radii) for s in world.skeletons}
    found: set[Contact] = set()
    users = sorted(spheres)
    for i, a in enumerate(users):
        for b in users[i + 1:]:
            for pa, ca, ra in spheres[a]:
                for pb, cb, rb in spheres[b]:
                    if sphere_sphere(ca, ra, cb, rb):
                        found.add(Contact(a, b, pb))
                        found.add(Contact(b, a, pa))
    for obj in world.objects:
        for u in users:
            for part, center, radius in spheres[u]:
                if _shape_hits(obj.shape, center, radius):
                    found.add(Contact(obj.object_id, u, part))
    return sorted(found, key=contact_sort_key)


class NonMonotoneTick(ValueError):
    pass


@dataclass(frozen=True)
class DebounceState:
    """Active contact keys mapped to the tick they were first seen."""

    active: Mapping[tuple, int] = field(default_factory=dict)
    last_tick: int | None = None


def debounce_step(state: DebounceState, contacts: Sequence[Contact], now: int,
                  repeat_every: int | None = None) -> tuple[list[Contact], DebounceState]:
    """Turn the contacts present at tick ``now`` into discrete events.

    A contact fires on its rising edge and, if ``repeat_every`` is set, again
    every ``repeat_every`` ticks while it stays held.
    """
    if state.last_tick is not None and now <= state.last_tick:
        raise NonMonotoneTick(f"tick {now} does not follow {state.last_tick}")
    if repeat_every is not None and repeat_every <= 0:
        raise ValueError(f"repeat_every must be positive, got {repeat_every}")
    events = []
    active = {}
    for c in contacts:
        if c.key in active:
            continue
        first = state.active.get(c.key)
        if first is None:
            first = now
            events.append(c)
        elif repeat_every is not None and (now - first) % repeat_every == 0:
            events.append(c)
        active[c.key] = first
    return events, DebounceState(active, now)
