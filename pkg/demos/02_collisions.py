"""
Contacts from skeletons
=======================

Each avatar is reduced to ten proxy spheres, one per body part, centred on the
mean of that part's Kinect joints. Overlaps between avatars produce contacts in
both directions; overlaps with scene objects produce object contacts.
"""

import numpy as np

from hapticvr.body import SkeletonFrame, proxy_spheres, standing_skeleton
from hapticvr.collision import Aabb, DebounceState, SceneObject, WorldState, debounce_step, detect_contacts

a = standing_skeleton(root=(-0.45, 0, 0), facing=1.0)
b = standing_skeleton(root=(0.45, 0, 0), facing=-1.0)

for part, center, radius in proxy_spheres(SkeletonFrame(1, 0.0, a)):
    print(f"{part.label:14s} center={np.round(center, 2)} r={radius}")

# stretch A's right hand out toward B's left hand
a[10] = (-0.12, 1.2, 0.25)
a[11] = (-0.04, 1.2, 0.25)
b[6] = (0.12, 1.2, 0.25)
b[7] = (0.04, 1.2, 0.25)
world = WorldState([SkeletonFrame(1, 0.0, a), SkeletonFrame(2, 0.0, b)],
                   [SceneObject("cube", Aabb.cube((0, 3, 0), 0.3))])
for c in detect_contacts(world):
    print(f"user {c.source} touched user {c.target_user} on {c.target_part.label}")

# debouncing: a contact held for five ticks fires once
state = DebounceState()
contacts = detect_contacts(world)
for tick in range(5):
    events, state = debounce_step(state, contacts, tick)
    print("tick", tick, "events:", len(events))
