"""
The red cube
============

One user reaches into a 0.3 m cube at the origin. The runner hosts a registry
and the user's haptic kit in-process, detects the grab, looks the kit up and
delivers a single event; the kit buzzes the right-hand motor once.
"""

from hapticvr.collision import detect_contacts
from hapticvr.runner import red_cube_demo
from hapticvr.scenario import red_cube_scenario

sc = red_cube_scenario()
for t in (0, 1000, 1700, 2000):
    print(f"t={t:5d} ms contacts:", detect_contacts(sc.world_at(t), sc.radii))

report = red_cube_demo()
print(report.counters)
trace = report.traces[0]
print(f"seq {trace.seq}: {trace.source} -> user {trace.target_user} {trace.body_part}, "
      f"detected at tick {trace.tick}, actuated {trace.actuated_ms - trace.detected_ms:.2f} ms later")
print("motor timeline:", report.timelines[1])
