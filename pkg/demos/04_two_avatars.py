"""
Two avatars shake hands
=======================

User 1's right hand meets user 2's left hand for one second. Both kits vibrate:
user 2 on the left hand (touched by user 1) and user 1 on the right hand.
The same scenario runs through the registry in relay mode too.
"""

from hapticvr.body import BodyPart
from hapticvr.runner import RunOptions, run
from hapticvr.scenario import two_avatar_touch_scenario

for mode in ("direct", "relay"):
    report = run(two_avatar_touch_scenario(), RunOptions(mode=mode))
    print(f"[{mode}]", report.counters)
    for uid, records in sorted(report.timelines.items()):
        for r in records:
            print(f"  user {uid}: motor {r['motor_channel']} ({BodyPart(r['motor_channel']).label})"
                  f" for {r['end_ms'] - r['start_ms']:.0f} ms")
