"""
Latency and fault injection
===========================

A synthetic benchmark compares one TCP connection per event with persistent
connections; then a scenario runs with 10% garbage connections and 10% dropped
acks to show that the services keep serving and nothing actuates twice.
"""

from hapticvr.bench import BenchOptions, compare, format_table
from hapticvr.runner import FaultConfig, RunOptions, run
from hapticvr.scenario import touch_cycle_scenario

print(format_table(compare(BenchOptions(avatars=2, rate=100, duration=2))))

sc = touch_cycle_scenario(4, duration_ms=5000, period_ms=500, hold_ms=200, repeat_every=2)
report = run(sc, RunOptions(faults=FaultConfig(garbage_rate=0.1, drop_ack_rate=0.1), seed=1))
print(report.counters)
print(report.faults)
lat = report.latency
print(f"latency over {lat.count} OK events: p50={lat.p50:.2f} ms p99={lat.p99:.2f} ms")
