"""Software haptic feedback pipeline for a collaborative VR scene.

Avatar collisions are detected from skeleton trajectories, routed over TCP
through a registry to emulated haptic kits, and turned into timed motor
pulses.
"""

from .body import (
    DEFAULT_RADII,
    IDENTITY_MOTOR_MAP,
    BodyPart,
    SkeletonFrame,
    joint_to_body_part,
    proxy_spheres,
    validate_motor_map,
)
from .collision import (
    Aabb,
    Contact,
    DebounceState,
    SceneObject,
    Sphere,
    WorldState,
    debounce_step,
    detect_contacts,
    sphere_aabb,
    sphere_sphere,
)
from .device import Device, DeviceConfig, OverlapPolicy
from .registry import RegistryServer
from .runner import FaultConfig, RunOptions, RunReport, latency_stats, run
from .scenario import Scenario, load_scenario, red_cube_scenario, two_avatar_touch_scenario
from .wire import decode_message, decode_uart, encode_message, encode_uart

__version__ = "0.1.0"
