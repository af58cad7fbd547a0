"""Virtual ring device: firmware state machine, synthetic sensors, flash, battery, RTC."""

from ringkit.ringsim.ring import (
    BatteryState,
    FlashStore,
    OfflinePlan,
    RtcState,
    SensorConfig,
    VirtualRing,
)
from ringkit.ringsim.scenario import ImuTrace, Scenario, load_scenario
from ringkit.ringsim import sensors

__all__ = [
    "BatteryState",
    "FlashStore",
    "ImuTrace",
    "OfflinePlan",
    "RtcState",
    "Scenario",
    "SensorConfig",
    "VirtualRing",
    "load_scenario",
    "sensors",
]
