from .base import (
    Adapter,
    AdapterError,
    TaskHandle,
    TaskProgress,
    UnsupportedElementError,
    adapter_factory,
    known_adapters,
    register_adapter,
)
from .filebased import FileAdapter
from .sim import PopulationProfile, SimEvent, SimulatedPlatform, simulate_arrivals, simulate_worker_behavior
from .translate import translate_template

__all__ = [
    "Adapter",
    "AdapterError",
    "FileAdapter",
    "PopulationProfile",
    "SimEvent",
    "SimulatedPlatform",
    "TaskHandle",
    "TaskProgress",
    "UnsupportedElementError",
    "adapter_factory",
    "known_adapters",
    "register_adapter",
    "simulate_arrivals",
    "simulate_worker_behavior",
    "translate_template",
]
