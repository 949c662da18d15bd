"""Run configuration helpers for SegmentMonkey."""

from .settings import (
    DEFAULT_SETTINGS,
    PROFILES,
    SETTINGS_FILE,
    RunConfig,
    load_settings,
    save_settings,
)

__all__ = [
    "DEFAULT_SETTINGS",
    "PROFILES",
    "SETTINGS_FILE",
    "RunConfig",
    "load_settings",
    "save_settings",
]
