"""Packaged experiment configs: a desk profile that runs in minutes and a
full profile mirroring the original protocols."""

from __future__ import annotations

import json
from importlib import resources

PROFILES = ("desk", "full")
EXPERIMENTS = ("e1", "e2", "e3", "e3_pixels", "e4", "e5", "e6", "e7", "e8")


def load_config(experiment: str, profile: str = "desk") -> dict:
    if profile not in PROFILES:
        raise ValueError(f"unknown profile {profile!r}; choose from {PROFILES}")
    if experiment not in EXPERIMENTS:
        raise ValueError(f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    path = resources.files("cclab.configs").joinpath(profile).joinpath(f"{experiment}.json")
    return json.loads(path.read_text())
