"""Scripted device profiles standing in for the phone's memory and battery managers.

Time is counted in epochs: one tick is one training epoch.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ProfileError


@dataclass(frozen=True)
class ResourceSnapshot:
    time_index: int
    total_ram_mb: int
    available_ram_mb: int
    battery_pct: float


@dataclass(frozen=True)
class DeviceProfile:
    name: str
    total_ram_mb: int
    ram_trajectory: tuple[tuple[int, int], ...]
    battery_start_pct: float = 100.0
    battery_drain_per_epoch_pct: float = 0.0

    def __post_init__(self):
        traj = tuple((int(t), int(mb)) for t, mb in self.ram_trajectory)
        object.__setattr__(self, "ram_trajectory", traj)
        if self.total_ram_mb <= 0:
            raise ProfileError(f"{self.name}: total_ram_mb must be positive")
        if not traj or traj[0][0] != 0:
            raise ProfileError(f"{self.name}: ram_trajectory must start at time 0")
        times = [t for t, _ in traj]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ProfileError(f"{self.name}: ram_trajectory times must be strictly increasing")
        for t, mb in traj:
            if not 0 <= mb <= self.total_ram_mb:
                raise ProfileError(f"{self.name}: available RAM {mb} at t={t} outside [0, total]")
        if not 0 <= self.battery_start_pct <= 100:
            raise ProfileError(f"{self.name}: battery_start_pct outside [0, 100]")
        if self.battery_drain_per_epoch_pct < 0:
            raise ProfileError(f"{self.name}: battery drain must be non-negative")

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceProfile":
        try:
            return cls(
                name=str(d["name"]),
                total_ram_mb=int(d["total_ram_mb"]),
                ram_trajectory=tuple(tuple(p) for p in d["ram_trajectory"]),
                battery_start_pct=float(d.get("battery_start_pct", 100.0)),
                battery_drain_per_epoch_pct=float(d.get("battery_drain_per_epoch_pct", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ProfileError):
                raise
            raise ProfileError(f"malformed device profile: {exc!r}") from exc

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "total_ram_mb": self.total_ram_mb,
            "ram_trajectory": [list(p) for p in self.ram_trajectory],
            "battery_start_pct": self.battery_start_pct,
            "battery_drain_per_epoch_pct": self.battery_drain_per_epoch_pct,
        }


def snapshot(profile: DeviceProfile, time_index: int) -> ResourceSnapshot:
    if time_index < 0:
        raise ValueError("time_index must be non-negative")
    times = [t for t, _ in profile.ram_trajectory]
    pos = bisect.bisect_right(times, time_index) - 1
    available = profile.ram_trajectory[pos][1]
    battery = max(0.0, profile.battery_start_pct - time_index * profile.battery_drain_per_epoch_pct)
    return ResourceSnapshot(time_index, profile.total_ram_mb, available, battery)


def ram_ratio(s: ResourceSnapshot) -> float:
    return s.available_ram_mb / s.total_ram_mb


def load_profiles(path: str | Path) -> dict[str, DeviceProfile]:
    """Read device profiles from a JSON file.

    The file holds either a single profile object, a list of them, or
    ``{"devices": [...]}``. Profiles are returned keyed by name.
    """
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ProfileError(f"{path}: {exc}") from exc
    if isinstance(raw, dict) and "devices" in raw:
        raw = raw["devices"]
    if isinstance(raw, dict):
        raw = [raw]
    profiles = [DeviceProfile.from_dict(d) for d in raw]
    return {p.name: p for p in profiles}


# 8 GB phone with 5.3 GB free, charging (no drain).
ONEPLUS_7T = DeviceProfile("oneplus7t", 8192, ((0, 5427),), 100.0, 0.0)
