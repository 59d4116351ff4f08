import json

import pytest
from hypothesis import given
from hypothesis import strategies as st

from odt_asr.device import ONEPLUS_7T, DeviceProfile, ResourceSnapshot, load_profiles, ram_ratio, snapshot
from odt_asr.errors import ProfileError


def test_snapshot_at_start_matches_phone():
    p = DeviceProfile("phone", 8192, ((0, 5427),), 100.0, 3.0)
    s = snapshot(p, 0)
    assert (s.total_ram_mb, s.available_ram_mb, s.battery_pct) == (8192, 5427, 100.0)


def test_battery_drains_linearly():
    p = DeviceProfile("phone", 8192, ((0, 5427),), 100.0, 3.0)
    assert snapshot(p, 5).battery_pct == 85.0


def test_battery_clamps_at_zero():
    p = DeviceProfile("phone", 8192, ((0, 5427),), 100.0, 50.0)
    assert snapshot(p, 3).battery_pct == 0.0


def test_ram_trajectory_is_a_step_function():
    p = DeviceProfile("steps", 8000, ((0, 6000), (3, 2000), (7, 500)))
    assert [snapshot(p, t).available_ram_mb for t in (0, 2, 3, 6, 7, 100)] == [6000, 6000, 2000, 2000, 500, 500]


@pytest.mark.parametrize("avail, expected", [(5427, 5427 / 8192), (8192, 1.0), (0, 0.0)])
def test_ram_ratio(avail, expected):
    assert ram_ratio(ResourceSnapshot(0, 8192, avail, 100.0)) == pytest.approx(expected, abs=1e-9)


def test_oneplus_ratio_is_0_6625():
    assert ram_ratio(snapshot(ONEPLUS_7T, 0)) == pytest.approx(0.6625, abs=1e-4)


@pytest.mark.parametrize("kwargs", [
    dict(total_ram_mb=0, ram_trajectory=((0, 0),)),
    dict(total_ram_mb=100, ram_trajectory=((0, 200),)),
    dict(total_ram_mb=100, ram_trajectory=((1, 50),)),
    dict(total_ram_mb=100, ram_trajectory=((0, 50), (0, 40))),
    dict(total_ram_mb=100, ram_trajectory=((0, 50), (3, 40), (2, 30))),
    dict(total_ram_mb=100, ram_trajectory=()),
    dict(total_ram_mb=100, ram_trajectory=((0, 50),), battery_start_pct=120.0),
    dict(total_ram_mb=100, ram_trajectory=((0, 50),), battery_drain_per_epoch_pct=-1.0),
])
def test_invalid_profiles_rejected(kwargs):
    with pytest.raises(ProfileError):
        DeviceProfile("bad", **kwargs)


def test_load_profiles_accepts_devices_wrapper(tmp_path):
    path = tmp_path / "devices.json"
    path.write_text(json.dumps({"devices": [ONEPLUS_7T.to_dict(),
                                            {"name": "tiny", "total_ram_mb": 1024,
                                             "ram_trajectory": [[0, 100]]}]}))
    profiles = load_profiles(path)
    assert profiles["oneplus7t"] == ONEPLUS_7T
    assert profiles["tiny"].ram_trajectory == ((0, 100),)


profiles = st.builds(
    lambda total, avails, start, drain: DeviceProfile(
        "p", total, tuple((3 * i, min(a, total)) for i, a in enumerate(avails)), start, drain),
    st.integers(1, 16384), st.lists(st.integers(0, 16384), min_size=1, max_size=5),
    st.floats(0, 100), st.floats(0, 40))


@given(profiles, st.integers(0, 50))
def test_snapshot_properties(p, t):
    s = snapshot(p, t)
    assert s == snapshot(p, t)
    assert 0.0 <= ram_ratio(s) <= 1.0
    assert snapshot(p, t + 1).battery_pct <= s.battery_pct
