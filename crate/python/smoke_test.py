"""Smoke test for the ctdsim_py extension module.

Build and install first:  maturin build --release -m crates/py/Cargo.toml
then pip install the wheel from target/wheels/.
"""

import json
import math
import tempfile
from pathlib import Path

import ctdsim_py as ct


def check_radio():
    assert ct.rssi_from_distance(1.0) == -40.0
    assert math.isclose(ct.rssi_from_distance(10.0), -60.0)
    assert math.isclose(ct.distance_from_rssi(-60.0), 10.0)
    assert ct.rssi_from_distance(1.0, walls=1) == -55.0
    try:
        ct.rssi_from_distance(-1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative distance accepted")


def check_device_and_registry():
    a, b, c = (f"{i:032x}" for i in (1, 2, 3))
    dev = ct.Device(a)
    assert dev.on_beacon(b, -45.0, 0)
    assert dev.on_beacon(b, -45.0, 1)
    assert not dev.on_beacon(c, -70.0, 2)
    assert dev.contacts() == [(b, 0, 1)]

    reg = ct.Registry(["secret"])
    for i in (a, b, c):
        reg.register(i)
    reg.flag_infected(a, "secret", 10)
    assert reg.upload_contacts(a, [b, b], "secret", 11) == [b]
    assert [reg.status(i) for i in (a, b, c)] == ["infected", "at_risk", "not_at_risk"]
    try:
        reg.flag_infected(c, "wrong", 12)
    except ValueError:
        pass
    else:
        raise AssertionError("forged token accepted")
    assert reg.status(c) == "not_at_risk"


def check_simulation():
    assert [ct.pair_count(n) for n in (10, 100, 1000)] == [45, 4950, 499500]
    assert ct.segment_for_time(9 * 60) == "work"
    s = ct.Scenario.demo(3)
    assert len(s.ids) == 10
    events, statuses = s.simulate()
    assert events == ct.Scenario.demo(3).simulate()[0]
    assert sum(v == "infected" for v in statuses.values()) == 2
    outcome = s.case_study()
    assert outcome["case-ii"] <= outcome["case-i"]
    assert ct.oracle_check(100) == (100, 0)


def check_experiment():
    with tempfile.TemporaryDirectory() as tmp:
        cfg = Path(tmp) / "s.toml"
        cfg.write_text("schema = 1\nseed = 2\npeople = 6\ninitial_infected = 1\n")
        report = json.loads(ct.run_experiment(str(cfg), str(Path(tmp) / "out")))
        assert report["people"] == 6
        assert (Path(tmp) / "out" / "events.csv").exists()
        try:
            ct.run_experiment(str(Path(tmp) / "missing.toml"), tmp)
        except OSError:
            pass
        else:
            raise AssertionError("missing config accepted")


if __name__ == "__main__":
    check_radio()
    check_device_and_registry()
    check_simulation()
    check_experiment()
    print("smoke test ok")
