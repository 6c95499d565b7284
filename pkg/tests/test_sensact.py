import random

import pytest

from acme.sensact import (ActuatorLedger, ActuatorResult, CounterBank,
                          LocalProcessBackend, LogReaderSensor, SensorFailure,
                          SensorServerCore, ValueStore, make_hostname_sensor,
                          make_load_sensor, register_process_actuators,
                          register_value_actuator, split_sensor_name)


def make_core():
    core = SensorServerCore("testhost")
    core.register("hostname", make_hostname_sensor("testhost"))
    return core


def test_hostname_sensor_row():
    core = make_core()
    status, text = core.serve("hostname", {})
    assert status == 200
    assert text == "testhost\n"


def test_unknown_sensor_is_404():
    status, text = make_core().serve("nope", {})
    assert status == 404
    assert "nope" in text


def test_handler_failure_is_500_with_reason():
    core = make_core()

    def broken(args):
        raise SensorFailure("sensor hardware on fire")

    core.register("broken", broken)
    status, text = core.serve("broken", {})
    assert status == 500
    assert "on fire" in text


def test_serve_url_dispatch():
    core = make_core()
    status, text = core.serve_url("/hostname?x=1")
    assert status == 200
    assert core.serve_url("/missing")[0] == 404


def test_duplicate_registration_rejected():
    core = make_core()
    with pytest.raises(ValueError):
        core.register("hostname", lambda args: "")


def test_split_sensor_name_args():
    assert split_sensor_name("load") == ("load", {})
    assert split_sensor_name("counter?name=up") == ("counter", {"name": "up"})


def test_load_sensor_non_negative():
    handler = make_load_sensor(lambda: 0.25)
    assert handler({}) == "0.25\n"
    bad = make_load_sensor(lambda: -1.0)
    with pytest.raises(SensorFailure):
        bad({})


def test_counters_start_at_zero_and_climb():
    bank = CounterBank()
    assert bank.handler({"name": "msgs"}) == "0\n"
    bank.bump("msgs", 3)
    assert bank.handler({"name": "msgs"}) == "3\n"
    with pytest.raises(ValueError):
        bank.bump("msgs", -1)


def test_value_store_sensor_and_actuator():
    core = make_core()
    store = ValueStore()
    ledger = ActuatorLedger()
    core.register("value", store.sensor)
    register_value_actuator(core, store, ledger, lambda: 42.0)
    status, text = core.serve("set_value", {"name": "alarm", "value": "7"})
    assert text == "OK,alarm=7\n"
    assert core.serve("value", {"name": "alarm"}) == (200, "7\n")
    status, text = core.serve("set_value", {"name": "alarm"})
    assert "ERROR" in text
    assert [r[1] for r in ledger.records] == ["set_value", "set_value"]
    assert ledger.records[0][0] == 42


def test_logreader_tails_without_duplicates(tmp_path):
    path = tmp_path / "app.log"
    sensor = LogReaderSensor(str(path))
    assert sensor.handler({}) == ""  # missing file reads empty
    path.write_text("a\nb\n")
    assert sensor.handler({}) == "a\nb\n"
    assert sensor.handler({}) == ""  # nothing new
    with open(path, "a") as fh:
        fh.write("c\nd\n")
    assert sensor.handler({}) == "c\nd\n"


def test_logreader_randomized_append_schedule_matches_concatenation(tmp_path):
    path = tmp_path / "rand.log"
    path.write_text("")
    sensor = LogReaderSensor(str(path))
    rng = random.Random(5)
    written, collected = [], []
    for i in range(40):
        if rng.random() < 0.6:
            lines = [f"line-{i}-{j}" for j in range(rng.randrange(0, 4))]
            with open(path, "a") as fh:
                for line in lines:
                    fh.write(line + "\n")
            written.extend(lines)
        else:
            chunk = sensor.handler({})
            collected.extend(chunk.splitlines())
    collected.extend(sensor.handler({}).splitlines())
    assert collected == written  # no duplicates, no gaps, order preserved


def test_logreader_holds_partial_lines(tmp_path):
    path = tmp_path / "partial.log"
    sensor = LogReaderSensor(str(path))
    path.write_text("complete\npart")
    assert sensor.handler({}) == "complete\n"
    with open(path, "a") as fh:
        fh.write("ial\n")
    assert sensor.handler({}) == "partial\n"


def test_logreader_cursor_per_client(tmp_path):
    path = tmp_path / "multi.log"
    path.write_text("x\n")
    sensor = LogReaderSensor(str(path))
    assert sensor.handler({"client": "a"}) == "x\n"
    assert sensor.handler({"client": "b"}) == "x\n"
    assert sensor.handler({"client": "a"}) == ""


def test_process_actuators_start_kill_census():
    core = SensorServerCore("host")
    ledger = ActuatorLedger()
    backend = LocalProcessBackend()
    register_process_actuators(core, backend, ledger, lambda: 0.0)
    try:
        status, text = core.serve("start_node", {"count": "2"})
        assert text.startswith("OK,started 2")
        census = backend.census()
        assert len(census) == 2
        status, text = core.serve("kill_node", {"target": census[0]})
        assert text.startswith("OK,killed")
        status, text = core.serve("kill_node", {"target": "proc-404"})
        assert text.startswith("ERROR")
        assert len(backend.census()) == 1
        # replaying the acknowledged ledger reproduces the census
        alive = set()
        counter = 0
        for (_, actuator, args, result_status, detail) in ledger.records:
            if result_status != "OK":
                continue
            if actuator == "start_node":
                started = detail.split(": ", 1)[1].split("+")
                alive.update(started)
            elif actuator == "kill_node":
                alive.discard(dict(kv.split("=") for kv in args.split("&"))["target"])
        assert sorted(alive) == backend.census()
    finally:
        backend.shutdown()


def test_reboot_restarts_target():
    backend = LocalProcessBackend()
    try:
        (name,) = backend.start(1)
        assert backend.reboot(name)
        assert backend.census() == [name]
        assert not backend.reboot("ghost")
    finally:
        backend.shutdown()


def test_actuator_ledger_file_append(tmp_path):
    path = tmp_path / "ledger.csv"
    ledger = ActuatorLedger(str(path))
    ledger.record(5, "reboot", {"target": "n1"}, ActuatorResult("OK", "done"))
    ledger.record(9, "kill", {}, ActuatorResult("ERROR", "no such"))
    lines = path.read_text().splitlines()
    assert lines[0] == "5,reboot,target=n1,OK,done"
    assert lines[1] == "9,kill,,ERROR,no such"


def test_sensors_do_not_mutate_state_on_read():
    core = make_core()
    store = ValueStore()
    core.register("value", store.sensor)
    before = dict(store._values)
    core.serve("value", {"name": "x"})
    core.serve("hostname", {})
    assert store._values == before
