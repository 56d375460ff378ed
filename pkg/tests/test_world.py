import time
from dataclasses import replace

import pytest
import yaml

from common.errors import ConfigError
from common.message_types import HAPPY_PATH
from common.scenario_config import FaultConfig, load_scenario, parse_scenario
from device.zk_device import TAMPER_MODES
from server.world import World, run_scenario, run_session
from conftest import SCENARIO_DIR, scenario_path


def _sessions(result):
    return {s["session"]: s for s in result.sessions}


def _labels(transcript, session_id):
    labels = []
    for line in transcript:
        _, sid, label, *_ = line.split("|")
        if sid == session_id and (not labels or labels[-1] != label):
            labels.append(label)
    return labels


@pytest.fixture(scope="module")
def happy():
    return run_scenario(load_scenario(scenario_path("happy_path")))


class TestHappyPath:
    def test_session_withdraws(self, happy):
        s1 = _sessions(happy)["s1"]
        assert s1["state"] == "WITHDRAWN"
        assert tuple(s1["history"]) == HAPPY_PATH
        assert happy.expectations_met
        assert happy.violations == []

    def test_transcript_walks_every_state(self, happy):
        assert tuple(_labels(happy.transcript, "s1")) == HAPPY_PATH

    def test_transcript_line_shape(self, happy):
        tick, sid, label, kind, route, digest = happy.transcript[0].split("|")
        assert (sid, label, kind) == ("s1", "INIT", "DepositRequest")
        assert route == "rsu-b>escrow"
        assert int(tick) >= 1

    def test_chain_is_verified(self, happy):
        assert _sessions(happy)["s1"]["chain"] == "accept"
        assert "s1" in happy.chains

    def test_escrow_paid_the_producer(self, happy):
        assert happy.escrow == "s1|WITHDRAWN|100|rsu-b|tesla-a\n"

    def test_decision_forwards_report(self, happy):
        decision = _sessions(happy)["s1"]["decision"]
        assert decision["accepted"]
        assert decision["outputs"] == {"T": 1700000000, "C": 1}

    def test_metrics(self, happy):
        metrics = happy.metrics
        assert metrics["prove"]["count"] == 2
        assert metrics["verify"]["count"] == 1
        assert metrics["write"]["count"] == 1
        assert metrics["read"]["count"] == 2
        assert metrics["session"]["count"] == 1
        assert (metrics["accepts"], metrics["rejects"]) == (1, 0)

    def test_ledger_holds_proof(self, happy):
        assert any(line.split("|")[2] == "proof" for line in happy.ledger.splitlines())

    def test_finishes_within_five_seconds(self, happy):
        started = time.perf_counter()
        run_scenario(load_scenario(scenario_path("happy_path")))
        assert time.perf_counter() - started < 5.0

    def test_runs_are_deterministic(self, happy):
        again = run_scenario(load_scenario(scenario_path("happy_path")))
        assert again.transcript == happy.transcript
        assert again.ledger == happy.ledger
        assert again.escrow == happy.escrow


def test_tampered_producers_are_refused():
    result = run_scenario(load_scenario(scenario_path("tamper")))
    sessions = _sessions(result)
    assert all(s["state"] == "FAILED(proof)" for s in sessions.values())
    details = {sid: s["decision"]["detail"] for sid, s in sessions.items()}
    assert details == {
        "forge": "public-mismatch",
        "corrupt": "opening",
        "swap": "key-mismatch",
        "rogue-key": "unregistered",
        "replay": "metadata-unbound",
        "elsewhere": "guard:city",
    }
    assert all(line.split("|")[1] == "REFUNDED" for line in result.escrow.splitlines())
    assert result.metrics["accepts"] == 0


def test_funds_failures():
    result = run_scenario(load_scenario(scenario_path("funds")))
    sessions = _sessions(result)
    assert sessions["short"]["state"] == "FAILED(funds)"
    assert sessions["broke"]["state"] == "FAILED(timeout)"
    assert result.escrow == "short|REFUNDED|50|rsu-b|tesla-a\n"
    assert result.expectations_met


def test_siren_forwards_level():
    result = run_scenario(load_scenario(scenario_path("siren")))
    alarm = _sessions(result)["alarm"]
    assert alarm["state"] == "WITHDRAWN"
    assert alarm["decision"]["outputs"] == {"level": 1050}


def test_delayed_messages_keep_order():
    scenario = replace(load_scenario(scenario_path("happy_path")), faults=FaultConfig(0.0, 3))
    result = run_scenario(scenario)
    assert _sessions(result)["s1"]["state"] == "WITHDRAWN"


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_lossy_network_conserves_tokens(seed):
    scenario = replace(load_scenario(scenario_path("happy_path"), seed=seed), faults=FaultConfig(0.9, 0))
    world = World(scenario)
    total = world.chain.escrow.total_tokens()
    run_session(world, scenario.sessions[0])
    assert world.session("s1").label in ("WITHDRAWN", "FAILED(timeout)")
    assert world.chain.escrow.total_tokens() == total


def test_run_session_filters_transcript():
    scenario = load_scenario(scenario_path("funds"))
    world = World(scenario)
    lines = run_session(world, scenario.sessions[0])
    assert lines
    assert all(line.split("|")[1] == "short" for line in lines)
    assert world.session("short").label == "FAILED(funds)"


class TestScenarioConfig:
    @pytest.fixture
    def raw(self):
        with open(scenario_path("happy_path"), encoding="utf-8") as f:
            return yaml.safe_load(f)

    def test_seed_override(self):
        assert load_scenario(scenario_path("happy_path"), seed=99).seed == 99

    def test_unknown_contract(self, raw):
        raw["sessions"][0]["contract_x"] = "x"
        with pytest.raises(ConfigError, match=r"field 'sessions\[0\]\.contract_x': unknown contract 'x'"):
            parse_scenario(raw, str(SCENARIO_DIR))

    def test_unknown_node(self, raw):
        raw["devices"][1]["node"] = "node-z"
        with pytest.raises(ConfigError, match=r"devices\[1\]\.node"):
            parse_scenario(raw)

    def test_unknown_city(self, raw):
        raw["contracts"][1]["guards"][0]["constant"] = "Atlantis"
        with pytest.raises(ConfigError, match="unknown city 'Atlantis'"):
            parse_scenario(raw)

    def test_bad_drop_rate(self, raw):
        raw["faults"] = {"drop_rate": 1.5}
        with pytest.raises(ConfigError, match="faults.drop_rate"):
            parse_scenario(raw)

    def test_missing_field(self, raw):
        del raw["sessions"][0]["amount"]
        with pytest.raises(ConfigError, match=r"sessions\[0\]\.amount"):
            parse_scenario(raw)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="field '<file>'"):
            load_scenario(str(tmp_path / "absent.yaml"))

    def test_missing_firmware(self, raw):
        raw["devices"][0]["firmware"] = "absent.prog"
        with pytest.raises(ConfigError, match=r"field 'devices\[0\]\.firmware': cannot read 'absent.prog'"):
            parse_scenario(raw, str(SCENARIO_DIR))

    def test_malformed_firmware(self, raw, tmp_path):
        (tmp_path / "broken.prog").write_text("inputs 1\nw2 = mul w1 w5\noutput w2\n")
        raw["devices"][1]["firmware"] = "broken.prog"
        with pytest.raises(ConfigError, match=r"field 'devices\[1\]\.firmware': 'broken.prog' is not a gate program"):
            parse_scenario(raw, str(tmp_path))

    def test_firmware_is_loaded_once(self):
        scenario = load_scenario(scenario_path("siren"))
        assert all(d.program is not None for d in scenario.devices)

    @pytest.mark.parametrize("mode", TAMPER_MODES)
    def test_device_tamper_modes_accepted(self, raw, mode):
        raw["devices"][0]["tamper"] = mode
        assert parse_scenario(raw).devices[0].tamper == mode

    def test_unknown_tamper_mode(self, raw):
        raw["devices"][0]["tamper"] = "overclock"
        with pytest.raises(ConfigError, match=r"devices\[0\]\.tamper"):
            parse_scenario(raw)
