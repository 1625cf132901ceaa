"""Command-line harness, exercised in process via main(argv)."""

import copy
import json
import os

import pytest

from ddrollout import make_instance
from ddrollout.cli import main
from ddrollout.serialization import dumps_json, read_json, sample_set_to_doc, write_text


def run_cli(capsys, *argv):
    code = main(list(argv))
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def test_basic_run_reports_a_passing_chain(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "run", "--instance", "grid",
                           "--ell", "2", "--horizon", "30",
                           "--out-dir", str(tmp_path))
    assert code == 0
    assert "status=stopped" in out
    assert "improvement chain:" in out and ": PASS" in out
    # artifacts land where asked and round-trip as a run document
    doc = read_json(tmp_path / "basic-0.json")
    assert doc["format"] == "rollout-run"
    assert (tmp_path / "summary.csv").exists()


@pytest.mark.parametrize("sets,tour", [
    ("cdb", "ACDBA"),
    ("cdb,bcd", "ABCDA"),
    ("cdb,bcd,abd", "ABDCA"),
])
def test_tour_runs_recover_the_expected_tours(capsys, tmp_path, sets, tour):
    code, out, _ = run_cli(capsys, "run", "--instance", "tsp",
                           "--variant", "multi-policy", "--set", sets,
                           "--out-dir", str(tmp_path))
    assert code == 0
    assert f"tour: {tour}" in out


def test_multiagent_run_beats_the_base_cost(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "run", "--instance", "grid",
                           "--variant", "multiagent", "--ell", "2",
                           "--horizon", "30", "--out-dir", str(tmp_path))
    assert code == 0
    cost = float(out.split("total_cost=")[1].split()[0])
    assert cost <= 10.0


def test_disturbance_recoverable_is_not_gated(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "run", "--instance", "spiral",
                           "--variant", "disturbance", "--ell", "3",
                           "--horizon", "120",
                           "--disturb-step", "3", "--disturb", "0.5,-0.5",
                           "--out-dir", str(tmp_path))
    assert code == 0
    assert "not gated after disturbance" in out


def test_disturbance_unreachable_is_flagged_not_crashed(capsys, tmp_path):
    code, out, err = run_cli(capsys, "run", "--instance", "spiral",
                             "--variant", "disturbance", "--ell", "3",
                             "--horizon", "40",
                             "--disturb-step", "2", "--disturb", "60,60",
                             "--out-dir", str(tmp_path))
    assert code == 2
    assert "status=infeasible_after_disturbance" in out
    assert "flagged" in err


def test_verify_passes_on_every_named_set(capsys):
    for instance in ("spiral", "integrator", "grid", "tsp"):
        bundle = make_instance(instance)
        pool = dict(bundle.sample_sets)
        if bundle.augmented_sets:
            pool.update(bundle.augmented_sets)
        for name in pool:
            code, out, err = run_cli(capsys, "verify", "--instance", instance,
                                     "--set", name)
            assert code == 0, (instance, name, err)


def test_verify_rejects_a_tampered_set_file(capsys, tmp_path):
    bundle = make_instance("spiral")
    doc = copy.deepcopy(sample_set_to_doc(bundle.sample_sets["trajectory-0"]))
    doc["entries"][2]["successor"] = {"__vector__": [50.0, 50.0]}
    path = tmp_path / "bad-set.json"
    write_text(dumps_json(doc), str(path))
    code, _, err = run_cli(capsys, "verify", "--instance", "spiral",
                           "--set-file", str(path))
    assert code == 1
    assert "rejected" in err


def test_verify_accepts_the_same_file_untampered(capsys, tmp_path):
    bundle = make_instance("spiral")
    doc = sample_set_to_doc(bundle.sample_sets["trajectory-0"])
    path = tmp_path / "good-set.json"
    write_text(dumps_json(doc), str(path))
    code, _, err = run_cli(capsys, "verify", "--instance", "spiral",
                           "--set-file", str(path))
    assert code == 0, err


def test_table_runs_for_the_tour_instance(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "table", "--instance", "tsp",
                           "--out-dir", str(tmp_path))
    assert code == 0
    rows = {line.split()[2]: line.split()[4] for line in out.splitlines()
            if line.startswith("four-city-tour")}
    assert rows == {"[cdb]": "11.0000", "[merged]": "7.0000",
                    "[merged+abd]": "4.0000"}
    assert (tmp_path / "table.csv").exists()


def test_list_instances_names_all_four(capsys):
    code, out, _ = run_cli(capsys, "list-instances")
    assert code == 0
    for name in ("hybrid-spiral", "double-integrator", "two-vehicle-grid",
                 "four-city-tour"):
        assert name in out


def test_unknown_instance_is_a_clean_error(capsys):
    code, _, err = run_cli(capsys, "run", "--instance", "nope")
    assert code == 1
    assert "error" in err


def test_config_file_merges_and_flags_override(capsys, tmp_path):
    cfg_path = tmp_path / "job.json"
    cfg_path.write_text(json.dumps({
        "instance": "grid", "ell": 2, "horizon": 30,
        "out_dir": str(tmp_path / "from-config"),
    }))
    code, out, _ = run_cli(capsys, "run", "--config", str(cfg_path))
    assert code == 0
    assert os.path.exists(tmp_path / "from-config" / "basic-0.json")

    override = tmp_path / "override"
    code, out, _ = run_cli(capsys, "run", "--config", str(cfg_path),
                           "--out-dir", str(override))
    assert code == 0
    assert os.path.exists(override / "basic-0.json")
