import json
import shutil

import pytest

from crosslayer.analysis import MonteCarlo, SWEEP_COLUMNS, select_configuration
from crosslayer.cli import main
from crosslayer.core import ValueModel, all_candidates
from crosslayer.harness import ConfigParseError, load_config, parse_config
from crosslayer.mnist import DataError, FIXTURE_FILES, fixture_path


def write(tmp_path, text, name="exp.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_parse_defaults_and_overrides(tmp_path):
    cfg = parse_config("workload = KNN_MNIST\nfault.value_model = uniform_in_range\n"
                       "sweep.thresholds = 0.1, 0.03\nregion.Distance.time_fraction = 0.9\n", tmp_path)
    assert cfg.trials == 1000 and cfg.error_rate == 0.001 and cfg.threshold == 0.10
    assert cfg.value_model is ValueModel.UNIFORM_IN_RANGE
    assert cfg.thresholds == (0.1, 0.03)
    assert cfg.region_time_fractions == {"Distance": 0.9}
    assert cfg.out_dir == tmp_path / "out"


@pytest.mark.parametrize("text", [
    "workload = CNN_MNIST\nfoo = 1\n",
    "fault.error_rate = 0.1\n",
    "workload = LENET\n",
    "workload = CNN_MNIST\nfault.trials = many\n",
    "workload = CNN_MNIST\nfault.trials = 5\nfault.trials = 6\n",
    "workload = CNN_MNIST\nfault.error_rate = 2\n",
    "workload = CNN_MNIST\nfault.value_model = gaussian\n",
    "workload = CNN_MNIST\nregion.C.bounds = 3\n",
    "workload = CNN_MNIST\noutput.formats = xml\n",
    "workload = CNN_MNIST\njust some words\n",
    "workload = CNN_MNIST\ncost.hare_multiplier = 0.5\n",
])
def test_strict_parsing_rejects(text, tmp_path):
    with pytest.raises(ConfigParseError):
        parse_config(text, tmp_path)


def test_missing_data_file_is_a_data_error(tmp_path):
    with pytest.raises(DataError):
        parse_config("workload = CNN_MNIST\ndata.weights = nope.bin\n", tmp_path)


def test_unknown_key_exits_2(tmp_path, capsys):
    path = write(tmp_path, "workload = CNN_MNIST\nfoo = 1\n")
    assert main(["run", "--config", str(path)]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1 and "foo" in err[0]


def test_corrupt_images_exit_3(tmp_path, capsys):
    (tmp_path / "img").write_bytes(b"\x00\x00\x08\x03broken")
    shutil.copy(fixture_path(FIXTURE_FILES["test_labels"]), tmp_path / "lab.gz")
    path = write(tmp_path, "workload = MLP_MNIST\ndata.test_images = img\ndata.test_labels = lab.gz\n")
    assert main(["run", "--config", str(path)]) == 3
    assert len(capsys.readouterr().err.strip().splitlines()) == 1


def test_bad_region_override_exits_2(tmp_path):
    path = write(tmp_path, "workload = CNN_MNIST\nregion.C.time_fraction = 0.1\n")
    assert main(["perf", "--config", str(path)]) == 2
    path = write(tmp_path, "workload = CNN_MNIST\nregion.Z.time_fraction = 0.1\n")
    assert main(["perf", "--config", str(path)]) == 2


def test_run_at_zero_error_rate(tmp_path):
    path = write(tmp_path, "workload = CNN_MNIST\nfault.error_rate = 0\nfault.trials = 3\n")
    assert main(["run", "--config", str(path)]) == 0
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert report["accuracy_loss"] == 0.0 and report["events"] == 0
    assert (tmp_path / "out" / "report.json.meta.json").exists()


def test_run_matches_library_evaluation(tmp_path, mlp, test_set):
    path = write(tmp_path, "workload = MLP_MNIST\nfault.error_rate = 0.01\nfault.master_seed = 77\n")
    assert main(["run", "--config", str(path), "--trials", "25", "--out", str(tmp_path / "o")]) == 0
    report = json.loads((tmp_path / "o" / "report.json").read_text())
    cfg = load_config(path)
    cfg.trials = 25
    lib = MonteCarlo(mlp, test_set, cfg.fault_spec, 25).evaluate(all_candidates(mlp.regions))
    assert report["mean_accuracy"] == lib.mean_accuracy
    assert report["stderr"] == lib.stderr
    assert report["per_region_loss"] == dict(lib.per_region_loss)
    assert report["store_audit"]["deviations"] == 0
    assert sum(sum(v.values()) for v in report["event_summary"].values()) == report["events"]


def test_audit_log_lines(tmp_path):
    path = write(tmp_path, "workload = KNN_MNIST\nfault.error_rate = 0.01\noutput.audit_log = true\n")
    assert main(["run", "--config", str(path), "--trials", "2"]) == 0
    lines = (tmp_path / "out" / "audit.log").read_text().splitlines()
    report = json.loads((tmp_path / "out" / "report.json").read_text())
    assert len(lines) == report["events"] > 0
    assert all(" region=Distance " in line and " action=passed" in line for line in lines)


def test_select_is_byte_identical_on_rerun(tmp_path, knn, test_set):
    path = write(tmp_path, "workload = KNN_MNIST\nfault.error_rate = 0.05\nselect.threshold = 0.03\n")
    for out in ("a", "b"):
        assert main(["select", "--config", str(path), "--trials", "10", "--out", str(tmp_path / out)]) == 0
    a = (tmp_path / "a" / "selection.json").read_bytes()
    assert a == (tmp_path / "b" / "selection.json").read_bytes()
    sel = json.loads(a)
    assert sel["final_config"] == [] and [r for r, _ in sel["demotion_sequence"]] == ["Distance"]


def test_sweep_csv_schema(tmp_path):
    path = write(tmp_path, "workload = KNN_MNIST\nsweep.thresholds = 0.10,0.05,0.03\n"
                           "sweep.error_rates = 0.0001,0.001,0.005,0.01\noutput.formats = csv\n")
    assert main(["sweep", "--config", str(path), "--trials", "3"]) == 0
    lines = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
    assert lines[0] == ",".join(SWEEP_COLUMNS)
    assert len(lines) == 13
    assert not (tmp_path / "out" / "sweep.json").exists()
    for line in lines[1:]:
        assert len(line.split(",")) == len(SWEEP_COLUMNS) and float(line.split(",")[-1]) >= 0


def test_perf_prints_three_columns(tmp_path, capsys):
    path = write(tmp_path, "workload = CNN_MNIST\n")
    assert main(["perf", "--config", str(path)]) == 0
    out = capsys.readouterr().out
    assert "BASELINE 1.0000" in out and "HaRE     1.6300" in out and "CL " in out
    perf = json.loads((tmp_path / "out" / "perf.json").read_text())
    assert perf["times"]["HaRE"]["normalized_time"] == 1.63
    assert 1.05 <= perf["times"]["CL"]["normalized_time"] <= 1.3


def test_perf_identity_model_is_all_ones(tmp_path):
    path = write(tmp_path, "workload = MLP_MNIST\ncost.hare_multiplier = 1\ncost.shr_store_factor = 0\n"
                           "cost.shr_check_cost = 0\ncost.switch_penalty = 0\nperf.non_crucial = I2\n")
    assert main(["perf", "--config", str(path)]) == 0
    perf = json.loads((tmp_path / "out" / "perf.json").read_text())
    assert [round(perf["times"][k]["normalized_time"], 12) for k in ("BASELINE", "HaRE", "CL")] == [1.0] * 3


def test_perf_rejects_crucial_region(tmp_path):
    path = write(tmp_path, "workload = MLP_MNIST\nperf.non_crucial = Input\n")
    assert main(["perf", "--config", str(path)]) == 2


def test_fast_flag_sets_200_trials(tmp_path):
    path = write(tmp_path, "workload = KNN_MNIST\nfault.error_rate = 0\n")
    assert main(["run", "--config", str(path), "--fast"]) == 0
    assert json.loads((tmp_path / "out" / "report.json").read_text())["trials"] == 200


def test_seed_override_changes_results(tmp_path):
    path = write(tmp_path, "workload = KNN_MNIST\nfault.error_rate = 0.01\n")
    main(["run", "--config", str(path), "--trials", "5", "--seed", "1", "--out", str(tmp_path / "s1")])
    main(["run", "--config", str(path), "--trials", "5", "--seed", "2", "--out", str(tmp_path / "s2")])
    a = json.loads((tmp_path / "s1" / "report.json").read_text())
    b = json.loads((tmp_path / "s2" / "report.json").read_text())
    assert a["fault"]["master_seed"] == 1 and b["fault"]["master_seed"] == 2
    assert a["events"] != b["events"] or a["mean_accuracy"] != b["mean_accuracy"]
