"""End-to-end runs of the command line entry point against temporary configs."""

import json
from pathlib import Path

import numpy as np
import pytest

from spherical_ot.main import main
from spherical_ot.sphere import random_points

CIRCLE = {
    "dimension": 1,
    "source": {"points": [[1.0, 0.0], [0.0, 1.0]]},
    "target": {"points": [[-1.0, 0.0], [0.0, -1.0]]},
}

FAST_VERIFY = {
    "suites": ["inverse_map", "double_transform", "monotonicity", "snell"],
    "pairs": 1000,
    "gradient_points": 100,
    "instances": 2,
    "atoms": 4,
    "max_n": 3,
    "grid_n": 200,
    "rays": 200,
}


@pytest.fixture
def experiment(tmp_path):
    def write(data: dict, name: str = "experiment.json") -> Path:
        payload = {"output_dir": str(tmp_path / "out"), **data}
        path = tmp_path / name
        path.write_text(json.dumps(payload), encoding="utf-8")
        return path
    return write


def read_json(path: Path) -> dict:
    return json.loads(path.read_text(encoding="utf-8"))


def test_solve_writes_plan_and_duals(experiment, tmp_path):
    config = experiment(CIRCLE)
    assert main(["solve", str(config)]) == 0
    plan = read_json(tmp_path / "out" / "plan.json")
    assert plan["pairs"] == [[0, 0, 0.5], [1, 1, 0.5]]
    assert plan["kernel"] == "log"
    assert plan["cost"] == pytest.approx(-np.log(2.0))
    assert plan["monotonicity"]["monotone"] is True
    assert len(plan["config_hash"]) == 64
    duals = (tmp_path / "out" / "duals.csv").read_text().splitlines()
    assert duals[0] == f"# config_hash={plan['config_hash']}"
    assert duals[2] == "side,index,value"
    assert len(duals) == 3 + 4


def test_reruns_are_byte_identical(experiment, tmp_path):
    config = experiment(CIRCLE)
    assert main(["solve", str(config)]) == 0
    first = (tmp_path / "out" / "plan.json").read_bytes()
    assert main(["solve", str(config)]) == 0
    assert (tmp_path / "out" / "plan.json").read_bytes() == first


def test_output_dir_does_not_change_the_hash(experiment, tmp_path):
    config = experiment(CIRCLE)
    assert main(["solve", str(config), "--output-dir", str(tmp_path / "elsewhere")]) == 0
    assert main(["solve", str(config)]) == 0
    moved = read_json(tmp_path / "elsewhere" / "plan.json")
    assert moved["config_hash"] == read_json(tmp_path / "out" / "plan.json")["config_hash"]


def test_imbalanced_masses_exit_2(experiment):
    config = experiment({**CIRCLE, "target": {**CIRCLE["target"], "weights": [0.5, 0.25]}})
    assert main(["solve", str(config)]) == 2


def test_coinciding_diracs_exit_3(experiment):
    config = experiment({"dimension": 1, "source": {"points": [[1.0, 0.0]]}, "target": {"points": [[1.0, 0.0]]}})
    assert main(["solve", str(config)]) == 3


def test_bad_configs_exit_1(experiment, tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    assert main(["solve", str(broken)]) == 1
    assert main(["solve", str(experiment({"kernel": "gaussian"}))]) == 1
    assert main(["solve", str(experiment(CIRCLE)), "--set", "source.n=1"]) == 1


def test_antipodal_reflector(experiment, tmp_path):
    config = experiment({"source": {"n": 2000}, "target": {"generator": "antipodal"}, "reflector": {"rays": 200}})
    assert main(["reflector", str(config)]) == 0
    out = tmp_path / "out"
    reflector = read_json(out / "reflector.json")
    p1, p2 = reflector["focal_params"]
    assert p1 == pytest.approx(p2, rel=1e-9)
    assert reflector["duality_bridge"]["passed"] is True
    assert read_json(out / "raytrace.json")["passed"] is True
    obj = (out / "reflector.obj").read_text().splitlines()
    assert sum(line.startswith("v ") for line in obj) == 2000
    assert sum(line.startswith("f ") for line in obj) == 2 * 2000 - 4
    cells = (out / "cells.csv").read_text().splitlines()
    assert cells[2] == "i,p_i,G_i,nu_i,rel_err"

    exported = tmp_path / "mesh"
    assert main(["export-mesh", str(config), "--set", f"reflector_file={json.dumps(str(out / 'reflector.json'))}",
                 "--set", "source.n=500", "--output-dir", str(exported)]) == 0
    mesh = (exported / "reflector.obj").read_text().splitlines()
    assert sum(line.startswith("v ") for line in mesh) == 500


def test_reflector_non_convergence_exits_4(experiment, tmp_path):
    config = experiment({
        "source": {"n": 1000},
        "target": {"generator": "antipodal", "weights": [0.75, 0.25]},
        "reflector": {"max_iter": 1},
    })
    assert main(["reflector", str(config)]) == 4
    failure = read_json(tmp_path / "out" / "reflector_failure.json")
    assert len(failure["residuals"]) == 2


def test_recover_map(experiment, tmp_path):
    rng = np.random.default_rng(11)
    config = experiment({
        "source": {"points": random_points(6, 2, rng).tolist()},
        "target": {"points": random_points(6, 2, rng).tolist()},
        "recover": {"grid_n": 100},
    })
    assert main(["recover-map", str(config)]) == 0
    out = tmp_path / "out"
    summary = read_json(out / "map_summary.json")
    assert summary["monge_cost"] == pytest.approx(summary["kantorovich_cost"], abs=1e-8)
    assert summary["max_composition_error"] <= 1e-8
    assert summary["flagged_points"] == 0
    assert summary["uniqueness_mismatches"] == 0
    rows = (out / "map.csv").read_text().splitlines()
    assert rows[2] == "x0,x1,x2,Tx0,Tx1,Tx2,index,differentiable"
    assert len(rows) == 3 + 6
    assert len((out / "grid_map.csv").read_text().splitlines()) == 3 + 100


def test_verify_passes_for_the_log_kernel(experiment, tmp_path):
    config = experiment({"verify": FAST_VERIFY})
    assert main(["verify", str(config)]) == 0
    report = read_json(tmp_path / "out" / "verify.json")
    assert [r["status"] for r in report["results"]] == ["pass"] * 5


def test_verify_flags_a_corrupted_plan(experiment, tmp_path):
    plan_file = tmp_path / "plan.json"
    plan_file.write_text(json.dumps({"pairs": [[0, 0, 0.5], [1, 1, 0.5]]}), encoding="utf-8")
    config = experiment({
        "dimension": 1,
        "source": {"points": [[1.0, 0.0], [0.0, 1.0]]},
        "target": {"points": [[0.0, -1.0], [-1.0, 0.0]]},
        "verify": {**FAST_VERIFY, "suites": ["monotonicity"], "plan_file": str(plan_file)},
    })
    assert main(["verify", str(config)]) == 5
    report = read_json(tmp_path / "out" / "verify.json")
    assert report["results"][1]["metrics"]["plan_file"]["monotone"] is False


def test_verify_rejects_the_quadratic_cost(experiment, tmp_path):
    config = experiment({"verify": FAST_VERIFY})
    assert main(["verify", str(config), "--kernel", "power:-1"]) == 5
    statuses = [r["status"] for r in read_json(tmp_path / "out" / "verify.json")["results"]]
    assert statuses == ["fail"] + ["skipped"] * 4
