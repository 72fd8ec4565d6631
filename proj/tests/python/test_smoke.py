"""End-to-end smoke tests for the python surface and the CLI file formats.

Run via ctest (which sets PYTHONPATH to the staged build-tree package and
PERISK_CLI to the built binary) or against an installed wheel with
PERISK_CLI pointing at a perisk executable.
"""

import json
import math
import os
import pathlib
import subprocess

import jsonschema
import pytest

import perisk

REPO = pathlib.Path(__file__).resolve().parents[2]
SCHEMAS = pathlib.Path(os.environ.get("PERISK_SCHEMAS", REPO / "schemas"))


def load_schema(name):
    return json.loads((SCHEMAS / name).read_text())


# ---------------------------------------------------------------------------
# core bindings


def test_robustness_of_a_simple_invariant():
    f = perisk.parse_formula("(always 0 3 (geq x 1 1))")
    rows = [[3.0], [2.0], [1.5], [4.0]]
    assert perisk.robustness(["x"], rows, f) == pytest.approx(0.5)
    # a dip below the bound flips the sign
    rows[2] = [0.25]
    assert perisk.robustness(["x"], rows, f) == pytest.approx(-0.75)
    # smooth semantics lower-bounds the classical minimum
    smooth = perisk.robustness(["x"], rows, f, metric="smooth", smooth_k=10.0)
    assert smooth <= -0.75
    assert -0.75 - smooth <= math.log(4) / 10.0


def test_formula_round_trip_and_errors():
    text = "(eventually 0 2 (leq dist_m 5))"
    assert perisk.format_formula(perisk.parse_formula(text)) == text
    with pytest.raises(ValueError):
        perisk.parse_formula("(always 0 oops (geq x 0 1))")


def test_ranking_orders_least_safe_first():
    f = perisk.parse_formula("(always 0 2 (geq x 0 1))")
    safe = [[0.9], [0.8], [0.9]]
    marginal = [[0.3], [0.1], [0.4]]
    violating = [[0.5], [-0.7], [0.5]]
    order = perisk.rank_trajectories(["x"], [safe, marginal, violating], f)
    assert [i for i, _ in order] == [2, 1, 0]
    values = [r for _, r in order]
    assert values == sorted(values)


def test_binary_classification_metrics():
    assert perisk.roc_auc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == pytest.approx(1.0)
    assert perisk.roc_auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == pytest.approx(0.0)
    assert perisk.roc_auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == pytest.approx(0.5)
    bce = perisk.bce([0.9, 0.1], [1, 0])
    assert bce == pytest.approx(-math.log(0.9), rel=1e-9)
    with pytest.raises(ValueError):
        perisk.bce([0.5], [2])


def test_assignment_and_box_matching():
    pairs, total = perisk.solve_assignment([[4.0, 1.0], [2.0, 8.0]])
    assert sorted(pairs) == [(0, 1), (1, 0)]
    assert total == pytest.approx(3.0)

    box = [0.0, 0.0, 2.0, 2.0]
    assert perisk.iou(box, box) == pytest.approx(1.0)
    shifted = [1.0, 0.0, 3.0, 2.0]
    assert perisk.iou(box, shifted) == pytest.approx(2.0 / 6.0)
    pairs, _ = perisk.match_boxes([box], [shifted, [40.0, 40.0, 41.0, 41.0]])
    assert pairs == [(0, 0)]


def test_sampling_arithmetic():
    assert perisk.required_samples(1e-6, 0.01) == 10_000_000_000
    xs = [-1000.0, -1000.0]
    assert perisk.log_sum_exp(xs) == pytest.approx(-1000.0 + math.log(2.0))
    # elite threshold of an ascending batch, with the gamma floor
    values = [float(i) for i in range(100)]
    assert perisk.cem_threshold(values, 0.95, 0.0) == 4.0
    assert perisk.cem_threshold(values, 0.95, 10.0) == 10.0


def test_exact_enumeration_matches_the_documented_instance():
    result = perisk.enumerate_failure_probability()
    assert result["n_total"] == 2048
    assert result["mu"] == pytest.approx(5.793318e-07, rel=1e-5)
    # a detector blind at every range fails almost surely
    blind = perisk.enumerate_failure_probability(intercept=-30.0, slope=0.0)
    assert blind["mu"] > 0.9999
    # a monitor window wider than the fixed 12-step trace is rejected
    with pytest.raises(ValueError):
        perisk.enumerate_failure_probability(
            formula_text="(always 0 40 (geq dist_m 2.0))"
        )


def test_synthetic_log_generation(tmp_path):
    path = tmp_path / "log.jsonl"
    perisk.gen_synthetic_log(str(path), 50, 3)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 50
    record = json.loads(lines[0])
    assert set(record) >= {"category", "occlusion", "loc", "rot_y", "detected"}


# ---------------------------------------------------------------------------
# CLI round trip validated against the published schemas

CLI = os.environ.get("PERISK_CLI")


@pytest.mark.skipif(CLI is None, reason="PERISK_CLI not set")
def test_cli_reports_validate_against_schemas(tmp_path):
    config = tmp_path / "run.cfg"
    config.write_text(
        "[scenario]\npreset = small\n"
        "[pem]\nkind = logistic_gap\nintercept = 7.0\nslope = -1.1\n"
        "[cem]\nstages = 2\nstage_samples = 30\neval_samples = 40\n"
        "epochs = 40\npretrain_rollouts = 30\n"
        "[run]\nseeds = 1, 2\n"
    )
    out = tmp_path / "out"
    subprocess.run(
        [CLI, "estimate", "--config", str(config), "--method", "adaptive",
         "--out", str(out)],
        check=True,
        capture_output=True,
    )

    report_schema = load_schema("estimation_report.schema.json")
    for seed in (1, 2):
        report = json.loads((out / f"report_seed{seed}.json").read_text())
        jsonschema.validate(report, report_schema)
        assert report["n_total"] == 40

    aggregate = json.loads((out / "aggregate.json").read_text())
    jsonschema.validate(aggregate, load_schema("aggregate.schema.json"))
    assert aggregate["method"] == "adaptive"
    assert [e["seed"] for e in aggregate["per_seed"]] == [1, 2]

    # stage diagnostics are json-lines with the documented keys
    diag_lines = (out / "diagnostics_seed1.jsonl").read_text().splitlines()
    assert diag_lines
    for line in diag_lines:
        diag = json.loads(line)
        assert set(diag) == {"stage", "gamma_k", "n_fail", "mean_log_weight",
                             "loss"}


@pytest.mark.skipif(CLI is None, reason="PERISK_CLI not set")
def test_cli_oracle_agrees_with_the_bound_enumeration(tmp_path):
    config = tmp_path / "oracle.cfg"
    config.write_text(
        "[scenario]\npreset = small\n"
        "[pem]\nkind = logistic_gap\nintercept = 7.0\nslope = -1.1\n"
    )
    out = tmp_path / "oracle.json"
    subprocess.run(
        [CLI, "oracle", "--config", str(config), "--out", str(out)],
        check=True,
        capture_output=True,
    )
    cli_result = json.loads(out.read_text())
    bound = perisk.enumerate_failure_probability()
    assert cli_result["mu"] == pytest.approx(bound["mu"], rel=1e-12)
    assert cli_result["n_total"] == bound["n_total"]
