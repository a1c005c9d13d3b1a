import json

import numpy as np
import pytest

from dromkit import cli
from dromkit.cli import (
    EXIT_INFEASIBLE,
    EXIT_INPUT,
    EXIT_OK,
    EXIT_UNDECIDED,
    ProblemFormatError,
    load_fixture,
    load_problem,
    problem_to_dict,
    recheck_certificates,
    report_to_dict,
)
from dromkit.momentkit import AtomicMeasure, dirac_moments, moments


@pytest.fixture()
def ex51_data():
    return json.loads(cli.fixture_path("ex51").read_text())


def write_json(tmp_path, name, data):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def strip_clock(report_text):
    data = json.loads(report_text)
    data.pop("wall_clock")
    return json.dumps(data, sort_keys=True)


# ---------------------------------------------------------------------------
# loading and validation
# ---------------------------------------------------------------------------


def test_load_problem_round_trip(ex51_data):
    problem, options, expected = load_problem(ex51_data)
    dumped = problem_to_dict(problem, options)
    reloaded, _, _ = load_problem(dumped)
    assert np.array_equal(reloaded.A, problem.A)
    assert np.array_equal(reloaded.b, problem.b)
    assert reloaded.f == problem.f
    assert problem_to_dict(reloaded) == problem_to_dict(problem)
    assert expected is not None


def test_schema_rejects_missing_section(ex51_data):
    del ex51_data["support"]
    with pytest.raises(ProblemFormatError, match="support"):
        load_problem(ex51_data)


def test_schema_rejects_wrong_monomial_order(ex51_data):
    ex51_data["monomial_order"] = "lex"
    with pytest.raises(ProblemFormatError, match="monomial_order"):
        load_problem(ex51_data)


def test_loader_names_path_on_dimension_mismatch(ex51_data):
    ex51_data["h"]["matrix"]["b"] = [0.0, 1.0]
    with pytest.raises(ProblemFormatError, match=r"\$\.h\.matrix\.b"):
        load_problem(ex51_data)


def test_loader_names_path_on_bad_block(ex51_data):
    ex51_data["moment_set"][0]["polyhedral"]["T"] = [[1.0, 0.0]]
    ex51_data["moment_set"][0]["polyhedral"]["u"] = [0.0]
    with pytest.raises(ProblemFormatError, match=r"moment_set\[0\]"):
        load_problem(ex51_data)


def test_loader_rejects_nonlinear_bilinear_terms(ex51_data):
    ex51_data["h"] = {
        "bilinear_terms": [
            {"x_exponent": [2, 0, 0, 0], "xi_exponent": [1], "coeff": 1.0}
        ]
    }
    with pytest.raises(ProblemFormatError, match="bilinear"):
        load_problem(ex51_data)


def test_bilinear_loader_round_trips(ex51_data):
    problem, _, _ = load_problem(ex51_data)
    ex51_data["h"] = {
        "bilinear_terms": [
            {"x_exponent": list(xe), "xi_exponent": list(xie), "coeff": c}
            for xe, xie, c in problem.bilinear_terms()
        ]
    }
    rebuilt, _, _ = load_problem(ex51_data)
    assert np.array_equal(rebuilt.A, problem.A)
    assert np.array_equal(rebuilt.b, problem.b)


def test_equality_constraints_expand_to_pairs(tmp_path, ex51_data):
    ex51_data["decision_constraints"].append(
        {"terms": [{"exponent": [1, 0, 0, 0], "coeff": 1.0},
                   {"exponent": [0, 0, 0, 0], "coeff": -0.25}],
         "equality": True}
    )
    problem, _, _ = load_problem(ex51_data)
    assert len(problem.constraints) == 7  # 5 inequalities + the pair


# ---------------------------------------------------------------------------
# solve command
# ---------------------------------------------------------------------------


def test_solve_missing_file_names_path(capsys):
    code = cli.main(["solve", "/nonexistent/problem.json"])
    assert code == EXIT_INPUT
    assert "/nonexistent/problem.json" in capsys.readouterr().err


def test_solve_band_fixture_writes_report(tmp_path, ex51_data):
    ppath = write_json(tmp_path, "prob.json", ex51_data)
    rpath = str(tmp_path / "report.json")
    code = cli.main(["solve", ppath, "--report", rpath])
    assert code == EXIT_OK
    report = json.loads(open(rpath).read())
    assert report["status"] == "solved"
    assert report["optimal_value"] == pytest.approx(-0.0326, abs=5e-3)
    assert report["order_k"] == 3
    # stored report satisfies the published schema
    cli._validate(report, "report.schema.json")


def test_solve_report_deterministic(tmp_path, ex51_data):
    ppath = write_json(tmp_path, "prob.json", ex51_data)
    r1, r2 = str(tmp_path / "r1.json"), str(tmp_path / "r2.json")
    assert cli.main(["solve", ppath, "--seed", "7", "--report", r1]) == EXIT_OK
    assert cli.main(["solve", ppath, "--seed", "7", "--report", r2]) == EXIT_OK
    assert strip_clock(open(r1).read()) == strip_clock(open(r2).read())


def test_solve_report_recheck_reproduces_residuals(tmp_path, ex51_data):
    ppath = write_json(tmp_path, "prob.json", ex51_data)
    rpath = str(tmp_path / "report.json")
    cli.main(["solve", ppath, "--report", rpath])
    report = json.loads(open(rpath).read())
    problem, _, _ = load_problem(ex51_data)
    again = recheck_certificates(problem, report)
    stored = report["certificates"]
    assert again.feasibility_residual == pytest.approx(
        stored["feasibility_residual"], abs=1e-9
    )
    assert again.objective_match == pytest.approx(stored["objective_match"], abs=1e-9)
    assert again.complementarity == pytest.approx(stored["complementarity"], abs=1e-9)


def test_solve_dump_conic_listing(tmp_path, ex51_data):
    ppath = write_json(tmp_path, "prob.json", ex51_data)
    dpath = str(tmp_path / "program.txt")
    cli.main(["solve", ppath, "--dump-conic", dpath, "--report", str(tmp_path / "r.json")])
    text = open(dpath).read()
    assert "conic program" in text and "psd(" in text


def test_solve_infeasible_exit_code(tmp_path):
    # expectation of the constant -1 can never be nonnegative
    data = {
        "monomial_order": "grlex",
        "dimensions": {"n": 1, "p": 1, "d": 1},
        "objective": [{"exponent": [1], "coeff": 1.0}],
        "decision_constraints": [
            {"terms": [{"exponent": [1], "coeff": 1.0}]},
            {"terms": [{"exponent": [1], "coeff": -1.0}, {"exponent": [0], "coeff": 1.0}]},
        ],
        "support": [{"terms": [{"exponent": [1], "coeff": 1.0},
                               {"exponent": [2], "coeff": -1.0}]}],
        "h": {"matrix": {"A": [[0.0], [0.0]], "b": [-1.0, 0.0]}},
        "moment_set": [
            {"polyhedral": {"T": [[1.0, 0.0], [-1.0, 0.0]], "u": [-1.0, 1.0]}}
        ],
        "options": {"max_order": 2},
    }
    code = cli.main(["solve", write_json(tmp_path, "bad.json", data)])
    assert code == EXIT_INFEASIBLE


# ---------------------------------------------------------------------------
# examples command
# ---------------------------------------------------------------------------


def test_examples_listing(capsys):
    assert cli.main(["examples"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in cli.EXAMPLE_NAMES:
        assert name in out


def test_examples_unknown_name(capsys):
    assert cli.main(["examples", "ex99"]) == EXIT_INPUT
    err = capsys.readouterr().err
    assert "ex51" in err and "ex56" in err


def test_examples_band_fixture_passes(capsys):
    assert cli.main(["examples", "ex51"]) == EXIT_OK
    assert "ex51: PASS" in capsys.readouterr().out


def test_fixture_loading_all_names():
    for name in cli.EXAMPLE_NAMES:
        problem, options, expected = load_fixture(name)
        assert problem.n >= 1
        assert expected is not None and "optimal_value" in expected


# ---------------------------------------------------------------------------
# check-moments command
# ---------------------------------------------------------------------------


def test_check_moments_dirac(tmp_path, capsys):
    y = dirac_moments([2.0, 1.0], 4)
    data = {
        "monomial_order": "grlex",
        "dimensions": {"p": 2, "d": 4},
        "moments": y.values.tolist(),
        "support": [
            {"terms": [{"exponent": [1, 0], "coeff": 1.0}]},
            {"terms": [{"exponent": [0, 0], "coeff": 5.0},
                       {"exponent": [1, 0], "coeff": -1.0}]},
            {"terms": [{"exponent": [0, 1], "coeff": 1.0}]},
            {"terms": [{"exponent": [0, 0], "coeff": 5.0},
                       {"exponent": [0, 1], "coeff": -1.0}]},
        ],
    }
    code = cli.main(["check-moments", write_json(tmp_path, "m.json", data)])
    assert code == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["verdict"] == "measure"
    assert len(out["atoms"]) == 1
    assert np.allclose(out["atoms"][0], [2.0, 1.0], atol=1e-5)


def test_check_moments_two_atom_boundary_vector(tmp_path, capsys):
    mu = AtomicMeasure(atoms=[[0.9913], [3.0]], weights=[0.9315, 0.0040])
    data = {
        "monomial_order": "grlex",
        "dimensions": {"p": 1, "d": 5},
        "moments": moments(mu, 5).values.tolist(),
        "support": [{"terms": [{"exponent": [1], "coeff": 3.0},
                               {"exponent": [2], "coeff": -1.0}]}],
    }
    code = cli.main(["check-moments", write_json(tmp_path, "m.json", data)])
    assert code == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    got = sorted(a[0] for a in out["atoms"])
    assert got[0] == pytest.approx(0.9913, abs=1e-4)
    assert got[1] == pytest.approx(3.0, abs=1e-4)


def test_check_moments_infeasible_hankel(tmp_path, capsys):
    data = {
        "monomial_order": "grlex",
        "dimensions": {"p": 1, "d": 2},
        "moments": [1.0, 2.0, 1.0],
        "support": [{"terms": [{"exponent": [1], "coeff": 3.0},
                               {"exponent": [2], "coeff": -1.0}]}],
    }
    code = cli.main(["check-moments", write_json(tmp_path, "m.json", data)])
    assert code == EXIT_INFEASIBLE
    out = json.loads(capsys.readouterr().out)
    assert out["verdict"] == "no_measure"


def test_check_moments_schema_error(tmp_path, capsys):
    data = {"monomial_order": "grlex", "dimensions": {"p": 1, "d": 2}}
    code = cli.main(["check-moments", write_json(tmp_path, "m.json", data)])
    assert code == EXIT_INPUT
    err = capsys.readouterr().err
    assert "required property" in err and "at $" in err


def test_check_moments_length_guard(tmp_path, capsys):
    data = {
        "monomial_order": "grlex",
        "dimensions": {"p": 1, "d": 2},
        "moments": [1.0, 0.0],
        "support": [{"terms": [{"exponent": [1], "coeff": 1.0}]}],
    }
    code = cli.main(["check-moments", write_json(tmp_path, "m.json", data)])
    assert code == EXIT_INPUT
    assert "$.moments" in capsys.readouterr().err
