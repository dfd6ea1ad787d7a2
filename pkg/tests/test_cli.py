import csv
import math
import os

import numpy as np
import pytest
import yaml

from multidefault.cli import EXIT_ASSERT, EXIT_CAPACITY, EXIT_CONFIG, EXIT_OK, fmt, main
from multidefault.config import ScenarioConfig
from multidefault.errors import ConfigError

BASE = {
    "grid": {"t_max": 2.0, "n_steps": 400},
    "model": {"kind": "constant", "rates": [1.0, 2.0]},
    "run": {"seed": 7, "n_paths": 2000},
}
WITNESS = {
    "grid": {"t_max": 1.0, "n_steps": 32},
    "model": {"kind": "factor_affine", "base": [0.5, 1.0], "slope": [0.5, 1.0]},
    "lattice": {"kind": "binomial", "n_steps": 4, "x0": 2.0, "step": 0.5, "p_up": [0.3, 0.7]},
}


def write(tmp_path, data, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def run(tmp_path, cmd, data, out="out", *extra):
    cfg = write(tmp_path, data, f"{out}.yaml")
    code = main([cmd, "--config", cfg, "--out", str(tmp_path / out), *extra])
    return code, tmp_path / out


def test_fmt_round_trips():
    for x in (0.1, 1 / 3, math.pi * 1e-300, 2.0 ** 60):
        assert float(fmt(x)) == x
    assert fmt(True) == "1" and fmt((1, 2.5)) == "1;2.5"


def test_config_round_trip():
    cfg = ScenarioConfig.from_dict(BASE)
    again = ScenarioConfig.from_text(cfg.dump())
    assert again.data == cfg.data and again.digest() == cfg.digest()
    assert cfg.run["tol_dpp"] == 1e-7


def test_parse_error_reports_line():
    with pytest.raises(ConfigError, match="line 2, column 12"):
        ScenarioConfig.from_text("grid: {}\nmodel: kind: constant\n")


@pytest.mark.parametrize("patch, field", [
    ({"model": {"kind": "nope"}}, "model.kind"),
    ({"grid": {"t_max": 2.0, "n_steps": 0}}, "grid.n_steps"),
    ({"run": {"seed": 1.5}}, "run.seed"),
    ({"bogus": {}}, "bogus"),
    ({"claims": [{"type": "survival", "level": 3, "T": 1.0}]}, "claims[0].level"),
    ({"claims": [{"type": "survival", "level": 1, "T": 1.001}]}, "claims[0].T"),
])
def test_invalid_fields_are_named(patch, field):
    with pytest.raises(ConfigError, match=field.replace("[", r"\[").replace("]", r"\]")):
        ScenarioConfig.from_dict({**BASE, **patch})


def test_broken_kernel_exits_2(tmp_path):
    data = {**BASE, "grid": {"t_max": 1.0, "n_steps": 10},
            "lattice": {"kind": "explicit", "values": [[0.0], [0.0, 1.0]],
                        "kernels": [[[[0.5, 0.4]]]]}}
    code, _ = run(tmp_path, "simulate", data)
    assert code == EXIT_CONFIG


def test_missing_config_exits_2(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "none.yaml"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_simulate_outputs(tmp_path):
    code, out = run(tmp_path, "simulate", BASE)
    assert code == EXIT_OK
    rows = read_csv(out / "scenarios.csv")
    assert len(rows) == 2000
    assert list(rows[0]) == ["path_id", "E_1", "E_2", "tau_1", "tau_2", "censored_1", "censored_2"]
    summary = read_csv(out / "summary.csv")
    assert summary[1]["metric"] == "ordered_fraction" and float(summary[1]["value"]) == 1.0
    man = yaml.safe_load((out / "manifest.yaml").read_text())
    assert man["seed"] == 7 and {o["file"] for o in man["outputs"]} == {"scenarios.csv", "summary.csv"}
    assert ScenarioConfig.load(str(out / "config.yaml")).digest() == man["config_sha256"]


def test_zero_paths_gives_header_only(tmp_path):
    code, out = run(tmp_path, "simulate", {**BASE, "run": {"n_paths": 0}})
    assert code == EXIT_OK
    assert (out / "scenarios.csv").read_text().count("\n") == 1


def test_determinism_and_seed_override(tmp_path):
    _, a = run(tmp_path, "simulate", BASE, "a")
    _, b = run(tmp_path, "simulate", BASE, "b")
    _, c = run(tmp_path, "simulate", BASE, "c", "--seed", "8")
    for name in ("scenarios.csv", "summary.csv", "config.yaml"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    assert (a / "scenarios.csv").read_bytes() != (c / "scenarios.csv").read_bytes()


def test_threads_do_not_change_output(tmp_path):
    _, a = run(tmp_path, "simulate", BASE, "a")
    _, b = run(tmp_path, "simulate", BASE, "b", "--threads", "3")
    assert (a / "scenarios.csv").read_bytes() == (b / "scenarios.csv").read_bytes()


def test_price_golden_values(tmp_path):
    data = {"grid": {"t_max": 2.0, "n_steps": 10_000},
            "model": {"kind": "constant", "rates": [1.0, 2.0]},
            "claims": [{"id": "s2", "type": "survival", "level": 2, "T": 1.0},
                       {"id": "r1", "type": "recovery", "level": 1, "window": [0.0, 1.0], "M": 1.0},
                       {"id": "s2_late", "type": "survival", "level": 2, "T": 1.0, "t": 0.5,
                        "regimes": [[1, [0.4]]]}]}
    code, out = run(tmp_path, "price", data)
    assert code == EXIT_OK
    vals = {r["claim_id"]: float(r["value"]) for r in read_csv(out / "pricing.csv")}
    assert vals["s2"] == pytest.approx(2 * math.exp(-1) - math.exp(-2), abs=1e-6)
    assert vals["r1"] == pytest.approx(1 - math.exp(-1), abs=1e-12)
    assert vals["s2_late"] == pytest.approx(math.exp(-1), abs=1e-12)


def test_verify_dpp_and_commutation(tmp_path):
    payoff = {"type": "switch", "level": 1, "cut": 0.625, "below": {"b": 1.0}, "above": {"a": 4.0, "b": -1.0}}
    data = {**WITNESS, "verify": {"kind": "dpp", "s": 0.25, "t": 0.5, "payoff": payoff}}
    code, out = run(tmp_path, "verify", data, "dpp")
    assert code == EXIT_OK
    rows = {r["item"]: r for r in read_csv(out / "verify.csv")}
    assert float(rows["min_gap"]["value"]) >= -1e-7 and float(rows["max_abs_gap"]["value"]) > 1e-3
    code, out = run(tmp_path, "verify", data, "comm", "--verify-kind", "commutation")
    assert code == EXIT_OK
    rows = read_csv(out / "verify.csv")
    assert any(float(r["value"]) > 1e-3 for r in rows if r["item"].startswith("A"))


def test_verify_tower_assertion_failure(tmp_path):
    claim = {"type": "survival", "level": 2, "T": 0.75, "Y": {"b": 1.0}}
    data = {**WITNESS, "verify": {"kind": "tower", "s": 0.25, "t": 0.5, "claims": [claim]}}
    assert run(tmp_path, "verify", data, "loose")[0] == EXIT_OK
    data["verify"]["expect_equality"] = True
    code, out = run(tmp_path, "verify", data, "strict")
    rows = {r["item"]: r for r in read_csv(out / "verify.csv")}
    expected = EXIT_OK if rows["claim0:equality"]["passed"] == "1" else EXIT_ASSERT
    assert code == expected
    ok = {**WITNESS, "verify": {"kind": "tower", "s": 0.25, "t": 0.5, "expect_equality": True,
                                "claims": [{"type": "survival", "level": 2, "T": 0.75}]}}
    assert run(tmp_path, "verify", ok, "ok")[0] == EXIT_OK


def test_verify_oracle(tmp_path):
    data = {**BASE, "run": {"seed": 3, "n_paths": 20_000, "w_match": 0.1},
            "verify": {"kind": "oracle", "cases": [
                {"payoff": {"type": "survival", "level": 2, "T": 1.0}, "t": 0.5, "regime": [1, [0.3]]},
                {"payoff": {"type": "survival", "level": 2, "T": 1.0}, "t": 0.0}]}}
    code, out = run(tmp_path, "verify", data)
    assert code == EXIT_OK
    assert all(r["passed"] == "1" for r in read_csv(out / "verify.csv"))


def test_capacity_exits_3(tmp_path):
    data = {**BASE, "grid": {"t_max": 1.0, "n_steps": 40},
            "lattice": {"kind": "binomial", "n_steps": 20, "x0": 1.0, "step": 0.1, "p_up": [0.5]},
            "run": {"path_enum_cap": 1000},
            "claims": [{"type": "survival", "level": 1, "T": 1.0}]}
    assert run(tmp_path, "price", data)[0] == EXIT_CAPACITY
