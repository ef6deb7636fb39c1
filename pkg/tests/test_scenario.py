import math

import numpy as np
import pytest

from evcharge.errors import ParseError, UnknownPreset
from evcharge.network import UNREACHABLE as U
from evcharge.scenario import PRESETS, load_scenario, parse_scenario, preset

TOY_TEXT = """\
[network]
lambda = [50, 44]
mu     = [[1, 3, 0], [0, 1, 2]]
cost   = [[0, 0, "inf"], [inf, 0, 0]]
N      = [20, 20, 20]

[seeds]
base = 3
[[seeds.override]]
stream = "service"
index = [1, 2]
seed = 7

[policy]
kind = "lb"
beta = 0.01
clusters = [[1, 2, 3]]
weights = [10]

[run]
arrivals = 10000
switch_at = 5000
switch_lambda = [44, 50]
"""


def test_toy_preset_values():
    spec, cfg = preset("toy-s6")
    assert spec.arrival_rates.tolist() == [50.0, 44.0]
    assert spec.service_rates.tolist() == [[1, 3, 0], [0, 1, 2]]
    assert spec.costs[0][2] is U and spec.costs[1][0] is U
    assert spec.pool_sizes.tolist() == [20, 20, 20]
    assert cfg.max_arrivals == 10_000
    assert cfg.rate_switch.at_arrival == 5_000 and cfg.rate_switch.arrival_rates == (44.0, 50.0)
    assert cfg.policy.beta == 0.01 and cfg.policy.clusters == ((0, 1, 2),) and cfg.policy.weights == (10.0,)


def test_file_matches_preset():
    sc = parse_scenario(TOY_TEXT)
    ref = preset("toy-s6")
    np.testing.assert_array_equal(sc.spec.service_rates, ref.spec.service_rates)
    assert sc.spec.costs == ref.spec.costs
    assert sc.config.rate_switch == ref.config.rate_switch
    assert sc.config.policy.kind == "lb"
    assert sc.seeds.base == 3 and sc.seeds.overrides == {("service", 0, 1): 7}


def test_example_a_structure():
    spec, _ = preset("example-a")
    # type 1 reaches only station 1; type 2 prefers station 1 on cost
    assert spec.stations_for == ((0,), (0, 1))
    assert spec.costs[1][0] < spec.costs[1][1]


def test_all_presets_load():
    for name in PRESETS:
        sc = load_scenario(name)
        assert sc.name == name and sc.description


def test_round_trip_through_dict():
    sc = preset("toy-s6")
    d = sc.to_dict()
    assert d["network"]["cost"][0][2] == "inf"
    assert d["policy"]["clusters"] == [[1, 2, 3]]


def test_malformed_row_names_row_and_line():
    text = TOY_TEXT.replace("mu     = [[1, 3, 0], [0, 1, 2]]", "mu     = [[1, 3, 0], [0, 1]]")
    with pytest.raises(ParseError) as exc:
        parse_scenario(text)
    assert exc.value.line == 3
    assert exc.value.field == "network.mu"
    assert "row 2" in str(exc.value) and "line 3" in str(exc.value)


def test_missing_section_and_bad_values():
    with pytest.raises(ParseError):
        parse_scenario("[run]\narrivals = 5\n")
    with pytest.raises(ParseError) as exc:
        parse_scenario(TOY_TEXT.replace("N      = [20, 20, 20]", "N      = [20, 20.5, 20]"))
    assert exc.value.line == 5
    with pytest.raises(ParseError):
        parse_scenario(TOY_TEXT.replace("arrivals = 10000", "arrivals = 10000\ntime = 4.0"))
    with pytest.raises(ParseError):
        parse_scenario(TOY_TEXT.replace("clusters = [[1, 2, 3]]", "clusters = [[1, 4]]"))
    with pytest.raises(ParseError):
        parse_scenario("[network\n")


def test_infinite_cost_spellings():
    sc = parse_scenario(TOY_TEXT)
    assert sc.spec.costs[0][2] is U and sc.spec.costs[1][0] is U
    assert not math.isinf(sc.spec.costs[0][0])


def test_unknown_preset():
    with pytest.raises(UnknownPreset):
        preset("toy-s7")
    with pytest.raises(UnknownPreset):
        load_scenario("toy-s7")
    with pytest.raises(FileNotFoundError):
        load_scenario("missing/scenario.toml")


def test_load_from_path(tmp_path):
    p = tmp_path / "mine.toml"
    p.write_text(TOY_TEXT)
    sc = load_scenario(p)
    assert sc.name == "mine" and sc.config.max_arrivals == 10_000
