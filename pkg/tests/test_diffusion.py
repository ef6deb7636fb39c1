import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evcharge.diffusion import (
    ScalingSchedule,
    apply_h,
    build_h_map,
    compute_deviations,
    diagnose_convergence,
    h_residuals,
    make_scaled_system,
    total_variation,
    tracking_check,
    tracking_metrics,
)
from evcharge.engine import PolicyConfig, SimConfig, run_simulation
from evcharge.errors import (
    DimensionMismatch,
    GridOutOfRange,
    InsufficientHorizon,
    NonPositivePool,
    NotAForest,
    NotApplicable,
    ZeroRateEdge,
)
from evcharge.network import UNREACHABLE as U
from evcharge.network import NetworkSpec, validate_spec
from evcharge.planner import BasicActivityGraph, solve_stability_lp

from oracles import dense_h_matrix

TOY_MU = [[1, 3, 0], [0, 1, 2]]
TOY_TREE = BasicActivityGraph.from_edges(2, 3, [(0, 0), (0, 1), (1, 1), (1, 2)])
# frozen output of the dense oracle for v = e_1 on the toy path graph
TOY_H_E1 = (1 / 46, 45 / 46, -6 / 23, 6 / 23)


class TestSchedule:
    def test_staffing_arithmetic(self):
        assert ScalingSchedule(100, (2,), (0.5,)).scaled_pools().tolist() == [205]

    def test_beta(self):
        assert ScalingSchedule(1e4, (1,)).beta == pytest.approx(1e-3)

    def test_identity(self):
        spec = validate_spec(NetworkSpec((1.0,), ((1.0,),), ((0.0,),), (3,)))
        sch = ScalingSchedule(1, (3,), (0.0,))
        out = make_scaled_system(spec, sch)
        assert sch.beta == 1.0
        assert out.pool_sizes.tolist() == [3] and out.arrival_rates.tolist() == [1.0]

    def test_scaled_system(self):
        spec = validate_spec(NetworkSpec((2.0, 1.0), ((1, 2), (0, 1)), ((0, 0), (U, 0)), (4, 4)))
        out = make_scaled_system(spec, ScalingSchedule(9, (4, 4), (1.0, -1.0)))
        assert out.arrival_rates.tolist() == [18.0, 9.0]
        assert out.pool_sizes.tolist() == [39, 33]
        np.testing.assert_array_equal(out.service_rates, spec.service_rates)
        assert out.costs[1][0] is U

    def test_non_positive_pool(self):
        with pytest.raises(NonPositivePool):
            ScalingSchedule(4, (1,), (-2.0,)).scaled_pools()

    def test_exponent_window(self):
        for bad in (0.5, 1.0, 0.2):
            with pytest.raises(ValueError):
                ScalingSchedule(4, (1,), exponent=bad)

    @pytest.mark.parametrize("r", [1e2, 1e4, 1e6])
    def test_beta_window(self, r):
        beta = ScalingSchedule(r, (1,)).beta
        assert math.sqrt(r) * beta < 1 and r * beta > 1
        # and both tend the right way as r grows
        beta_big = ScalingSchedule(r * 100, (1,)).beta
        assert math.sqrt(r * 100) * beta_big < math.sqrt(r) * beta
        assert r * 100 * beta_big > r * beta

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1, 1e4), st.floats(1, 1e4), st.integers(1, 50), st.floats(0, 10))
    def test_staffing_monotone(self, r1, r2, n, slack):
        lo, hi = sorted((r1, r2))
        a = ScalingSchedule(lo, (n,), (slack,)).scaled_pools()[0]
        b = ScalingSchedule(hi, (n,), (slack,)).scaled_pools()[0]
        assert a <= b


class TestHMap:
    def test_single_edge_identity(self):
        g = BasicActivityGraph.from_edges(1, 1, [(0, 0)])
        h = build_h_map(g, [[2.5]])
        assert apply_h(h, [3.0]).tolist() == [3.0]

    def test_toy_oracle_frozen(self):
        edges, H = dense_h_matrix(TOY_TREE.edges, TOY_MU, 2)
        np.testing.assert_allclose(H[:, 0], TOY_H_E1, atol=1e-14)

    def test_toy_matches_oracle(self):
        h = build_h_map(TOY_TREE, TOY_MU)
        np.testing.assert_allclose(apply_h(h, [1.0, 0.0]), TOY_H_E1, atol=1e-10)
        _, H = dense_h_matrix(TOY_TREE.edges, TOY_MU, 2)
        np.testing.assert_allclose(h.coefficients, H, atol=1e-10)

    def test_zero(self):
        h = build_h_map(TOY_TREE, TOY_MU)
        assert np.all(apply_h(h, [0.0, 0.0]) == 0.0)

    def test_residuals_random(self):
        h = build_h_map(TOY_TREE, TOY_MU)
        rng = np.random.default_rng(0)
        for _ in range(100):
            v = rng.normal(size=2) * 10
            rows, bal = h_residuals(h, v, apply_h(h, v))
            assert np.abs(rows).max() <= 1e-10 * (1 + np.abs(v).max())
            assert np.abs(bal).max() <= 1e-10 * (1 + np.abs(v).max())

    def test_errors(self):
        cyc = BasicActivityGraph.from_edges(2, 2, [(0, 0), (0, 1), (1, 0), (1, 1)])
        with pytest.raises(NotAForest):
            build_h_map(cyc, [[1, 1], [1, 1]])
        with pytest.raises(ZeroRateEdge):
            build_h_map(TOY_TREE, [[1, 3, 0], [0, 0, 2]])
        h = build_h_map(TOY_TREE, TOY_MU)
        with pytest.raises(DimensionMismatch):
            apply_h(h, [1.0, 2.0, 3.0])

    def test_dense_tensor(self):
        h = build_h_map(TOY_TREE, TOY_MU)
        T = h.as_matrix()
        assert T.shape == (2, 3, 2)
        np.testing.assert_allclose(T[:, :, 0].sum(axis=1), [1.0, 0.0], atol=1e-12)


@st.composite
def random_forests(draw):
    """Random bipartite forests with at most 8 vertices and positive rates on edges."""
    n_ev = draw(st.integers(1, 4))
    n_ch = draw(st.integers(1, 8 - n_ev))
    vertices = [("ev", i) for i in range(n_ev)] + [("ch", j) for j in range(n_ch)]
    order = draw(st.permutations(vertices))
    edges = []
    placed = [order[0]]
    for v in order[1:]:
        # attach to an earlier vertex of the other side, or leave as a new root
        others = [u for u in placed if u[0] != v[0]]
        if others and draw(st.booleans()) or (others and v[0] == "ev"):
            u = draw(st.sampled_from(others))
            edges.append((v[1], u[1]) if v[0] == "ev" else (u[1], v[1]))
        placed.append(v)
    mu = np.zeros((n_ev, n_ch))
    for i, j in edges:
        mu[i, j] = draw(st.sampled_from([0.5, 1.0, 1.5, 2.0, 3.0, 4.0]))
    return BasicActivityGraph.from_edges(n_ev, n_ch, edges), mu


@settings(max_examples=300, deadline=None)
@given(random_forests())
def test_leaf_elimination_equals_dense_solve(case):
    graph, mu = case
    assert graph.is_forest
    h = build_h_map(graph, mu)
    edges, H = dense_h_matrix(graph.edges, mu, graph.n_ev)
    assert tuple(edges) == h.edges
    np.testing.assert_allclose(h.coefficients, H, atol=1e-10, rtol=1e-10)


@settings(max_examples=200, deadline=None)
@given(random_forests(), st.lists(st.floats(-100, 100), min_size=4, max_size=4), st.floats(-3, 3), st.floats(-3, 3))
def test_h_linearity_and_residuals(case, raw, a, b):
    graph, mu = case
    h = build_h_map(graph, mu)
    v = np.array(raw[: graph.n_ev] + [0.0] * max(0, graph.n_ev - len(raw)))
    w = np.roll(v, 1)
    np.testing.assert_allclose(apply_h(h, a * v + b * w), a * apply_h(h, v) + b * apply_h(h, w), atol=1e-9)
    # only types with basic activities can absorb their deviation
    touched = {i for i, _ in graph.edges}
    v_used = np.array([x if i in touched else 0.0 for i, x in enumerate(v)])
    rows, bal = h_residuals(h, v_used, apply_h(h, v_used))
    scale = 1e-10 * (1 + np.abs(v_used).max())
    assert np.abs(rows).max(initial=0) <= scale * 10
    assert np.abs(bal).max(initial=0) <= scale * 100


# --------------------------------------------------------------------------
# deviations and diagnostics

ZERO_COST_TOY = validate_spec(NetworkSpec((50, 44), TOY_MU, ((0, 0, U), (U, 0, 0)), (20, 20, 20)))
COSTED_TOY = validate_spec(NetworkSpec((16, 30), TOY_MU, ((0, 1, U), (U, 1, 0)), (20, 20, 20)))
EXAMPLE_B = validate_spec(NetworkSpec((1.6, 0.8), ((1, 2), (1, 1)), ((1, 2), (2, 1)), (1, 1)))


def run_scaled(base, r, T, seed=0):
    sch = ScalingSchedule(r, tuple(int(n) for n in base.pool_sizes))
    spec = make_scaled_system(base, sch)
    tr = run_simulation(spec, SimConfig(PolicyConfig("gpd", sch.beta), horizon_time=T, record_occupancy=False), seed)
    return sch, tr


class TestDeviations:
    def test_zero_cost_reduces_to_scaled_queue(self):
        sol = solve_stability_lp(ZERO_COST_TOY)
        sch, tr = run_scaled(ZERO_COST_TOY, 4, 2.0)
        grid = np.linspace(0, 2.0, 5)
        dev = compute_deviations(tr, sol, sch, grid)
        np.testing.assert_allclose(dev.q_hat, tr.virtual_queue_at(grid) / 2.0)
        assert np.all(dev.a_hat[0] == 0.0)

    def test_centering_uses_scaled_rates(self):
        sol = solve_stability_lp(COSTED_TOY)
        sch, tr = run_scaled(COSTED_TOY, 9, 1.0)
        grid = np.array([0.0, 0.5, 1.0])
        dev = compute_deviations(tr, sol, sch, grid)
        counts = tr.routing_counts(grid)
        np.testing.assert_allclose(dev.a_hat, (counts - 9 * sol.primal_rates * grid[:, None, None]) / 3)

    def test_grid_errors(self):
        sol = solve_stability_lp(COSTED_TOY)
        sch, tr = run_scaled(COSTED_TOY, 1, 1.0)
        with pytest.raises(GridOutOfRange):
            compute_deviations(tr, sol, sch, [0.0, 2.0])
        with pytest.raises(GridOutOfRange):
            compute_deviations(tr, sol, sch, [0.5, 0.2])


class TestConvergence:
    def test_insufficient_horizon(self):
        sol = solve_stability_lp(EXAMPLE_B)
        tr = run_simulation(EXAMPLE_B, SimConfig(PolicyConfig("gpd", 0.1), horizon_time=50.0), 0)
        with pytest.raises(InsufficientHorizon):
            diagnose_convergence([tr], sol)

    def test_costed_rates_converge(self):
        sol = solve_stability_lp(COSTED_TOY)
        runs = [
            run_simulation(COSTED_TOY, SimConfig(PolicyConfig("gpd", b), horizon_time=100 / b, record_occupancy=False), 0)
            for b in (0.1, 0.01)
        ]
        rep = diagnose_convergence(runs, sol)
        assert rep.entries[0].beta == 0.1
        assert rep.entries[1].rate_distance < rep.entries[0].rate_distance
        assert not rep.overloaded

    def test_zero_cost_duals_vanish(self):
        # with zero costs the optimal prices are zero, so beta * Q must shrink with beta
        sol = solve_stability_lp(ZERO_COST_TOY)
        runs = [
            run_simulation(ZERO_COST_TOY, SimConfig(PolicyConfig("gpd", b), horizon_time=20 / b, record_occupancy=False), 0)
            for b in (0.1, 0.01)
        ]
        rep = diagnose_convergence(runs, sol)
        big, small = rep.entries
        assert np.all(small.dual_average < 0.25 * big.dual_average)
        assert small.dual_error < 0.02

    def test_overloaded_flagged(self):
        spec = validate_spec(NetworkSpec((3.0,), ((1.0,),), ((0.0,),), (2,)))
        sol = solve_stability_lp(spec)
        tr = run_simulation(spec, SimConfig(PolicyConfig("gpd", 0.1), horizon_time=200.0, record_occupancy=False), 0)
        rep = diagnose_convergence([tr], sol)
        assert rep.overloaded and not rep.converged
        assert rep.entries[0].growth > 0

    def test_total_variation(self):
        assert total_variation([[1, 0], [0, 1]], [[0, 1], [1, 0]]) == 1.0
        assert total_variation([[1, 1]], [[1, 1]]) == 0.0


class TestTracking:
    def test_not_applicable_when_infeasible(self):
        spec = validate_spec(NetworkSpec((3.0,), ((1.0,),), ((0.0,),), (2,)))
        sol = solve_stability_lp(spec)
        sch = ScalingSchedule(1, (2,))
        tr = run_simulation(spec, SimConfig(PolicyConfig("gpd", 1.0), horizon_time=1.0), 0)
        with pytest.raises(NotApplicable):
            tracking_check([(sch, tr)], sol)

    def test_zero_horizon_vacuous(self):
        sol = solve_stability_lp(COSTED_TOY)
        runs = [run_scaled(COSTED_TOY, r, 0.0) for r in (1, 16)]
        chk = tracking_check(runs, sol)
        assert chk.ok

    def test_nonbasic_fraction_counts_off_tree_routing(self):
        sol = solve_stability_lp(COSTED_TOY)
        sch, tr = run_scaled(COSTED_TOY, 1, 20.0)
        m = tracking_metrics(tr, sol, sch)
        off = np.isin(tr.station, [1]).mean()  # station 2 carries no optimal flow
        assert m.nonbasic_fraction == pytest.approx(off)
