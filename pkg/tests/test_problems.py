import math

import numpy as np
import pytest

from pinnstab.pinn import DerivativeSlots, eval_residuals, exact_slot_provider, sample_points
from pinnstab.problems import (
    PROBLEM_IDS,
    SpectralGrid,
    UnknownProblemError,
    body_forces_elastostatic,
    build_problem,
    exact_solution_eval,
    fourier_interp,
    mass,
    nls_evolve,
    schrodinger_reference,
    schrodinger_reference_cached,
    sech,
    validation_grid,
    validation_truth,
)

WITH_EXACT = ("approx", "diffusion-reaction", "heat", "elastostatic")


def _random_interior(problem, n=100, seed=2024):
    rng = np.random.default_rng(seed)
    lo = np.array([a for a, _ in problem.domain])
    hi = np.array([b for _, b in problem.domain])
    return lo + (hi - lo) * rng.random((n, problem.dim))


class TestBuild:
    def test_all_ids_build(self):
        for pid in PROBLEM_IDS:
            p = build_problem(pid)
            assert p.id == pid

    def test_unknown_id_rejected(self):
        with pytest.raises(UnknownProblemError):
            build_problem("burgers")

    def test_heat_constants_and_bcs(self):
        p = build_problem("heat")
        assert p.params["alpha"] == 0.4
        assert p.domain == ((0.0, 1.0), (0.0, 1.0))
        (bc,) = p.bcs
        assert bc.kind == "dirichlet" and set(bc.faces) == {0, 1}
        pts = np.array([[0.0, 0.3], [1.0, 0.7]])
        assert not np.any(bc.target(pts))

    def test_schrodinger_domain_and_ic(self):
        p = build_problem("schrodinger")
        assert p.domain == ((-5.0, 5.0), (0.0, math.pi / 2))
        ic = p.ic(np.array([[0.0, 0.0]]))
        assert math.hypot(*ic[0]) == 2.0
        (bc,) = p.bcs
        assert bc.kind == "periodic" and bc.derivative_coord == 0 and bc.components == (0, 1)

    def test_elastostatic_top_traction(self):
        p = build_problem("elastostatic")
        top = [bc for bc in p.bcs if bc.faces == (3,)][0]
        assert top.kind == "traction" and top.components == (3,)
        x = np.array([[0.5, 1.0], [0.25, 1.0]])
        np.testing.assert_allclose(top.target(x)[:, 0], [8.0, 8.0 * math.sin(math.pi / 4)], rtol=1e-15)
        assert p.default_neurons == 200

    def test_param_override(self):
        p = build_problem("heat", {"alpha": 1.0})
        assert p.params["alpha"] == 1.0 and p.params["L"] == 1.0

    def test_residuals_only_use_available_slots(self):
        for pid in PROBLEM_IDS:
            p = build_problem(pid)
            assert set(p.needs_first) | set(p.needs_second) <= set(range(p.dim))


class TestExact:
    def test_heat_peak(self):
        p = build_problem("heat")
        assert exact_solution_eval(p, np.array([[0.5, 0.0]]))[0, 0] == 1.0

    def test_diffusion_reaction_matches_ic_at_t0(self):
        p = build_problem("diffusion-reaction")
        x = _random_interior(p)
        x[:, 1] = 0.0
        np.testing.assert_allclose(exact_solution_eval(p, x), p.ic(x), rtol=0, atol=1e-15)

    def test_elastostatic_u2_value(self):
        p = build_problem("elastostatic")
        assert exact_solution_eval(p, np.array([[0.5, 1.0]]))[0, 1] == pytest.approx(1.0, abs=1e-15)

    def test_schrodinger_has_no_closed_form(self):
        with pytest.raises(ValueError):
            exact_solution_eval(build_problem("schrodinger"), np.zeros((1, 2)))

    @pytest.mark.parametrize("pid", WITH_EXACT)
    def test_residual_vanishes_on_exact_slots(self, pid):
        p = build_problem(pid)
        x = _random_interior(p)
        slots = exact_slot_provider(p)(x, p.needs_first, p.needs_second)
        for r in eval_residuals(slots, p, x):
            assert np.max(np.abs(r)) <= 1e-6

    @pytest.mark.parametrize("pid", ["diffusion-reaction", "heat"])
    def test_exact_slots_match_finite_differences(self, pid):
        p = build_problem(pid)
        x = _random_interior(p, 20)
        s = DerivativeSlots(p.exact_slots(x))
        h = 1e-5
        for c in (0, 1):
            e = np.zeros(2)
            e[c] = h
            fd = (p.exact(x + e) - p.exact(x - e)) / (2 * h)
            np.testing.assert_allclose(s.d(c), fd, atol=1e-8)
        e = np.array([1e-4, 0.0])
        fdd = (p.exact(x + e) - 2 * p.exact(x) + p.exact(x - e)) / 1e-8
        np.testing.assert_allclose(s.dd(0), fdd, atol=1e-5)

    @pytest.mark.parametrize("pid", WITH_EXACT[1:])
    def test_exact_satisfies_ic_and_bcs(self, pid):
        p = build_problem(pid)
        counts = (0, 50, 50 if p.time_dependent else 0)
        pts = sample_points(p, counts, seed=3)
        exact_b = exact_solution_eval(p, pts.boundary)
        for bc in p.bcs:
            rows = pts.face_rows(bc.faces)
            target = bc.target(pts.boundary[rows])
            for j, k in enumerate(bc.components):
                np.testing.assert_allclose(exact_b[rows, k], target[:, j], atol=1e-9)
        if p.time_dependent:
            np.testing.assert_allclose(exact_solution_eval(p, pts.initial), p.ic(pts.initial), atol=1e-9)


class TestBodyForces:
    def test_f2_lambda_term_vanishes_on_bottom(self):
        x = np.column_stack([np.linspace(0, 1, 7), np.zeros(7)])
        lam_only = body_forces_elastostatic(x, 1.0, 0.0)[1]
        # at x2 = 0 only the 2 pi^2 sin(2 pi x1) cos(0) piece survives
        np.testing.assert_allclose(lam_only, 2 * math.pi**2 * np.sin(2 * math.pi * x[:, 0]), atol=1e-12)

    def test_two_independent_evaluations_agree(self):
        p = build_problem("elastostatic")
        pt = np.array([[0.25, 0.5]])
        direct = body_forces_elastostatic(pt)[0][0]
        # -(d s11/dx1 + d s12/dx2) by central differences of the exact stresses
        h = 1e-4
        ex = lambda q: exact_solution_eval(p, q)  # noqa: E731
        ds11 = (ex(pt + [h, 0])[0, 2] - ex(pt - [h, 0])[0, 2]) / (2 * h)
        ds12 = (ex(pt + [0, h])[0, 4] - ex(pt - [0, h])[0, 4]) / (2 * h)
        assert abs(direct + ds11 + ds12) <= 1e-6
        # analytic second derivatives agree much more tightly
        s = DerivativeSlots(p.exact_slots(pt))
        assert abs(direct + s.d(0, 2)[0, 0] + s.d(1, 4)[0, 0]) <= 1e-8

    def test_momentum_balance_at_random_points(self):
        p = build_problem("elastostatic")
        x = _random_interior(p)
        s = DerivativeSlots(p.exact_slots(x))
        f1, f2 = body_forces_elastostatic(x)
        assert np.max(np.abs(s.d(0, 2)[:, 0] + s.d(1, 4)[:, 0] + f1)) <= 1e-6
        assert np.max(np.abs(s.d(0, 4)[:, 0] + s.d(1, 3)[:, 0] + f2)) <= 1e-6


class TestSpectralOracle:
    def test_initial_condition_returned_at_t0(self):
        x, h, v = schrodinger_reference((256, 0.0))
        np.testing.assert_array_equal(h, 2 * sech(x))
        assert not np.any(v)

    def test_grid_must_be_power_of_two(self):
        with pytest.raises(ValueError):
            SpectralGrid(100)

    def test_dt_must_be_positive(self):
        with pytest.raises(ValueError):
            nls_evolve(SpectralGrid(64), [0.1], dt=0.0)

    def test_target_beyond_horizon_rejected(self):
        with pytest.raises(ValueError):
            schrodinger_reference((256, 2.0))

    def test_mass_conservation(self):
        g = SpectralGrid(256)
        u0, uT = nls_evolve(g, [0.0, math.pi / 2], dt=1e-4)
        assert abs(mass(g, uT) - mass(g, u0)) / mass(g, u0) <= 1e-8

    def test_halving_dt_changes_field_little(self):
        g = SpectralGrid(256)
        a = nls_evolve(g, [math.pi / 2], dt=1e-4)[0]
        b = nls_evolve(g, [math.pi / 2], dt=5e-5)[0]
        assert np.linalg.norm(a - b) / np.linalg.norm(b) <= 1e-6

    def test_second_order_self_convergence(self):
        g = SpectralGrid(256)
        T = math.pi / 2
        u = [nls_evolve(g, [T], dt=dt)[0] for dt in (2e-3, 1e-3, 5e-4)]
        e1 = np.linalg.norm(u[0] - u[1])
        e2 = np.linalg.norm(u[1] - u[2])
        assert 1.8 <= math.log2(e1 / e2) <= 2.2

    def test_fourier_interpolation_is_exact_on_nodes(self):
        g = SpectralGrid(64)
        f = 2 * sech(g.x)
        np.testing.assert_allclose(fourier_interp(g, f, g.x)[0].real, f, atol=1e-12)

    def test_cache_round_trip_and_key(self, tmp_path):
        xs, ts = np.linspace(-5, 5, 5), np.linspace(0, 0.1, 3)
        h1, v1 = schrodinger_reference_cached(xs, ts, nodes=64, dt=1e-3, cache_dir=tmp_path)
        files = list(tmp_path.glob("*.npz"))
        assert len(files) == 1
        h2, v2 = schrodinger_reference_cached(xs, ts, nodes=64, dt=1e-3, cache_dir=tmp_path)
        assert h1.tobytes() == h2.tobytes() and v1.tobytes() == v2.tobytes()
        schrodinger_reference_cached(xs, ts, nodes=64, dt=5e-4, cache_dir=tmp_path)
        assert len(list(tmp_path.glob("*.npz"))) == 2
        assert h1.shape == (5, 3)
        np.testing.assert_allclose(h1[:, 0], 2 * sech(xs), atol=1e-10)


class TestValidationGrid:
    def test_hundred_squared_points_spanning_domain(self):
        p = build_problem("heat")
        g = validation_grid(p)
        assert g.shape == (10000, 2)
        assert g[:, 0].min() == 0.0 and g[:, 0].max() == 1.0

    def test_truth_for_exact_problem(self):
        p = build_problem("diffusion-reaction")
        g, truth = validation_truth(p, 10)
        np.testing.assert_array_equal(truth, p.exact(g))

    def test_truth_for_schrodinger_uses_oracle(self, tmp_path):
        p = build_problem("schrodinger")
        g, truth = validation_truth(p, 8, cache_dir=tmp_path)
        assert truth.shape == (64, 2)
        t0 = g[:, 1] == 0.0
        # off-node trigonometric interpolation; the periodic extension of
        # 2 sech(x) has a slope kink at x = +-5, which bounds the accuracy
        np.testing.assert_allclose(truth[t0, 0], 2 * sech(g[t0, 0]), atol=1e-5)
