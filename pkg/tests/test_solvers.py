import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from polyfw.core import (
    Certificate,
    LassoProblem,
    SparseIterate,
    dual_certificate,
    lambda_max,
    objective,
)
from polyfw.exceptions import ContractViolation, UnknownSolverError
from polyfw.solvers import (
    BUDGET_EXHAUSTED,
    KKT_CONVERGED,
    MAX_ITER,
    SOLVERS,
    ZERO_ATOM,
    Atom,
    LiftedIterate,
    Sample,
    SolverConfig,
    Trajectory,
    curvature_upper_bound,
    exact_line_search,
    fcfw_solve,
    fista_solve,
    get_solver,
    kkt_satisfied,
    partial_correction,
    pfw_solve,
    polyatomic_indices,
    select_atom,
    step_size_schedule,
    vfw_solve,
)

from .oracle import (
    dense_objective,
    ista_solution,
    lifted_linear_minimizer,
    random_problem,
    scan_line_search,
)

SOLVER_NAMES = ["pfw", "vfw", "fcfw", "fista"]


def identity_problem():
    return LassoProblem(np.eye(2), [2.0, -1.0], 1.0)


class TestSolverConfig:
    def test_defaults(self):
        config = SolverConfig()
        assert config.delta == 0.2
        assert config.eps0 == 1e-2
        assert config.max_iter == 10_000
        assert config.time_budget_s == 60.0
        assert config.kkt_tol == 1e-4
        assert config.record_every == 1
        assert config.prune
        assert config.eps_full == 1e-6

    def test_invalid(self):
        for bad in ({"delta": -0.1}, {"eps0": 0.0}, {"max_iter": 0}, {"record_every": 0},
                    {"time_budget_s": 0.0}, {"kkt_tol": -1.0}):
            with pytest.raises(ContractViolation):
                SolverConfig(**bad)

    def test_from_dict(self):
        assert SolverConfig.from_dict({"delta": 0.3}).delta == 0.3
        with pytest.raises(ContractViolation, match="gamma"):
            SolverConfig.from_dict({"gamma": 0.3})

    def test_updated_ignores_none(self):
        config = SolverConfig().updated(delta=None, eps0=0.5)
        assert config.delta == 0.2
        assert config.eps0 == 0.5
        assert config.asdict()["eps0"] == 0.5


class TestStepSize:
    def test_values(self):
        assert step_size_schedule(1) == 2.0 / 3.0
        assert step_size_schedule(2) == 0.5

    def test_decreasing(self):
        steps = [step_size_schedule(k) for k in range(1, 1000)]
        assert np.all(np.diff(steps) < 0)
        assert steps[-1] < 0.01

    def test_invalid(self):
        with pytest.raises(ContractViolation):
            step_size_schedule(0)


class TestSelectAtom:
    def test_unique_max(self):
        atom = select_atom(Certificate([1.5, -0.5]), 3.0)
        assert (atom.index, atom.sign, atom.scale) == (0, 1, 3.0)

    def test_negative(self):
        atom = select_atom(Certificate([0.2, -1.9]), 3.0)
        assert (atom.index, atom.sign) == (1, -1)

    def test_ties_prefer_smallest_index(self):
        atom = select_atom(Certificate([0.1, -2.0, 2.0]), 1.0)
        assert atom.index == 1

    def test_apex_by_enumeration(self):
        A = np.eye(2)
        y = np.array([0.9, -0.3])
        lam = 1.0
        problem = LassoProblem(A, y, lam)
        cert = dual_certificate(problem, SparseIterate.zero(2))
        assert cert.linf == pytest.approx(0.9)
        assert select_atom(cert, problem.lift_bound) == ZERO_ATOM
        (t, s), _ = lifted_linear_minimizer(A, y, lam, np.zeros(2), problem.lift_bound)
        assert t == 0.0
        assert_array_equal(s, np.zeros(2))

    def test_matches_enumeration(self):
        problem = random_problem(0, 8, 16, 3)
        A, y, lam = problem.matrix.entries, problem.y, problem.lam
        x = SparseIterate.from_dense(np.random.default_rng(3).standard_normal(16) * 0.1)
        cert = dual_certificate(problem, x)
        atom = select_atom(cert, problem.lift_bound)
        (t, s), _ = lifted_linear_minimizer(A, y, lam, x.to_dense(), problem.lift_bound)
        lifted = atom.lift(16)
        assert lifted.t == t
        assert_allclose(lifted.x.to_dense(), s)

    def test_lift(self):
        assert ZERO_ATOM.is_zero
        lifted = Atom(index=2, sign=-1, scale=4.0).lift(5)
        assert lifted.t == 4.0
        assert_array_equal(lifted.x.to_dense(), [0, 0, -4.0, 0, 0])
        assert lifted.in_cone(4.0)


class TestPolyatomicIndices:
    def setup_method(self):
        self.cert = Certificate([1.0, 0.95, 0.5, -0.97])

    def test_threshold(self):
        assert_array_equal(polyatomic_indices(self.cert, 0.1, 1.0), [0, 1, 3])

    def test_degenerate_threshold(self):
        assert_array_equal(polyatomic_indices(self.cert, 0.0, 0.5), [0])

    def test_constant(self):
        assert_array_equal(polyatomic_indices(Certificate(np.full(7, 0.3)), 0.2, 0.5), np.arange(7))

    def test_invalid(self):
        with pytest.raises(ContractViolation):
            polyatomic_indices(self.cert, -0.1, 0.5)
        with pytest.raises(ContractViolation):
            polyatomic_indices(self.cert, 0.1, 0.0)


class TestExactLineSearch:
    def setup_method(self):
        self.problem = LassoProblem(np.eye(2), [1.0, 0.0], 0.1)
        self.current = LiftedIterate(SparseIterate.zero(2), 0.0)

    def test_against_scan(self):
        assert self.problem.lift_bound == pytest.approx(5.0)
        atom = LiftedIterate(SparseIterate([0], [5.0], 2), 5.0)
        gamma = exact_line_search(self.problem, self.current, atom)
        assert gamma == pytest.approx(0.18)

        def g(gammas):
            return 0.5 * (1 - 5 * gammas) ** 2 + 0.1 * 5 * gammas

        assert abs(gamma - scan_line_search(g)) <= 1e-6

    def test_clip_low(self):
        atom = LiftedIterate(SparseIterate([0], [-5.0], 2), 5.0)
        assert exact_line_search(self.problem, self.current, atom) == 0.0

    def test_clip_high(self):
        problem = LassoProblem(np.eye(2), [10.0, 0.0], 0.1)
        atom = LiftedIterate(SparseIterate([0], [1.0], 2), 1.0)
        assert exact_line_search(problem, self.current, atom) == 1.0

    def test_degenerate_direction(self):
        problem = LassoProblem(np.array([[1.0, 0.0], [0.0, 0.0]]), [1.0, 1.0], 0.1)
        atom = LiftedIterate(SparseIterate([1], [3.0], 2), 3.0)
        assert exact_line_search(problem, self.current, atom) == 0.0

    def test_towards_apex(self):
        problem = LassoProblem(np.eye(2), [1.0, 0.0], 0.5)
        current = LiftedIterate(SparseIterate([0], [1.2], 2), 1.2)
        cert = dual_certificate(problem, current.x)
        atom = select_atom(cert, problem.lift_bound)
        assert atom.is_zero
        gamma = exact_line_search(problem, current, atom.lift(2))
        x_next = current.x.blend(atom.lift(2).x, gamma)
        assert_allclose(x_next.to_dense(), [0.5, 0.0])
        assert objective(problem, x_next) <= objective(problem, current.x)


class TestPartialCorrection:
    def test_identity_closed_form(self):
        problem = identity_problem()
        x = partial_correction(problem, SparseIterate.zero(2), [0, 1], 1e-12)
        assert_allclose(x.to_dense(), [1.0, 0.0], atol=1e-12)

    def test_fixed_point(self):
        problem = identity_problem()
        x_init = SparseIterate([0], [1.0], 2)
        x = partial_correction(problem, x_init, [0, 1], 1e-3)
        assert_allclose(x.to_dense(), [1.0, 0.0], atol=1e-15)

    def test_empty_active(self):
        x = partial_correction(identity_problem(), SparseIterate.zero(2), [], 1e-3)
        assert x.nnz == 0

    def test_invalid(self):
        problem = identity_problem()
        with pytest.raises(ContractViolation):
            partial_correction(problem, SparseIterate.zero(2), [0], 0.0)
        with pytest.raises(ContractViolation):
            partial_correction(problem, SparseIterate([1], [1.0], 2), [0], 1e-3)

    def test_monotone(self):
        rng = np.random.default_rng(9)
        for seed in range(5):
            problem = random_problem(seed, 32, 64, 4)
            active = np.sort(rng.choice(64, size=12, replace=False))
            x_init = SparseIterate(active, rng.standard_normal(12), 64)
            for eps, steps in ((1e-1, None), (1e-6, None), (1e-6, 1)):
                x = partial_correction(problem, x_init, active, eps, max_steps=steps)
                assert x.is_within(active)
                before = objective(problem, x_init)
                assert objective(problem, x) <= before + 1e-12 * (1 + abs(before))

    def test_wide_active_set(self):
        # more active columns than rows: no Gram matrix
        problem = random_problem(1, 8, 16, 3)
        active = np.arange(16)
        x = partial_correction(problem, SparseIterate.zero(16), active, 1e-12)
        _, f_ref = ista_solution(problem)
        assert objective(problem, x) == pytest.approx(f_ref, rel=1e-6)


class TestKKT:
    def test_zero_iterate(self):
        assert kkt_satisfied(SparseIterate.zero(2), Certificate([1.0, -0.5]), 1e-4)
        assert not kkt_satisfied(SparseIterate.zero(2), Certificate([1.1, 0.0]), 1e-4)

    def test_sign_mismatch(self):
        x = SparseIterate([0], [1.0], 2)
        assert kkt_satisfied(x, Certificate([1.0, 0.3]), 1e-4)
        assert not kkt_satisfied(x, Certificate([-0.5, 0.3]), 1e-4)
        assert not kkt_satisfied(x, Certificate([0.99, 0.3]), 1e-4)


class TestCurvatureBound:
    def test_identity(self):
        problem = LassoProblem(np.eye(2), [2.0, 0.0], 1.0)
        assert problem.lift_bound == 2.0
        assert curvature_upper_bound(problem) == pytest.approx(16.0, rel=1e-4)

    def test_scaling(self):
        problem = random_problem(2, 16, 32, 3)
        scaled = LassoProblem(3.0 * problem.matrix.entries, problem.y, problem.lam)
        assert curvature_upper_bound(scaled) == pytest.approx(
            9.0 * curvature_upper_bound(problem), rel=1e-3
        )


class TestTrajectory:
    def test_append_validates(self):
        trajectory = Trajectory()
        trajectory.append(Sample(1, 0.0, 2.0, 0, 3.0))
        with pytest.raises(ContractViolation):
            trajectory.append(Sample(1, 0.1, 1.0, 1, 2.0))
        with pytest.raises(ContractViolation):
            trajectory.append(Sample(2, -1.0, 1.0, 1, 2.0))
        trajectory.append(Sample(3, 0.5, 1.0, 1, 2.0))
        assert trajectory.iterations == 3
        assert len(trajectory) == 2
        assert list(trajectory.to_frame().columns) == list(Sample._fields)


class TestRegistry:
    def test_names(self):
        assert set(SOLVERS) == {"pfw", "vfw", "fcfw", "fista"}
        assert get_solver("pfw") is pfw_solve

    def test_unknown(self):
        with pytest.raises(UnknownSolverError, match="fcfw, fista, pfw, vfw"):
            get_solver("foo")


class TestSolverContract:
    """Behaviour shared by every solver."""

    @pytest.mark.parametrize("name", SOLVER_NAMES)
    def test_identity(self, name):
        x, trajectory = SOLVERS[name](identity_problem(), SolverConfig(kkt_tol=1e-8))
        assert trajectory.terminal_reason == KKT_CONVERGED
        assert_allclose(x.to_dense(), [1.0, 0.0], atol=1e-6)

    @pytest.mark.parametrize("name", SOLVER_NAMES)
    def test_above_lambda_max(self, name):
        problem = random_problem(4, 8, 16, 3)
        problem = problem.with_lambda(1.01 * lambda_max(problem))
        assert dual_certificate(problem, SparseIterate.zero(16)).linf <= 1.0
        x, trajectory = SOLVERS[name](problem)
        assert x.nnz == 0
        assert trajectory.terminal_reason == KKT_CONVERGED
        assert trajectory.iterations == 1
        assert trajectory.final.objective == pytest.approx(0.5 * problem.y @ problem.y)

    @pytest.mark.parametrize("name", SOLVER_NAMES)
    def test_trajectory_shape(self, name):
        problem = random_problem(6, 16, 32, 3)
        x, trajectory = SOLVERS[name](problem, SolverConfig(max_iter=40, record_every=5))
        first = trajectory.samples[0]
        assert first.k == 1
        assert first.objective == pytest.approx(0.5 * problem.y @ problem.y)
        assert first.support_size == 0
        ks = [s.k for s in trajectory.samples]
        times = [s.wall_time_s for s in trajectory.samples]
        assert np.all(np.diff(ks) > 0)
        assert np.all(np.diff(times) >= 0)
        assert all((k - 1) % 5 == 0 for k in ks[:-1])
        assert trajectory.final.objective == pytest.approx(objective(problem, x))
        assert trajectory.final.support_size == x.nnz

    @pytest.mark.parametrize("name", SOLVER_NAMES)
    def test_max_iter(self, name):
        problem = random_problem(6, 16, 32, 3)
        _, trajectory = SOLVERS[name](problem, SolverConfig(max_iter=3, kkt_tol=1e-12))
        assert trajectory.terminal_reason == MAX_ITER
        assert trajectory.iterations == 4

    @pytest.mark.parametrize("name", SOLVER_NAMES)
    def test_budget(self, name):
        problem = random_problem(6, 16, 32, 3)
        _, trajectory = SOLVERS[name](problem, SolverConfig(time_budget_s=1e-9))
        assert trajectory.terminal_reason == BUDGET_EXHAUSTED
        assert trajectory.iterations == 1

    @pytest.mark.parametrize("name", SOLVER_NAMES)
    def test_callback(self, name):
        problem = random_problem(8, 16, 32, 3)
        seen = []
        _, trajectory = SOLVERS[name](
            problem, SolverConfig(max_iter=20, kkt_tol=1e-12), callback=seen.append
        )
        assert [info.k for info in seen] == list(range(1, trajectory.iterations))
        for before, after in zip(seen, seen[1:]):
            assert after.x == before.x_next

    @pytest.mark.parametrize("name", SOLVER_NAMES)
    def test_deterministic(self, name):
        problem = random_problem(10, 16, 32, 3)
        config = SolverConfig(max_iter=50)
        x1, t1 = SOLVERS[name](problem, config)
        x2, t2 = SOLVERS[name](problem, config)
        assert x1 == x2
        assert [s.objective for s in t1.samples] == [s.objective for s in t2.samples]


class TestPFW:
    def test_prune_off_keeps_active_set_growing(self):
        problem = random_problem(12, 16, 64, 4)
        seen = []
        pfw_solve(problem, SolverConfig(prune=False, max_iter=30), callback=seen.append)
        sizes = [info.active.size for info in seen]
        assert np.all(np.diff(sizes) >= 0)
        for before, after in zip(seen, seen[1:]):
            assert np.all(np.isin(before.active, after.active))

    def test_iteration_info(self):
        problem = random_problem(12, 16, 64, 4)
        seen = []
        pfw_solve(problem, SolverConfig(max_iter=10), callback=seen.append)
        for info in seen:
            assert info.gamma == step_size_schedule(info.k)
            assert info.epsilon == pytest.approx(1e-2 * info.gamma)
            assert np.all(np.isin(info.indices, info.active))
            assert info.x_next.is_within(info.active)


class TestVFW:
    def test_cone_membership_and_lifted_descent(self):
        problem = random_problem(13, 16, 32, 3)
        A, y, lam, bound = problem.matrix.entries, problem.y, problem.lam, problem.lift_bound
        seen = []
        vfw_solve(problem, SolverConfig(max_iter=200), callback=seen.append)
        assert seen

        def lifted(x, t):
            r = y - A @ x.to_dense()
            return 0.5 * r @ r + lam * t

        for info in seen:
            assert LiftedIterate(info.x_next, info.t_next).in_cone(bound, slack=1e-9 * (1 + bound))
            before = lifted(info.x, info.t)
            assert lifted(info.x_next, info.t_next) <= before + 1e-10 * (1 + abs(before))


class TestFCFW:
    def test_identity_atom_count(self):
        _, trajectory = fcfw_solve(identity_problem())
        assert trajectory.terminal_reason == KKT_CONVERGED
        assert trajectory.iterations <= 3

    def test_monotone(self):
        for seed in range(3):
            problem = random_problem(seed, 16, 32, 3)
            _, trajectory = fcfw_solve(problem)
            objectives = np.array([s.objective for s in trajectory.samples])
            assert np.all(np.diff(objectives) <= 1e-12 * (1 + objectives[:-1]))


class TestFISTA:
    def test_zero_matrix(self):
        problem = LassoProblem(np.zeros((3, 4)), [1.0, 0.0, 2.0], 0.5)
        x, trajectory = fista_solve(problem)
        assert x.nnz == 0
        assert trajectory.terminal_reason == KKT_CONVERGED


class TestOracleEquivalence:
    """Small instances against a long-run ISTA reference."""

    def test_small_instances(self):
        config = SolverConfig(kkt_tol=1e-6, max_iter=5000, time_budget_s=10.0)
        converged = {name: 0 for name in SOLVER_NAMES}
        for seed in range(50):
            problem = random_problem(seed, 8, 16, 3, lambda_factor=0.1)
            _, f_ref = ista_solution(problem)
            for name in SOLVER_NAMES:
                x, trajectory = SOLVERS[name](problem, config)
                if trajectory.terminal_reason == KKT_CONVERGED:
                    converged[name] += 1
                elif name in ("vfw", "fcfw"):
                    continue
                # pfw and fista sit within 1e-6 of the reference even at the iteration cap
                assert abs(objective(problem, x) - f_ref) <= 1e-6 * abs(f_ref), (name, seed)
        assert converged["pfw"] >= 2
        assert converged["vfw"] >= 10
        assert converged["fcfw"] >= 48
        assert converged["fista"] >= 48


class TestKKTCertification:
    def check_certificate(self, problem, x):
        A, y, lam = problem.matrix.entries, problem.y, problem.lam
        correlation = A.T @ (y - A @ x.to_dense())
        assert np.max(np.abs(correlation)) <= lam * (1 + 1e-3)
        eta = correlation / lam
        assert np.all(np.abs(eta[x.support] - np.sign(x.weights)) <= 1e-2)

    def test_terminal_iterates(self):
        for seed in range(20):
            problem = random_problem(100 + seed, 64, 256, 8)
            for name in ("pfw", "fcfw", "fista"):
                x, trajectory = SOLVERS[name](problem, SolverConfig(time_budget_s=30.0))
                assert trajectory.terminal_reason == KKT_CONVERGED, (name, seed)
                self.check_certificate(problem, x)

    def test_vanilla_terminal_iterates(self):
        # vanilla FW can need tens of thousands of steps here; cap by count, not time
        config = SolverConfig(max_iter=5000, time_budget_s=30.0)
        converged = 0
        for seed in range(20):
            problem = random_problem(100 + seed, 64, 256, 8)
            x, trajectory = vfw_solve(problem, config)
            assert trajectory.terminal_reason in (KKT_CONVERGED, MAX_ITER), seed
            if trajectory.terminal_reason == KKT_CONVERGED:
                converged += 1
                self.check_certificate(problem, x)
        assert converged >= 5


class TestPFWRate:
    """Sublinear rate bound and monotone correction on moderate instances."""

    def setup_method(self):
        self.delta = 0.2
        self.config = SolverConfig(delta=self.delta, max_iter=2000, time_budget_s=5.0)

    def test_rate_bound_and_correction_monotonicity(self):
        for seed in range(10):
            problem = random_problem(200 + seed, 64, 256, 8)
            A, y, lam = problem.matrix.entries, problem.y, problem.lam
            _, f_star = ista_solution(problem)
            c_bar = curvature_upper_bound(problem)
            seen = []
            _, trajectory = pfw_solve(problem, self.config, callback=seen.append)
            for sample in trajectory.samples:
                gap = sample.objective - f_star
                assert gap >= -1e-9 * abs(f_star)
                assert gap <= 2.0 / (sample.k + 2.0) * (c_bar + 2 * self.delta)
            for info in seen:
                half = dense_objective(A, y, lam, info.x_half.to_dense())
                after = dense_objective(A, y, lam, info.x_next.to_dense())
                assert after <= half + 1e-10 * (1 + abs(half)), (seed, info.k)
