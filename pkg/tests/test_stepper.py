"""Implicit steppers: Newton, initial data, both lanes, trajectory running."""

import numpy as np
import pytest
from scipy.optimize import root

from diracmech import (
    ConvergenceError,
    DiscreteHamiltonian,
    DiscreteLagrangian,
    DiscreteSystem,
    PontryaginPoint,
    SingularJacobianError,
    SolverOptions,
    StepFailureError,
    UnsupportedOperationError,
    check_admissibility,
    check_initial_data,
    dirac_inclusion_residual,
    newton_solve,
    run_trajectory,
    step_hamiltonian,
    step_lagrangian,
)
from diracmech import builtin

H = 0.1
LAM = 1.0


def oscillator_seed():
    system = builtin.harmonic_oscillator(H, LAM)
    return system, builtin.lagrangian_seed(system, [0.0], [0.1])


def nonholonomic_seed():
    system = builtin.nonholonomic_particle(H)
    q0 = np.array([0.0, 0.5, 0.0])
    v = np.array([1.0, 0.2, 0.5])  # satisfies A(q0) v = 0
    q1 = q0 + H * v
    return system, builtin.lagrangian_seed(system, q0, q1)


class TestNewton:
    def test_linear_shift_in_one_iteration(self):
        c = np.array([2.0, -3.0])
        x, iters, res = newton_solve(lambda x: x - c, lambda x: np.eye(2), np.zeros(2))
        assert np.allclose(x, c, atol=1e-14)
        assert iters == 1
        assert res <= 1e-10

    def test_scalar_quadratic(self):
        f = lambda x: np.array([x[0] ** 2 - 4.0])
        jac = lambda x: np.array([[2.0 * x[0]]])
        x, iters, res = newton_solve(f, jac, np.array([3.0]))
        assert x[0] == pytest.approx(2.0, abs=1e-10)
        assert iters <= 8

    def test_fd_jacobian_fallback(self):
        f = lambda x: np.array([np.exp(x[0]) - 1.0, x[1] ** 3 - 8.0])
        x, _, res = newton_solve(f, None, np.array([0.5, 1.5]))
        assert np.allclose(x, [0.0, 2.0], atol=1e-8)
        assert res <= 1e-10

    def test_already_converged_returns_zero_iterations(self):
        c = np.array([1.0])
        x, iters, _ = newton_solve(lambda x: x - c, None, c.copy())
        assert iters == 0

    def test_line_search_stall_raises(self):
        # no real root: |x^2 + 1| is bounded below by 1
        f = lambda x: np.array([x[0] ** 2 + 1.0])
        with pytest.raises(ConvergenceError) as info:
            newton_solve(f, lambda x: np.array([[2.0 * x[0]]]), np.array([3.0]))
        assert info.value.residual >= 1.0

    def test_max_iter_exhaustion_without_damping(self):
        # classic Newton two-cycle for x^3 - 2x + 2 from x0 = 0
        f = lambda x: np.array([x[0] ** 3 - 2.0 * x[0] + 2.0])
        jac = lambda x: np.array([[3.0 * x[0] ** 2 - 2.0]])
        opts = SolverOptions(damping=False, max_iter=40)
        with pytest.raises(ConvergenceError) as info:
            newton_solve(f, jac, np.array([0.0]), opts)
        assert info.value.iterations == 40

    def test_singular_jacobian(self):
        f = lambda x: np.array([x[0] ** 2])
        jac = lambda x: np.array([[0.0]])
        with pytest.raises(SingularJacobianError) as info:
            newton_solve(f, jac, np.array([1.0]))
        assert info.value.condition == np.inf

    def test_singular_matrix_jacobian(self):
        f = lambda x: x.copy()
        jac = lambda x: np.zeros((2, 2))
        with pytest.raises(SingularJacobianError) as info:
            newton_solve(f, jac, np.ones(2))
        assert info.value.condition is not None

    def test_options_validation(self):
        with pytest.raises(ValueError):
            SolverOptions(tol=0.0)
        with pytest.raises(ValueError):
            SolverOptions(max_iter=0)
        with pytest.raises(ValueError):
            SolverOptions(predictor="psychic")


class TestInitialData:
    def test_consistent_oscillator_seed(self):
        system, x0 = oscillator_seed()
        assert check_initial_data(system, x0) == pytest.approx(0.0, abs=1e-15)
        # the magic combination, written out
        p0 = (0.1 - 0.0) / H + H * LAM * 0.0
        assert x0.p[0] == pytest.approx(p0)

    def test_linear_in_momentum_perturbation(self):
        system, x0 = oscillator_seed()
        for eps in (1e-6, 1e-3, 0.1):
            bumped = PontryaginPoint(x0.q, x0.p + eps, x0.qplus)
            assert check_initial_data(system, bumped) == pytest.approx(eps, rel=1e-12)

    def test_generic_unconstrained_consistency(self):
        rng = np.random.default_rng(21)
        lag = DiscreteLagrangian(3, lambda q, qp: float(np.sin(q) @ qp + 0.5 * qp @ qp))
        system = DiscreteSystem.from_lagrangian(lag)
        for _ in range(5):
            q0, q1 = rng.standard_normal(3), rng.standard_normal(3)
            x0 = PontryaginPoint(q0, -lag.d1(q0, q1), q1)
            assert check_initial_data(system, x0) < 1e-12

    def test_constrained_seed_ignores_annihilator_directions(self):
        system, x0 = nonholonomic_seed()
        a = system.dist.matrix(x0.q)
        shifted = PontryaginPoint(x0.q, x0.p + 0.37 * a[0], x0.qplus)
        assert check_initial_data(system, shifted) < 1e-14

    def test_hamiltonian_kind_rejected(self):
        system = builtin.harmonic_oscillator_hamiltonian(H, LAM)
        x = PontryaginPoint([0.0], [1.0], [0.1])
        with pytest.raises(UnsupportedOperationError):
            check_initial_data(system, x)


class TestLagrangianStep:
    def test_oscillator_known_values(self):
        system, x0 = oscillator_seed()
        result = step_lagrangian(system, x0)
        assert result.next.q[0] == pytest.approx(0.1, abs=1e-14)
        assert result.next.p[0] == pytest.approx(1.0, abs=1e-13)
        assert result.next.qplus[0] == pytest.approx(0.199, abs=1e-13)
        assert result.multipliers.shape == (0,)
        assert result.inclusion_residual <= 10.0 * SolverOptions().tol

    def test_admissibility_is_exact(self):
        system, x0 = oscillator_seed()
        result = step_lagrangian(system, x0)
        assert np.array_equal(result.next.q, x0.qplus)

    def test_free_particle_uniform_motion(self):
        system = builtin.free_particle(H, 2, [1.0, 3.0])
        rng = np.random.default_rng(22)
        for _ in range(10):
            q0, q1 = rng.standard_normal(2), rng.standard_normal(2)
            x = builtin.lagrangian_seed(system, q0, q1)
            result = step_lagrangian(system, x)
            assert np.allclose(result.next.qplus, 2.0 * q1 - q0, atol=1e-10)

    def test_nonholonomic_against_dense_root_finder(self):
        system, x0 = nonholonomic_seed()
        lag, dist, con = system.lagrangian, system.dist, system.constraint
        x = x0
        for _ in range(5):
            result = step_lagrangian(system, x)
            q1 = x.qplus
            p1 = lag.d2(x.q, x.qplus)
            a1 = dist.matrix(q1)

            def kkt(z):
                qnew, lam = z[:3], z[3:]
                return np.concatenate([p1 + lag.d1(q1, qnew) - a1.T @ lam,
                                       con.value(q1, qnew)])

            guess = np.concatenate([q1, np.zeros(1)])  # different start than the stepper
            sol = root(kkt, guess)
            assert np.max(np.abs(kkt(sol.x))) < 1e-10
            assert np.allclose(result.next.qplus, sol.x[:3], atol=1e-10)
            assert np.max(np.abs(con.value(q1, result.next.qplus))) < 1e-10
            # force balance lies in the row span of A
            g = p1 + lag.d1(q1, result.next.qplus)
            coeffs, *_ = np.linalg.lstsq(a1.T, g, rcond=None)
            assert np.linalg.norm(g - a1.T @ coeffs) < 1e-9
            x = result.next

    def test_cross_check_accepts_assembled_jacobians(self, recwarn):
        # assembled block Jacobians agree with a full finite-difference one
        for system, x in (oscillator_seed(), nonholonomic_seed()):
            step_lagrangian(system, x, SolverOptions(cross_check=True))
        ham = builtin.harmonic_oscillator_hamiltonian(H, LAM)
        step_hamiltonian(ham, [0.2], [0.8], SolverOptions(cross_check=True))
        assert not [w for w in recwarn.list if "deviates" in str(w.message)]

    def test_inconsistent_seed_warns_but_steps(self):
        system, x0 = oscillator_seed()
        bad = PontryaginPoint(x0.q, x0.p + 0.5, x0.qplus)
        with pytest.warns(RuntimeWarning, match="inconsistent"):
            result = step_lagrangian(system, bad)
        # the solved step is driven by d2(q0, q1), not by the seed momentum
        assert result.next.qplus[0] == pytest.approx(0.199, abs=1e-12)

    def test_wrong_kind_rejected(self):
        system = builtin.harmonic_oscillator_hamiltonian(H, LAM)
        with pytest.raises(UnsupportedOperationError):
            step_lagrangian(system, PontryaginPoint([0.0], [1.0], [0.1]))

    def test_oracle_equivalence_random_lagrangians(self):
        rng = np.random.default_rng(23)
        for trial in range(5):
            n = int(rng.integers(1, 4))
            system, x0 = _random_smooth_system(rng, n)
            lag = system.lagrangian
            x = x0
            for _ in range(5):
                result = step_lagrangian(system, x)
                q1 = x.qplus
                p1 = lag.d2(x.q, x.qplus)
                sol = root(lambda qn: p1 + lag.d1(q1, qn), q1)
                assert np.max(np.abs(p1 + lag.d1(q1, sol.x))) < 1e-10
                assert np.allclose(result.next.qplus, sol.x, atol=1e-10)
                x = result.next


def _random_smooth_system(rng, n):
    """Random quadratic plus small cubic perturbation, gradients by FD.

    The cross block stays near the identity and the diagonal blocks small, so
    the two-step recursion is near the free particle and the cubic term never
    leaves its basin over a short run.
    """
    dim = 2 * n
    a = 0.05 * rng.standard_normal((n, n))
    c = 0.05 * rng.standard_normal((n, n))
    cross = np.eye(n) + 0.1 * rng.standard_normal((n, n))
    s = np.block([[0.5 * (a + a.T), cross], [cross.T, 0.5 * (c + c.T)]])
    t = 0.5 * rng.standard_normal((3, dim))
    eps = 0.01

    def Ld(q, qp):
        xi = np.concatenate([q, qp])
        return float(0.5 * xi @ s @ xi + eps * np.sum((t @ xi) ** 3))

    lag = DiscreteLagrangian(n, Ld)
    system = DiscreteSystem.from_lagrangian(lag)
    q0 = 0.05 * rng.standard_normal(n)
    q1 = q0 + 0.02 * rng.standard_normal(n)
    return system, builtin.lagrangian_seed(system, q0, q1)


class TestHamiltonianStep:
    def test_oscillator_symplectic_euler_form(self):
        system = builtin.harmonic_oscillator_hamiltonian(H, LAM)
        rng = np.random.default_rng(24)
        for _ in range(10):
            q, p = rng.standard_normal(), rng.standard_normal()
            result = step_hamiltonian(system, [q], [p])
            p1 = p - H * LAM * q
            q1 = q + H * p1
            assert result.p_next[0] == pytest.approx(p1, abs=1e-9)
            assert result.next.qplus[0] == pytest.approx(q1, abs=1e-9)
            assert np.array_equal(result.next.q, [q])
            assert np.array_equal(result.next.p, [p])

    def test_zero_hamiltonian_collapse(self):
        # the degenerate cross block also fires the regularity warning
        ham = DiscreteHamiltonian(1, lambda q, pp: 0.0,
                                  dq=lambda q, pp: np.zeros(1), dp=lambda q, pp: np.zeros(1))
        system = DiscreteSystem.from_hamiltonian(ham)
        with pytest.warns(RuntimeWarning, match="cross-derivative"):
            result = step_hamiltonian(system, [0.4], [0.0])
        assert result.p_next[0] == 0.0
        assert result.next.qplus[0] == 0.0

    def test_zero_hamiltonian_with_momentum_is_singular(self):
        ham = DiscreteHamiltonian(1, lambda q, pp: 0.0,
                                  dq=lambda q, pp: np.zeros(1), dp=lambda q, pp: np.zeros(1))
        system = DiscreteSystem.from_hamiltonian(ham)
        with pytest.warns(RuntimeWarning, match="cross-derivative"):
            with pytest.raises(SingularJacobianError):
                step_hamiltonian(system, [0.4], [0.7])

    def test_free_particle_drift(self):
        system = builtin.free_particle_hamiltonian(H, 2, [1.0, 2.0])
        q = np.array([0.3, -0.2])
        p = np.array([1.0, 4.0])
        result = step_hamiltonian(system, q, p)
        assert np.allclose(result.p_next, p, atol=1e-12)
        assert np.allclose(result.next.qplus, q + H * p / np.array([1.0, 2.0]), atol=1e-12)

    def test_constrained_hamiltonian_against_dense_root_finder(self):
        # nonholonomic particle on the Hamiltonian side: same distribution and
        # retraction pair constraint, H from the free-particle transform
        from diracmech import DiscreteSystem, KinematicDistribution, retraction_constraint

        dist = KinematicDistribution(3, 1, lambda q: np.array([[-q[1], 0.0, 1.0]]))
        free = builtin.free_particle_hamiltonian(H, 3)
        system = DiscreteSystem.from_hamiltonian(free.hamiltonian, dist,
                                                 retraction_constraint(dist))
        ham, con = system.hamiltonian, system.constraint
        q = np.array([0.0, 0.5, 0.0])
        p = np.array([1.0, 0.2, 0.3])
        for _ in range(5):
            result = step_hamiltonian(system, q, p)
            a = dist.matrix(q)

            def full_system(z, q=q, p=p, a=a):
                pnew, qnew, lam = z[:3], z[3:6], z[6:]
                return np.concatenate([p - ham.dq(q, pnew) - a.T @ lam,
                                       qnew - ham.dp(q, pnew),
                                       con.value(q, qnew)])

            sol = root(full_system, np.concatenate([p, q, np.zeros(1)]))
            assert np.max(np.abs(full_system(sol.x))) < 1e-10
            assert np.allclose(result.p_next, sol.x[:3], atol=1e-9)
            assert np.allclose(result.next.qplus, sol.x[3:6], atol=1e-9)
            assert np.max(np.abs(con.value(q, result.next.qplus))) < 1e-10
            assert result.inclusion_residual <= 1e-9
            assert result.multipliers.shape == (1,)
            q, p = result.next.qplus, result.p_next

    def test_regularity_warning_on_near_singular_cross_block(self):
        def Hd(q, pp):
            return float(q[0] * pp[0] + 1e-15 * q[1] * pp[1])

        ham = DiscreteHamiltonian(2, Hd,
                                  dq=lambda q, pp: np.array([pp[0], 1e-15 * pp[1]]),
                                  dp=lambda q, pp: np.array([q[0], 1e-15 * q[1]]))
        system = DiscreteSystem.from_hamiltonian(ham)
        with pytest.warns(RuntimeWarning, match="cross-derivative"):
            step_hamiltonian(system, [0.1, 0.2], [0.3, 0.0])

    def test_wrong_kind_rejected(self):
        system, _ = oscillator_seed()
        with pytest.raises(UnsupportedOperationError):
            step_hamiltonian(system, [0.0], [1.0])


class TestRunTrajectory:
    def test_oscillator_one_step_curve(self):
        system, x0 = oscillator_seed()
        traj = run_trajectory(system, x0, 1)
        assert len(traj.curve) == 2
        assert traj.curve[0].q[0] == 0.0
        assert traj.curve[1].q[0] == pytest.approx(0.1, abs=1e-14)
        assert traj.curve[1].p[0] == pytest.approx(1.0, abs=1e-13)
        assert traj.curve[1].qplus[0] == pytest.approx(0.199, abs=1e-13)
        assert len(traj.diagnostics) == 1

    def test_zero_steps_returns_seed_only(self):
        system, x0 = oscillator_seed()
        traj = run_trajectory(system, x0, 0)
        assert len(traj.curve) == 1
        assert traj.diagnostics == ()

    def test_structural_admissibility(self):
        system, x0 = oscillator_seed()
        traj = run_trajectory(system, x0, 25)
        assert check_admissibility(traj.curve, 0.0) is None

    def test_negative_steps_rejected(self):
        system, x0 = oscillator_seed()
        with pytest.raises(ValueError):
            run_trajectory(system, x0, -1)

    def test_hamiltonian_needs_a_step(self):
        system = builtin.harmonic_oscillator_hamiltonian(H, LAM)
        with pytest.raises(ValueError):
            run_trajectory(system, ([0.0], [1.0]), 0)

    def test_hamiltonian_run_records_final_state(self):
        system = builtin.harmonic_oscillator_hamiltonian(H, LAM)
        traj = run_trajectory(system, ([0.0], [1.0]), 3)
        assert len(traj.curve) == 3
        assert traj.final_state is not None
        q, p = traj.final_state
        assert traj.curve[2].qplus[0] == q[0]
        assert check_admissibility(traj.curve, 0.0) is None

    def test_lagrangian_hamiltonian_consistency(self):
        lag_system, x0 = oscillator_seed()
        ham_system = builtin.harmonic_oscillator_hamiltonian(H, LAM)
        steps = 100
        lag_traj = run_trajectory(lag_system, x0, steps)
        ham_traj = run_trajectory(ham_system, ([0.0], [1.0]), steps)
        for k in range(steps):
            assert ham_traj.curve[k].q[0] == pytest.approx(lag_traj.curve[k].q[0], abs=1e-9)
            assert ham_traj.curve[k].p[0] == pytest.approx(lag_traj.curve[k].p[0], abs=1e-9)

    def test_every_step_is_certified(self):
        system, x0 = nonholonomic_seed()
        traj = run_trajectory(system, x0, 50)
        assert traj.max_inclusion_residual <= 1e-9
        for d in traj.diagnostics:
            assert dirac_inclusion_residual is not None
            assert d.inclusion_residual <= 1e-9
            assert d.constraint_residual <= 1e-10
            assert d.multipliers.shape == (1,)

    def test_hamiltonian_step_failure_keeps_completed_points(self):
        def dq(q, pp):
            if abs(q[0]) > 0.25:
                raise RuntimeError("field blew up")
            return pp.copy()

        ham = DiscreteHamiltonian(1, lambda q, pp: float(q @ pp + 0.05 * pp @ pp),
                                  dq=dq, dp=lambda q, pp: q + 0.1 * pp, validate=False)
        system = DiscreteSystem.from_hamiltonian(ham)
        with pytest.raises(StepFailureError) as info:
            run_trajectory(system, ([0.0], [1.0]), 10)
        err = info.value
        assert err.step_index == 3  # q reaches 0.3 after three good steps
        assert err.trajectory is not None
        assert len(err.trajectory.curve) == 3
        q, p = err.trajectory.final_state
        assert q[0] == pytest.approx(0.3, abs=1e-12)

    def test_step_failure_carries_partial_trajectory(self):
        def d1(q, qp):
            if abs(qp[0]) > 0.35:
                raise RuntimeError("out of range")
            return -(qp - q) / H

        lag = DiscreteLagrangian(1, lambda q, qp: float((qp - q) @ (qp - q)) / (2.0 * H),
                                 d1=d1, d2=lambda q, qp: (qp - q) / H, validate=False)
        system = DiscreteSystem.from_lagrangian(lag)
        x0 = PontryaginPoint([0.0], [1.0], [0.1])
        with pytest.raises(StepFailureError) as info:
            run_trajectory(system, x0, 10)
        err = info.value
        assert err.step_index == 2
        assert err.trajectory is not None
        assert len(err.trajectory.curve) == 3  # seed plus two good steps
        assert err.trajectory.curve[2].qplus[0] == pytest.approx(0.3, abs=1e-12)

    def test_long_run_boundedness(self):
        system, x0 = oscillator_seed()
        traj = run_trajectory(system, x0, 2000)
        amplitude = np.sqrt(0.0 ** 2 + 1.0 ** 2 / LAM)  # energy-based bound
        qs = np.array([pt.q[0] for pt in traj.curve])
        assert np.max(np.abs(qs)) <= 2.0 * amplitude

    def test_oscillator_matches_exact_discrete_solution(self):
        # the update q_{k+1} = (2 - h^2 lam) q_k - q_{k-1} has the closed form
        # q_k = (q1 / sin(theta)) sin(k theta) with cos(theta) = 1 - h^2 lam / 2
        # when q0 = 0; cumulative roundoff stays near machine scale per step
        system, x0 = oscillator_seed()
        steps = 500
        traj = run_trajectory(system, x0, steps)
        theta = np.arccos(1.0 - 0.5 * H * H * LAM)
        amp = 0.1 / np.sin(theta)
        for k in range(steps + 1):
            exact = amp * np.sin(k * theta)
            assert abs(traj.curve[k].q[0] - exact) < 5e-11 * (k + 1)

    def test_trajectory_metadata(self):
        system, x0 = oscillator_seed()
        opts = SolverOptions(tol=1e-11)
        traj = run_trajectory(system, x0, 4, opts)
        assert traj.system_label == "harmonic_oscillator"
        assert traj.steps == 4
        assert traj.options.tol == 1e-11

    def test_stepping_never_mutates_existing_points(self):
        # result points may alias the previous point's arrays, so any
        # mutation inside the steppers would corrupt history
        system, x0 = nonholonomic_seed()
        before = (x0.q.copy(), x0.p.copy(), x0.qplus.copy())
        traj = run_trajectory(system, x0, 10)
        snapshots = [(pt.q.copy(), pt.p.copy(), pt.qplus.copy()) for pt in traj.curve]
        run_trajectory(system, traj.curve[-1], 10)
        assert all(np.array_equal(a, b) for a, b in zip(before,
                                                        (x0.q, x0.p, x0.qplus)))
        for pt, snap in zip(traj.curve, snapshots):
            assert np.array_equal(pt.q, snap[0])
            assert np.array_equal(pt.p, snap[1])
            assert np.array_equal(pt.qplus, snap[2])

    def test_concurrent_trajectories_match_serial(self):
        from concurrent.futures import ThreadPoolExecutor

        system, x0 = nonholonomic_seed()
        serial = run_trajectory(system, x0, 40)
        with ThreadPoolExecutor(max_workers=4) as pool:
            futures = [pool.submit(run_trajectory, system, x0, 40) for _ in range(4)]
            for future in futures:
                traj = future.result()
                for a, b in zip(traj.curve, serial.curve):
                    assert np.array_equal(a.q, b.q)
                    assert np.array_equal(a.qplus, b.qplus)
