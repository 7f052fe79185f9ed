"""Implicit per-step solvers for the constrained discrete equations of motion.

One Lagrangian step advances a complete bundle point (q_k, p_k, q_{k+1}) to
(q_{k+1}, p_{k+1}, q_{k+2}) by solving force balance plus the pair constraint
for (q_{k+2}, lambda). One Hamiltonian step maps (q_k, p_k) to (p_{k+1},
q_{k+1}, lambda). Both run damped Newton on a square system and certify the
accepted update against the abstract inclusion residual before returning.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from .bundle import DiscreteCurve, PontryaginPoint, check_admissibility
from .errors import (
    CertificationError,
    ConvergenceError,
    DimensionMismatchError,
    DiracMechError,
    SingularJacobianError,
    StepFailureError,
    UnsupportedOperationError,
)
from .systems import (
    FD_SCALE,
    HAMILTONIAN,
    LAGRANGIAN,
    DiscreteSystem,
    dirac_inclusion_residual,
    jacobian_columns,
)

_PREDICTORS = ("extrapolate", "hold")

# Condition estimate above which the Hamiltonian cross-derivative block
# triggers a regularity warning.
CROSS_BLOCK_COND_LIMIT = 1e12


@dataclass(frozen=True)
class SolverOptions:
    """Knobs for the damped Newton iteration.

    ``predictor`` picks the initial guess for the new configuration:
    "extrapolate" continues at constant velocity, "hold" reuses the current
    one. ``cross_check`` compares the assembled Jacobian against a full
    finite-difference Jacobian at the predictor and warns on disagreement.
    """

    tol: float = 1e-10
    max_iter: int = 50
    damping: bool = True
    predictor: str = "extrapolate"
    min_step: float = 2.0 ** -20
    cross_check: bool = False

    def __post_init__(self):
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.predictor not in _PREDICTORS:
            raise ValueError("predictor must be one of %r" % (_PREDICTORS,))


@dataclass(frozen=True)
class StepResult:
    """One accepted step: the new point, multipliers and solve diagnostics.

    ``p_next`` is the momentum at the index after ``next`` (for Hamiltonian
    steps this is the carried p_{k+1}; for Lagrangian steps it is the
    momentum the following step will carry).
    """

    next: PontryaginPoint
    multipliers: np.ndarray
    iterations: int
    residual: float
    inclusion_residual: float
    constraint_residual: float
    p_next: np.ndarray


@dataclass(frozen=True)
class StepDiagnostics:
    residual: float
    inclusion_residual: float
    constraint_residual: float
    multipliers: np.ndarray


@dataclass(frozen=True)
class Trajectory:
    """A solved discrete curve plus per-step diagnostics and run metadata.

    For Hamiltonian runs the curve holds the N completed points and
    ``final_state`` carries the (q_N, p_N) pair left over after the last
    step; Lagrangian runs store seed plus N points and leave it None.
    """

    curve: DiscreteCurve
    diagnostics: Tuple[StepDiagnostics, ...]
    system_label: str
    steps: int
    options: SolverOptions
    final_state: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        if check_admissibility(self.curve, 0.0) is not None:
            raise ValueError("trajectory curve violates the second-order condition")
        if len(self.diagnostics) != self.steps:
            raise ValueError("expected %d diagnostic records, got %d"
                             % (self.steps, len(self.diagnostics)))

    @property
    def max_residual(self) -> float:
        return max((d.residual for d in self.diagnostics), default=0.0)

    @property
    def max_inclusion_residual(self) -> float:
        return max((d.inclusion_residual for d in self.diagnostics), default=0.0)

    @property
    def max_constraint_residual(self) -> float:
        return max((d.constraint_residual for d in self.diagnostics), default=0.0)


_F64 = np.dtype(float)


def _as_f64(x) -> np.ndarray:
    if type(x) is np.ndarray and x.dtype == _F64:
        return x
    return np.asarray(x, dtype=float)


def _norm_inf(v: np.ndarray) -> float:
    if v.shape[0] == 1:
        return abs(float(v[0]))
    return float(np.abs(v).max()) if v.size else 0.0


def _state_block(x, n: int, name: str) -> np.ndarray:
    if not (type(x) is np.ndarray and x.dtype == _F64 and x.shape == (n,)):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if x.shape != (n,):
            raise DimensionMismatchError("%s has shape %r, expected (%d,)" % (name, x.shape, n))
    if not np.isfinite(x).all():
        raise ValueError("%s entries must all be finite" % name)
    return x


def fd_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray,
                scale: float = FD_SCALE) -> np.ndarray:
    """Central-difference Jacobian of f at x."""
    return jacobian_columns(f, x, scale)


def _solve_linear(jm: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    if jm.shape == (1, 1):
        pivot = float(jm[0, 0])
        if pivot == 0.0 or not math.isfinite(pivot):
            raise SingularJacobianError(
                "Newton Jacobian is singular (condition estimate inf)", condition=float("inf")
            )
        step = rhs / pivot
        if math.isfinite(float(step[0])):
            return step
        raise SingularJacobianError(
            "Newton step is not finite (condition estimate inf)", condition=float("inf")
        )
    if jm.shape == (2, 2):
        a, b = float(jm[0, 0]), float(jm[0, 1])
        c, d = float(jm[1, 0]), float(jm[1, 1])
        det = a * d - b * c
        if det != 0.0 and math.isfinite(det):
            r0, r1 = float(rhs[0]), float(rhs[1])
            s0 = (d * r0 - b * r1) / det
            s1 = (a * r1 - c * r0) / det
            if math.isfinite(s0) and math.isfinite(s1):
                return np.array([s0, s1])
        cond = float(np.linalg.cond(jm))
        raise SingularJacobianError(
            "Newton Jacobian is singular (condition estimate %.3e)" % cond, condition=cond
        )
    try:
        step = np.linalg.solve(jm, rhs)
    except np.linalg.LinAlgError as exc:
        cond = float(np.linalg.cond(jm))
        raise SingularJacobianError(
            "Newton Jacobian is singular (condition estimate %.3e)" % cond, condition=cond
        ) from exc
    if not np.all(np.isfinite(step)):
        cond = float(np.linalg.cond(jm))
        raise SingularJacobianError(
            "Newton step is not finite (condition estimate %.3e)" % cond, condition=cond
        )
    return step


def newton_solve(f: Callable[[np.ndarray], np.ndarray],
                 jac: Optional[Callable[[np.ndarray], np.ndarray]],
                 x0: np.ndarray,
                 opts: Optional[SolverOptions] = None) -> Tuple[np.ndarray, int, float]:
    """Damped Newton iteration for f(x) = 0.

    ``jac`` may be None, in which case a central-difference Jacobian is used.
    Convergence is ||f(x)||_inf <= opts.tol; damping halves the step until the
    residual decreases (down to opts.min_step). Returns (root, iterations,
    final residual).
    """
    opts = opts if opts is not None else SolverOptions()
    x = np.asarray(x0, dtype=float).copy()
    fx = _as_f64(f(x))
    res = _norm_inf(fx)
    iters = 0
    while res > opts.tol:
        if iters >= opts.max_iter:
            raise ConvergenceError(
                "no convergence in %d iterations (residual %.3e, tol %.1e)"
                % (opts.max_iter, res, opts.tol),
                residual=res, iterations=iters,
            )
        jm = np.asarray(jac(x), dtype=float) if jac is not None else fd_jacobian(f, x)
        step = _solve_linear(jm, -fx)
        if opts.damping:
            alpha = 1.0
            accepted = False
            while alpha >= opts.min_step:
                xt = x + alpha * step
                ft = _as_f64(f(xt))
                rt = _norm_inf(ft)
                if rt < res or rt <= opts.tol:
                    x, fx, res = xt, ft, rt
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                raise ConvergenceError(
                    "line search stalled at residual %.3e (tol %.1e)" % (res, opts.tol),
                    residual=res, iterations=iters + 1,
                )
        else:
            x = x + step
            fx = _as_f64(f(x))
            res = _norm_inf(fx)
        iters += 1
    return x, iters, res


def check_initial_data(system: DiscreteSystem, x0: PontryaginPoint) -> float:
    """Distance of p0 + d1 L(q0, q0+) from the annihilator rows at q0.

    Zero means x0 is a consistent Lagrangian seed (for the unconstrained case,
    exactly p0 = -d1 L(q0, q1)). Hamiltonian seeds (q0, p0) carry no such
    restriction, so asking for one is an error.
    """
    if system.kind != LAGRANGIAN:
        raise UnsupportedOperationError(
            "initial-data consistency is defined for the Lagrangian kind only; "
            "Hamiltonian initial data (q0, p0) is free and q1 is reported by step residuals"
        )
    if x0.dim != system.n:
        raise DimensionMismatchError("point dimension %d, system dimension %d" % (x0.dim, system.n))
    g = x0.p + system.lagrangian.d1(x0.q, x0.qplus)
    return float(np.linalg.norm(system.dist.project_ker(x0.q, g)))


def _maybe_cross_check(f, jac_assembled, z0):
    gap = np.max(np.abs(jac_assembled - fd_jacobian(f, z0)))
    scale = max(1.0, float(np.max(np.abs(jac_assembled))))
    if gap / scale > 1e-4:
        warnings.warn("assembled Jacobian deviates from finite differences by %.3e (relative)"
                      % (gap / scale), RuntimeWarning, stacklevel=3)


def _solve_with_reuse(residual_fn, jacobian_fn, z0, opts, cache):
    """Newton solve that can start from a previously assembled iteration matrix.

    ``cache`` is a one-slot list owned by the caller. A stale matrix from the
    previous step usually still contracts (it changes slowly along a
    trajectory); when it does not, the solve falls back to fresh assemblies.
    Residual acceptance is exact either way.
    """
    def assemble(z):
        jm = jacobian_fn(z)
        if cache is not None:
            cache[:] = [jm]
        return jm

    if cache:
        frozen = cache[0]
        try:
            z, iters, res = newton_solve(residual_fn, lambda _z: frozen, z0, opts)
            if iters > 2:
                cache.clear()  # stale matrix is dragging; reassemble next step
            return z, iters, res
        except (ConvergenceError, SingularJacobianError):
            pass
    return newton_solve(residual_fn, assemble, z0, opts)


def step_lagrangian(system: DiscreteSystem, x: PontryaginPoint,
                    opts: Optional[SolverOptions] = None,
                    multiplier_guess: Optional[np.ndarray] = None,
                    check_consistency: bool = True,
                    jacobian_cache: Optional[list] = None) -> StepResult:
    """Advance a complete point one index.

    Solves, for (qnew, lambda), the carried momentum d2 L(q, q+) balancing
    d1 L(q+, qnew) against A(q+)^T lambda together with phi(q+, qnew) = 0,
    then certifies the accepted update with the inclusion residual
    (raising CertificationError above 10 * tol). ``jacobian_cache`` is a
    one-slot list for reusing the iteration matrix across the steps of one
    trajectory.
    """
    if system.kind != LAGRANGIAN:
        raise UnsupportedOperationError("step_lagrangian needs a Lagrangian-kind system")
    if x.dim != system.n:
        raise DimensionMismatchError("point dimension %d, system dimension %d" % (x.dim, system.n))
    opts = opts if opts is not None else SolverOptions()
    if check_consistency:
        r0 = check_initial_data(system, x)
        if r0 > opts.tol:
            warnings.warn(
                "seed point is inconsistent (initial-data residual %.3e); "
                "the step still solves the inclusion at the next index" % r0,
                RuntimeWarning, stacklevel=2,
            )

    lag = system.lagrangian
    n, m = system.n, system.m
    q1 = x.qplus
    d1 = lag.d1
    p1 = lag.d2(x.q, x.qplus)

    if m:
        a1 = system.dist.matrix(q1)

        def residual_fn(z):
            qnew = z[:n]
            r1 = p1 + d1(q1, qnew) - a1.T @ z[n:]
            return np.concatenate([r1, system.constraint.value(q1, qnew)])

        def jacobian_fn(z):
            qnew = z[:n]
            j11 = jacobian_columns(lambda qn: d1(q1, qn), qnew, lag.provider.fd_scale)
            top = np.hstack([j11, -a1.T])
            bottom = np.hstack([system.constraint.jacobian2(q1, qnew), np.zeros((m, m))])
            return np.vstack([top, bottom])
    else:
        def residual_fn(qnew):
            return p1 + d1(q1, qnew)

        def jacobian_fn(qnew):
            return jacobian_columns(lambda qn: d1(q1, qn), qnew, lag.provider.fd_scale)

    if opts.predictor == "extrapolate":
        qnew0 = 2.0 * q1 - x.q
    else:
        qnew0 = q1.copy()
    lam0 = np.zeros(m) if multiplier_guess is None else np.asarray(multiplier_guess, dtype=float)
    if lam0.shape != (m,):
        raise DimensionMismatchError("multiplier guess has shape %r, expected (%d,)"
                                     % (lam0.shape, m))
    z0 = np.concatenate([qnew0, lam0]) if m else qnew0
    if opts.cross_check:
        _maybe_cross_check(residual_fn, jacobian_fn(z0), z0)

    z, iters, res = _solve_with_reuse(residual_fn, jacobian_fn, z0, opts, jacobian_cache)
    qnew, lam = (z[:n], z[n:]) if m else (z, lam0)

    # q1 aliases x.qplus, so admissibility holds exactly; p1 and qnew are
    # freshly computed and finite (the accepted Newton residual was finite)
    nxt = PontryaginPoint._trusted(q1, p1, qnew)
    p_next = lag.d2(q1, qnew)
    cres = float(np.max(np.abs(system.constraint.value(q1, qnew)))) if m else 0.0
    inclusion = dirac_inclusion_residual(system, nxt, p_next)
    if inclusion > 10.0 * opts.tol:
        raise CertificationError(
            "accepted step fails the inclusion residual gate (%.3e > 10 * %.1e)"
            % (inclusion, opts.tol),
            inclusion_residual=inclusion,
        )
    return StepResult(nxt, lam, iters, res, inclusion, cres, p_next)


def step_hamiltonian(system: DiscreteSystem, q: np.ndarray, p: np.ndarray,
                     opts: Optional[SolverOptions] = None,
                     multiplier_guess: Optional[np.ndarray] = None,
                     jacobian_cache: Optional[list] = None) -> StepResult:
    """Advance a phase-space pair one index.

    Solves, for (pnew, qnew, lambda), momentum balance p - dH/dq(q, pnew)
    against A(q)^T lambda, the configuration update qnew = dH/dp(q, pnew), and
    phi(q, qnew) = 0. Returns the completed point (q, p, qnew) with the
    carried momentum pnew in ``p_next``. Warns when the cross-derivative
    block of H is close to singular, since the update map may then fail to
    exist (on cached-matrix steps the check happened at the last fresh
    assembly).
    """
    if system.kind != HAMILTONIAN:
        raise UnsupportedOperationError("step_hamiltonian needs a Hamiltonian-kind system")
    opts = opts if opts is not None else SolverOptions()
    ham = system.hamiltonian
    n, m = system.n, system.m
    q = _state_block(q, n, "q")
    p = _state_block(p, n, "p")
    a0 = system.dist.matrix(q)
    dq_grad = ham.dq
    dp_grad = ham.dp

    def residual_fn(z):
        pnew, qnew = z[:n], z[n:2 * n]
        r1 = p - dq_grad(q, pnew)
        if m:
            r1 = r1 - a0.T @ z[2 * n:]
            return np.concatenate([r1, qnew - dp_grad(q, pnew),
                                   system.constraint.value(q, qnew)])
        return np.concatenate([r1, qnew - dp_grad(q, pnew)])

    regularity_checked = [False]

    def cross_block(pnew):
        return jacobian_columns(lambda pn: dq_grad(q, pn), pnew, ham.provider.fd_scale)

    def check_regularity(cross):
        if regularity_checked[0]:
            return
        regularity_checked[0] = True
        if n == 1:
            cond = 1.0 if cross[0, 0] != 0.0 else float("inf")
        else:
            cond = float(np.linalg.cond(cross))
        if cond > CROSS_BLOCK_COND_LIMIT:
            warnings.warn(
                "cross-derivative block of the Hamiltonian is near singular "
                "(condition estimate %.3e); the implicit update may not be well defined"
                % cond, RuntimeWarning, stacklevel=3,
            )

    # constant Jacobian blocks are filled once; the solver never keeps a reference
    jm0 = np.zeros((2 * n + m, 2 * n + m))
    jm0[n:2 * n, n:2 * n] = np.eye(n)
    if m:
        jm0[:n, 2 * n:] = -a0.T

    def jacobian_fn(z):
        pnew = z[:n]
        cross = cross_block(pnew)
        check_regularity(cross)
        jm0[:n, :n] = -cross
        jm0[n:2 * n, :n] = -jacobian_columns(lambda pn: dp_grad(q, pn), pnew,
                                             ham.provider.fd_scale)
        if m:
            jm0[2 * n:, n:2 * n] = system.constraint.jacobian2(q, z[n:2 * n])
        return jm0

    pnew0 = p.copy()
    qnew0 = dp_grad(q, pnew0)
    lam0 = np.zeros(m) if multiplier_guess is None else np.asarray(multiplier_guess, dtype=float)
    if lam0.shape != (m,):
        raise DimensionMismatchError("multiplier guess has shape %r, expected (%d,)"
                                     % (lam0.shape, m))
    z0 = np.concatenate([pnew0, qnew0, lam0])
    if opts.cross_check:
        _maybe_cross_check(residual_fn, jacobian_fn(z0), z0)

    z, iters, res = _solve_with_reuse(residual_fn, jacobian_fn, z0, opts, jacobian_cache)
    pnew, qnew, lam = z[:n], z[n:2 * n], z[2 * n:]
    if jacobian_cache is None and not regularity_checked[0]:
        # Newton converged at the predictor; still report degenerate updates
        check_regularity(cross_block(pnew))

    # q and p were validated on entry; qnew is finite by Newton acceptance
    nxt = PontryaginPoint._trusted(q, p, qnew)
    cres = float(np.max(np.abs(system.constraint.value(q, qnew)))) if m else 0.0
    inclusion = dirac_inclusion_residual(system, nxt, pnew)
    if inclusion > 10.0 * opts.tol:
        raise CertificationError(
            "accepted step fails the inclusion residual gate (%.3e > 10 * %.1e)"
            % (inclusion, opts.tol),
            inclusion_residual=inclusion,
        )
    return StepResult(nxt, lam, iters, res, inclusion, cres, pnew)


def run_trajectory(system: DiscreteSystem, seed, steps: int,
                   opts: Optional[SolverOptions] = None) -> Trajectory:
    """Iterate the appropriate stepper ``steps`` times from the seed.

    Lagrangian seeds are complete PontryaginPoints (the curve then holds seed
    plus one point per step); Hamiltonian seeds are (q0, p0) pairs and need
    steps >= 1 to produce a curve point. On a failed step a StepFailureError
    is raised carrying the failing index and the partial trajectory.

    The Newton iteration matrix is reused across steps (reassembled whenever
    it stops contracting); convergence is still judged on exact residuals and
    every step is certified individually.
    """
    opts = opts if opts is not None else SolverOptions()
    if steps < 0:
        raise ValueError("steps must be nonnegative")

    if system.kind == LAGRANGIAN:
        if not isinstance(seed, PontryaginPoint):
            raise UnsupportedOperationError("Lagrangian trajectories start from a PontryaginPoint")
        r0 = check_initial_data(system, seed)
        if r0 > opts.tol:
            warnings.warn("trajectory seed is inconsistent (initial-data residual %.3e)" % r0,
                          RuntimeWarning, stacklevel=2)
        points = [seed]
        diags = []
        lam_prev = None
        # constrained systems reassemble every step: their constraint blocks
        # move with the base point, and the sharp quadratic convergence tail
        # is what keeps the per-step constraint residual far below tol
        jac_cache = [] if system.m == 0 else None
        for k in range(steps):
            try:
                result = step_lagrangian(system, points[-1], opts,
                                         multiplier_guess=lam_prev, check_consistency=False,
                                         jacobian_cache=jac_cache)
            except DiracMechError as exc:
                partial = Trajectory(DiscreteCurve(points), tuple(diags), system.label,
                                     len(diags), opts)
                raise StepFailureError("step %d failed: %s" % (k, exc), k, partial) from exc
            points.append(result.next)
            diags.append(StepDiagnostics(result.residual, result.inclusion_residual,
                                         result.constraint_residual, result.multipliers))
            lam_prev = result.multipliers
        return Trajectory(DiscreteCurve(points), tuple(diags), system.label, steps, opts)

    # Hamiltonian kind: seed is (q0, p0)
    try:
        q, p = seed
    except (TypeError, ValueError):
        raise UnsupportedOperationError("Hamiltonian trajectories start from a (q0, p0) pair")
    if steps == 0:
        raise ValueError("a Hamiltonian trajectory needs at least one step; "
                         "no complete bundle point exists before the first solve")
    q = np.atleast_1d(np.asarray(q, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    points = []
    diags = []
    lam_prev = None
    jac_cache = [] if system.m == 0 else None
    for k in range(steps):
        try:
            result = step_hamiltonian(system, q, p, opts, multiplier_guess=lam_prev,
                                      jacobian_cache=jac_cache)
        except DiracMechError as exc:
            partial = None
            if points:
                partial = Trajectory(DiscreteCurve(points), tuple(diags), system.label,
                                     len(diags), opts, final_state=(q, p))
            raise StepFailureError("step %d failed: %s" % (k, exc), k, partial) from exc
        points.append(result.next)
        diags.append(StepDiagnostics(result.residual, result.inclusion_residual,
                                     result.constraint_residual, result.multipliers))
        lam_prev = result.multipliers
        q, p = result.next.qplus, result.p_next
    return Trajectory(DiscreteCurve(points), tuple(diags), system.label, steps, opts,
                      final_state=(q, p))
