"""Two-step Monte Carlo continuation reconstruction of random interfaces.

Per sample and per wavenumber stage, two steps alternate:

1. with the current profile fixed, the dynamic interface condition is
   collocated and solved for the subsurface potential amplitudes under a
   Tikhonov shift ``(A + eps I) Psi = G``;
2. with those amplitudes fixed, the kinematic residual ``J^(l)`` of every
   illumination is reduced by one Landweber step on the Fourier
   coefficients of the profile.

Stages sweep increasing wavenumbers; stage ``j`` resolves ``floor(kappa_j)``
Fourier modes and every sample starts it from the mean reconstruction of
the previous stage.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .exceptions import ConfigError, NumericalError
from .modes import Schedule, eta_for, make_mode_table, require_no_wood
from .surface import FourierProfile

log = logging.getLogger(__name__)


def psi_plus_from_data(p_n_d, beta_n, b_plus, gamma):
    """Regularized upward amplitudes referenced to ``y = 0`` from coefficients on ``y = b_plus``.

    Propagating orders are back-propagated exactly; evanescent ones use
    ``p e^{i beta b} / (e^{2 i beta b} + gamma)`` so that noise is not
    amplified without bound.
    """
    if not gamma > 0:
        raise ConfigError(f"gamma must be positive, got {gamma}")
    p = np.asarray(p_n_d, dtype=complex)
    beta = np.asarray(beta_n, dtype=complex)
    e = np.exp(1j * beta * b_plus)
    prop = beta.imag == 0.0
    return np.where(prop, p * np.exp(-1j * beta * b_plus), p * e / (e * e + gamma))


def step1_grid(N_prime):
    """``x_j = pi j / N'`` for ``j = 0..2N'``."""
    return math.pi * np.arange(2 * N_prime + 1) / N_prime


def fourier_basis(z, x):
    """Rows ``1, cos x, sin x, ..., cos zx, sin zx`` and their derivatives at ``x``."""
    x = np.asarray(x, dtype=float)
    phi = np.empty((2 * z + 1, x.size))
    dphi = np.empty_like(phi)
    phi[0], dphi[0] = 1.0, 0.0
    for p in range(1, z + 1):
        c, s = np.cos(p * x), np.sin(p * x)
        phi[2 * p - 1], phi[2 * p] = c, s
        dphi[2 * p - 1], dphi[2 * p] = -p * s, p * c
    return phi, dphi


def _profile_on(a, x):
    phi, dphi = fourier_basis((len(a) - 1) // 2, x)
    return a @ phi, a @ dphi


def _normal(fp):
    s = np.sqrt(1.0 + fp * fp)
    return -fp / s, 1.0 / s


@dataclass
class StageIllumination:
    """Everything Step 1 and Step 2 need for one angle at one stage."""

    ctx: object
    table: object
    psi_plus: np.ndarray


@dataclass
class PotentialAmplitudes:
    """Step-1 solution: ``psi1, psi2`` per angle at wavenumber ``kappa``."""

    kappa: float
    psi1: list
    psi2: list
    residual: list = field(default_factory=list)

    def stacked(self):
        return np.concatenate([np.concatenate([a, b]) for a, b in zip(self.psi1, self.psi2)])


def _step1_block(a, ill: StageIllumination, x):
    ctx, t = ill.ctx, ill.table
    med = ctx.medium
    f, fp = _profile_on(a, x)
    n1, n2 = _normal(fp)
    N1, N2 = n1[:, None], n2[:, None]
    an = t.alpha_n[None, :]
    b1 = t.beta_1n[None, :]
    b2 = t.beta_2n[None, :]
    ph = np.exp(1j * x[:, None] * an)
    e1 = ph * np.exp(-1j * b1 * f[:, None])
    e2 = ph * np.exp(-1j * b2 * f[:, None])
    A11 = (-an * an * N1 + an * b1 * N2) * e1
    A12 = (an * b2 * N1 - b2 * b2 * N2) * e2
    A21 = (an * b1 * N1 - b1 * b1 * N2) * e1
    A22 = (an * an * N1 - an * b2 * N2) * e2
    B11 = (-an * an - b1 * b1) * N1 * e1
    B21 = (-an * an - b1 * b1) * N2 * e1
    C12 = (an * an + b2 * b2) * N2 * e2
    C22 = -(an * an + b2 * b2) * N1 * e2
    zero = np.zeros_like(A11)
    A = (
        2.0 * med.mu * np.block([[A11, A12], [A21, A22]])
        + med.lam * np.block([[B11, zero], [B21, zero]])
        + med.mu * np.block([[zero, C12], [zero, C22]])
    )
    ptot = np.exp(1j * (ctx.alpha * x - ctx.beta * f)) + np.exp(
        1j * (x[:, None] * an + t.beta_n[None, :] * f[:, None])
    ) @ ill.psi_plus
    G = np.concatenate([-ptot * n1, -ptot * n2])
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(G))):
        raise NumericalError(f"non-finite Step-1 entries at kappa={ctx.kappa}, theta={ctx.theta}")
    return A, G


def assemble_step1(a, illuminations, N_prime):
    """Per-angle blocks ``A^(l)`` (``2(2N'+1) x 2(2N+1)``) and right-hand sides ``G^(l)``.

    ``a`` is the coefficient vector of the current profile.  The blocks are
    the diagonal of the block-diagonal system stacked over angles.
    """
    a = np.asarray(a, dtype=float)
    x = step1_grid(N_prime)
    blocks, rhs = [], []
    for ill in illuminations:
        A, G = _step1_block(a, ill, x)
        blocks.append(A)
        rhs.append(G)
    return blocks, rhs


def tikhonov_solve(A, G, eps):
    """Solve ``(A + eps I) Psi = G``; non-square ``A`` uses ``(A^H A + eps I) Psi = A^H G``.

    ``A`` and ``G`` may also be lists of diagonal blocks.  Returns ``Psi``
    (or a list) and the relative residual of the shifted system.
    """
    if not eps > 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    if isinstance(A, (list, tuple)):
        out = [tikhonov_solve(Ab, Gb, eps) for Ab, Gb in zip(A, G)]
        return [o[0] for o in out], [o[1] for o in out]
    A = np.asarray(A)
    G = np.asarray(G)
    if A.shape[0] == A.shape[1]:
        M, rhs = A + eps * np.eye(A.shape[0]), G
    else:
        AH = A.conj().T
        M, rhs = AH @ A + eps * np.eye(A.shape[1]), AH @ G
    try:
        lu = scipy.linalg.lu_factor(M, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as exc:
        raise NumericalError(f"Tikhonov solve failed: {exc}") from exc
    psi = scipy.linalg.lu_solve(lu, rhs)
    if not np.all(np.isfinite(psi)):
        raise NumericalError(f"Tikhonov solve broke down (cond ~ {np.linalg.cond(M):.2e})")
    gn = np.linalg.norm(rhs)
    res = float(np.linalg.norm(M @ psi - rhs) / gn) if gn > 0 else 0.0
    return psi, res


def solve_step1(a, illuminations, N_prime, eps):
    blocks, rhs = assemble_step1(a, illuminations, N_prime)
    psis, res = tikhonov_solve(blocks, rhs, eps)
    K = illuminations[0].table.n.size
    return PotentialAmplitudes(
        illuminations[0].ctx.kappa, [p[:K] for p in psis], [p[K:] for p in psis], list(res)
    )


def reconstruct_displacement(psi1, psi2, f, ctx, table, x):
    """Displacement ``u(x, f(x))`` from potential amplitudes; ``f`` is a callable or values."""
    x = np.asarray(x, dtype=float)
    fx = np.asarray(f(x) if callable(f) else f, dtype=float)
    an = table.alpha_n[None, :]
    ph = np.exp(1j * x[:, None] * an)
    chi1 = ph * np.exp(-1j * table.beta_1n[None, :] * fx[:, None]) * psi1
    chi2 = ph * np.exp(-1j * table.beta_2n[None, :] * fx[:, None]) * psi2
    u1 = (1j * an * chi1 - 1j * table.beta_2n * chi2).sum(axis=1)
    u2 = (-1j * table.beta_1n * chi1 - 1j * an * chi2).sum(axis=1)
    return np.stack([u1, u2])


def _kinematic_parts(f, ill: StageIllumination, psi1, psi2, x, derivative=False):
    """``U1, U2`` with residual ``r = n1 U1 + n2 U2``; with ``derivative`` also ``dU/df``."""
    ctx, t = ill.ctx, ill.table
    w2 = ctx.medium.rho_f * ctx.omega**2
    an = t.alpha_n[None, :]
    ph = np.exp(1j * x[:, None] * an)
    ep = ph * np.exp(1j * t.beta_n[None, :] * f[:, None]) * ill.psi_plus
    ei = np.exp(1j * (ctx.alpha * x - ctx.beta * f))
    c1 = ph * np.exp(-1j * t.beta_1n[None, :] * f[:, None]) * psi1
    c2 = ph * np.exp(-1j * t.beta_2n[None, :] * f[:, None]) * psi2
    b, b1, b2 = t.beta_n, t.beta_1n, t.beta_2n
    U1 = ep @ t.alpha_n + ctx.alpha * ei - w2 * (c1 @ t.alpha_n - c2 @ b2)
    U2 = ep @ b - ctx.beta * ei + w2 * (c1 @ b1 + c2 @ t.alpha_n)
    if not derivative:
        return U1, U2
    ib, ib1, ib2 = 1j * b, -1j * b1, -1j * b2
    dU1 = ep @ (t.alpha_n * ib) - 1j * ctx.beta * ctx.alpha * ei - w2 * (c1 @ (t.alpha_n * ib1) - c2 @ (b2 * ib2))
    dU2 = ep @ (b * ib) + 1j * ctx.beta**2 * ei + w2 * (c1 @ (b1 * ib1) + c2 @ (t.alpha_n * ib2))
    return U1, U2, dU1, dU2


def quadrature_weight(N_prime):
    return 2.0 * math.pi / (2 * N_prime + 1)


def kinematic_residual(a, illuminations, potentials, N_prime):
    """Pointwise kinematic residual per angle on the Step-1 grid."""
    x = step1_grid(N_prime)
    f, fp = _profile_on(np.asarray(a, dtype=float), x)
    n1, n2 = _normal(fp)
    out = []
    for l, ill in enumerate(illuminations):
        U1, U2 = _kinematic_parts(f, ill, potentials.psi1[l], potentials.psi2[l], x)
        out.append(n1 * U1 + n2 * U2)
    return out


def residual_J(a, illuminations, potentials, N_prime):
    """``J^(l)``: trapezoidal squared L2 norm of the kinematic residual, one per angle."""
    w = quadrature_weight(N_prime)
    return np.array([w * float(np.sum(np.abs(r) ** 2)) for r in kinematic_residual(a, illuminations, potentials, N_prime)])


def _jacobian_analytic(a, illuminations, potentials, N_prime):
    a = np.asarray(a, dtype=float)
    x = step1_grid(N_prime)
    phi, dphi = fourier_basis((a.size - 1) // 2, x)
    f, fp = a @ phi, a @ dphi
    s = np.sqrt(1.0 + fp * fp)
    w = quadrature_weight(N_prime)
    DJ = np.empty((len(illuminations), a.size))
    for l, ill in enumerate(illuminations):
        U1, U2, dU1, dU2 = _kinematic_parts(f, ill, potentials.psi1[l], potentials.psi2[l], x, derivative=True)
        r = (-fp * U1 + U2) / s
        dr_df = (-fp * dU1 + dU2) / s
        dr_dfp = (-U1 - fp * U2) / s**3
        rc = np.conj(r)
        DJ[l] = 2.0 * w * (phi @ np.real(rc * dr_df) + dphi @ np.real(rc * dr_dfp))
    return DJ


def fd_jacobian(fun, a, rel_step=1e-6):
    """Central differences of a vector function with ``h_p = rel_step * max(1, |a_p|)``."""
    a = np.asarray(a, dtype=float)
    cols = []
    for p in range(a.size):
        h = rel_step * max(1.0, abs(a[p]))
        e = np.zeros_like(a)
        e[p] = h
        d = (np.asarray(fun(a + e)) - np.asarray(fun(a - e))) / (2.0 * h)
        if not np.all(np.isfinite(d)):
            raise NumericalError(f"non-finite finite-difference quotient for coefficient {p}")
        cols.append(d)
    return np.stack(cols, axis=-1)


def jacobian_J(a, illuminations, potentials, N_prime, method="analytic", rel_step=1e-6):
    """``L x (2z+1)`` Jacobian of ``J`` with the potentials held fixed.

    ``method="fd"`` is the central-difference reference; ``"analytic"``
    differentiates the residual through ``f`` and ``f'`` by the chain rule.
    """
    if method == "analytic":
        return _jacobian_analytic(a, illuminations, potentials, N_prime)
    if method == "fd":
        return fd_jacobian(lambda b: residual_J(b, illuminations, potentials, N_prime), a, rel_step)
    raise ValueError(f"unknown Jacobian method {method!r}")


@dataclass
class ReconState:
    """Landweber iterate of one sample at one stage."""

    m: int
    a: np.ndarray
    stage: int = 0
    t: int = 0
    delta1: float = math.inf
    history: list = field(default_factory=list)
    halvings: int = 0

    @property
    def profile(self):
        return FourierProfile(self.a)


def landweber_step(state: ReconState, J, DJ, eta):
    """``a <- a - eta DJ^T J``; records the update norm and ``sum J``."""
    J = np.asarray(J, dtype=float)
    step = eta * (np.asarray(DJ, dtype=float).T @ J)
    state.a = state.a - step
    state.delta1 = float(np.linalg.norm(step))
    state.t += 1
    state.history.append(float(J.sum()))
    return state


def make_illuminations(data_by_angle, kappa, schedule: Schedule, medium, b_plus, check_wood=True):
    """Stage illuminations from measured ``p_n^d`` (one array per angle of the schedule)."""
    out = []
    for theta, p in zip(schedule.angles, data_by_angle):
        ctx, table = make_mode_table(medium, kappa, theta, schedule.N)
        if check_wood:
            require_no_wood(ctx, table)
        p = np.asarray(p, dtype=complex)
        if p.size > table.n.size and (p.size - table.n.size) % 2 == 0:
            # records may carry more orders than the inversion uses
            cut = (p.size - table.n.size) // 2
            p = p[cut:-cut]
        if p.size != table.n.size:
            raise ConfigError(f"expected {table.n.size} coefficients per record, got {p.size}")
        out.append(StageIllumination(ctx, table, psi_plus_from_data(p, table.beta_n, b_plus, schedule.gamma)))
    return out


STEP_RTOL = 1e-12
MAX_HALVINGS = 30


def _trial(a, illuminations, Np, eps):
    with np.errstate(over="ignore", invalid="ignore"):
        try:
            pots = solve_step1(a, illuminations, Np, eps)
            J = residual_J(a, illuminations, pots, Np)
        except NumericalError:
            return None, None
    if not np.all(np.isfinite(J)):
        return None, None
    return pots, J


def run_stage(state: ReconState, illuminations, schedule: Schedule, eta, jacobian="analytic", logger=None):
    """Landweber loop of one stage, Step 1 re-solved at every iteration.

    A step that increases ``sum J`` (or leaves the region where Step 1 is
    finite) is undone and retried with half the relaxation; accepted
    steps use the plain update.
    """
    Np = schedule.N_prime
    t0 = time.perf_counter()
    state.t, state.delta1 = 0, 1.0
    prev = None
    halvings = 0
    while state.delta1 > schedule.delta and state.t < schedule.T:
        pots, J = _trial(state.a, illuminations, Np, schedule.eps)
        if prev is not None and (J is None or J.sum() > prev[1].sum() * (1.0 + STEP_RTOL)):
            halvings += 1
            if halvings > MAX_HALVINGS:
                raise NumericalError(f"Landweber step for sample {state.m} shrank below {eta:.3e} * 2^-{MAX_HALVINGS}")
            eta *= 0.5
            state.a, J, DJ = prev
        elif J is None:
            raise NumericalError(f"Step 1 is not finite at the start of stage {state.stage} for sample {state.m}")
        else:
            DJ = jacobian_J(state.a, illuminations, pots, Np, method=jacobian)
            prev = (state.a.copy(), J, DJ)
        landweber_step(state, J, DJ, eta)
        if not np.all(np.isfinite(state.a)):
            raise NumericalError(f"Landweber iterate diverged for sample {state.m} at stage {state.stage}")
        if logger is not None:
            logger(
                {
                    "m": state.m,
                    "j": state.stage,
                    "t": state.t,
                    "delta1": state.delta1,
                    "J": float(J.sum()),
                    "eta": eta,
                    "wall": time.perf_counter() - t0,
                }
            )
    state.halvings = halvings
    return state


def stage_eta(schedule, j):
    if schedule.Q >= 2:
        return eta_for(schedule.kappas[j], schedule)
    # single-stage schedules have no second wavenumber; use kappa_1 twice
    return schedule.eta0 / (3.0 * schedule.kappas[0]) ** 3


def reconstruct_sample(records_m, schedule: Schedule, medium, b_plus, init, stages=None, m=0, logger=None, **kw):
    """Reconstruct one sample through the stages ``stages`` (default: all it belongs to).

    Parameters
    ----------
    records_m : mapping
        ``records_m[j]`` is a list of ``p_n^d`` arrays, one per angle.
    init : array_like or mapping
        Starting coefficients; a mapping gives one start per stage (the
        previous stage's mean), a vector is used for the first stage only.

    Returns
    -------
    ReconState
        Coefficients of length ``2 z + 1`` for the last stage processed.
    """
    if stages is None:
        stages = [j for j in range(schedule.Q) if m < schedule.M_per_stage[j]]
    state = None
    for j in stages:
        z = schedule.Z[j]
        if isinstance(init, dict):
            a0 = init[j]
        else:
            a0 = init if state is None else state.a
        a0 = FourierProfile(np.atleast_1d(np.asarray(a0, dtype=float))).extend(z).a
        if j not in records_m:
            raise ConfigError(f"missing records for sample {m} at stage {j}")
        ills = make_illuminations(records_m[j], schedule.kappas[j], schedule, medium, b_plus)
        state = ReconState(m=m, a=a0, stage=j)
        run_stage(state, ills, schedule, stage_eta(schedule, j), logger=logger, **kw)
    return state


def run_tsmcc(records, schedule: Schedule, medium, b_plus, workers=1, logger=None, on_stage=None, exclude=()):
    """Algorithm-level driver over all stages and samples.

    ``records[(m, j)]`` is the per-angle list of measured coefficients.
    Stage ``j`` processes samples ``0..M_j-1`` in parallel, each starting
    from the mean coefficients of stage ``j-1`` (``[b_plus]`` at ``j=0``).
    Samples in ``exclude`` (unresolved data) are skipped entirely.

    Returns
    -------
    dict
        ``coeffs`` (``M x (2 z_Q + 1)`` array of final coefficients, NaN rows
        for excluded samples), ``stage_means`` and per-sample ``status``.
        A sample is ``ok`` only if every stage it went through converged
        without numerical failure.
    """
    from .parallel import parallel_map

    exclude = set(int(m) for m in exclude)
    for j, Mj in enumerate(schedule.M_per_stage):
        for m in range(Mj):
            if m not in exclude and (m, j) not in records:
                raise ConfigError(f"missing records for sample m={m}, stage j={j}")
    mean = np.array([float(b_plus)])
    stage_means = []
    final = {}
    status = {m: {"ok": False, "stage": None, "info": "excluded: unresolved forward data"} for m in exclude}
    for j in range(schedule.Q):
        members = [m for m in range(schedule.M_per_stage[j]) if m not in exclude]
        if not members:
            raise NumericalError(f"stage {j} has no usable samples")
        jobs = [(m, j, records[(m, j)], mean) for m in members]
        results = parallel_map(_stage_job, jobs, workers=workers, common=(schedule, medium, b_plus))
        coeffs = []
        for m, (a, ok, info, logs) in zip(members, results):
            if logger is not None:
                for rec in logs:
                    logger(rec)
            prev_ok = status.get(m, {"ok": True})["ok"]
            status[m] = {"ok": prev_ok and ok, "stage": j, "info": info}
            coeffs.append(a)
            final[m] = a
        mean = np.mean(coeffs, axis=0)
        stage_means.append(mean)
        if on_stage is not None:
            on_stage(j, mean)
    M = schedule.M
    width = 2 * schedule.Z[-1] + 1
    return {
        "coeffs": np.stack(
            [FourierProfile(final[m]).extend(schedule.Z[-1]).a if m in final else np.full(width, np.nan) for m in range(M)]
        ),
        "stage_means": stage_means,
        "status": [status[m] for m in range(M)],
    }


def _stage_job(job, schedule, medium, b_plus):
    m, j, recs, mean = job
    logs = []
    try:
        st = reconstruct_sample({j: recs}, schedule, medium, b_plus, {j: mean}, stages=[j], m=m, logger=logs.append)
        return st.a, True, f"t={st.t} delta1={st.delta1:.3e} halvings={st.halvings}", logs
    except NumericalError as exc:
        log.warning("sample %d failed at stage %d: %s", m, j, exc)
        a = FourierProfile(np.atleast_1d(mean)).extend(schedule.Z[j]).a
        return a, False, str(exc), logs
