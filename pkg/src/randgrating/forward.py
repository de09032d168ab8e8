"""Direct scattering solver used to synthesize measurement data.

Two discretizations of the coupled fluid-solid transmission problem are
provided, both with all amplitudes unknown and both collocating the dynamic
(traction) and kinematic (normal velocity) interface conditions:

* plane-wave collocation, where the outgoing Rayleigh expansions are
  imposed directly on the interface;
* a modal (curvilinear coordinate) method, where every field is expanded
  in exact outgoing modes of the coordinates ``(x, y - f(x))``.

The traction is assembled from the displacement gradient and Hooke's law,
independently of the block formulas in :mod:`inverse`.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .exceptions import NumericalError
from .modes import ModeTable, WaveContext, make_mode_table, require_no_wood

log = logging.getLogger(__name__)

COND_LIMIT = 1e14
RESIDUAL_LIMIT = 1e-4


@dataclass
class ForwardSolution:
    """Amplitudes of a forward solve.

    ``psi_plus`` are the upward Rayleigh coefficients referenced to ``y = 0``
    (``p^d = sum psi_plus_n exp(i alpha_n x + i beta_n y)``); ``psi1`` and
    ``psi2`` are the compressional and shear potential amplitudes
    (``p_j = sum psi_jn exp(i alpha_n x - i beta_jn y)``).
    """

    ctx: WaveContext
    table: ModeTable
    psi_plus: np.ndarray
    psi1: np.ndarray
    psi2: np.ndarray
    dynamic_residual: float = math.nan
    kinematic_residual: float = math.nan
    energy_defect: float = math.nan
    cond: float = math.nan
    method: str = "rayleigh"
    n_modes: int = 0

    @property
    def residual(self):
        return max(self.dynamic_residual, self.kinematic_residual)

    @property
    def resolved(self):
        return bool(self.residual <= RESIDUAL_LIMIT)

    def rayleigh_at(self, height):
        """Coefficients ``p_n^d`` of the diffracted field on the line ``y = height``."""
        return self.psi_plus * np.exp(1j * self.table.beta_n * height)

    def field_on_line(self, x, height):
        x = np.asarray(x, dtype=float)
        phase = np.exp(1j * np.outer(x, self.table.alpha_n))
        return phase @ self.rayleigh_at(height)


def collocation_points(Nc, offset=0.0):
    """``x_j = pi*j/Nc + offset`` for ``j = 0..2Nc``."""
    return math.pi * np.arange(2 * Nc + 1) / Nc + offset


def unit_normal(fprime):
    """Upward unit normal ``(-f', 1)/sqrt(1 + f'^2)`` as two arrays."""
    s = np.sqrt(1.0 + fprime * fprime)
    return -fprime / s, 1.0 / s


def _elastic_fields(ctx, table, x, f):
    """Displacement and its gradient per unknown elastic column.

    Returns ``u1, u2, u1x, u1y, u2x, u2y``, each of shape
    ``(len(x), 2*(2N+1))`` with columns ``[psi1_n..., psi2_n...]``.
    """
    a = table.alpha_n[None, :]
    b1 = table.beta_1n[None, :]
    b2 = table.beta_2n[None, :]
    e1 = np.exp(1j * (x[:, None] * a - b1 * f[:, None]))
    e2 = np.exp(1j * (x[:, None] * a - b2 * f[:, None]))
    # u = grad p1 + (d_y p2, -d_x p2) with d_x -> i alpha_n, d_y -> -i beta_jn
    gx1, gy1 = 1j * a, -1j * b1
    gx2, gy2 = 1j * a, -1j * b2
    u1 = np.hstack([gx1 * e1, gy2 * e2])
    u2 = np.hstack([gy1 * e1, -gx2 * e2])
    u1x = np.hstack([gx1 * gx1 * e1, gy2 * gx2 * e2])
    u1y = np.hstack([gx1 * gy1 * e1, gy2 * gy2 * e2])
    u2x = np.hstack([gy1 * gx1 * e1, -gx2 * gx2 * e2])
    u2y = np.hstack([gy1 * gy1 * e1, -gx2 * gy2 * e2])
    return u1, u2, u1x, u1y, u2x, u2y


def _traction(medium, n1, n2, grads):
    u1x, u1y, u2x, u2y = grads
    div = u1x + u2y
    s11 = medium.lam * div + 2.0 * medium.mu * u1x
    s22 = medium.lam * div + 2.0 * medium.mu * u2y
    s12 = medium.mu * (u1y + u2x)
    return s11 * n1[:, None] + s12 * n2[:, None], s12 * n1[:, None] + s22 * n2[:, None]


def _blocks(profile, ctx, table, x):
    """Row blocks ``(matrix, rhs)`` of the three interface conditions at ``x``."""
    f = np.asarray(profile(x), dtype=float)
    n1, n2 = unit_normal(np.asarray(profile.derivative(x), dtype=float))
    med = ctx.medium
    ep = np.exp(1j * (x[:, None] * table.alpha_n[None, :] + table.beta_n[None, :] * f[:, None]))
    einc = np.exp(1j * (ctx.alpha * x - ctx.beta * f))
    u1, u2, *grads = _elastic_fields(ctx, table, x, f)
    t1, t2 = _traction(med, n1, n2, grads)

    # -(p^d + p^i) n = T u
    dyn1 = np.hstack([-n1[:, None] * ep, -t1])
    dyn2 = np.hstack([-n2[:, None] * ep, -t2])
    # d_n p^d - rho_f w^2 u.n = -d_n p^i, scaled by 1/kappa
    dn_ep = 1j * (table.alpha_n[None, :] * n1[:, None] + table.beta_n[None, :] * n2[:, None]) * ep
    un = u1 * n1[:, None] + u2 * n2[:, None]
    kin = np.hstack([dn_ep, -med.rho_f * ctx.omega**2 * un]) / ctx.kappa
    dn_inc = 1j * (ctx.alpha * n1 - ctx.beta * n2) * einc
    rhs = np.concatenate([n1 * einc, n2 * einc, -dn_inc / ctx.kappa])
    return np.vstack([dyn1, dyn2, kin]), rhs


def assemble_forward_system(profile, ctx: WaveContext, table: ModeTable, Nc: int, offset: float = 0.0):
    """Collocation matrix and right-hand side with unknowns ``[psi_plus, psi1, psi2]``.

    ``profile`` is any object with ``__call__(x)`` and ``derivative(x)``.
    The matrix has ``3*(2Nc+1)`` rows (two traction components and the
    kinematic condition at every collocation point) and ``3*(2N+1)``
    columns.
    """
    if Nc < ctx.N:
        raise ValueError(f"need Nc >= N, got Nc={Nc}, N={ctx.N}")
    return _blocks(profile, ctx, table, collocation_points(Nc, offset))


def interface_residuals(profile, ctx, table, coeffs, x):
    """Max-abs residuals of the dynamic and kinematic conditions at ``x``.

    Both are relative to the incident wave: the dynamic residual to its unit
    pressure amplitude and the kinematic one to ``kappa``.
    """
    mat, rhs = _blocks(profile, ctx, table, np.asarray(x, dtype=float))
    r = mat @ coeffs - rhs
    m = x.size
    dyn = np.sqrt(np.abs(r[:m]) ** 2 + np.abs(r[m : 2 * m]) ** 2)
    return float(dyn.max()), float(np.abs(r[2 * m :]).max())


def energy_defect(sol: ForwardSolution, ctx: WaveContext | None = None, table: ModeTable | None = None):
    """Relative mismatch between incident and outgoing vertical energy flux.

    In units where the incident flux is ``beta``, a reflected acoustic order
    carries ``beta_n |psi_n^+|^2`` and a transmitted elastic order carries
    ``rho_f rho omega^4 beta_jn |psi_jn|^2``; evanescent orders carry none.
    """
    ctx = ctx or sol.ctx
    table = table or sol.table
    reflected, transmitted = energy_fluxes(sol, ctx, table)
    return abs(1.0 - reflected - transmitted)


def energy_fluxes(sol, ctx=None, table=None):
    """Reflected and transmitted flux as fractions of the incident flux."""
    ctx = ctx or sol.ctx
    table = table or sol.table
    med = ctx.medium
    prop = table.beta_n.imag == 0.0
    p1 = table.beta_1n.imag == 0.0
    p2 = table.beta_2n.imag == 0.0
    refl = np.sum(table.beta_n.real[prop] * np.abs(sol.psi_plus[prop]) ** 2)
    w = med.rho_f * med.rho * ctx.omega**4
    trans = w * (
        np.sum(table.beta_1n.real[p1] * np.abs(sol.psi1[p1]) ** 2)
        + np.sum(table.beta_2n.real[p2] * np.abs(sol.psi2[p2]) ** 2)
    )
    return float(refl / ctx.beta), float(trans / ctx.beta)


def _fourier_coefficients(g, M, nfft):
    x = 2.0 * math.pi * np.arange(nfft) / nfft
    c = np.fft.fft(g(x)) / nfft
    return c[np.arange(-M, M + 1) % nfft]


def _toeplitz(c, K):
    idx = np.arange(K)[:, None] - np.arange(K)[None, :]
    return c[idx + K - 1]


class _ModalBasis:
    """Outgoing modes of one Helmholtz potential in translated coordinates.

    With ``u = y - f(x)`` the half-space above (``side=+1``) or below
    (``side=-1``) the interface becomes ``u > 0`` or ``u < 0`` and the
    Helmholtz equation separates: ``p = exp(lam u) phi(x)``.  Propagating
    orders are exact plane waves ``exp(i alpha_n x + i side beta_n y)``;
    evanescent modes come from the truncated quasi-periodic eigenproblem.
    """

    def __init__(self, profile, alpha_n, beta, k, side, nfft):
        K = alpha_n.size
        self.side = side
        self.alpha_n = alpha_n
        self.prop = np.flatnonzero(beta.imag == 0.0)
        self.beta_prop = beta[self.prop].real
        self._profile = profile

        fp = lambda x: np.asarray(profile.derivative(x), dtype=float)
        fpp = lambda x: np.asarray(profile.second_derivative(x), dtype=float)
        M = K - 1
        t_fp = _toeplitz(_fourier_coefficients(fp, M, nfft), K)
        t_fpp = _toeplitz(_fourier_coefficients(fpp, M, nfft), K)
        t_g = _toeplitz(_fourier_coefficients(lambda x: 1.0 + fp(x) ** 2, M, nfft), K)
        D = np.diag(1j * alpha_n)
        eye, zero = np.eye(K), np.zeros((K, K))
        # T_g is hermitian positive definite, so fold it into a standard problem
        cho = scipy.linalg.cho_factor(t_g)
        lower = scipy.linalg.cho_solve(cho, np.hstack([-(D @ D + k * k * eye), t_fpp + 2.0 * t_fp @ D]))
        lam, vec = np.linalg.eig(np.vstack([np.hstack([zero, eye]), lower]))
        vec = vec[:K]
        tol = 1e-7 * max(k, 1.0)
        # keep modes decaying away from the interface
        if side > 0:
            keep = lam.real < -tol
        else:
            keep = lam.real > tol
        self.lam = lam[keep]
        v = vec[:, keep]
        self.vec = v / np.abs(v).max(axis=0)

    @property
    def size(self):
        return self.prop.size + self.lam.size

    def on_interface(self, x):
        """``p, p_X, p_Y, p_XX, p_XY, p_YY`` on the interface, one column per mode."""
        prof = self._profile
        f = np.asarray(prof(x), dtype=float)[:, None]
        fp = np.asarray(prof.derivative(x), dtype=float)[:, None]
        fpp = np.asarray(prof.second_derivative(x), dtype=float)[:, None]

        a = self.alpha_n[self.prop][None, :]
        b = self.side * self.beta_prop[None, :]
        e = np.exp(1j * (a * x[:, None] + b * f))
        gx, gy = 1j * a, 1j * b
        exact = [e, gx * e, gy * e, gx * gx * e, gx * gy * e, gy * gy * e]

        E = np.exp(1j * np.outer(x, self.alpha_n))
        ia = 1j * self.alpha_n[:, None]
        phi = E @ self.vec
        dphi = E @ (ia * self.vec)
        ddphi = E @ (ia * ia * self.vec)
        lam = self.lam[None, :]
        pX = dphi - fp * lam * phi
        numeric = [
            phi,
            pX,
            lam * phi,
            ddphi - fpp * lam * phi - 2.0 * fp * lam * dphi + fp * fp * lam * lam * phi,
            lam * pX,
            lam * lam * phi,
        ]
        return [np.hstack([p, q]) for p, q in zip(exact, numeric)]

    def at_height(self, x, y):
        """Field of every mode at points ``(x, y)`` on the outgoing side."""
        f = np.asarray(self._profile(x), dtype=float)[:, None]
        a = self.alpha_n[self.prop][None, :]
        exact = np.exp(1j * (a * x[:, None] + self.side * self.beta_prop[None, :] * y))
        E = np.exp(1j * np.outer(x, self.alpha_n))
        numeric = (E @ self.vec) * np.exp(self.lam[None, :] * (y - f))
        return np.hstack([exact, numeric])


class ModalSolver:
    """C-method solver of the fluid-solid transmission problem for one profile.

    The profile needs ``__call__``, ``derivative`` and ``second_derivative``
    and must be smooth; the eigenmodes are built once per ``(profile,
    kappa, theta)``.
    """

    def __init__(self, profile, ctx, table, nfft=1024):
        self.profile, self.ctx, self.table = profile, ctx, table
        an = table.alpha_n
        self.fluid = _ModalBasis(profile, an, table.beta_n, ctx.kappa, +1, nfft)
        self.comp = _ModalBasis(profile, an, table.beta_1n, ctx.kappa1m, -1, nfft)
        self.shear = _ModalBasis(profile, an, table.beta_2n, ctx.kappa2m, -1, nfft)
        self.coeffs = None

    def rows(self, x):
        ctx, med = self.ctx, self.ctx.medium
        prof = self.profile
        f = np.asarray(prof(x), dtype=float)
        n1, n2 = unit_normal(np.asarray(prof.derivative(x), dtype=float))
        pf, pfx, pfy, *_ = self.fluid.on_interface(x)
        q1, q1x, q1y, q1xx, q1xy, q1yy = self.comp.on_interface(x)
        q2, q2x, q2y, q2xx, q2xy, q2yy = self.shear.on_interface(x)
        # u = grad p1 + (d_y p2, -d_x p2)
        u1 = np.hstack([q1x, q2y])
        u2 = np.hstack([q1y, -q2x])
        grads = (
            np.hstack([q1xx, q2xy]),
            np.hstack([q1xy, q2yy]),
            np.hstack([q1xy, -q2xx]),
            np.hstack([q1yy, -q2xy]),
        )
        t1, t2 = _traction(med, n1, n2, grads)
        N1, N2 = n1[:, None], n2[:, None]
        einc = np.exp(1j * (ctx.alpha * x - ctx.beta * f))
        dyn1 = np.hstack([-N1 * pf, -t1])
        dyn2 = np.hstack([-N2 * pf, -t2])
        kin = np.hstack([pfx * N1 + pfy * N2, -med.rho_f * ctx.omega**2 * (u1 * N1 + u2 * N2)]) / ctx.kappa
        dn_inc = 1j * (ctx.alpha * n1 - ctx.beta * n2) * einc
        rhs = np.concatenate([n1 * einc, n2 * einc, -dn_inc / ctx.kappa])
        return np.vstack([dyn1, dyn2, kin]), rhs

    def solve(self, Nc, offset=0.0):
        mat, rhs = self.rows(collocation_points(Nc, offset))
        coeffs, cond = _lstsq(mat, rhs)
        self.coeffs, self.cond = coeffs, cond
        return coeffs

    def residuals(self, x):
        mat, rhs = self.rows(x)
        r = mat @ self.coeffs - rhs
        m = x.size
        dyn = np.sqrt(np.abs(r[:m]) ** 2 + np.abs(r[m : 2 * m]) ** 2)
        return float(dyn.max()), float(np.abs(r[2 * m :]).max())

    def _split(self):
        nf, nc = self.fluid.size, self.comp.size
        c = self.coeffs
        return c[:nf], c[nf : nf + nc], c[nf + nc :]

    def scattered_field(self, x, y):
        """Diffracted pressure at points above the interface."""
        return self.fluid.at_height(np.asarray(x, float), y) @ self._split()[0]

    def potentials(self, x, y):
        """Compressional and shear potentials at points below the interface."""
        x = np.asarray(x, float)
        _, c1, c2 = self._split()
        return self.comp.at_height(x, y) @ c1, self.shear.at_height(x, y) @ c2

    def amplitudes(self, y_top, y_bot, orders):
        """Rayleigh amplitudes ``psi_plus, psi1, psi2`` (referenced to ``y = 0``) for ``orders``.

        Propagating amplitudes are the exact-mode coefficients; evanescent
        ones are read off the fields on ``y_top`` and ``y_bot`` by FFT.
        """
        t = self.table
        m = max(512, 8 * t.n.size)
        x = 2.0 * math.pi * np.arange(m) / m
        demod = np.exp(-1j * self.ctx.alpha * x)
        cf, c1, c2 = self._split()
        p1, p2 = self.potentials(x, y_bot)
        out = []
        for vals, beta, y, sign, basis, c in (
            (self.scattered_field(x, y_top), t.beta_n, y_top, 1, self.fluid, cf),
            (p1, t.beta_1n, y_bot, -1, self.comp, c1),
            (p2, t.beta_2n, y_bot, -1, self.shear, c2),
        ):
            amp = (np.fft.fft(vals * demod) / m)[t.n % m] * np.exp(-1j * sign * beta * y)
            amp[basis.prop] = c[: basis.prop.size]
            out.append(amp[orders + t.n[-1]])
        return out


def _lstsq(mat, rhs):
    if not np.all(np.isfinite(mat)):
        raise NumericalError("non-finite entries in the forward system")
    scale = np.linalg.norm(mat, axis=0)
    scale[scale == 0] = 1.0
    coeffs, _, _, sv = scipy.linalg.lstsq(mat / scale, rhs, lapack_driver="gelsd")
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    return coeffs / scale, cond


def _check_cond(cond, ctx):
    if cond > COND_LIMIT:
        raise NumericalError(
            f"forward system near-singular (cond {cond:.2e}) at kappa={ctx.kappa}, theta={ctx.theta}; "
            "increase Nc or move the line heights"
        )


def _residual_grid(m, offset):
    return offset + (np.arange(m) + 0.5) * (2.0 * math.pi / m)


def _is_smooth(profile):
    return hasattr(profile, "second_derivative") and getattr(profile, "smooth", True)


def _solve_rayleigh(profile, ctx, table, Nc, offset):
    mat, rhs = assemble_forward_system(profile, ctx, table, Nc, offset)
    coeffs, cond = _lstsq(mat, rhs)
    _check_cond(cond, ctx)
    K = table.n.size
    sol = ForwardSolution(ctx, table, coeffs[:K], coeffs[K : 2 * K], coeffs[2 * K :], cond=cond)
    xs = _residual_grid(4 * (2 * Nc + 1), offset)
    sol.dynamic_residual, sol.kinematic_residual = interface_residuals(profile, ctx, table, coeffs, xs)
    sol.method = "rayleigh"
    return sol


def _solve_modal(profile, ctx, table, n_modes, offset):
    mctx, mtable = make_mode_table(ctx.medium, ctx.kappa, ctx.theta, n_modes, ctx.heights)
    solver = ModalSolver(profile, mctx, mtable)
    Nc = 2 * n_modes
    solver.solve(Nc, offset)
    dyn, kin = solver.residuals(_residual_grid(4 * (2 * Nc + 1), offset))
    x = np.linspace(0.0, 2.0 * math.pi, 257)
    f = np.asarray(profile(x), dtype=float)
    y_top = ctx.a_plus if ctx.heights is not None else float(f.max()) + 0.25
    y_bot = ctx.a_minus if ctx.heights is not None else float(f.min()) - 0.25
    psi_plus, psi1, psi2 = solver.amplitudes(y_top, y_bot, table.n)
    sol = ForwardSolution(ctx, table, psi_plus, psi1, psi2, dyn, kin, cond=solver.cond)
    sol.method = "modal"
    sol.n_modes = n_modes
    return sol


def forward_solve(
    profile,
    ctx: WaveContext,
    table: ModeTable,
    Nc: int | None = None,
    offset: float = 0.0,
    check_wood: bool = True,
    method: str = "auto",
    tol: float = 1e-8,
    max_modes: int = 100,
    start_modes: int | None = None,
):
    """Solve the coupled transmission problem for a known interface.

    Parameters
    ----------
    profile : object
        Callable ``f(x)`` with ``derivative(x)``; the modal method also needs
        ``second_derivative(x)``.
    ctx, table : WaveContext, ModeTable
        Illumination and the orders ``-N..N`` to report.
    Nc : int, optional
        Collocation half-count of the plane-wave method (default ``2N``).
    method : {"auto", "modal", "rayleigh"}
        ``"rayleigh"`` collocates the outgoing plane-wave expansions directly
        on the interface (exact for flat interfaces, but limited by the
        Rayleigh hypothesis on deep profiles).  ``"modal"`` expands each
        field in the exact outgoing modes of the curvilinear coordinates
        ``(x, y - f(x))`` and raises the modal order until the residual drops
        below ``tol`` or ``max_modes`` is reached.  ``"auto"`` uses the modal
        method for smooth profiles.
    start_modes : int, optional
        First modal order tried (default ``max(N, 20)``, or ``Nc`` if given).

    Returns
    -------
    ForwardSolution
        With residuals measured on a grid four times denser than, and
        shifted off, the collocation grid, the energy defect and the
        condition number of the column-equilibrated collocation matrix.

    Raises
    ------
    WoodAnomalyError
        If ``check_wood`` and some order is too close to grazing.
    NumericalError
        If the collocation matrix is near-singular (condition above ``1e14``;
        for the modal method only when the solve is also unresolved).
    """
    if check_wood:
        require_no_wood(ctx, table)
    if method == "auto":
        method = "modal" if _is_smooth(profile) else "rayleigh"
    if method == "rayleigh":
        sol = _solve_rayleigh(profile, ctx, table, 2 * ctx.N if Nc is None else Nc, offset)
    elif method == "modal":
        n_modes = max(ctx.N, 20 if Nc is None else Nc)
        if start_modes is not None:
            n_modes = min(max_modes, max(n_modes, int(start_modes)))
        best = None
        while True:
            sol = _solve_modal(profile, ctx, table, n_modes, offset)
            if best is None or sol.residual < best.residual:
                best = sol
            # stop on convergence, at the cap, or once refinement stops helping
            if sol.residual <= tol or n_modes >= max_modes or sol.residual > 10.0 * best.residual:
                break
            n_modes = min(max_modes, int(round(1.4 * n_modes)))
        sol = best
        # the modal basis is nearly dependent on deep profiles; only fail if it also did not converge
        if sol.residual > RESIDUAL_LIMIT:
            _check_cond(sol.cond, ctx)
    else:
        raise ValueError(f"unknown method {method!r}")
    sol.energy_defect = energy_defect(sol)
    if not sol.resolved:
        log.warning(
            "unresolved forward solve at kappa=%g theta=%g: residual %.2e", ctx.kappa, ctx.theta, sol.residual
        )
    return sol


# ---------------------------------------------------------------- data synthesis

NOISE_STREAM = 2


@dataclass
class ScatterRecord:
    """Measured diffracted field of sample ``m`` at stage ``j`` and angle index ``l``.

    ``coeffs[i]`` is the Rayleigh coefficient ``p_n^d`` of order ``n[i]`` of
    the field on ``y = b_plus`` (``p^d(x, b_plus) = sum p_n^d e^{i alpha_n x}``).
    ``field`` holds the sampled values on the grid ``x`` that the
    coefficients were read from.
    """

    m: int
    j: int
    l: int
    kappa: float
    theta: float
    n: np.ndarray
    coeffs: np.ndarray
    tau: float = 0.0
    x: np.ndarray | None = None
    field: np.ndarray | None = None
    residual: float = math.nan
    energy_defect: float = math.nan
    resolved: bool = True
    n_modes: int = 0

    def central(self, N):
        """Coefficients of orders ``-N..N``."""
        i = np.flatnonzero(np.abs(self.n) <= N)
        if i.size != 2 * N + 1:
            raise ValueError(f"record holds orders up to {int(np.abs(self.n).max())}, need {N}")
        return self.coeffs[i]


def measurement_grid(N_data):
    m = 4 * (2 * N_data + 1)
    return 2.0 * math.pi * np.arange(m) / m


def coefficients_from_field(x, values, alpha, orders):
    """Rayleigh coefficients of a quasi-periodic field sampled on a uniform grid."""
    m = x.size
    c = np.fft.fft(np.asarray(values) * np.exp(-1j * alpha * x)) / m
    return c[np.asarray(orders) % m]


def add_noise(rec: ScatterRecord, tau: float, rng) -> ScatterRecord:
    """Multiply every sampled field value by ``1 + tau u``, ``u ~ U[-1, 1]``, and re-analyze."""
    if tau < 0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    if rec.field is None:
        raise ValueError("record carries no field samples to perturb")
    if tau == 0:
        return rec
    u = rng.uniform(-1.0, 1.0, size=rec.field.shape)
    noisy = rec.field * (1.0 + tau * u)
    alpha = rec.kappa * math.sin(rec.theta)
    coeffs = coefficients_from_field(rec.x, noisy, alpha, rec.n)
    return ScatterRecord(
        rec.m, rec.j, rec.l, rec.kappa, rec.theta, rec.n, coeffs, rec.tau + tau, rec.x, noisy,
        rec.residual, rec.energy_defect, rec.resolved, rec.n_modes,
    )


def measure(profile, medium, kappa, theta, N_data, b_plus, heights=None, tol=1e-6, m=0, j=0, l=0, start_modes=None):
    """Noiseless record: forward solve at truncation ``N_data`` and field sampling on ``y = b_plus``."""
    ctx, table = make_mode_table(medium, kappa, theta, N_data, heights)
    sol = forward_solve(profile, ctx, table, tol=tol, offset=_grid_offset(profile, N_data), start_modes=start_modes)
    x = measurement_grid(N_data)
    values = sol.field_on_line(x, b_plus)
    coeffs = coefficients_from_field(x, values, ctx.alpha, table.n)
    return ScatterRecord(
        m, j, l, ctx.kappa, ctx.theta, table.n.copy(), coeffs, 0.0, x, values,
        sol.residual, sol.energy_defect, sol.resolved, sol.n_modes,
    )


def _grid_offset(profile, Nc):
    # keep collocation points off the jumps of piecewise profiles
    return 0.0 if getattr(profile, "smooth", True) else math.pi / (4.0 * Nc)


def synthesize_sample(m, surface_spec, schedule, medium, b_plus, heights=None, tol=1e-6, known=None):
    """All records of sample ``m``: every stage it belongs to, every angle.

    Records already present in ``known`` (same key and illumination, from a
    run with otherwise identical settings) are reused as they are.
    """
    from .surface import substream

    prof = surface_spec.sample(m, schedule.seed)
    N_data = schedule.N + 10
    xs = 2.0 * math.pi * np.arange(1024) / 1024
    fs = prof(xs)
    below = float(fs.max()) < b_plus
    if heights is not None:
        below = below and heights.a_minus < float(fs.min()) and float(fs.max()) < heights.a_plus
    if not below:
        log.warning("sample %d leaves the strip below the measurement line; sample excluded", m)
    out = []
    # the modal order needed only grows with the wavenumber; start where the last solve ended
    hint = None
    for j, (kappa, Mj) in enumerate(zip(schedule.kappas, schedule.M_per_stage)):
        if m >= Mj:
            continue
        for l, theta in enumerate(schedule.angles):
            if known is not None and (m, j, l) in known:
                rec = known[(m, j, l)]
                if rec.kappa != kappa or rec.theta != theta:
                    raise ValueError(f"cached record {(m, j, l)} has a different illumination")
                out.append(rec)
                continue
            rec = measure(prof, medium, kappa, theta, N_data, b_plus, heights, tol, m, j, l, hint)
            hint = rec.n_modes or None
            rec = add_noise(rec, schedule.tau, substream(schedule.seed, NOISE_STREAM, m, j, l))
            rec.resolved = rec.resolved and below
            if not rec.resolved:
                log.warning(
                    "sample %d, kappa=%g, theta=%g unresolved (residual %.2e); sample excluded",
                    m, kappa, theta, rec.residual,
                )
            out.append(rec)
    return out


def _synth_job(job, surface_spec, schedule, medium, b_plus, heights, tol):
    m, known = job
    return synthesize_sample(m, surface_spec, schedule, medium, b_plus, heights, tol, known)


def record_keys(schedule):
    """All ``(m, j, l)`` with ``m < M_j``, in synthesis order."""
    return [
        (m, j, l)
        for m in range(schedule.M)
        for j, Mj in enumerate(schedule.M_per_stage)
        if m < Mj
        for l in range(len(schedule.angles))
    ]


def synthesize_dataset(surface_spec, schedule, medium, b_plus, heights=None, workers=1, tol=1e-6, known=None):
    """Records for every ``(m, j, l)`` with ``m < M_j``, keyed by that triple.

    Every ``(kappa_j, theta_l)`` must pass the Wood check.  Deterministic
    given ``schedule.seed``: surfaces use the substream ``(seed, 1, m)`` and
    the noise of record ``(m, j, l)`` uses ``(seed, 2, m, j, l)``.  Passing
    the records of an earlier run as ``known`` skips recomputing them; the
    caller guarantees that surface, medium, noise and heights agree.
    """
    from .parallel import parallel_map

    for kappa in schedule.kappas:
        for theta in schedule.angles:
            require_no_wood(*make_mode_table(medium, kappa, theta, schedule.N + 10))
    jobs = [(m, None if known is None else {k: v for k, v in known.items() if k[0] == m}) for m in range(schedule.M)]
    per_sample = parallel_map(
        _synth_job, jobs, workers=workers, common=(surface_spec, schedule, medium, b_plus, heights, tol)
    )
    records = {}
    for recs in per_sample:
        for r in recs:
            records[(r.m, r.j, r.l)] = r
    return records


def excluded_samples(records):
    """Samples with at least one unresolved record."""
    return sorted({r.m for r in records.values() if not r.resolved})
