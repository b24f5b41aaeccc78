"""Dense operator-splitting (ADMM) solver for convex QPs.

Solves  min 1/2 y'Qy + c'y  s.t.  Ay <= b  by splitting the constraint as
Ay + s = b, s >= 0, reusing one LU factorization of the regularized KKT
matrix across iterations. Returns both primal and dual solutions; an
optional active-set polish step refines the iterate to near machine
precision, which matters because downstream gradients consume the duals.

The returned result is declared Solved only when the iterate satisfies,
in infinity norm,

    max(Ay - b, 0)        <= eps_abs + eps_rel * ||b||
    Qy + c + A'lambda     <= eps_abs + eps_rel * ||c||
    |lambda_m (Ay - b)_m| <= 10 * (eps_abs + eps_rel * ||b||)   for all m

with lambda >= 0 held exactly by the iteration.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from .core import QpInstance, objective

ALPHA = 1.6                 # over-relaxation
CHECK_INTERVAL = 25         # termination test cadence
RHO_INTERVAL = 100          # adaptive rho cadence
RHO_MIN, RHO_MAX = 1e-6, 1e6
RHO_REFACTOR_RATIO = 5.0
POLISH_TRIGGER = 1e3        # try polishing once residuals are this close
POLISH_DELTA = 1e-9         # regularization of the polish KKT system
POLISH_LOO_MAX = 24         # leave-one-out rescue only for small active sets
CERT_TOL = 1e-8             # infeasibility certificate tolerance (scaled)
DIVERGE_NORM = 1e14


class SolveStatus(enum.Enum):
    SOLVED = "Solved"
    MAX_ITER_REACHED = "MaxIterReached"
    PRIMAL_INFEASIBLE = "PrimalInfeasible"
    DUAL_INFEASIBLE = "DualInfeasible"


@dataclass
class SolverSettings:
    eps_abs: float = 1e-8
    eps_rel: float = 1e-8
    max_iter: int = 20000
    rho: float = 0.1
    sigma: float = 1e-6
    polish: bool = True

    def __post_init__(self):
        if self.eps_abs <= 0 or self.eps_rel <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.rho <= 0 or self.sigma <= 0:
            raise ValueError("rho and sigma must be positive")


@dataclass
class SolveResult:
    y_star: np.ndarray
    lambda_star: np.ndarray
    status: SolveStatus
    objective: float
    iterations: int
    message: str = ""

    @property
    def solved(self) -> bool:
        return self.status is SolveStatus.SOLVED


def kkt_residuals(inst: QpInstance, y, lam):
    """(violation, dual residual, complementarity residual), infinity norms."""
    y = np.asarray(y, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    if inst.n_cons:
        slack = inst.A @ y - inst.b
        viol = max(0.0, slack.max())
        compl_res = np.abs(lam * slack).max()
    else:
        viol = 0.0
        compl_res = 0.0
    dual = inst.Q @ y + inst.c
    if inst.n_cons:
        dual = dual + inst.A.T @ lam
    dual_res = np.abs(dual).max(initial=0.0)
    return float(viol), float(dual_res), float(compl_res)


def _factor_kkt(Q, A, sigma, rho):
    n, m = Q.shape[0], A.shape[0]
    kkt = np.zeros((n + m, n + m))
    kkt[:n, :n] = Q + sigma * np.eye(n)
    if m:
        kkt[:n, n:] = A.T
        kkt[n:, :n] = A
        kkt[n:, n:] = -(1.0 / rho) * np.eye(m)
    return scipy.linalg.lu_factor(kkt, check_finite=False)


def _ruiz_equilibrate(Q, c, A, b, iters=10, reg=1e-8):
    """Symmetric diagonal scaling of the KKT data plus cost normalization.
    Returns scaled copies and the scaling vectors (d, e, gamma); iterates run
    in the scaled space while residual checks use the original data."""
    n, m = Q.shape[0], A.shape[0]
    d = np.ones(n)
    e = np.ones(m)
    gamma = 1.0
    Qs, cs, As, bs = Q.copy(), c.copy(), A.copy(), b.copy()
    for _ in range(iters):
        col_x = np.abs(Qs).max(axis=0, initial=0.0)
        if m:
            col_x = np.maximum(col_x, np.abs(As).max(axis=0, initial=0.0))
            col_z = np.abs(As).max(axis=1, initial=0.0)
            dz = 1.0 / np.sqrt(np.where(col_z > reg, col_z, 1.0))
        else:
            dz = e
        dx = 1.0 / np.sqrt(np.where(col_x > reg, col_x, 1.0))
        Qs = dx[:, None] * Qs * dx[None, :]
        cs = dx * cs
        if m:
            As = dz[:, None] * As * dx[None, :]
            bs = dz * bs
            e = e * dz
        d = d * dx
        # cost normalization
        q_scale = max(float(np.abs(Qs).max(axis=0, initial=0.0).mean()) if n else 0.0,
                      float(np.abs(cs).max(initial=0.0)))
        g = 1.0 / q_scale if q_scale > reg else 1.0
        Qs *= g
        cs *= g
        gamma *= g
    return Qs, cs, As, bs, d, e, gamma


def _active_set_solve(Q, c, A_act, b_act):
    """Minimize the objective subject to the active rows as equalities,
    via the null-space method: robust to (nearly) dependent active rows,
    and conditioned by Q on the null space rather than by the KKT matrix."""
    n = Q.shape[0]
    if A_act.shape[0] == 0:
        x = np.linalg.lstsq(Q + POLISH_DELTA * np.eye(n), -c, rcond=None)[0]
        # one refinement step against the unregularized system
        x += np.linalg.lstsq(Q + POLISH_DELTA * np.eye(n), -c - Q @ x,
                             rcond=None)[0]
        return x
    x_p = np.linalg.lstsq(A_act, b_act, rcond=1e-12)[0]
    z_basis = scipy.linalg.null_space(A_act, rcond=1e-12)
    if z_basis.shape[1] == 0:
        return x_p
    h = z_basis.T @ Q @ z_basis + POLISH_DELTA * np.eye(z_basis.shape[1])
    g = z_basis.T @ (c + Q @ x_p)
    w = np.linalg.solve(h, -g)
    w += np.linalg.solve(h, -g - (h - POLISH_DELTA * np.eye(h.shape[0])) @ w)
    return x_p + z_basis @ w


def _polish(Q, c, A, b, lam, merit_fn, thorough=False):
    """Active-set polish: equality solve on the constraints guessed active
    from the duals, with dual recovery by least squares (or NNLS when the
    plain recovery goes negative, which happens under degeneracy). Rounds
    drop constraints with negative multipliers; every candidate competes on
    full KKT merit and the best is returned, or None. `thorough` additionally
    tries leave-one-out subsets (degenerate active sets), which is reserved
    for stalls and final attempts because of its cost."""
    m = A.shape[0]
    active0 = np.flatnonzero(lam > 0)
    active = active0
    best = None

    def consider(y, lam_full):
        nonlocal best
        if not np.all(np.isfinite(y)) or not np.all(np.isfinite(lam_full)):
            return
        slack = A @ y - b if m else np.zeros(0)
        viol = max(0.0, slack.max()) if m else 0.0
        dual = np.abs(Q @ y + c + (A.T @ lam_full if m else 0.0)).max(initial=0.0)
        compl_res = np.abs(lam_full * slack).max() if m else 0.0
        score = merit_fn(viol, dual, compl_res)
        if best is None or score < best[0]:
            best = (score, y, lam_full)

    def try_subset(subset):
        A_act, b_act = A[subset], b[subset]
        try:
            y = _active_set_solve(Q, c, A_act, b_act)
        except np.linalg.LinAlgError:
            return None
        lam_full = np.zeros(m)
        if subset.size == 0:
            consider(y, lam_full)
            return np.zeros(0)
        grad = -(Q @ y + c)
        lam_act = np.linalg.lstsq(A_act.T, grad, rcond=None)[0]
        lam_full[subset] = np.maximum(lam_act, 0.0)
        consider(y, lam_full)
        if (lam_act < -1e-12).any():
            # degenerate duals: nonnegative recovery at the same primal point
            lam_nn, _ = scipy.optimize.nnls(A_act.T, grad)
            lam_full_nn = np.zeros(m)
            lam_full_nn[subset] = lam_nn
            consider(y, lam_full_nn)
        return lam_act

    for _ in range(4):
        lam_act = try_subset(active)
        if lam_act is None:
            break
        neg = lam_act < -1e-12
        if not neg.any():
            break
        active = active[~neg]

    # nearly dependent active gradients can defeat the rounds above; for
    # small active sets, leave-one-out search finds the true subset
    if (thorough and (best is None or best[0] > 1.0)
            and 2 <= active0.size <= POLISH_LOO_MAX):
        for drop in range(active0.size):
            try_subset(np.delete(active0, drop))
            if best is not None and best[0] <= 1.0:
                break

    if best is None:
        return None
    return best[1], best[2]


def solve_qp(inst: QpInstance, settings: SolverSettings | None = None) -> SolveResult:
    """Solve an inequality-form convex QP, returning primal and dual solutions.

    Q is assumed PSD (validated when the QpInstance was constructed).
    MaxIterReached / infeasibility outcomes are reported in the status,
    never raised.
    """
    if settings is None:
        settings = SolverSettings()
    Q, c, A, b = inst.Q, inst.c, inst.A, inst.b
    n, m = inst.n_vars, inst.n_cons

    eps_pri = settings.eps_abs + settings.eps_rel * np.abs(b).max(initial=0.0)
    eps_dua = settings.eps_abs + settings.eps_rel * np.abs(c).max(initial=0.0)
    eps_compl = 10.0 * eps_pri

    Qs, cs, As, bs, d_sc, e_sc, gamma = _ruiz_equilibrate(Q, c, A, b)
    rho = settings.rho
    lu = _factor_kkt(Qs, As, settings.sigma, rho)

    xb = np.zeros(n)       # scaled-space iterates
    zb = np.zeros(m)
    yb = np.zeros(m)

    best = None   # (merit, x, y, iteration)
    tried_polish_at = -10**9
    tried_thorough_at = 0
    x_last_check = np.zeros(n)
    y_last_check = np.zeros(m)

    def merit(viol, dual, compl_res):
        return max(viol / eps_pri, dual / eps_dua, compl_res / eps_compl)

    def finish(xc, yc, status, k, message=""):
        return SolveResult(
            y_star=xc.copy(),
            lambda_star=np.maximum(yc, 0.0),
            status=status,
            objective=objective(inst, xc),
            iterations=k,
            message=message,
        )

    a_scale = max(1.0, np.abs(A).max(initial=0.0))
    b_scale = max(1.0, np.abs(b).max(initial=0.0))
    c_scale = max(1.0, np.abs(c).max(initial=0.0))
    q_scale = max(1.0, np.abs(Q).max(initial=0.0))

    for k in range(1, settings.max_iter + 1):
        rhs = np.concatenate([settings.sigma * xb - cs, zb - yb / rho])
        sol = scipy.linalg.lu_solve(lu, rhs, check_finite=False)
        x_t = sol[:n]
        if m:
            nu = sol[n:]
            z_t = zb + (nu - yb) / rho
        xb = ALPHA * x_t + (1.0 - ALPHA) * xb
        if m:
            v = ALPHA * z_t + (1.0 - ALPHA) * zb + yb / rho
            zb = np.minimum(v, bs)
            yb = rho * (v - zb)    # >= 0 exactly for one-sided constraints

        if k % CHECK_INTERVAL != 0 and k != settings.max_iter:
            continue

        x = d_sc * xb
        y = (e_sc * yb) / gamma if m else yb
        Ax = A @ x if m else np.zeros(0)
        slack = Ax - b if m else np.zeros(0)
        viol = max(0.0, slack.max()) if m else 0.0
        dual_vec = Q @ x + c + (A.T @ y if m else 0.0)
        dual = np.abs(dual_vec).max(initial=0.0)
        compl_res = np.abs(y * slack).max() if m else 0.0
        cur = merit(viol, dual, compl_res)
        if best is None or cur < best[0]:
            best = (cur, x.copy(), y.copy(), k)

        if cur <= 1.0:
            if settings.polish:
                pol = _polish(Q, c, A, b, y, merit)
                if pol is not None:
                    pv, pd, pc = kkt_residuals(inst, pol[0], pol[1])
                    if merit(pv, pd, pc) <= cur:
                        return finish(pol[0], pol[1], SolveStatus.SOLVED, k)
            return finish(x, y, SolveStatus.SOLVED, k)

        # early polish: ADMM is close, the active-set solve may land exactly;
        # long stalls in the trigger zone earn a thorough (leave-one-out) try
        if (
            settings.polish
            and viol <= POLISH_TRIGGER * eps_pri
            and dual <= POLISH_TRIGGER * eps_dua
            and k - tried_polish_at >= 100
        ):
            tried_polish_at = k
            thorough = k - tried_thorough_at >= 2000
            if thorough:
                tried_thorough_at = k
            pol = _polish(Q, c, A, b, y, merit, thorough=thorough)
            if pol is not None:
                pv, pd, pc = kkt_residuals(inst, pol[0], pol[1])
                if merit(pv, pd, pc) <= 1.0:
                    return finish(pol[0], pol[1], SolveStatus.SOLVED, k)

        # infeasibility certificates on check-to-check directions
        if m:
            dy = y - y_last_check
            dy_norm = np.abs(dy).max()
            if dy_norm > 1e-12:
                e_dir = dy / dy_norm
                if (
                    e_dir.min() >= -CERT_TOL
                    and b @ e_dir < -CERT_TOL * b_scale
                    and np.abs(A.T @ e_dir).max() <= CERT_TOL * a_scale
                ):
                    return finish(
                        x, y, SolveStatus.PRIMAL_INFEASIBLE, k,
                        message="certificate: direction e>=0 with A'e=0, b'e<0",
                    )
        dx = x - x_last_check
        dx_norm = np.abs(dx).max(initial=0.0)
        if dx_norm > 1e-12:
            d_dir = dx / dx_norm
            if (
                c @ d_dir < -CERT_TOL * c_scale
                and np.abs(Q @ d_dir).max() <= CERT_TOL * q_scale
                and (not m or (A @ d_dir).max() <= CERT_TOL * a_scale)
            ):
                return finish(
                    x, y, SolveStatus.DUAL_INFEASIBLE, k,
                    message="certificate: ray d with Qd=0, c'd<0, Ad<=0",
                )
        if np.abs(x).max(initial=0.0) > DIVERGE_NORM:
            return finish(
                x, y, SolveStatus.DUAL_INFEASIBLE, k,
                message="iterate norm diverged; problem appears unbounded below",
            )
        x_last_check, y_last_check = x, y

        # adaptive rho on the classical scaled residual ratio
        if m and k % RHO_INTERVAL == 0 and k < settings.max_iter:
            z_unscaled = zb / e_sc
            rp = np.abs(Ax - z_unscaled).max(initial=0.0)
            rp_scale = max(np.abs(Ax).max(initial=0.0),
                           np.abs(z_unscaled).max(initial=0.0), 1e-10)
            rd_scale = max(
                np.abs(Q @ x).max(initial=0.0),
                np.abs(A.T @ y).max(initial=0.0),
                np.abs(c).max(initial=0.0),
                1e-10,
            )
            ratio = (rp / rp_scale) / max(dual / rd_scale, 1e-16)
            rho_new = float(np.clip(rho * np.sqrt(ratio), RHO_MIN, RHO_MAX))
            if rho_new / rho > RHO_REFACTOR_RATIO or rho / rho_new > RHO_REFACTOR_RATIO:
                rho = rho_new
                lu = _factor_kkt(Qs, As, settings.sigma, rho)

    _, xbest, ybest, kb = best
    if settings.polish:
        pol = _polish(Q, c, A, b, ybest, merit, thorough=True)
        if pol is not None:
            pv, pd, pc = kkt_residuals(inst, pol[0], pol[1])
            if merit(pv, pd, pc) <= 1.0:
                return finish(pol[0], pol[1], SolveStatus.SOLVED, settings.max_iter)
    return finish(
        xbest, ybest, SolveStatus.MAX_ITER_REACHED, settings.max_iter,
        message=f"best iterate from iteration {kb}",
    )


def solve_full(inst: QpInstance, settings: SolverSettings | None = None):
    """Solve the original (unprojected) QP; returns (x_star, objective)."""
    res = solve_qp(inst, settings)
    return res.y_star, res.objective
