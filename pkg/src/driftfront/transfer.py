"""Propagator machinery for the mode equation (1/2) u'' + b(x) u' + eta u = 0.

Everything downstream (hitting-time MGFs, Lyapunov curves, the critical
exponent eta_c) reduces to propagating the first-order system

    d/dx [u, u'] = [[0, 1], [-2 eta, -2 b(x)]] [u, u']

across unit cells and solving two-point boundary problems on truncated
intervals. The propagator M(x, y) is the matrix mapping [u, u'](y) to
[u, u'](x); Abel's identity gives det M(x, y) = exp(-2 int_y^x b).

Cell MGFs are computed by a minimal-solution sweep rather than a dense BVP
solve: propagate the fundamental columns phi1 = (1,0) and phi0 = (0,1) from
the anchor boundary toward the kill barrier, jointly renormalizing to avoid
overflow. With psi(m) = phi1_val(m)/phi0_val(m) at barrier position m, the
solution of u(anchor)=1, u(barrier)=0 evaluated one cell in from the anchor is

    u_L = v1 - v0 * psi,    (v1, v0) = column values one cell in.

psi is scale-invariant, so one sweep yields the value at every truncation
level L along the way — the L-doubling convergence test reads checkpoints of
a single pass. A sign change of phi0 marks a conjugate point (eta has reached
the Dirichlet ground state of the truncated interval): the truncated problem,
and everything beyond it, is divergent. Forward (upward-passage) problems use
the same cell propagators inverted analytically, sweeping left.

Integration is classical RK4. The default step 1/1024 divides the drift
table's pitch 1/64, so sub-steps never straddle an interpolation kink of the
piecewise-linear field and the scheme keeps full fourth order;
propagate_wronskian additionally splits at field knots so arbitrary endpoints
compose cleanly.
"""

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .drift import GRID_PITCH

DEFAULT_STEP = 1.0 / 1024.0
DIRECTIONS = ("backward", "forward")


class BlowupError(FloatingPointError):
    """Propagation produced a non-finite entry; carries the position reached."""

    def __init__(self, position, eta):
        self.position = position
        self.eta = eta
        super().__init__(f"propagator blew up near x={position} at eta={eta}")


class DivergenceError(ArithmeticError):
    """Cell MGF failed to converge: eta at or above the local threshold."""

    def __init__(self, k, eta, direction, detail):
        self.k = k
        self.eta = eta
        self.direction = direction
        super().__init__(f"cell MGF divergent at k={k}, eta={eta}, {direction}: {detail}")


def _check_direction(direction):
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")


# ---------------------------------------------------------------------------
# single-interval propagator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TransferMatrix:
    """Propagator of [u, u'] from ``start`` to ``end`` at a fixed eta."""

    mat: np.ndarray = dc_field(repr=False)
    start: float
    end: float
    eta: float
    step: float

    @property
    def det(self):
        return float(self.mat[0, 0] * self.mat[1, 1] - self.mat[0, 1] * self.mat[1, 0])


def propagate_wronskian(field, y, x, eta, step=DEFAULT_STEP):
    """Propagate [u, u'] from y to x (either order); identity when x == y.

    The integration range is split at the field's interpolation knots, so each
    RK4 sub-step sees a smooth (linear) drift segment regardless of how x and
    y sit relative to the grid. Raises BlowupError with the position reached
    if entries leave the float range.
    """
    y = float(y)
    x = float(x)
    if not (step > 0):
        raise ValueError(f"step must be positive, got {step}")
    lo, hi = (y, x) if y <= x else (x, y)
    field.require_cover(lo, hi, "propagation interval")
    mat = np.eye(2)
    if x == y:
        return TransferMatrix(mat=mat, start=y, end=x, eta=eta, step=step)
    # knots strictly between the endpoints, walked in propagation order
    i_lo = math.floor(lo / GRID_PITCH + 1e-12) + 1
    i_hi = math.ceil(hi / GRID_PITCH - 1e-12) - 1
    knots = GRID_PITCH * np.arange(i_lo, i_hi + 1)
    knots = knots[(knots > lo + 1e-12) & (knots < hi - 1e-12)]
    pts = np.concatenate(([y], knots if x > y else knots[::-1], [x]))
    with np.errstate(over="ignore", invalid="ignore"):
        for s0, s1 in zip(pts[:-1], pts[1:]):
            n = max(1, math.ceil(abs(s1 - s0) / step - 1e-12))
            h = (s1 - s0) / n
            xs = s0 + h * np.arange(n + 1)
            xh = xs[:-1] + 0.5 * h
            b_at = field(xs)
            b_half = field(xh)
            for i in range(n):
                mat = _rk4_step(mat, eta, h, b_at[i], b_half[i], b_at[i + 1])
            if not np.all(np.isfinite(mat)):
                raise BlowupError(position=float(s1), eta=eta)
    return TransferMatrix(mat=mat, start=y, end=x, eta=eta, step=step)


def _rk4_step(mat, eta, h, b0, bh, b1):
    def rhs(m, b):
        return np.array([[m[1, 0], m[1, 1]],
                         [-2.0 * eta * m[0, 0] - 2.0 * b * m[1, 0],
                          -2.0 * eta * m[0, 1] - 2.0 * b * m[1, 1]]])

    k1 = rhs(mat, b0)
    k2 = rhs(mat + 0.5 * h * k1, bh)
    k3 = rhs(mat + 0.5 * h * k2, bh)
    k4 = rhs(mat + h * k3, b1)
    return mat + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def abel_residual(field, k, eta, step=DEFAULT_STEP):
    """|det M(k+1, k) - exp(-2 int_k^{k+1} b)|: consistency of the integrator."""
    tm = propagate_wronskian(field, k, k + 1.0, eta, step=step)
    return abs(tm.det - math.exp(-2.0 * _int_b_exact(field, float(k), float(k) + 1.0)))


def _int_b_exact(field, lo, hi):
    """Exact integral of the piecewise-linear field over [lo, hi]."""
    g = field.grid
    inside = (g > lo + 1e-12) & (g < hi - 1e-12)
    xs = np.concatenate(([lo], g[inside], [hi]))
    vs = np.concatenate(([field(lo)], field.values[inside], [field(hi)]))
    return float(np.trapezoid(vs, xs))


# ---------------------------------------------------------------------------
# vectorized unit-cell propagators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PropagatorTable:
    """Unit-cell propagators M_j over [j, j+1] for j in [k_lo, k_hi), all etas.

    Component arrays have shape (n_eta, n_cells). int_b holds the exact drift
    integral over each cell (for Abel checks and exit-weight ratios).
    """

    k_lo: int
    etas: np.ndarray = dc_field(repr=False)
    step: float = 0.0
    m11: np.ndarray = dc_field(default=None, repr=False)
    m12: np.ndarray = dc_field(default=None, repr=False)
    m21: np.ndarray = dc_field(default=None, repr=False)
    m22: np.ndarray = dc_field(default=None, repr=False)
    int_b: np.ndarray = dc_field(default=None, repr=False)

    @property
    def n_cells(self):
        return self.m11.shape[1]

    @property
    def k_hi(self):
        return self.k_lo + self.n_cells

    def det(self):
        return self.m11 * self.m22 - self.m12 * self.m21

    def cell(self, eta_idx, k):
        j = k - self.k_lo
        return np.array([[self.m11[eta_idx, j], self.m12[eta_idx, j]],
                         [self.m21[eta_idx, j], self.m22[eta_idx, j]]])


def cell_propagators(field, k_lo, k_hi, etas, step=DEFAULT_STEP):
    """Build propagators for all unit cells [j, j+1], k_lo <= j < k_hi, at all etas."""
    k_lo = int(k_lo)
    k_hi = int(k_hi)
    if k_hi <= k_lo:
        raise ValueError(f"empty cell range [{k_lo}, {k_hi})")
    field.require_cover(k_lo, k_hi, "cell range")
    n_sub = round(1.0 / step)
    if abs(n_sub * step - 1.0) > 1e-9:
        raise ValueError(f"step must divide the unit cell, got {step}")
    etas = np.atleast_1d(np.asarray(etas, dtype=float))
    ncells = k_hi - k_lo
    # drift at every RK4 node (half-step pitch), one row per cell
    offs = (step / 2.0) * np.arange(2 * n_sub + 1)
    pos = (k_lo + np.arange(ncells, dtype=float))[:, None] + offs[None, :]
    b_nodes = field(pos.ravel()).reshape(ncells, 2 * n_sub + 1)

    eta2 = (2.0 * etas)[:, None]
    m11 = np.ones((len(etas), ncells))
    m12 = np.zeros_like(m11)
    m21 = np.zeros_like(m11)
    m22 = np.ones_like(m11)
    h = step
    for i in range(n_sub):
        b0 = b_nodes[:, 2 * i][None, :]
        bh = b_nodes[:, 2 * i + 1][None, :]
        b1 = b_nodes[:, 2 * i + 2][None, :]
        # stage 1
        p11, p12 = m21, m22
        p21 = -eta2 * m11 - 2.0 * b0 * m21
        p22 = -eta2 * m12 - 2.0 * b0 * m22
        # stage 2
        t11 = m11 + 0.5 * h * p11
        t12 = m12 + 0.5 * h * p12
        t21 = m21 + 0.5 * h * p21
        t22 = m22 + 0.5 * h * p22
        q11, q12 = t21, t22
        q21 = -eta2 * t11 - 2.0 * bh * t21
        q22 = -eta2 * t12 - 2.0 * bh * t22
        # stage 3
        t11 = m11 + 0.5 * h * q11
        t12 = m12 + 0.5 * h * q12
        t21 = m21 + 0.5 * h * q21
        t22 = m22 + 0.5 * h * q22
        r11, r12 = t21, t22
        r21 = -eta2 * t11 - 2.0 * bh * t21
        r22 = -eta2 * t12 - 2.0 * bh * t22
        # stage 4
        t11 = m11 + h * r11
        t12 = m12 + h * r12
        t21 = m21 + h * r21
        t22 = m22 + h * r22
        s11, s12 = t21, t22
        s21 = -eta2 * t11 - 2.0 * b1 * t21
        s22 = -eta2 * t12 - 2.0 * b1 * t22
        w = h / 6.0
        m11 = m11 + w * (p11 + 2.0 * q11 + 2.0 * r11 + s11)
        m12 = m12 + w * (p12 + 2.0 * q12 + 2.0 * r12 + s12)
        m21 = m21 + w * (p21 + 2.0 * q21 + 2.0 * r21 + s21)
        m22 = m22 + w * (p22 + 2.0 * q22 + 2.0 * r22 + s22)
    for arr in (m11, m12, m21, m22):
        bad = ~np.isfinite(arr)
        if bad.any():
            j = int(np.argwhere(bad.any(axis=0))[0])
            raise BlowupError(position=float(k_lo + j + 1), eta=float(etas[bad.any(axis=1)][0]))
    int_b = _cell_int_b(field, k_lo, k_hi)
    return PropagatorTable(k_lo=k_lo, etas=etas, step=step,
                           m11=m11, m12=m12, m21=m21, m22=m22, int_b=int_b)


def _cell_int_b(field, k_lo, k_hi):
    """Exact trapezoid of the table over each unit cell (boundaries are grid nodes)."""
    per = round(1.0 / GRID_PITCH)
    i0 = round((k_lo - field.x0) / GRID_PITCH)
    cum = np.concatenate(([0.0], np.cumsum(field.values)))
    lo_idx = i0 + per * np.arange(k_hi - k_lo)
    hi_idx = lo_idx + per
    sums = cum[hi_idx + 1] - cum[lo_idx]
    return GRID_PITCH * (sums - 0.5 * field.values[lo_idx] - 0.5 * field.values[hi_idx])


# ---------------------------------------------------------------------------
# cell MGFs by minimal-solution sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CellMgf:
    """Converged truncated-BVP value of a single cell MGF."""

    value: float
    k: int
    eta: float
    direction: str
    L: int
    converged: bool


@dataclass(frozen=True)
class MgfSweep:
    """Batch sweep result over (eta, anchor); non-converged entries are NaN."""

    values: np.ndarray
    L_used: np.ndarray
    converged: np.ndarray
    checkpoints: tuple
    u_at: dict  # L -> (n_eta, n_anchor) truncated values (NaN where invalid)


def sweep_mgf(table, anchors, direction, L0=64, L_max=512, rel_tol=1e-8):
    """Run the two-column sweep from each anchor; test convergence by L-doubling.

    Checkpoints are L0, 2 L0, ... up to L_max; an entry converges at the first
    checkpoint pair whose relative difference drops below rel_tol (value taken
    at the larger L of the pair).
    """
    _check_direction(direction)
    anchors = np.atleast_1d(np.asarray(anchors, dtype=np.int64))
    checkpoints = []
    L = int(L0)
    while L <= L_max:
        checkpoints.append(L)
        L *= 2
    if len(checkpoints) < 2:
        raise ValueError(f"L_max={L_max} leaves no room to double L0={L0}")
    sgn = 1 if direction == "backward" else -1
    need_lo = anchors.min() if sgn > 0 else anchors.min() - checkpoints[-1]
    need_hi = anchors.max() + checkpoints[-1] if sgn > 0 else anchors.max()
    if need_lo < table.k_lo or need_hi + 1 > table.k_hi:
        raise ValueError(
            f"propagator table [{table.k_lo}, {table.k_hi}) does not cover sweep "
            f"cells [{need_lo}, {need_hi + 1}) for direction {direction!r}")

    neta = len(table.etas)
    nk = len(anchors)
    a_val = np.ones((neta, nk))
    a_der = np.zeros_like(a_val)
    c_val = np.zeros_like(a_val)
    c_der = np.ones_like(a_val)
    v1 = v0 = None
    sign0 = None
    first_div = np.full((neta, nk), np.iinfo(np.int64).max, dtype=np.int64)
    psi_at = {}
    base = anchors - table.k_lo
    dets = table.det() if sgn < 0 else None
    m_final = checkpoints[-1] + 1
    for m in range(1, m_final + 1):
        cols = base + sgn * (m - 1)
        t11 = table.m11[:, cols]
        t12 = table.m12[:, cols]
        t21 = table.m21[:, cols]
        t22 = table.m22[:, cols]
        if sgn > 0:
            na_val = t11 * a_val + t12 * a_der
            na_der = t21 * a_val + t22 * a_der
            nc_val = t11 * c_val + t12 * c_der
            nc_der = t21 * c_val + t22 * c_der
        else:
            d = dets[:, cols]
            na_val = (t22 * a_val - t12 * a_der) / d
            na_der = (-t21 * a_val + t11 * a_der) / d
            nc_val = (t22 * c_val - t12 * c_der) / d
            nc_der = (-t21 * c_val + t11 * c_der) / d
        a_val, a_der, c_val, c_der = na_val, na_der, nc_val, nc_der
        if m == 1:
            v1 = a_val.copy()
            v0 = c_val.copy()
            sign0 = np.sign(c_val)
            flipped = sign0 == 0
        else:
            flipped = np.sign(c_val) != sign0
        first_div = np.where(flipped & (m < first_div), m, first_div)
        if m - 1 in checkpoints:
            safe = np.where(c_val == 0.0, 1.0, c_val)
            psi_at[m - 1] = np.where(c_val != 0.0, a_val / safe, np.nan)
        scale = np.maximum.reduce([np.abs(a_val), np.abs(a_der), np.abs(c_val), np.abs(c_der)])
        scale = np.where((scale == 0.0) | ~np.isfinite(scale), 1.0, scale)
        a_val /= scale
        a_der /= scale
        c_val /= scale
        c_der /= scale

    u_at = {}
    for L in checkpoints:
        u = v1 - v0 * psi_at[L]
        invalid = (first_div <= L + 1) | ~np.isfinite(u) | (u <= 0.0)
        u_at[L] = np.where(invalid, np.nan, u)

    values = np.full((neta, nk), np.nan)
    L_used = np.zeros((neta, nk), dtype=np.int64)
    converged = np.zeros((neta, nk), dtype=bool)
    for La, Lb in zip(checkpoints[:-1], checkpoints[1:]):
        ua, ub = u_at[La], u_at[Lb]
        ok = (~converged & np.isfinite(ua) & np.isfinite(ub)
              & (np.abs(ub - ua) <= rel_tol * np.abs(ub)))
        values = np.where(ok, ub, values)
        L_used = np.where(ok, Lb, L_used)
        converged |= ok
    return MgfSweep(values=values, L_used=L_used, converged=converged,
                    checkpoints=tuple(checkpoints), u_at=u_at)


def cell_mgf(field, k, eta, direction, L=64, rel_tol=1e-8, step=DEFAULT_STEP, L_max=512):
    """Converged cell MGF at anchor k: backward solves u(k)=1, u(k+1+L')=0 and
    returns u(k+1); forward mirrors it (u(k+1)=1, u(k-L')=0, value u(k)).

    L is the first truncation checkpoint; the value is accepted at the first
    doubling whose relative change is below rel_tol. Raises DivergenceError
    when no doubling below L_max passes (eta at or above the local threshold).
    """
    _check_direction(direction)
    k = int(k)
    if direction == "backward":
        table = cell_propagators(field, k, k + 1 + int(L_max), np.array([eta]), step=step)
    else:
        table = cell_propagators(field, k - int(L_max), k + 1, np.array([eta]), step=step)
    sweep = sweep_mgf(table, np.array([k]), direction, L0=L, L_max=L_max, rel_tol=rel_tol)
    if not sweep.converged[0, 0]:
        raise DivergenceError(k, eta, direction,
                              f"no L-doubling below L_max={L_max} passed rel_tol={rel_tol}")
    return CellMgf(value=float(sweep.values[0, 0]), k=k, eta=float(eta), direction=direction,
                   L=int(sweep.L_used[0, 0]), converged=True)


def cell_mgf_at(field, k, eta, direction, L, step=DEFAULT_STEP):
    """Truncated cell MGF at exactly kill distance L (no doubling test).

    This is the barrier-killed quantity a path simulation with an absorbing
    far barrier estimates, so it is the right comparison target for Monte
    Carlo at matched truncation. Raises DivergenceError if the truncated
    problem itself is above threshold (conjugate point before the barrier).
    """
    _check_direction(direction)
    k = int(k)
    L = int(L)
    if direction == "backward":
        table = cell_propagators(field, k, k + 1 + L, np.array([eta]), step=step)
    else:
        table = cell_propagators(field, k - L, k + 1, np.array([eta]), step=step)
    sgn = 1 if direction == "backward" else -1
    a = np.array([1.0, 0.0])
    c = np.array([0.0, 1.0])
    v1 = v0 = None
    sign0 = None
    for m in range(1, L + 2):
        j = k + sgn * (m - 1) - table.k_lo
        M = np.array([[table.m11[0, j], table.m12[0, j]],
                      [table.m21[0, j], table.m22[0, j]]])
        if sgn < 0:
            M = np.array([[M[1, 1], -M[0, 1]], [-M[1, 0], M[0, 0]]]) / (
                M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0])
        a = M @ a
        c = M @ c
        if m == 1:
            v1, v0 = a[0], c[0]
            sign0 = math.copysign(1.0, c[0]) if c[0] != 0 else 0.0
        elif c[0] == 0.0 or math.copysign(1.0, c[0]) != sign0:
            raise DivergenceError(k, eta, direction,
                                  f"conjugate point before the L={L} barrier")
        s = max(abs(a[0]), abs(a[1]), abs(c[0]), abs(c[1]))
        if s > 0:
            a /= s
            c /= s
    u = v1 - v0 * (a[0] / c[0])
    if not (u > 0.0) or not math.isfinite(u):
        raise DivergenceError(k, eta, direction, f"nonpositive truncated value at L={L}")
    return float(u)


# ---------------------------------------------------------------------------
# exit-weight ratio rho
# ---------------------------------------------------------------------------

def rho(field, k, eta, step=DEFAULT_STEP):
    """Exit-weight ratio u_L(k+1)/u_R(k+1) of the two-cell BVP on [k, k+2].

    u_L solves u(k)=1, u(k+2)=0; u_R solves u(k)=0, u(k+2)=1. Reduces to
    det(M_k) * (M_{k+1})_12 / (M_k)_12 in terms of the unit-cell propagators,
    and at eta=0 to the ratio of scale-function increments of the two cells.
    """
    k = int(k)
    table = cell_propagators(field, k, k + 2, np.array([eta]), step=step)
    M0 = table.cell(0, k)
    M1 = table.cell(0, k + 1)
    M10 = M1 @ M0
    if not M10[0, 1] > 0.0:
        raise DivergenceError(k, eta, "two-cell", "BVP on [k, k+2] not well-posed")
    u_R = M0[0, 1] / M10[0, 1]
    if not u_R > 0.0:
        raise DivergenceError(k, eta, "two-cell", f"u_R(k+1)={u_R} <= 0")
    det0 = M0[0, 0] * M0[1, 1] - M0[0, 1] * M0[1, 0]
    u_Lv = det0 * M1[0, 1] / M10[0, 1]
    return float(u_Lv / u_R)


def rho_from_table(table, anchors):
    """rho for many anchors from a prebuilt table: det(M_k) m12_{k+1} / m12_k."""
    anchors = np.atleast_1d(np.asarray(anchors, dtype=np.int64))
    if anchors.min() < table.k_lo or anchors.max() + 2 > table.k_hi:
        raise ValueError("table does not cover anchors+1")
    j = anchors - table.k_lo
    det = table.det()
    num = table.m12[:, j + 1]
    den = table.m12[:, j]
    if np.any(den <= 0.0) or np.any(num <= 0.0):
        raise DivergenceError(int(anchors[0]), float(table.etas[0]), "two-cell",
                              "nonpositive m12 entries in rho")
    return det[:, j] * num / den
