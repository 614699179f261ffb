"""Direct simulation of the front equation and measurement of its spreading.

Solves u_t = 1/2 u_xx + b(x) u_x + f(u) with logistic f(u) = beta u (1 - u)
by Strang splitting: an exact logistic half-step, one Crank-Nicolson
advection-diffusion step, another logistic half-step. Diffusion is centered;
advection enters the implicit operator as first-order upwind, with an
explicit van Leer-limited deferred correction restoring second-order
transport wherever the profile is smooth without re-introducing the
oscillations that would corrupt half-level front extraction. The first
middle steps of a run are damped backward-Euler pairs so discontinuous
initial data cannot ring. Mirror-ghost Neumann boundaries make the constant
states 0 and 1 exact fixed points, and every step asserts 0 <= u <= 1 to a
small slack before clipping the sub-slack dust.

Front positions are the outermost crossings of the half level, speeds are
ordinary least squares over the late half of the trace, and u along rays
x = c t is interpolated from the stored history to test where the solution
fills in versus dies out.
"""

import csv
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from numba import njit

EDGE_TOL = 1e-12  # how much mass at the domain edge triggers expansion


@dataclass(frozen=True)
class U0Spec:
    """Compactly supported initial data on (-delta, delta)."""

    delta: float = 1.0
    amplitude: float = 1.0
    profile: str = "plateau"  # or "cosine"


@dataclass(frozen=True)
class Numerics:
    dx: float = 0.02
    dt: float = None          # auto: min(0.01, half the advection CFL step)
    out_every: float = 0.5
    rannacher_pairs: int = 2  # startup middle-steps run as damped BE pairs
    slack: float = 1e-9
    level: float = 0.5
    fit_frac: float = 0.5     # fit speeds on t in [fit_frac*T_end, T_end]


@dataclass
class PdeState:
    x: np.ndarray
    u: np.ndarray
    t: float

    @property
    def dx(self):
        return float(self.x[1] - self.x[0])

    @property
    def domain(self):
        return (float(self.x[0]), float(self.x[-1]))


def init(domain, dx, u0):
    """Initial state: u0.amplitude times a bump supported in (-delta, delta).

    The grid snaps outward to whole multiples of dx so that x=0 is a node.
    """
    lo, hi = float(domain[0]), float(domain[1])
    if not (lo < 0.0 < hi):
        raise ValueError(f"domain must straddle the origin, got ({lo}, {hi})")
    if not (dx > 0):
        raise ValueError(f"dx must be positive, got {dx}")
    if not (u0.delta > 0):
        raise ValueError(f"delta must be positive, got {u0.delta}")
    if not (0.0 <= u0.amplitude <= 1.0):
        raise ValueError(f"amplitude must lie in [0, 1], got {u0.amplitude}")
    if u0.profile not in ("plateau", "cosine"):
        raise ValueError(f"unknown profile {u0.profile!r}")
    i_lo = math.floor(lo / dx)
    i_hi = math.ceil(hi / dx)
    x = dx * np.arange(i_lo, i_hi + 1)
    if -u0.delta < x[0] + 2 * dx or u0.delta > x[-1] - 2 * dx:
        raise ValueError(f"support (-{u0.delta}, {u0.delta}) exceeds the "
                         f"domain ({x[0]}, {x[-1]})")
    u = np.zeros_like(x)
    mask = np.abs(x) < u0.delta
    if u0.profile == "plateau":
        u[mask] = u0.amplitude
    else:
        u[mask] = u0.amplitude * 0.5 * (1.0 + np.cos(np.pi * x[mask] / u0.delta))
    return PdeState(x=x, u=u, t=0.0)


@njit(cache=True)
def _thomas_factor(dl, d, du):
    # LU of a tridiagonal system; no pivoting, relies on diagonal dominance
    n = d.shape[0]
    m = np.empty(n)
    cp = np.empty(n - 1)
    m[0] = 1.0 / d[0]
    for i in range(1, n):
        cp[i - 1] = du[i - 1] * m[i - 1]
        m[i] = 1.0 / (d[i] - dl[i - 1] * cp[i - 1])
    return m, cp


@njit(cache=True)
def _thomas_solve(dl, m, cp, rhs, out):
    n = rhs.shape[0]
    out[0] = rhs[0] * m[0]
    for i in range(1, n):
        out[i] = (rhs[i] - dl[i - 1] * out[i - 1]) * m[i]
    for i in range(n - 2, -1, -1):
        out[i] -= cp[i] * out[i + 1]


class Stepper:
    """Factored operators for one grid/field/reaction/dt combination."""

    def __init__(self, x, field, beta, dt, slack=1e-9, rannacher_pairs=0,
                 f=None):
        x = np.asarray(x, dtype=float)
        dx = float(x[1] - x[0])
        if beta < 0:
            raise ValueError(f"beta must be nonnegative, got {beta}")
        if beta > 0 and dx > min(0.02, 1.0 / (4.0 * math.sqrt(2.0 * beta))) * (1 + 1e-12):
            raise ValueError(f"dx={dx} too coarse to resolve the front; need "
                             f"dx <= min(0.02, 1/(4 sqrt(2 beta)))")
        elif dx > 0.02 * (1 + 1e-12):
            raise ValueError(f"dx={dx} too coarse; need dx <= 0.02")
        field.require_cover(x[0], x[-1], "pde domain")
        b = np.asarray(field(x), dtype=float)
        bmax = float(np.max(np.abs(b)))
        if bmax > 0 and dt > dx / bmax * (1 + 1e-12):
            raise ValueError(f"dt={dt} violates the advection CFL guard "
                             f"dt <= dx/max|b| = {dx / bmax:.6g}")
        if not (dt > 0):
            raise ValueError(f"dt must be positive, got {dt}")

        self.x, self.b, self.beta, self.dt = x, b, float(beta), float(dt)
        self.dx, self.slack, self.f = dx, float(slack), f
        self._middles_left = int(rannacher_pairs)

        n = len(x)
        alpha = 0.5 / dx ** 2
        diag = np.full(n, -2.0 * alpha)
        lower = np.full(n - 1, alpha)  # entry (i+1, i)
        upper = np.full(n - 1, alpha)  # entry (i, i+1)
        upper[0] = 2.0 * alpha         # mirror ghosts: u[-1]=u[1], u[n]=u[n-2]
        lower[-1] = 2.0 * alpha
        pos = b > 0
        neg = ~pos
        # upwind advection: forward difference where b>0 (profiles move
        # left), backward where b<0; boundary rows use the mirror ghost
        diag[pos] -= b[pos] / dx
        diag[neg] += b[neg] / dx
        w = b / dx
        for i in range(n):
            if pos[i]:
                if i < n - 1:
                    upper[i] += w[i]
                else:
                    lower[i - 1] += w[i]
            else:
                if i > 0:
                    lower[i - 1] -= w[i]
                else:
                    upper[0] -= w[0]
        self._L = (lower, diag, upper)

        h = 0.5 * dt
        m, cp = _thomas_factor(-h * lower, 1.0 - h * diag, -h * upper)
        self._lhs = (-h * lower, m, cp)
        self._scratch = np.empty(n)

    def _apply_L(self, u):
        lower, diag, upper = self._L
        out = diag * u
        out[1:] += lower * u[:-1]
        out[:-1] += upper * u[1:]
        return out

    def _correction(self, u):
        # van Leer limited slope minus the matrix's first-order upwind slope
        d = np.diff(u) / self.dx
        prod = d[:-1] * d[1:]
        sigma = np.zeros_like(u)
        ok = prod > 0
        sigma[1:-1][ok] = 2.0 * prod[ok] / (d[:-1] + d[1:])[ok]
        low = np.empty_like(u)
        pos = self.b > 0
        low[:-1][pos[:-1]] = d[pos[:-1]]
        low[1:][~pos[1:]] = d[~pos[1:]]
        if pos[-1]:
            low[-1] = -d[-1]
        if not pos[0]:
            low[0] = -d[0]
        return self.b * (sigma - low)

    def _reaction_half(self, u):
        s = self.beta * self.dt * 0.5
        if self.f is None:
            if s == 0.0:
                return u
            e = math.exp(s)
            return u * e / (1.0 + u * (e - 1.0))
        half = 0.5 * self.dt
        k1 = self._checked_f(u)
        k2 = self._checked_f(u + 0.5 * half * k1)
        return u + half * k2

    def _checked_f(self, u):
        v = self.f(u)
        if np.any(v < -1e-12) or np.any(v > self.beta * u + 1e-12):
            raise ValueError("pluggable reaction must satisfy 0 <= f(u) <= beta*u")
        return v

    def step(self, u):
        """One full Strang step; returns a new array, asserts 0 <= u <= 1."""
        u = self._reaction_half(u)
        h = 0.5 * self.dt
        dl, m, cp = self._lhs
        out = self._scratch
        if self._middles_left > 0:
            # damped start: two backward-Euler half-steps instead of CN
            self._middles_left -= 1
            rhs = u + h * self._correction(u)
            _thomas_solve(dl, m, cp, rhs, out)
            rhs = out + h * self._correction(out)
            _thomas_solve(dl, m, cp, rhs, out)
        else:
            rhs = u + h * self._apply_L(u) + self.dt * self._correction(u)
            _thomas_solve(dl, m, cp, rhs, out)
        u = self._reaction_half(out.copy())
        lo, hi = float(np.min(u)), float(np.max(u))
        if lo < -self.slack or hi > 1.0 + self.slack:
            raise RuntimeError(f"solution left [0,1] beyond the {self.slack} "
                               f"slack: min={lo}, max={hi}")
        return np.clip(u, 0.0, 1.0)


def step(state, field, beta, dt, f=None):
    """One standalone Crank-Nicolson Strang step; returns a new PdeState."""
    st = Stepper(state.x, field, beta, dt, f=f)
    return PdeState(x=state.x, u=st.step(state.u), t=state.t + dt)


@dataclass(frozen=True)
class FrontTrace:
    """Outermost half-level crossing positions and their fitted speeds."""

    times: np.ndarray = dc_field(repr=False)
    left: np.ndarray = dc_field(repr=False)
    right: np.ndarray = dc_field(repr=False)
    level: float
    left_speed: float
    right_speed: float
    left_halfwidth: float
    right_halfwidth: float
    fit_window: tuple


@dataclass(frozen=True)
class History:
    """Snapshots every out_every time units, for ray probing and re-leveling."""

    times: np.ndarray = dc_field(repr=False)
    x: np.ndarray = dc_field(repr=False)
    U: np.ndarray = dc_field(repr=False)  # float32, shape (n_times, n_x)


@dataclass(frozen=True)
class RunResult:
    state: PdeState
    trace: FrontTrace
    history: History
    expansions: int


def _front_positions(x, u, level):
    mask = u >= level
    if not mask.any():
        return math.nan, math.nan
    i_l = int(np.argmax(mask))
    i_r = len(u) - 1 - int(np.argmax(mask[::-1]))
    if i_l == 0:
        left = float(x[0])
    else:
        a, bb = u[i_l - 1], u[i_l]
        left = float(x[i_l - 1] + (x[i_l] - x[i_l - 1]) * (level - a) / (bb - a))
    if i_r == len(u) - 1:
        right = float(x[-1])
    else:
        a, bb = u[i_r], u[i_r + 1]
        right = float(x[i_r] + (x[i_r + 1] - x[i_r]) * (a - level) / (a - bb))
    return left, right


def _ols_speed(t, y):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(y)
    if keep.sum() < 8:
        raise RuntimeError("front not established over the fit window "
                           f"({int(keep.sum())} finite positions)")
    t, y = t[keep], y[keep]
    tc = t - t.mean()
    sxx = float(np.dot(tc, tc))
    slope = float(np.dot(tc, y)) / sxx
    resid = y - y.mean() - slope * tc
    s2 = float(np.dot(resid, resid)) / (len(t) - 2)
    return slope, 2.0 * math.sqrt(s2 / sxx)


def trace_from_history(history, level, fit_window):
    """FrontTrace re-extracted from stored snapshots at any level."""
    times, x, U = history.times, history.x, history.U
    left = np.empty(len(times))
    right = np.empty(len(times))
    for j in range(len(times)):
        left[j], right[j] = _front_positions(x, U[j], level)
    lo, hi = fit_window
    sel = (times >= lo) & (times <= hi)
    ls, lh = _ols_speed(times[sel], left[sel])
    rs, rh = _ols_speed(times[sel], right[sel])
    return FrontTrace(times=times, left=left, right=right, level=level,
                      left_speed=ls, right_speed=rs,
                      left_halfwidth=lh, right_halfwidth=rh,
                      fit_window=(float(lo), float(hi)))


def run_front(field, beta, u0=None, T_end=100.0, numerics=None,
              c1_guess=None, c2_guess=None, domain=None):
    """Evolve compact initial data to T_end and fit the front speeds.

    The domain is auto-sized to [-(c1_guess+2) T_end, (max(c2_guess,0)+2)
    T_end] from conservative guesses (sqrt(2 beta) shifted by the drift
    bound) unless an explicit domain is given. If mass reaches an edge the
    domain expands once, re-embedding the run; a second touch is an error.
    """
    u0 = u0 or U0Spec()
    num = numerics or Numerics()
    if not (T_end > 0):
        raise ValueError(f"T_end must be positive, got {T_end}")
    bound = field.spec.bound
    if c1_guess is None:
        c1_guess = math.sqrt(2.0 * beta) + bound
    if c2_guess is None:
        c2_guess = math.sqrt(2.0 * beta)
    if domain is None:
        domain = (min(-(c1_guess + 2.0) * T_end, -(u0.delta + 10.0)),
                  max((max(c2_guess, 0.0) + 2.0) * T_end, u0.delta + 10.0))
    state = init(domain, num.dx, u0)

    bmax = float(np.max(np.abs(field(state.x))))
    dt = num.dt
    if dt is None:
        dt = min(0.01, 0.5 * num.dx / bmax) if bmax > 0 else 0.01
    n_inner = max(1, round(num.out_every / dt))
    dt = num.out_every / n_inner  # land outputs on exact multiples

    stepper = Stepper(state.x, field, beta, dt, slack=num.slack,
                      rannacher_pairs=num.rannacher_pairs)
    times = [0.0]
    rows = [state.u.astype(np.float32)]
    expansions = 0
    n_out = round(T_end / num.out_every)
    if n_out < 16:
        raise ValueError("T_end spans fewer than 16 output samples; "
                         "shrink numerics.out_every")
    for j in range(1, n_out + 1):
        for _ in range(n_inner):
            state.u = stepper.step(state.u)
        state.t = j * num.out_every
        if state.u[0] > EDGE_TOL or state.u[-1] > EDGE_TOL:
            if expansions >= 1:
                raise RuntimeError(f"front reached the domain edge again at "
                                   f"t={state.t} after one expansion")
            expansions += 1
            state, rows = _expand(state, rows, num.dx, field)
            stepper = Stepper(state.x, field, beta, dt, slack=num.slack)
        times.append(state.t)
        rows.append(state.u.astype(np.float32))

    history = History(times=np.array(times), x=state.x.copy(),
                      U=np.vstack(rows))
    fit_window = (num.fit_frac * T_end, T_end)
    trace = trace_from_history(history, num.level, fit_window)
    return RunResult(state=state, trace=trace, history=history,
                     expansions=expansions)


def _expand(state, rows, dx, field):
    # widen whichever edges were touched by half the span, re-embed the
    # solution and the stored snapshots (zero where they had no support)
    n = len(state.x)
    pad = max(n // 2, 64)
    pad_lo = pad if state.u[0] > EDGE_TOL else 0
    pad_hi = pad if state.u[-1] > EDGE_TOL else 0
    i0 = round(state.x[0] / dx)
    x = dx * np.arange(i0 - pad_lo, i0 + n + pad_hi)
    field.require_cover(x[0], x[-1], "expanded pde domain")
    u = np.zeros(len(x))
    u[pad_lo:pad_lo + n] = state.u
    new_rows = []
    for r in rows:
        rr = np.zeros(len(x), dtype=np.float32)
        rr[pad_lo:pad_lo + n] = r
        new_rows.append(rr)
    return PdeState(x=x, u=u, t=state.t), new_rows


@dataclass(frozen=True)
class RayProbe:
    c: float
    verdict: str  # "to_one" | "to_zero" | "undecided"
    tail_mean: float
    u: np.ndarray = dc_field(repr=False)


def ray_probe(history, c_list, thresholds=(0.05, 0.95)):
    """u(t, c t) along each ray, with a final-quarter verdict per ray."""
    times, x, U = history.times, history.x, history.U
    out = []
    for c in c_list:
        xs = float(c) * times
        if xs.min() < x[0] or xs.max() > x[-1]:
            raise ValueError(f"ray c={c} exits the domain "
                             f"({x[0]:.4g}, {x[-1]:.4g}) by t={times[-1]}")
        series = np.array([np.interp(xs[j], x, U[j])
                           for j in range(len(times))])
        tail = series[times >= 0.75 * times[-1]]
        mean = float(tail.mean())
        if mean >= thresholds[1]:
            verdict = "to_one"
        elif mean <= thresholds[0]:
            verdict = "to_zero"
        else:
            verdict = "undecided"
        out.append(RayProbe(c=float(c), verdict=verdict, tail_mean=mean,
                            u=series))
    return out


def write_trace_csv(path, trace):
    """CSV rows (t, left, right) of the half-level front positions."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "left", "right"])
        for t, l, r in zip(trace.times, trace.left, trace.right):
            w.writerow([repr(float(t)), repr(float(l)), repr(float(r))])


def write_rays_csv(path, times, probes):
    """Long-format CSV rows (t, c, u), one block per probed ray."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "c", "u"])
        for p in probes:
            for t, v in zip(times, p.u):
                w.writerow([repr(float(t)), repr(p.c), repr(float(v))])


def write_snapshot_csv(path, state):
    """CSV rows (x, u) of one solution snapshot."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "u"])
        for xi, ui in zip(state.x, state.u):
            w.writerow([repr(float(xi)), repr(float(ui))])
