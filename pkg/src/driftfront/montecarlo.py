"""Path-level estimates of hitting-time MGFs by Euler–Maruyama simulation.

This is the independent check on the propagator route: simulate
dX = b(X) dt + dW, record barrier hitting times, and average e^{eta T} over
successful paths. Crossings are detected by sign change with linear
interpolation of the crossing time inside the step — deliberately no bridge
correction, so the O(sqrt(dt)) bias is visible and must be covered by the
dt-halving check that the comparison tests run.

Randomness is counter-based and splittable: each block of paths owns a Philox
stream keyed by (seed, block index), so results do not depend on scheduling
order across blocks and are reproducible for a fixed seed. Within a block,
normals are drawn in fixed-size chunks for the currently alive paths; the
alive set itself is a deterministic function of the seed.

The kernel steps all alive paths once per inner iteration (paths are
independent, so the drift-lookup latency overlaps across them) and exploits
the fact that every alive path has the same elapsed time, so no per-path
clock is carried. The drift lookup reproduces the field's linear table
interpolation exactly: the simulated process and the BVP solves see the same
quenched environment.
"""

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from numba import njit

from .drift import GRID_PITCH

BLOCK = 4096   # paths per RNG block (one Philox stream each)
CHUNK = 1024   # steps per pre-generated normal chunk

SIDE_LOWER = 1
SIDE_UPPER = 2
SIDE_CENSORED = 3

_OVERFLOW_GUARD = 690.0  # eta * horizon above this overflows exp weights


@njit(cache=True, fastmath=True)
def _advance(x, status, t_hit, z, base_step, dt, sqdt, lower, upper, vals,
             grid_x0, inv_h, max_steps, horizon):
    # x, status, t_hit: compacted per-alive-path state; z: (steps, paths)
    nmax = vals.shape[0] - 2
    n_steps, na = z.shape
    for j in range(n_steps):
        step = base_step + j
        if step >= max_steps:
            for r in range(na):
                if status[r] == 0:
                    status[r] = 3
                    t_hit[r] = horizon
            return
        tj = step * dt
        for r in range(na):
            if status[r] != 0:
                continue
            xi = x[r]
            u = (xi - grid_x0) * inv_h
            k = int(u)
            if k < 0:
                k = 0
            elif k > nmax:
                k = nmax
            b = vals[k] + (u - k) * (vals[k + 1] - vals[k])
            xn = xi + b * dt + sqdt * z[j, r]
            if xn <= lower:
                status[r] = 1
                t_hit[r] = tj + dt * (xi - lower) / (xi - xn)
            elif xn >= upper:
                status[r] = 2
                t_hit[r] = tj + dt * (upper - xi) / (xn - xi)
            else:
                x[r] = xn


@dataclass(frozen=True)
class HittingSample:
    """Exit times and sides for n paths from x0 on [lower, upper]."""

    times: np.ndarray = dc_field(repr=False)
    side: np.ndarray = dc_field(repr=False)
    x0: float = 0.0
    lower: float = 0.0
    upper: float = 0.0
    dt: float = 0.0
    horizon: float = 0.0
    seed: int = 0

    @property
    def n(self):
        return len(self.times)

    @property
    def frac_lower(self):
        return float(np.mean(self.side == SIDE_LOWER))

    @property
    def frac_upper(self):
        return float(np.mean(self.side == SIDE_UPPER))

    @property
    def frac_censored(self):
        return float(np.mean(self.side == SIDE_CENSORED))


def _step_budget(horizon, dt):
    m0 = horizon / dt
    frac = m0 - math.floor(m0)
    return int(math.floor(m0)) if frac < 1e-6 else int(math.ceil(m0))


def simulate_exit(field, x0, lower, upper, n, dt=1e-4, horizon=1e3, seed=0):
    """Simulate n first-exit times from (lower, upper) started at x0.

    Exit times are linearly interpolated within the crossing step; paths
    still inside at the horizon are recorded as censored with time=horizon.
    [lower, upper] must lie inside the field window (the kernel never
    evaluates drift elsewhere, so the window precondition is checked once).
    """
    x0, lower, upper = float(x0), float(lower), float(upper)
    if not (lower < x0 < upper):
        raise ValueError(f"need lower < x0 < upper, got {lower}, {x0}, {upper}")
    n = int(n)
    if n < 1:
        raise ValueError("n must be positive")
    if dt <= 0 or horizon <= dt:
        raise ValueError("need 0 < dt < horizon")
    field.require_cover(lower, upper, "exit interval")
    vals = np.ascontiguousarray(field.values, dtype=np.float64)
    sqdt = math.sqrt(dt)
    max_steps = _step_budget(horizon, dt)
    times = np.empty(n)
    side = np.empty(n, dtype=np.int8)
    zbuf = np.empty(BLOCK * CHUNK)
    done = 0
    blk = 0
    while done < n:
        m = min(BLOCK, n - done)
        gen = np.random.Generator(np.random.Philox(np.random.SeedSequence((int(seed), blk))))
        x = np.full(m, x0)
        slots = np.arange(done, done + m)
        status = np.zeros(m, dtype=np.int8)
        t_hit = np.empty(m)
        base = 0
        while x.size:
            na = x.size
            zflat = zbuf[:na * CHUNK]
            gen.standard_normal(out=zflat)
            _advance(x, status, t_hit, zflat.reshape(CHUNK, na), base, dt, sqdt,
                     lower, upper, vals, field.x0, 1.0 / GRID_PITCH,
                     max_steps, horizon)
            base += CHUNK
            exited = status != 0
            if exited.any():
                rows = slots[exited]
                times[rows] = t_hit[exited]
                side[rows] = status[exited]
                keep = ~exited
                x = x[keep]
                slots = slots[keep]
                status = status[keep]
                t_hit = t_hit[keep]
        done += m
        blk += 1
    return HittingSample(times=times, side=side, x0=x0, lower=lower, upper=upper,
                         dt=dt, horizon=horizon, seed=int(seed))


@dataclass(frozen=True)
class McEstimate:
    """Sample mean and error of e^{eta T} over successful barrier passages."""

    mean: float
    stderr: float
    n: int
    success_frac: float
    censored_frac: float
    k: int
    eta: float
    direction: str
    far_cells: int
    dt: float
    M: float
    seed: int


def mc_cell_mgf_many(field, k, etas, direction, n, M=1e3, dt=1e-4, seed=0,
                     far_cells=8):
    """Estimate the barrier-killed cell MGF at several eta from one path set.

    Backward: paths start at k+1; success is hitting k, kill barrier at
    k+1+far_cells. Forward mirrors it (start k, success k+1, kill at
    k-far_cells). The estimand equals the truncated boundary-value quantity at
    L=far_cells with an extra time horizon M (censored paths carry weight 0),
    so comparisons against the propagator route should use the matched
    truncation level — or a far_cells large enough that the discarded mass is
    far below stderr (e^{-2 E[b] far_cells}, hence the default of 8).

    Different eta values reweight the same hitting times, so the estimates
    share paths (and are correlated); each one is still a valid sample mean
    with its own stderr.
    """
    if direction not in ("backward", "forward"):
        raise ValueError(f"direction must be 'backward' or 'forward', got {direction!r}")
    n = int(n)
    if n < 1000:
        raise ValueError("n below 1e3 gives meaningless stderr; raise it")
    etas = [float(e) for e in etas]
    for eta in etas:
        if eta > 0 and eta * M > _OVERFLOW_GUARD:
            raise ValueError(f"eta*M = {eta * M} would overflow the exp weights; "
                             "reduce M or eta")
    k = int(k)
    if direction == "backward":
        x0, lower, upper = k + 1.0, float(k), k + 1.0 + far_cells
        success = SIDE_LOWER
    else:
        x0, lower, upper = float(k), k - float(far_cells), k + 1.0
        success = SIDE_UPPER
    sample = simulate_exit(field, x0, lower, upper, n, dt=dt, horizon=M, seed=seed)
    hit = sample.side == success
    t_hit = sample.times[hit]
    out = []
    for eta in etas:
        w = np.zeros(n)
        w[hit] = np.exp(eta * t_hit)
        out.append(McEstimate(
            mean=float(np.mean(w)),
            stderr=float(np.std(w, ddof=1) / math.sqrt(n)),
            n=n,
            success_frac=float(np.mean(hit)),
            censored_frac=sample.frac_censored,
            k=k, eta=eta, direction=direction,
            far_cells=int(far_cells), dt=float(dt), M=float(M),
            seed=int(seed)))
    return out


def mc_cell_mgf(field, k, eta, direction, n, M=1e3, dt=1e-4, seed=0, far_cells=8):
    """Single-eta convenience wrapper around mc_cell_mgf_many."""
    return mc_cell_mgf_many(field, k, [eta], direction, n, M=M, dt=dt,
                            seed=seed, far_cells=far_cells)[0]


def write_estimates_csv(path, estimates):
    """Write MC estimates as CSV rows (k, eta, direction, mean, stderr, ...)."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "eta", "direction", "mean", "stderr", "n", "dt", "M",
                    "seed", "far_cells", "success_frac", "censored_frac"])
        for e in estimates:
            w.writerow([e.k, repr(e.eta), e.direction, repr(e.mean),
                        repr(e.stderr), e.n, repr(e.dt), repr(e.M), e.seed,
                        e.far_cells, repr(e.success_frac), repr(e.censored_frac)])
