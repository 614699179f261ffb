"""Legendre transforms of the growth curves and the laws they must satisfy.

I(a) = sup_eta (a*eta - mu(eta)) is the cost of crossing one cell in time a;
S(c) = c*I(1/c) re-expresses it per unit time at speed c. The discrete
transform takes the max directly over the curve's converged eta grid — a max
of affine functions of a, so it is convex by construction. When the argmax
lands on the last converged point the grid has run out of slope (slopes cap
at the last chord before eta_c), and past the sampled hull queries continue
along the witnessed tail line a*eta_last - mu(eta_last): a lower bound for
the exact asymptote through the critical point, converging to it as the grid
closes on eta_c. Below the smallest sampled slope the transform is simply
unknown, and queries there raise.
"""

import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np


@dataclass(frozen=True)
class RateFunction:
    """Discrete Legendre transform of one curve, on a positive a grid."""

    direction: str
    a_grid: np.ndarray = dc_field(repr=False)
    I: np.ndarray = dc_field(repr=False)
    saturated: np.ndarray = dc_field(repr=False)  # argmax hit the last eta
    eta_c: float = math.nan        # detected critical-eta estimate (diagnostic)
    eta_c_width: float = math.nan  # detection bracket width (nan if not detected)
    mu_at_eta_c: float = math.nan  # mu at the last converged grid eta
    eta_last: float = math.nan     # last converged eta: slope of the tail line
    argmin_a: float = math.nan     # mu'(0): where I takes its minimum
    min_I: float = math.nan        # -mu(0)
    # the converged curve points the transform was built from; downstream
    # solvers evaluate sup_eta (eta - c*mu) on these directly, with no a-grid
    # interpolation in the way
    etas: np.ndarray = dc_field(default=None, repr=False)
    mus: np.ndarray = dc_field(default=None, repr=False)


def legendre(curve, a_grid=None, n_a=400):
    """Transform a LyapunovCurve into a RateFunction.

    The default a grid is log-spaced over [0.9, 1.1] times the range of
    discrete slopes of mu, which is exactly the range of a values whose
    supremum the grid can witness; pass a_grid to override.
    """
    etas, mus = curve.converged_points()
    if len(etas) < 8:
        raise ValueError(f"degenerate curve: only {len(etas)} converged points "
                         "(need at least 8 for a usable transform)")
    slopes = np.diff(mus) / np.diff(etas)
    if a_grid is None:
        s_lo = max(float(np.min(slopes)), 1e-9)
        s_hi = float(np.max(slopes))
        a_grid = np.geomspace(0.9 * s_lo, 1.1 * s_hi, int(n_a))
    else:
        a_grid = np.asarray(a_grid, dtype=float)
        if a_grid.ndim != 1 or len(a_grid) < 1:
            raise ValueError("a_grid must be a 1-d array")
        if not (np.all(a_grid > 0) and np.all(np.diff(a_grid) > 0)):
            raise ValueError("a_grid must be positive and strictly increasing")

    values = a_grid[:, None] * etas[None, :] - mus[None, :]
    j = np.argmax(values, axis=1)
    I = values[np.arange(len(a_grid)), j]
    saturated = j == len(etas) - 1

    if curve.eta_c is not None:
        eta_c = float(curve.eta_c.estimate)
        width = float(curve.eta_c.width)
    else:
        eta_c = float(etas[-1])
        width = math.nan

    if etas[0] <= 0.0 <= etas[-1]:
        mu0 = float(np.interp(0.0, etas, mus))
        mids = 0.5 * (etas[:-1] + etas[1:])
        argmin_a = float(np.interp(0.0, mids, slopes))
        min_I = -mu0
    else:
        argmin_a = math.nan
        min_I = math.nan

    return RateFunction(direction=curve.direction, a_grid=a_grid, I=I,
                        saturated=saturated, eta_c=eta_c, eta_c_width=width,
                        mu_at_eta_c=float(mus[-1]), eta_last=float(etas[-1]),
                        argmin_a=argmin_a, min_I=min_I, etas=etas, mus=mus)


def rate_I(ratefn, a):
    """I at a single a: grid interpolation, with the tail line past a_max."""
    a = float(a)
    g = ratefn.a_grid
    if a <= 0:
        raise ValueError(f"a must be positive, got {a}")
    if a < g[0]:
        raise ValueError(f"a={a} below the sampled slope hull [{g[0]:.4g}, "
                         f"{g[-1]:.4g}]; the curve grid cannot witness it")
    if a > g[-1]:
        if not ratefn.saturated[-1]:
            raise ValueError(f"a={a} beyond the grid and the transform has not "
                             "saturated; extend the eta grid toward eta_c")
        return float(a * ratefn.eta_last - ratefn.mu_at_eta_c)
    return float(np.interp(a, g, ratefn.I))


def rate_S(ratefn, c):
    """S(c) = c * I(1/c); c must be positive with 1/c reachable (see rate_I)."""
    if c <= 0:
        raise ValueError(f"speed must be positive, got {c}")
    return float(c * rate_I(ratefn, 1.0 / c))


@dataclass(frozen=True)
class CheckResult:
    passed: bool
    value: float
    detail: str


@dataclass(frozen=True)
class PropertyReport:
    """Named pass/fail rows for the rate-function laws."""

    checks: dict
    tol: float

    @property
    def all_passed(self):
        return all(c.passed for c in self.checks.values())

    def as_dict(self):
        return {"tol": self.tol, "all_passed": self.all_passed,
                "checks": {name: {"passed": c.passed, "value": c.value,
                                  "detail": c.detail}
                           for name, c in self.checks.items()}}

    def to_json(self, indent=2):
        return json.dumps(self.as_dict(), indent=indent)


def _v_shape_violation(ratefn):
    # split at the discrete minimum: every slope left of it must be <= 0 and
    # every slope right of it >= 0, or the curve is not a single valley
    g, I = ratefn.a_grid, ratefn.I
    slopes = np.diff(I) / np.diff(g)
    j0 = int(np.argmin(I))
    worst = 0.0
    if j0 > 0:
        worst = max(worst, float(np.max(slopes[:j0])))
    if j0 < len(slopes):
        worst = max(worst, float(-np.min(slopes[j0:])))
    return worst


def _second_slope_drop(xs, ys):
    slopes = np.diff(ys) / np.diff(xs)
    if len(slopes) < 2:
        return 0.0
    return float(np.min(np.diff(slopes)))  # negative = convexity violation


def property_report(rate_bwd, curve_bwd, rate_fwd, curve_fwd,
                    n_pairs=100, tol=1e-4, seed=0):
    """Check the structural laws relating I, I_fwd, and the curves.

    Rows: nonnegativity and convexity of each I; the V shape around
    argmin = mu'(0); minima pinned to -mu(0) (zero for the forward one);
    the tail-line lower bound; the constant offset I - I_fwd = 2 E[b];
    convexity of a*I(1/a); and the two-sided bound
    I(alpha) + I_fwd(beta) >= (alpha+beta)*eta on sampled pairs, checked at
    the largest eta both grids witnessed (implied for every eta <= eta_c).
    """
    if rate_bwd.direction != "backward" or rate_fwd.direction != "forward":
        raise ValueError("pass (backward rate, backward curve, forward rate, "
                         "forward curve) in that order")
    checks = {}

    for tag, rf in (("bwd", rate_bwd), ("fwd", rate_fwd)):
        v = float(np.min(rf.I))
        checks[f"nonneg_I_{tag}"] = CheckResult(v >= -tol, v, "min I over grid")
        v = _second_slope_drop(rf.a_grid, rf.I)
        checks[f"convex_I_{tag}"] = CheckResult(v >= -tol, v,
                                                "worst slope drop of I")
        v = _v_shape_violation(rf)
        checks[f"v_shape_{tag}"] = CheckResult(v <= tol, v,
                                               "worst wrong-way slope around the minimum")
        v = float(np.min(rf.I - (rf.eta_last * rf.a_grid - rf.mu_at_eta_c)))
        checks[f"tail_bound_{tag}"] = CheckResult(v >= -tol, v,
                                                  "min gap above the witnessed tail line")
        # per-unit-time form: S on the reversed reciprocal grid
        c_grid = 1.0 / rf.a_grid[::-1]
        S = c_grid * rf.I[::-1]
        v = _second_slope_drop(c_grid, S)
        checks[f"perspective_convex_{tag}"] = CheckResult(
            v >= -tol, v, "worst slope drop of c*I(1/c)")

    v = abs(rate_bwd.min_I - 2.0 * curve_bwd.mean_b)
    checks["min_I_bwd"] = CheckResult(v <= tol, v,
                                      "|min I - 2 E[b]| (= |-mu(0)| check)")
    v = float(np.min(rate_bwd.I)) - rate_bwd.min_I
    checks["grid_min_matches_bwd"] = CheckResult(abs(v) <= tol, v,
                                                 "grid min I vs -mu(0)")
    v = abs(rate_fwd.min_I)
    checks["min_I_fwd_zero"] = CheckResult(v <= tol, v, "|min I_fwd| (mu_fwd(0)=0)")

    lo = max(rate_bwd.a_grid[0], rate_fwd.a_grid[0])
    hi = min(rate_bwd.a_grid[-1], rate_fwd.a_grid[-1])
    if hi <= lo:
        checks["offset_constant"] = CheckResult(False, math.inf,
                                                "a grids do not overlap")
    else:
        common = np.geomspace(lo, hi, 101)
        gap = (np.interp(common, rate_bwd.a_grid, rate_bwd.I)
               - np.interp(common, rate_fwd.a_grid, rate_fwd.I))
        v = float(np.max(np.abs(gap - 2.0 * curve_bwd.mean_b)))
        checks["offset_constant"] = CheckResult(v <= tol, v,
                                                "max |I - I_fwd - 2 E[b]|")

    eta_ref = min(rate_bwd.eta_last, rate_fwd.eta_last)
    rng = np.random.default_rng(seed)
    alphas = rng.uniform(rate_bwd.a_grid[0], rate_bwd.a_grid[-1], n_pairs)
    betas = rng.uniform(rate_fwd.a_grid[0], rate_fwd.a_grid[-1], n_pairs)
    margins = (np.interp(alphas, rate_bwd.a_grid, rate_bwd.I)
               + np.interp(betas, rate_fwd.a_grid, rate_fwd.I)
               - (alphas + betas) * eta_ref)
    v = float(np.min(margins))
    checks["two_sided_bound"] = CheckResult(v >= -tol, v,
                                            f"min margin over {n_pairs} pairs")

    return PropertyReport(checks=checks, tol=tol)


def write_rate_csv(path, ratefns):
    """CSV rows (direction, a, I) for one or more rate functions."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["direction", "a", "I"])
        for rf in ratefns:
            for a, val in zip(rf.a_grid, rf.I):
                w.writerow([rf.direction, repr(float(a)), repr(float(val))])
