"""Solve the speed/rate balance and classify the spreading regime.

The per-time cost S(c) = c*I(1/c) = sup_eta (eta - c*mu(eta)) of holding a
ray of speed c balances the growth rate beta where S(c) = beta. Evaluated on
the curve's converged points the sup is a max of affine functions of c, so S
is exactly convex piecewise-linear: it has at most two crossings of any
level, one per monotone branch, and bisection per branch is exhaustive. The
backward/forward root pair (c1*, c2*) then splits the speed axis into the
ray set R1 = (-c1*, c2*) where the front fills in and its complement R0
where it dies out, with the regime named by where beta sits relative to the
critical eta bracket: below it both edges drift left, inside it the right
edge stalls, above it the invasion spreads both ways.
"""

import csv
import json
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BalanceRoot:
    c: float
    branch: str  # "decreasing" | "increasing": which side of the S minimum


@dataclass(frozen=True)
class BalanceResult:
    """Roots of S(c) = beta on c > 0, plus the minimum diagnostics."""

    beta: float
    roots: tuple
    min_S: float     # infimum of S over c > 0 (helps explain an empty result)
    argmin_c: float  # 0.0 when S is nondecreasing from the start
    S_at_zero: float


def _s_eval(etas, mus, c):
    return float(np.max(etas - c * mus))


def _right_slope(etas, mus, c):
    # right derivative of the upper envelope: steepest line among the argmax ties
    vals = etas - c * mus
    m = np.max(vals)
    near = vals >= m - 1e-12 * max(1.0, abs(m))
    return float(np.max(-mus[near]))


def _check_witnessed(etas, mus, c, beta):
    # a root whose sup pins at the lowest sampled eta is extrapolation, not
    # evidence: the true envelope keeps steepening below the grid
    if int(np.argmax(etas - c * mus)) == 0:
        raise ValueError(f"the balance root near c={c:.4g} for beta={beta} "
                         "needs slopes below the sampled eta range; extend "
                         "the curve's grid downward")


def solve_balance(ratefn, beta):
    """All positive roots of c*I(1/c) = beta, tagged by monotone branch."""
    beta = float(beta)
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if ratefn.etas is None or ratefn.mus is None:
        raise ValueError("rate function lacks its source curve points; "
                         "build it with legendre()")
    etas = np.asarray(ratefn.etas, dtype=float)
    mus = np.asarray(ratefn.mus, dtype=float)
    s_at_zero = float(np.max(etas))

    if _right_slope(etas, mus, 1e-12) >= 0.0:
        argmin_c, min_s = 0.0, s_at_zero
    else:
        hi = 1.0
        for _ in range(200):
            if _right_slope(etas, mus, hi) > 0.0:
                break
            hi *= 2.0
        else:
            raise RuntimeError("S(c) never turned upward; curve is unusable")
        lo = 0.0
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if _right_slope(etas, mus, mid) > 0.0:
                hi = mid
            else:
                lo = mid
        argmin_c = 0.5 * (lo + hi)
        min_s = _s_eval(etas, mus, argmin_c)

    rel = 1e-6
    roots = []

    # decreasing branch (0, argmin): S falls from S(0+) to min_S
    if argmin_c > 0.0 and min_s < beta < s_at_zero:
        lo = argmin_c
        for _ in range(200):
            lo *= 0.5
            if _s_eval(etas, mus, lo) > beta:
                break
        else:
            lo = 0.0
        hi = argmin_c
        while hi - lo > rel * hi:
            mid = 0.5 * (lo + hi)
            if _s_eval(etas, mus, mid) > beta:
                lo = mid
            else:
                hi = mid
        roots.append(BalanceRoot(c=0.5 * (lo + hi), branch="decreasing"))

    # increasing branch (argmin, inf): S climbs without bound
    if beta > min_s:
        lo = argmin_c
        hi = max(argmin_c, 1.0)
        for _ in range(200):
            if _s_eval(etas, mus, hi) > beta:
                break
            hi *= 2.0
        else:
            raise RuntimeError("failed to bracket the increasing-branch root")
        while hi - lo > rel * hi:
            mid = 0.5 * (lo + hi)
            if _s_eval(etas, mus, mid) > beta:
                hi = mid
            else:
                lo = mid
        c = 0.5 * (lo + hi)
        if c > 0.0:
            _check_witnessed(etas, mus, c, beta)
            roots.append(BalanceRoot(c=c, branch="increasing"))

    return BalanceResult(beta=beta, roots=tuple(roots), min_S=min_s,
                         argmin_c=argmin_c, S_at_zero=s_at_zero)


@dataclass(frozen=True)
class WaveReport:
    """Predicted speed pair, regime, and ray sets for one growth rate."""

    beta: float
    eta_c: float
    eta_c_width: float
    c1_star: float
    c2_star: float
    regime: str  # "both_left" | "stagnant" | "left_and_right"
    R1: tuple    # intervals (lo, hi) where the front fills in
    R0: tuple    # complement rays, where it dies out
    provenance: dict

    def as_dict(self):
        def ivs(pairs):
            return [[None if math.isinf(x) else x for x in p] for p in pairs]
        return {"beta": self.beta, "eta_c": self.eta_c,
                "eta_c_width": self.eta_c_width,
                "c1_star": self.c1_star, "c2_star": self.c2_star,
                "regime": self.regime,
                "R1": ivs(self.R1), "R0": ivs(self.R0),
                "provenance": self.provenance}

    def to_json(self, indent=2):
        return json.dumps(self.as_dict(), indent=indent)


def _branch_root(result, branch):
    for r in result.roots:
        if r.branch == branch:
            return r.c
    return None


def classify(beta, eta_c, bwd, fwd):
    """WaveReport for growth rate beta given both rate functions.

    eta_c is the detection bracket for the critical eta; beta landing inside
    it is declared the stagnant regime, since exact equality is measure-zero
    numerically. The right-front speed c2* comes from the backward balance
    above the bracket and from the reflected second forward root below it.
    """
    beta = float(beta)
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if bwd.direction != "backward" or fwd.direction != "forward":
        raise ValueError("pass (beta, eta_c bracket, backward rate, forward "
                         "rate) in that order")

    fres = solve_balance(fwd, beta)
    bres = solve_balance(bwd, beta)

    c1 = _branch_root(fres, "increasing")
    if c1 is None:
        raise ValueError(f"forward balance has no increasing-branch root at "
                         f"beta={beta} (min S = {fres.min_S:.6g})")

    if beta > eta_c.hi:
        regime = "left_and_right"
        c2 = _branch_root(bres, "increasing")
        if c2 is None:
            raise ValueError(f"backward balance has no root at beta={beta} "
                             f"though beta > eta_c bracket "
                             f"(min S = {bres.min_S:.6g}); refine the curve")
    elif beta < eta_c.lo:
        regime = "both_left"
        second = _branch_root(fres, "decreasing")
        if second is None:
            raise ValueError(f"forward balance has no decreasing-branch root "
                             f"at beta={beta} though beta < eta_c bracket "
                             f"(S(0+) = {fres.S_at_zero:.6g}); the curve "
                             "stops too far short of eta_c")
        c2 = -second
    else:
        regime = "stagnant"
        c2 = 0.0

    prov = {"eta_c_bracket": [eta_c.lo, eta_c.hi]}
    for tag, rf, res in (("backward", bwd, bres), ("forward", fwd, fres)):
        prov[tag] = {"n_eta": int(len(rf.etas)),
                     "eta_range": [float(rf.etas[0]), float(rf.etas[-1])],
                     "a_hull": [float(rf.a_grid[0]), float(rf.a_grid[-1])],
                     "min_S": res.min_S,
                     "roots": [{"c": r.c, "branch": r.branch}
                               for r in res.roots]}

    return WaveReport(beta=beta, eta_c=float(eta_c.estimate),
                      eta_c_width=float(eta_c.width),
                      c1_star=c1, c2_star=c2, regime=regime,
                      R1=((-c1, c2),),
                      R0=((-math.inf, -c1), (c2, math.inf)),
                      provenance=prov)


def beta_sweep(betas, eta_c, bwd, fwd):
    return [classify(b, eta_c, bwd, fwd) for b in betas]


def write_sweep_csv(path, reports):
    """CSV rows (beta, c1_star, c2_star, regime), one per growth rate."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["beta", "c1_star", "c2_star", "regime"])
        for r in reports:
            w.writerow([repr(r.beta), repr(r.c1_star), repr(r.c2_star),
                        r.regime])
