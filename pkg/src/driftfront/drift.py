"""Stationary random drift fields on a window.

A drift field is a scalar function b(x) on a finite window, realized as a
uniform sample table at pitch 1/64 with linear interpolation between samples.
The table *is* the field: every downstream consumer (ODE sweeps, SDE paths,
PDE advection) evaluates the same piecewise-linear function, so the quenched
realization is identical across modules.

Four ensemble kinds:

``constant``
    b(x) = value.
``randomized-phase-periodic``
    b(x) = mean + amplitude * sin(2*pi*(x + phase)/period), phase ~ U[0, period).
``random-fourier``
    b(x) = mean + sum_j A_j * sin(2*pi*x/lambda_j + phi_j), phi_j iid U[0, 2*pi).
``interp-iid-blocks``
    linear interpolation of iid U[low, high] heights on knots spaced ``block``
    apart, with a uniform random knot offset.

All randomness is drawn from per-index Philox streams keyed by
(seed, tag, index), never from a window-dependent sequential stream.
Re-sampling the same spec on a larger window therefore reproduces the same
realization on the overlap, which lets one quenched field be extended to a
bigger domain without changing values already used.
"""

import csv
import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np

GRID_PITCH = 1.0 / 64.0

_KINDS = ("constant", "randomized-phase-periodic", "random-fourier", "interp-iid-blocks")

# offset added to signed knot indices before keying a SeedSequence (entropy
# entries must be non-negative)
_INDEX_BIAS = 1 << 40


class WindowError(ValueError):
    """Evaluation or construction outside the sampled window."""


def _stream(seed, tag, index=0):
    ss = np.random.SeedSequence((int(seed), int(tag), int(index) + _INDEX_BIAS))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class DriftSpec:
    """Ensemble description: kind, parameters, uniform bound, seed."""

    kind: str
    params: dict
    bound: float
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown drift kind {self.kind!r}; expected one of {_KINDS}")
        if not (self.bound > 0) or not math.isfinite(self.bound):
            raise ValueError(f"bound must be positive and finite, got {self.bound}")
        p = self.params
        B = self.bound
        if self.kind == "constant":
            _require(set(p) == {"value"}, f"constant params must be {{'value'}}, got {set(p)}")
            _require(abs(p["value"]) <= B, f"|value|={abs(p['value'])} exceeds bound {B}")
        elif self.kind == "randomized-phase-periodic":
            _require(set(p) == {"mean", "amplitude", "period"},
                     f"periodic params must be {{'mean','amplitude','period'}}, got {set(p)}")
            _require(p["period"] > 0, "period must be positive")
            _require(p["amplitude"] >= 0, "amplitude must be nonnegative")
            _require(abs(p["mean"]) + p["amplitude"] <= B,
                     f"|mean|+amplitude={abs(p['mean']) + p['amplitude']} exceeds bound {B}")
        elif self.kind == "random-fourier":
            _require(set(p) == {"mean", "amplitudes", "periods"},
                     f"fourier params must be {{'mean','amplitudes','periods'}}, got {set(p)}")
            amps = list(p["amplitudes"])
            pers = list(p["periods"])
            _require(len(amps) == len(pers) and len(amps) >= 1,
                     "amplitudes and periods must be equal-length nonempty lists")
            _require(all(a >= 0 for a in amps), "amplitudes must be nonnegative")
            _require(all(q > 0 for q in pers), "periods must be positive")
            total = abs(p["mean"]) + sum(amps)
            _require(total <= B, f"|mean|+sum(amplitudes)={total} exceeds bound {B}")
        elif self.kind == "interp-iid-blocks":
            _require(set(p) == {"low", "high", "block"},
                     f"blocks params must be {{'low','high','block'}}, got {set(p)}")
            _require(p["low"] <= p["high"], "low must not exceed high")
            _require(p["block"] > 0, "block must be positive")
            worst = max(abs(p["low"]), abs(p["high"]))
            _require(worst <= B, f"max(|low|,|high|)={worst} exceeds bound {B}")

    def to_json(self):
        return json.dumps(
            {"kind": self.kind, "params": self.params, "bound": self.bound, "seed": self.seed},
            sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls(kind=d["kind"], params=d["params"], bound=d["bound"], seed=d.get("seed", 0))


def _require(cond, msg):
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class DriftField:
    """A sampled realization: uniform table at GRID_PITCH, linear interpolation."""

    spec: DriftSpec
    x0: float
    values: np.ndarray = dc_field(repr=False)

    @property
    def pitch(self):
        return GRID_PITCH

    @property
    def window(self):
        return (self.x0, self.x0 + (len(self.values) - 1) * GRID_PITCH)

    @property
    def grid(self):
        return self.x0 + GRID_PITCH * np.arange(len(self.values))

    def __call__(self, x):
        """Evaluate b at x (scalar or array). Raises WindowError outside the window."""
        xq = np.asarray(x, dtype=float)
        lo, hi = self.window
        tol = 1e-9 * max(1.0, abs(lo), abs(hi))
        if xq.size and (xq.min() < lo - tol or xq.max() > hi + tol):
            raise WindowError(
                f"evaluation at x in [{xq.min()}, {xq.max()}] outside window [{lo}, {hi}]")
        t = np.clip((xq - self.x0) / GRID_PITCH, 0.0, len(self.values) - 1.0)
        i = np.minimum(t.astype(np.int64), len(self.values) - 2)
        frac = t - i
        out = self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
        if np.ndim(x) == 0:
            return float(out)
        return out

    def require_cover(self, lo, hi, what="requested range"):
        wlo, whi = self.window
        tol = 1e-9 * max(1.0, abs(wlo), abs(whi))
        if lo < wlo - tol or hi > whi + tol:
            raise WindowError(f"{what} [{lo}, {hi}] not covered by field window [{wlo}, {whi}]")


def sample_drift(spec, window, seed=None):
    """Sample one realization of ``spec`` on ``window`` = (lo, hi).

    The window is snapped outward to the absolute grid (multiples of 1/64), so
    x=0 is a grid node whenever the window straddles it. ``seed`` overrides
    ``spec.seed`` when given.
    """
    lo, hi = float(window[0]), float(window[1])
    if not hi > lo:
        raise WindowError(f"window must have positive length, got [{lo}, {hi}]")
    seed = spec.seed if seed is None else int(seed)
    i_lo = math.floor(lo / GRID_PITCH + 1e-9)
    i_hi = math.ceil(hi / GRID_PITCH - 1e-9)
    x = GRID_PITCH * np.arange(i_lo, i_hi + 1, dtype=np.int64).astype(float)
    p = spec.params
    if spec.kind == "constant":
        vals = np.full_like(x, float(p["value"]))
    elif spec.kind == "randomized-phase-periodic":
        phase = _stream(seed, 1).uniform(0.0, p["period"])
        vals = p["mean"] + p["amplitude"] * np.sin(2.0 * np.pi * (x + phase) / p["period"])
    elif spec.kind == "random-fourier":
        vals = np.full_like(x, float(p["mean"]))
        for j, (amp, per) in enumerate(zip(p["amplitudes"], p["periods"])):
            phi = _stream(seed, 2, j).uniform(0.0, 2.0 * np.pi)
            vals += amp * np.sin(2.0 * np.pi * x / per + phi)
    elif spec.kind == "interp-iid-blocks":
        block = float(p["block"])
        offset = _stream(seed, 3).uniform(0.0, block)
        # knots t_m = m*block - offset with iid heights, one Philox stream per knot
        m_lo = math.floor((x[0] + offset) / block) - 1
        m_hi = math.ceil((x[-1] + offset) / block) + 1
        knots = np.array([m * block - offset for m in range(m_lo, m_hi + 1)])
        heights = np.array([
            _stream(seed, 4, m).uniform(p["low"], p["high"]) for m in range(m_lo, m_hi + 1)])
        vals = np.interp(x, knots, heights)
    else:  # pragma: no cover - guarded by DriftSpec
        raise ValueError(spec.kind)
    if np.max(np.abs(vals)) > spec.bound + 1e-12:
        raise ValueError("sampled field exceeds declared bound")  # pragma: no cover
    return DriftField(spec=spec, x0=float(x[0]), values=vals)


def spatial_mean(field, sub_window=None):
    """Trapezoid mean of the table over sub_window (default: full window).

    Exact for the piecewise-linear field when the sub-window endpoints are
    handled by interpolation, which they are.
    """
    lo, hi = field.window if sub_window is None else (float(sub_window[0]), float(sub_window[1]))
    if not hi > lo:
        raise WindowError(f"sub_window must have positive length, got [{lo}, {hi}]")
    field.require_cover(lo, hi, "sub_window")
    g = field.grid
    inside = (g > lo) & (g < hi)
    xs = np.concatenate(([lo], g[inside], [hi]))
    vs = np.concatenate(([field(lo)], field.values[inside], [field(hi)]))
    return float(np.trapezoid(vs, xs) / (hi - lo))


@dataclass(frozen=True)
class ScaleIntegralReport:
    """Scale-function integrals int exp(-2 int_0^y b) dy out to +/-L.

    ``log_positive[L]`` is log of int_0^L, ``log_negative[L]`` log of
    int_{-L}^0; trends classify each side as "saturating" or "growing" by the
    ratio of the two largest L. A field with positive mean drift saturates on
    the positive side and grows on the negative side (transience to +inf).
    """

    Ls: tuple
    log_positive: dict
    log_negative: dict
    positive_trend: str
    negative_trend: str

    @property
    def positive(self):
        return {L: math.exp(v) if v < 700 else math.inf for L, v in self.log_positive.items()}

    @property
    def negative(self):
        return {L: math.exp(v) if v < 700 else math.inf for L, v in self.log_negative.items()}


def scale_integral_check(field, L_list=(10.0, 100.0, 1000.0)):
    """Compute both one-sided scale integrals at each L and classify trends.

    Overflow-safe: integrals are accumulated in log space (the negative-side
    integrand reaches exp(2*E[b]*L)).
    """
    Ls = tuple(sorted(float(L) for L in L_list))
    if len(Ls) < 2:
        raise ValueError("need at least two L values to classify a trend")
    field.require_cover(-Ls[-1], Ls[-1], "scale integral range")
    g = field.grid
    b = field.values
    # cumulative integral of b from 0, exact for the piecewise-linear table
    i0 = int(round((0.0 - field.x0) / GRID_PITCH))
    seg = 0.5 * GRID_PITCH * (b[:-1] + b[1:])
    csum = np.concatenate(([0.0], np.cumsum(seg)))
    c = csum - csum[i0]        # c[i] = int_0^{x_i} b
    lg = -2.0 * c              # log integrand
    log_pos = {}
    log_neg = {}
    logseg = math.log(GRID_PITCH / 2.0) + np.logaddexp(lg[:-1], lg[1:])
    for L in Ls:
        iL = int(round(L / GRID_PITCH))
        log_pos[L] = _logsumexp(logseg[i0:i0 + iL])
        log_neg[L] = _logsumexp(logseg[i0 - iL:i0])
    pos_trend = _trend(log_pos[Ls[-2]], log_pos[Ls[-1]])
    neg_trend = _trend(log_neg[Ls[-2]], log_neg[Ls[-1]])
    return ScaleIntegralReport(Ls=Ls, log_positive=log_pos, log_negative=log_neg,
                               positive_trend=pos_trend, negative_trend=neg_trend)


def _trend(log_mid, log_big):
    return "growing" if log_big - log_mid > math.log(1.2) else "saturating"


def _logsumexp(a):
    m = np.max(a)
    return float(m + np.log(np.sum(np.exp(a - m))))


def to_csv(field, path):
    """Write the sample table as CSV with columns x,b."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "b"])
        for xi, bi in zip(field.grid, field.values):
            w.writerow([f"{xi:.9f}", f"{bi:.17g}"])
