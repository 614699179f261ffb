"""Pipeline wiring: one JSON config in, staged artifacts and a verdict out.

The stages run in a fixed order — sample the drift, estimate the Lyapunov
curves, transform to rate functions, predict speeds and regimes, simulate
the PDE, compare — and a config may select any prefix of that order. Every
stage writes its artifacts (CSV/JSON) into the output directory and the
manifest records a content hash per file, so re-running a config must
reproduce the artifact set byte for byte; the determinism digest at the
bottom of the manifest is that statement folded into a single hash (wall
times are excluded from it).

The compare stage turns predictions and measurements into a Verdict: per-beta
rows of predicted vs fitted speeds with relative errors and a regime flag,
ray verdicts against the predicted spreading set, and the structural identity
residuals (mu gap, exit-weight cocycle, Wronskian determinant, speed
ordering). The verdict passes only if every row and every identity passes.
"""

import hashlib
import json
import math
import time
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .drift import DriftSpec, sample_drift, spatial_mean, to_csv
from .lyapunov import default_eta_grid, detect_eta_c, mu_curve, mu_gap_check
from .pdefront import Numerics, ray_probe, run_front, write_rays_csv, \
    write_snapshot_csv, write_trace_csv
from .ratefn import legendre, property_report, write_rate_csv
from .transfer import abel_residual, cell_propagators, rho_from_table
from .wavecast import beta_sweep, write_sweep_csv

STAGES = ("drift", "lyapunov", "ratefn", "wavecast", "pdefront", "compare")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on, defaults included, JSON round-trippable."""

    # drift field
    drift_kind: str = "constant"
    drift_params: dict = dc_field(default_factory=lambda: {"value": 0.5})
    drift_bound: float = 1.0
    window: tuple = (-96.0, 96.0)
    seed: int = 0
    # growth rates to predict and simulate
    betas: tuple = (1.0,)
    # Lyapunov estimation
    n_cells: int = 200
    eta_n: int = 64
    eta_lo: float = None  # override the eta-grid floor (deep negative)
    mu_method: str = "bvp"
    n_paths: int = 100_000   # only read when mu_method == "mc"
    dt_sde: float = 1e-4
    # rate function
    n_a: int = 400
    # PDE numerics
    dx: float = 0.02
    dt: float = None
    T_end: float = 100.0
    out_every: float = 0.5
    # verdict tolerances
    speed_rel_tol: float = 0.05
    stagnant_abs_tol: float = 0.1
    identity_tol: float = 0.02
    abel_tol: float = 1e-6
    ray_edge_frac: float = 0.1
    # plumbing
    stages: tuple = STAGES
    out_dir: str = "artifacts"

    def as_dict(self):
        return _jsonable(asdict(self))

    def to_json(self, indent=2):
        return json.dumps(self.as_dict(), indent=indent, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        for key in ("window", "betas", "stages"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        # before the int branch: bool subclasses int and would turn into 0/1
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return None if math.isnan(f) else f
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj]
    return obj


def _canonical(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def _digest(obj):
    return hashlib.sha256(_canonical(obj).encode()).hexdigest()


def _file_sha(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def validate_config(config):
    if tuple(config.stages) != STAGES[:len(config.stages)] or not config.stages:
        raise ValueError(f"stages must be a nonempty prefix of {STAGES}, "
                         f"got {tuple(config.stages)}")
    if not config.betas:
        raise ValueError("betas must be nonempty")
    if any(b <= 0 for b in config.betas):
        raise ValueError(f"growth rates must be positive, got {config.betas}")
    if config.mu_method not in ("bvp", "mc"):
        raise ValueError(f"mu_method must be 'bvp' or 'mc', got {config.mu_method!r}")


# ---------------------------------------------------------------- stages


def _stage_drift(config, ctx, out):
    spec = DriftSpec(kind=config.drift_kind, params=dict(config.drift_params),
                     bound=config.drift_bound, seed=config.seed)
    field = sample_drift(spec, tuple(config.window))
    ctx["field"] = field
    to_csv(field, out / "field.csv")
    (out / "drift_spec.json").write_text(spec.to_json() + "\n")
    return ["field.csv", "drift_spec.json"]


def _stage_lyapunov(config, ctx, out):
    field = ctx["field"]
    eta_c = detect_eta_c(field, direction="backward")
    ctx["eta_c"] = eta_c
    mc_opts = None
    if config.mu_method == "mc":
        mc_opts = {"n_paths": config.n_paths, "dt": config.dt_sde,
                   "seed": config.seed}
    grid = default_eta_grid(spatial_mean(field), eta_c.estimate, n=config.eta_n,
                            lo=config.eta_lo)
    curves = {}
    for direction in ("backward", "forward"):
        curves[direction] = mu_curve(
            field, eta_grid=grid, n_cells=config.n_cells,
            method=config.mu_method, direction=direction, eta_c=eta_c,
            mc_opts=mc_opts)
    ctx["curves"] = curves
    ctx["gap"] = mu_gap_check(curves["backward"], curves["forward"])

    with open(out / "mu_curves.csv", "w", newline="") as fh:
        fh.write("direction,eta,mu,converged\n")
        for direction, cv in curves.items():
            for e, m, c in zip(cv.etas, cv.mu, cv.converged):
                fh.write(f"{direction},{e!r},{m!r},{int(c)}\n")
    meta = {"lo": eta_c.lo, "hi": eta_c.hi, "estimate": eta_c.estimate,
            "width": eta_c.width, "censored": eta_c.censored,
            "n_probe": eta_c.n_probe, "mean_b": curves["backward"].mean_b,
            "mu_gap_max_abs": ctx["gap"].max_abs,
            "domain_agreement": ctx["gap"].domain_agreement}
    (out / "eta_c.json").write_text(_canonical(meta) + "\n")
    return ["mu_curves.csv", "eta_c.json"]


def _stage_ratefn(config, ctx, out):
    curves = ctx["curves"]
    rates = {d: legendre(curves[d], n_a=config.n_a)
             for d in ("backward", "forward")}
    ctx["rates"] = rates
    write_rate_csv(out / "rate_functions.csv",
                   [rates["backward"], rates["forward"]])
    prop = property_report(rates["backward"], curves["backward"],
                           rates["forward"], curves["forward"])
    ctx["properties"] = prop
    meta = {d: {"eta_last": rf.eta_last, "eta_c": rf.eta_c,
                "eta_c_width": rf.eta_c_width, "argmin_a": rf.argmin_a,
                "min_I": rf.min_I, "saturated": int(np.sum(rf.saturated))}
            for d, rf in rates.items()}
    doc = {"properties": prop.as_dict(), "meta": _jsonable(meta)}
    (out / "rate_properties.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return ["rate_functions.csv", "rate_properties.json"]


def _stage_wavecast(config, ctx, out):
    reports = beta_sweep(config.betas, ctx["eta_c"],
                         ctx["rates"]["backward"], ctx["rates"]["forward"])
    ctx["reports"] = reports
    doc = {"reports": [r.as_dict() for r in reports]}
    (out / "wave_report.json").write_text(
        json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n")
    write_sweep_csv(out / "speed_sweep.csv", reports)
    return ["wave_report.json", "speed_sweep.csv"]


def ray_choices(report):
    """Deterministic probe rays: origin, the filled interval's midpoint, and
    one ray inside each complement component, one unit past the boundary."""
    lo, hi = report.R1[0]
    rays = {0.0, round(0.5 * (lo + hi), 6),
            round(lo - 1.0, 6), round(hi + 1.0, 6)}
    return sorted(rays)


def _stage_pdefront(config, ctx, out):
    field = ctx["field"]
    num = Numerics(dx=config.dx, dt=config.dt, out_every=config.out_every)
    runs = []
    files = []
    summary = []
    for i, (beta, report) in enumerate(zip(config.betas, ctx["reports"])):
        res = run_front(field, beta, T_end=config.T_end, numerics=num,
                        c1_guess=report.c1_star, c2_guess=report.c2_star)
        probes = ray_probe(res.history, ray_choices(report))
        runs.append((res, probes))
        write_trace_csv(out / f"front_trace_{i}.csv", res.trace)
        write_rays_csv(out / f"ray_probes_{i}.csv", res.history.times, probes)
        write_snapshot_csv(out / f"snapshot_{i}.csv", res.state)
        files += [f"front_trace_{i}.csv", f"ray_probes_{i}.csv",
                  f"snapshot_{i}.csv"]
        summary.append({"beta": beta, "left_speed": res.trace.left_speed,
                        "right_speed": res.trace.right_speed,
                        "left_halfwidth": res.trace.left_halfwidth,
                        "right_halfwidth": res.trace.right_halfwidth,
                        "fit_window": list(res.trace.fit_window),
                        "expansions": res.expansions,
                        "rays": [{"c": p.c, "verdict": p.verdict,
                                  "tail_mean": p.tail_mean} for p in probes]})
    ctx["runs"] = runs
    (out / "pde_summary.json").write_text(
        json.dumps(_jsonable({"runs": summary}), indent=2, sort_keys=True) + "\n")
    return files + ["pde_summary.json"]


# ---------------------------------------------------------------- compare


@dataclass(frozen=True)
class Tolerances:
    speed_rel: float = 0.05
    stagnant_abs: float = 0.1
    ray_edge_frac: float = 0.1

    @classmethod
    def from_config(cls, config):
        return cls(speed_rel=config.speed_rel_tol,
                   stagnant_abs=config.stagnant_abs_tol,
                   ray_edge_frac=config.ray_edge_frac)


@dataclass(frozen=True)
class CompareRow:
    beta: float
    c1_star: float
    c2_star: float
    left_speed: float
    right_speed: float
    left_rel_err: float
    right_err: float
    right_err_mode: str  # "relative", or "absolute" when c2*=0
    regime: str
    regime_match: bool
    rays: tuple
    passed: bool

    def as_dict(self):
        d = asdict(self)
        d["rays"] = [dict(r) for r in self.rays]
        return _jsonable(d)


@dataclass(frozen=True)
class Verdict:
    rows: tuple
    identities: dict
    passed: bool

    def as_dict(self):
        return _jsonable({"rows": [r.as_dict() for r in self.rows],
                          "identities": self.identities,
                          "passed": self.passed})

    def to_json(self, indent=2):
        return json.dumps(self.as_dict(), indent=indent, sort_keys=True)


def _expected_side(c, report, edge_frac):
    """'to_one' / 'to_zero' by membership in the predicted sets, or 'edge'
    when the ray sits within edge_frac of a boundary (left undecided by
    design — the finite-time run cannot resolve it)."""
    for lo, hi in report.R1:
        for edge in (lo, hi):
            if math.isfinite(edge) and abs(c - edge) <= edge_frac * max(1.0, abs(edge)):
                return "edge"
    for lo, hi in report.R1:
        if lo < c < hi:
            return "to_one"
    return "to_zero"


def compare(report, trace, probes, tolerances, beta=None):
    """One per-beta verdict row: speeds, regime signs, and ray membership.

    beta, when given, must match the report's; it guards against pairing a
    prediction with a measurement from a different run.
    """
    if beta is not None and not math.isclose(beta, report.beta,
                                             rel_tol=0, abs_tol=1e-12):
        raise ValueError(f"provenance mismatch: report is for "
                         f"beta={report.beta}, measured run used beta={beta}")
    pred_left = -report.c1_star
    pred_right = report.c2_star
    meas_left = trace.left_speed
    meas_right = trace.right_speed

    left_rel = abs(meas_left - pred_left) / abs(pred_left)
    if report.regime == "stagnant":
        right_err, right_mode = abs(meas_right - 0.0), "absolute"
        right_ok = right_err <= tolerances.stagnant_abs
    else:
        right_err, right_mode = abs(meas_right - pred_right) / abs(pred_right), "relative"
        right_ok = right_err <= tolerances.speed_rel

    if report.regime == "left_and_right":
        regime_match = meas_left < 0 < meas_right
    elif report.regime == "both_left":
        regime_match = meas_left < 0 and meas_right < 0
    else:
        regime_match = meas_left < 0 and abs(meas_right) <= tolerances.stagnant_abs

    rays = []
    rays_ok = True
    for p in probes:
        expected = _expected_side(p.c, report, tolerances.ray_edge_frac)
        ok = None if expected == "edge" else (p.verdict == expected)
        if ok is False:
            rays_ok = False
        rays.append({"c": p.c, "verdict": p.verdict, "expected": expected,
                     "ok": ok})

    passed = bool(left_rel <= tolerances.speed_rel and right_ok
                  and regime_match and rays_ok)
    return CompareRow(beta=report.beta, c1_star=report.c1_star,
                      c2_star=report.c2_star, left_speed=meas_left,
                      right_speed=meas_right, left_rel_err=left_rel,
                      right_err=right_err, right_err_mode=right_mode,
                      regime=report.regime, regime_match=bool(regime_match),
                      rays=tuple(rays), passed=passed)


def identity_checks(field, curves, gap, reports, tol, abel_tol, n_sample=8):
    """Structural residuals: mu gap, exit-weight cocycle mean, Wronskian
    determinant on sampled cells, and the speed ordering c1* > c2*."""
    k0, k1 = (int(curves["backward"].cell_window[0]),
              int(curves["backward"].cell_window[1]))
    mean_b = curves["backward"].mean_b

    table = cell_propagators(field, k0, k1 + 1, np.array([0.0]))
    logs = np.log(rho_from_table(table, np.arange(k0, k1))[0])
    cocycle = float(abs(logs.mean() + 2.0 * mean_b))

    ks = np.unique(np.linspace(k0, k1 - 1, n_sample).astype(int))
    eta_probe = 0.5 * curves["backward"].eta_c.estimate
    abel = max(abs(abel_residual(field, int(k), eta))
               for k in ks for eta in (0.0, eta_probe))

    if mean_b > 1e-9:
        ordering = all(r.c1_star > r.c2_star for r in reports)
    else:
        # a mean-zero field has no preferred side: the two speeds coincide
        # up to numerical error instead of being strictly ordered
        ordering = all(abs(r.c1_star - r.c2_star) <= tol for r in reports)

    checks = {
        "mu_gap": {"value": gap.max_abs, "tol": tol,
                   "passed": bool(gap.max_abs < tol and gap.domain_agreement)},
        "cocycle_mean": {"value": cocycle, "tol": tol,
                         "passed": bool(cocycle < tol)},
        "abel_residual": {"value": abel, "tol": abel_tol,
                          "passed": bool(abel < abel_tol)},
        "speed_ordering": {"value": 1.0 if ordering else 0.0, "tol": None,
                           "passed": bool(ordering)},
    }
    return _jsonable(checks)


def _stage_compare(config, ctx, out):
    tol = Tolerances.from_config(config)
    rows = []
    for beta, report, (res, probes) in zip(config.betas, ctx["reports"],
                                           ctx["runs"]):
        rows.append(compare(report, res.trace, probes, tol, beta=beta))
    identities = identity_checks(ctx["field"], ctx["curves"], ctx["gap"],
                                 ctx["reports"], config.identity_tol,
                                 config.abel_tol)
    passed = (all(r.passed for r in rows)
              and all(c["passed"] for c in identities.values()))
    verdict = Verdict(rows=tuple(rows), identities=identities,
                      passed=bool(passed))
    ctx["verdict"] = verdict
    (out / "verdict.json").write_text(verdict.to_json() + "\n")
    return ["verdict.json"]


_STAGE_FNS = {"drift": _stage_drift, "lyapunov": _stage_lyapunov,
              "ratefn": _stage_ratefn, "wavecast": _stage_wavecast,
              "pdefront": _stage_pdefront, "compare": _stage_compare}


# ---------------------------------------------------------------- pipeline


def run_pipeline(config):
    """Run the configured stage prefix; returns the artifact directory.

    A stage failure still writes the manifest for the stages that completed,
    so partial artifacts stay inspectable.
    """
    validate_config(config)
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_digest = _digest(config.as_dict())
    manifest = {"config": config.as_dict(), "config_digest": cfg_digest,
                "stages": {}}
    ctx = {}
    upstream = cfg_digest
    try:
        for name in config.stages:
            t0 = time.perf_counter()
            files = _STAGE_FNS[name](config, ctx, out)
            wall = time.perf_counter() - t0
            hashes = {f: _file_sha(out / f) for f in files}
            entry = {"inputs_hash": _digest({"config": cfg_digest,
                                             "upstream": upstream}),
                     "outputs_hash": _digest(hashes),
                     "files": hashes,
                     "wall_time_s": round(wall, 3)}
            manifest["stages"][name] = entry
            upstream = entry["outputs_hash"]
    finally:
        manifest["determinism_digest"] = _digest(
            {"config": manifest["config"],
             "stages": {n: {k: v for k, v in e.items() if k != "wall_time_s"}
                        for n, e in manifest["stages"].items()}})
        # no sort_keys: the stages mapping reads in execution order
        (out / "manifest.json").write_text(
            json.dumps(manifest, indent=2) + "\n")
    return out
