"""Command-line front end for the pipeline.

Each subcommand runs a prefix of the stage chain: gen-drift stops after
sampling the field, estimate-mu after the Lyapunov curves, rate after the
Legendre transform, predict after the speed/regime report, simulate-pde
after the PDE runs, and verify / all run everything through the comparison.
Flags mirror the config keys; a JSON config file supplies the base values
and explicit flags override it. verify and all exit 0 only if the verdict
passes.
"""

import argparse
import json
import sys
from pathlib import Path

from .orchestrator import STAGES, ExperimentConfig, run_pipeline

_DEPTH = {"gen-drift": 1, "estimate-mu": 2, "rate": 3, "predict": 4,
          "simulate-pde": 5, "verify": 6, "all": 6}

_HELP = {
    "gen-drift": "sample the drift field and write field.csv",
    "estimate-mu": "…and estimate both Lyapunov curves",
    "rate": "…and Legendre-transform them to rate functions",
    "predict": "…and solve the balance equation for speeds and regime",
    "simulate-pde": "…and run the PDE front simulations",
    "verify": "full pipeline; exit 0 iff the verdict passes",
    "all": "synonym for verify that also prints the artifact listing",
}


def _add_config_flags(sp):
    sp.add_argument("--config", type=Path, metavar="JSON",
                    help="config file; explicit flags override its values")
    sp.add_argument("--out-dir", dest="out_dir")
    sp.add_argument("--drift-kind", dest="drift_kind")
    sp.add_argument("--drift-params", dest="drift_params", metavar="JSON",
                    help='e.g. \'{"value": 0.5}\'')
    sp.add_argument("--drift-bound", dest="drift_bound", type=float)
    sp.add_argument("--window", nargs=2, type=float, metavar=("LO", "HI"))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--betas", nargs="+", type=float, metavar="BETA")
    sp.add_argument("--n-cells", dest="n_cells", type=int)
    sp.add_argument("--eta-n", dest="eta_n", type=int)
    sp.add_argument("--eta-lo", dest="eta_lo", type=float,
                    help="floor of the eta grid (default scales with E[b])")
    sp.add_argument("--mu-method", dest="mu_method",
                    choices=("bvp", "mc"))
    sp.add_argument("--n-paths", dest="n_paths", type=int)
    sp.add_argument("--dt-sde", dest="dt_sde", type=float)
    sp.add_argument("--n-a", dest="n_a", type=int)
    sp.add_argument("--dx", type=float)
    sp.add_argument("--dt", type=float)
    sp.add_argument("--t-end", dest="T_end", type=float)
    sp.add_argument("--out-every", dest="out_every", type=float)
    sp.add_argument("--speed-rel-tol", dest="speed_rel_tol", type=float)
    sp.add_argument("--identity-tol", dest="identity_tol", type=float)


def build_parser():
    p = argparse.ArgumentParser(
        prog="driftfront",
        description="front-speed predictions for reaction-diffusion in a "
                    "random drift, checked against direct simulation")
    sub = p.add_subparsers(dest="command", required=True)
    for name in _DEPTH:
        sp = sub.add_parser(name, help=_HELP[name])
        _add_config_flags(sp)
    return p


def config_from_args(args):
    base = {}
    if args.config is not None:
        base = json.loads(Path(args.config).read_text())
    for key in ExperimentConfig.__dataclass_fields__:
        val = getattr(args, key, None)
        if val is not None:
            base[key] = val
    if isinstance(base.get("drift_params"), str):
        base["drift_params"] = json.loads(base["drift_params"])
    base["stages"] = STAGES[:_DEPTH[args.command]]
    return ExperimentConfig.from_dict(base)


def _print_verdict(out_dir):
    doc = json.loads((Path(out_dir) / "verdict.json").read_text())
    for row in doc["rows"]:
        status = "pass" if row["passed"] else "FAIL"
        print(f"beta={row['beta']:g}: {status}  regime={row['regime']} "
              f"c1*={row['c1_star']:.4f} c2*={row['c2_star']:.4f} "
              f"measured=({row['left_speed']:.4f}, {row['right_speed']:.4f})")
    for name, chk in sorted(doc["identities"].items()):
        status = "pass" if chk["passed"] else "FAIL"
        print(f"identity {name}: {status}  value={chk['value']:.3g}")
    print("verdict:", "pass" if doc["passed"] else "FAIL")
    return doc["passed"]


def main(argv=None):
    args = build_parser().parse_args(argv)
    config = config_from_args(args)
    out = run_pipeline(config)
    if args.command == "all":
        for f in sorted(p.name for p in out.iterdir()):
            print(f)
    if args.command in ("verify", "all"):
        return 0 if _print_verdict(out) else 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
