"""Wave-speed laboratory for pulled reaction–diffusion fronts in random drift.

Predicts the spreading speeds of u_t = 1/2 u_xx + b(x) u_x + beta u(1-u) for a
stationary random drift b via hitting-time Lyapunov exponents, a Legendre
transform, and a speed/rate balance — then checks the predictions against a
direct PDE solve. Submodules: drift, transfer, montecarlo, lyapunov, ratefn,
wavecast, pdefront, orchestrator, cli.

The montecarlo module is imported lazily by consumers (its jit compilation is
not free), so this package root stays import-cheap.
"""

__version__ = "0.1.0"

__all__ = [
    "drift", "transfer", "montecarlo", "lyapunov",
    "ratefn", "wavecast", "pdefront", "orchestrator",
]
