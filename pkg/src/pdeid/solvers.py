"""Noise-free dataset generation: periodic pseudo-spectral ETDRK4 solvers
for the four time-stepped equations, plus the closed-form 2D wave field.

Space is discretized with N equally spaced points on [x_lo, x_hi) and
differentiated in Fourier space; time uses the ETDRK4 scheme with the phi
functions evaluated by a 32-point contour mean, which stays stable for both
dissipative (real) and dispersive (imaginary) linear symbols. Quadratic
nonlinearities are dealiased with the 2/3 rule, the cubic one with the 1/4
rule; the spectral state is kept projected onto the dealiased band
throughout.

Output grids follow the source-data convention: periodic domains store the
duplicated endpoint (the value at x_hi copies x_lo), so a 257-line axis has
256 unique points. The internal mode count must be a multiple of the unique
count; presets use refined internal grids where the output resolution alone
cannot hold spectral tails below the self-convergence gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .data import GridDataset, ProblemDomain
from .errors import ConfigError, NumericalError

WAVE_DOMAIN = ProblemDomain(10.0, (-5.0, -5.0), (5.0, 5.0))

_CONTOUR_POINTS = 32


def _advection(u, k, coeff):
    return coeff * (-0.5j) * k * np.fft.fft(u * u)


class _Equation:
    def __init__(self, t_max, x_lo, x_hi, n_out_x, n_out_t, n_modes,
                 substeps, params, ics, default_ic, linear, nonlinear_hat,
                 residual_rhs, cubic=False):
        self.t_max = t_max
        self.x_lo = x_lo
        self.x_hi = x_hi
        self.n_out_x = n_out_x
        self.n_out_t = n_out_t
        self.n_modes = n_modes
        self.substeps = substeps
        self.params = params
        self.ics = ics
        self.default_ic = default_ic
        self.linear = linear
        self.nonlinear_hat = nonlinear_hat
        self.residual_rhs = residual_rhs
        self.cubic = cubic


def _dx(u_hat, k, order):
    return np.real(np.fft.ifft((1j * k) ** order * u_hat, axis=-1))


def _burgers_rhs(u, k, p):
    u_hat = np.fft.fft(u, axis=-1)
    return p["nu"] * _dx(u_hat, k, 2) - u * _dx(u_hat, k, 1)


def _kdv_rhs(u, k, p):
    u_hat = np.fft.fft(u, axis=-1)
    return -u * _dx(u_hat, k, 1) - _dx(u_hat, k, 3)


def _ks_rhs(u, k, p):
    u_hat = np.fft.fft(u, axis=-1)
    return (p["nu"] * _dx(u_hat, k, 2) - p["mu"] * _dx(u_hat, k, 4)
            - p["lam"] * u * _dx(u_hat, k, 1))


def _allen_cahn_rhs(u, k, p):
    u_hat = np.fft.fft(u, axis=-1)
    return p["eps"] * _dx(u_hat, k, 2) - u ** 3 + u


EQUATIONS = {
    "burgers": _Equation(
        t_max=10.0, x_lo=-8.0, x_hi=8.0, n_out_x=257, n_out_t=201,
        n_modes=512, substeps=10, params={"nu": 0.1},
        ics={"sine": lambda x: -np.sin(np.pi * x / 8.0)},
        default_ic="sine",
        linear=lambda k, p: -p["nu"] * k ** 2,
        nonlinear_hat=lambda u, k, p: _advection(u, k, 1.0),
        residual_rhs=_burgers_rhs),
    "kdv": _Equation(
        t_max=40.0, x_lo=-20.0, x_hi=20.0, n_out_x=257, n_out_t=201,
        n_modes=512, substeps=100, params={},
        ics={"sine": lambda x: -np.sin(np.pi * x / 20.0),
             "exp_cos": lambda x: (np.exp(-np.pi * (x / 30.0) ** 2)
                                   * np.cos(np.pi * x / 10.0))},
        default_ic="sine",
        linear=lambda k, p: 1j * k ** 3,
        nonlinear_hat=lambda u, k, p: _advection(u, k, 1.0),
        residual_rhs=_kdv_rhs),
    "ks": _Equation(
        t_max=5.0, x_lo=-5.0, x_hi=5.0, n_out_x=256, n_out_t=201,
        n_modes=510, substeps=10, params={"nu": -1.0, "mu": 1.0, "lam": 1.0},
        ics={"cos_sine": lambda x: (np.cos(2.0 * np.pi * x / 5.0)
                                    * (1.0 + np.sin(np.pi * x / 5.0)))},
        default_ic="cos_sine",
        linear=lambda k, p: -p["nu"] * k ** 2 - p["mu"] * k ** 4,
        nonlinear_hat=lambda u, k, p: _advection(u, k, p["lam"]),
        residual_rhs=_ks_rhs),
    "allen_cahn": _Equation(
        t_max=40.0, x_lo=-20.0, x_hi=20.0, n_out_x=257, n_out_t=201,
        n_modes=2048, substeps=10, params={"eps": 0.003},
        ics={"sine_mix": lambda x: (-0.2 * np.sin(2.0 * np.pi * x) ** 5
                                    + 0.8 * np.sin(5.0 * np.pi * x))},
        default_ic="sine_mix",
        linear=lambda k, p: -p["eps"] * k ** 2 + 1.0,
        nonlinear_hat=lambda u, k, p: -np.fft.fft(u ** 3),
        residual_rhs=_allen_cahn_rhs,
        cubic=True),
}


@dataclass(frozen=True)
class SolverConfig:
    equation: str
    ic: str
    t_max: float
    x_lo: float
    x_hi: float
    n_out_x: int
    n_out_t: int
    n_modes: int
    substeps: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.equation not in EQUATIONS:
            raise ConfigError(f"unknown equation {self.equation!r}; valid: "
                              + ", ".join(sorted(EQUATIONS)))
        eq = EQUATIONS[self.equation]
        if self.ic not in eq.ics:
            raise ConfigError(f"unknown initial condition {self.ic!r} for "
                              f"{self.equation}; valid: "
                              + ", ".join(sorted(eq.ics)))
        if self.x_lo >= self.x_hi or self.t_max <= 0:
            raise ConfigError("empty solver domain")
        if self.n_out_t < 5 or self.n_out_x < 3:
            raise ConfigError("output grid too small")
        if self.substeps < 1:
            raise ConfigError("substeps must be >= 1")
        unique = self.n_out_x - 1
        if self.n_modes % unique != 0:
            raise ConfigError(f"internal mode count {self.n_modes} must be "
                              f"a multiple of the {unique} unique output "
                              "points")
        for key, value in self.params.items():
            if not math.isfinite(value):
                raise ConfigError(f"parameter {key} = {value} is not finite")


def preset(equation, ic=None, **overrides):
    """Pinned configuration reproducing the shipped dataset for an equation."""
    if equation not in EQUATIONS:
        raise ConfigError(f"unknown equation {equation!r}; valid: "
                          + ", ".join(sorted(EQUATIONS)))
    eq = EQUATIONS[equation]
    cfg = SolverConfig(equation=equation, ic=ic or eq.default_ic,
                       t_max=eq.t_max, x_lo=eq.x_lo, x_hi=eq.x_hi,
                       n_out_x=eq.n_out_x, n_out_t=eq.n_out_t,
                       n_modes=eq.n_modes, substeps=eq.substeps,
                       params=dict(eq.params))
    return replace(cfg, **overrides) if overrides else cfg


def _phi_tables(lin, dt):
    """ETDRK4 coefficient vectors via a contour mean around each dt*lin."""
    theta = 2j * np.pi * (np.arange(_CONTOUR_POINTS) + 0.5) / _CONTOUR_POINTS
    r = np.exp(theta)
    LR = dt * lin.astype(np.complex128)[:, None] + r[None, :]
    with np.errstate(over="ignore", invalid="ignore"):
        E = np.exp(dt * lin)
        E2 = np.exp(dt * lin / 2.0)
        eLR = np.exp(LR)
        Q = dt * np.mean((np.exp(LR / 2.0) - 1.0) / LR, axis=1)
        f1 = dt * np.mean(
            (-4.0 - LR + eLR * (4.0 - 3.0 * LR + LR ** 2)) / LR ** 3, axis=1)
        f2 = dt * np.mean(
            (2.0 + LR + eLR * (-2.0 + LR)) / LR ** 3, axis=1)
        f3 = dt * np.mean(
            (-4.0 - 3.0 * LR - LR ** 2 + eLR * (4.0 - LR)) / LR ** 3, axis=1)
    return E, E2, Q, f1, f2, f3


def solve(config):
    """Integrate the configured equation; returns the output GridDataset."""
    eq = EQUATIONS[config.equation]
    params = {**eq.params, **config.params}
    N = config.n_modes
    span = config.x_hi - config.x_lo
    x = config.x_lo + span * np.arange(N) / N
    k = 2.0 * np.pi * np.fft.fftfreq(N, d=span / N)
    mode = np.rint(np.fft.fftfreq(N) * N).astype(int)
    cutoff = N // 4 if eq.cubic else N // 3
    mask = np.abs(mode) <= cutoff
    lin = eq.linear(k, params)

    dt_out = config.t_max / (config.n_out_t - 1)
    dt = dt_out / config.substeps
    E, E2, Q, f1, f2, f3 = _phi_tables(lin, dt)

    def g(v_hat):
        u = np.real(np.fft.ifft(v_hat))
        return mask * eq.nonlinear_hat(u, k, params)

    v = mask * np.fft.fft(eq.ics[config.ic](x))
    rows = np.empty((config.n_out_t, N))
    rows[0] = np.real(np.fft.ifft(v))
    t_axis = np.linspace(0.0, config.t_max, config.n_out_t)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, config.n_out_t):
            for _ in range(config.substeps):
                Nv = g(v)
                a = E2 * v + Q * Nv
                Na = g(a)
                b = E2 * v + Q * Na
                Nb = g(b)
                c = E2 * a + Q * (2.0 * Nb - Nv)
                Nc = g(c)
                v = E * v + Nv * f1 + 2.0 * (Na + Nb) * f2 + Nc * f3
            rows[i] = np.real(np.fft.ifft(v))
            if not np.all(np.isfinite(rows[i])):
                raise NumericalError(
                    f"{config.equation} solution became non-finite at "
                    f"t = {t_axis[i]:.6g}")

    stride = N // (config.n_out_x - 1)
    x_axis = np.concatenate([x[::stride], [config.x_hi]])
    values = np.concatenate([rows[:, ::stride], rows[:, :1]], axis=1)
    metadata = {"equation": config.equation, "ic": config.ic,
                "params": params, "n_modes": N,
                "substeps": config.substeps}
    return GridDataset([t_axis, x_axis], values, metadata)


def self_convergence_rms(config):
    """RMS change of the final-time output row under doubling the modes and
    halving the time step."""
    coarse = solve(config)
    fine = solve(replace(config, n_modes=2 * config.n_modes,
                         substeps=2 * config.substeps))
    diff = coarse.values[-1] - fine.values[-1]
    return float(np.sqrt(np.mean(diff ** 2)))


def grid_residual(grid, duplicate_endpoint=True):
    """Residual of a solver grid against its own PDE.

    Spatial derivatives are spectral on the unique periodic columns; the
    time derivative uses 4th-order central differences, so the result covers
    interior time rows only (shape (n_t - 4, unique columns)).
    """
    name = grid.metadata.get("equation")
    if name not in EQUATIONS:
        raise ConfigError(f"grid metadata names unknown equation {name!r}")
    eq = EQUATIONS[name]
    params = {**eq.params, **grid.metadata.get("params", {})}
    u = grid.values[:, :-1] if duplicate_endpoint else grid.values
    n_unique = u.shape[1]
    x_axis = grid.axes[1]
    span = (x_axis[-1] - x_axis[0]) if duplicate_endpoint else \
        (x_axis[-1] - x_axis[0]) * n_unique / (n_unique - 1)
    k = 2.0 * np.pi * np.fft.fftfreq(n_unique, d=span / n_unique)
    dt = float(grid.axes[0][1] - grid.axes[0][0])
    u_t = (u[:-4] - 8.0 * u[1:-3] + 8.0 * u[3:-1] - u[4:]) / (12.0 * dt)
    return u_t - eq.residual_rhs(u[2:-2], k, params)


def residual_ratio(grid, **kwargs):
    res = grid_residual(grid, **kwargs)
    return float(np.sqrt(np.mean(res ** 2))
                 / np.sqrt(np.mean(grid.values ** 2)))


def wave_analytic(points):
    """u(t,x,y) = -sin(t-x) + exp(0.05 (t-x-y)) + sin(t-y), elementwise."""
    points = np.asarray(points, dtype=np.float64)
    t, x, y = points[..., 0], points[..., 1], points[..., 2]
    return (-np.sin(t - x) + np.exp(0.05 * (t - x - y)) + np.sin(t - y))
