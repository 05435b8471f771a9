"""Benchmark dynamical systems and numerical integration.

Two linear benchmarks (a 2x2 upper-triangular system and a 4x4 two-mode
oscillator, both with tunable non-normal coupling) and two mechanical
benchmarks (a 2-DOF oscillator chain with a cubic spring, and the same chain
mounted on a sprung cart). The linear ones come with closed-form solutions
used as oracles in the test suite; the mechanical ones are defined by their
mass/damping/stiffness matrices and a cubic nonlinearity.

Decaying and harmonically forced responses are generated with an adaptive
embedded Runge-Kutta 5(4) scheme with dense output, at tolerances tight
enough (rtol 1e-10, atol 1e-12) that integration error is negligible against
any downstream fitting error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .trajectory import Trajectory

DECAY_RTOL = 1e-10
DECAY_ATOL = 1e-12


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class LinearSystem:
    """Autonomous linear flow ``x' = A x`` with an asymptotically stable origin."""

    matrix: np.ndarray

    def __post_init__(self):
        a = _readonly(self.matrix)
        object.__setattr__(self, "matrix", a)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError(f"system matrix must be square, got {a.shape}")
        eig = np.linalg.eigvals(a)
        if np.any(eig.real >= 0):
            raise ValueError(f"unstable system: eigenvalue with Re >= 0 found ({eig})")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def first_order_matrix(self) -> np.ndarray:
        return self.matrix

    def nonlinear(self, x: np.ndarray) -> np.ndarray:
        return np.zeros_like(x)


@dataclass(frozen=True)
class MechanicalSystem:
    """Second-order system ``M y'' + C y' + K y + f_nl = 0`` with one cubic term.

    The cubic enters the first-order realization ``x' = A x + F_nl(x)`` as
    ``F_nl(x) = cubic_coeff * cubic_pattern * x[cubic_index]**3``, where
    ``cubic_pattern`` already contains any mass scaling. ``fnl_pattern``, when
    present, is the second-order force pattern (``f_nl = cubic_coeff *
    fnl_pattern * y[cubic_index]**3``) the first-order term was derived from.
    """

    mass: np.ndarray
    damping: np.ndarray
    stiffness: np.ndarray
    cubic_coeff: float
    cubic_index: int
    cubic_pattern: np.ndarray  # (2m,)
    fnl_pattern: np.ndarray | None = None  # (m,)

    def __post_init__(self):
        m = _readonly(self.mass)
        c = _readonly(self.damping)
        k = _readonly(self.stiffness)
        pat = _readonly(self.cubic_pattern)
        object.__setattr__(self, "mass", m)
        object.__setattr__(self, "damping", c)
        object.__setattr__(self, "stiffness", k)
        object.__setattr__(self, "cubic_pattern", pat)
        if self.fnl_pattern is not None:
            object.__setattr__(self, "fnl_pattern", _readonly(self.fnl_pattern))
        n_dof = m.shape[0]
        for name, mat in (("mass", m), ("damping", c), ("stiffness", k)):
            if mat.shape != (n_dof, n_dof):
                raise ValueError(f"{name} matrix must be {n_dof}x{n_dof}")
        if abs(np.linalg.det(m)) < 1e-12:
            raise ValueError("mass matrix is singular")
        if pat.shape != (2 * n_dof,):
            raise ValueError(f"cubic_pattern must have length {2 * n_dof}")
        if not 0 <= self.cubic_index < 2 * n_dof:
            raise ValueError("cubic_index out of range")

    @property
    def n_dof(self) -> int:
        return self.mass.shape[0]

    @property
    def dim(self) -> int:
        return 2 * self.n_dof

    def first_order_matrix(self) -> np.ndarray:
        m = self.n_dof
        minv = np.linalg.inv(self.mass)
        a = np.zeros((2 * m, 2 * m))
        a[:m, m:] = np.eye(m)
        a[m:, :m] = -minv @ self.stiffness
        a[m:, m:] = -minv @ self.damping
        return a

    def nonlinear(self, x: np.ndarray) -> np.ndarray:
        return self.cubic_coeff * self.cubic_pattern * x[self.cubic_index] ** 3

    def f_nl(self, y: np.ndarray) -> np.ndarray:
        """Second-order nonlinear force at displacement y (where defined)."""
        if self.fnl_pattern is None:
            raise ValueError("this system defines its cubic directly in first-order form")
        return self.cubic_coeff * self.fnl_pattern * y[self.cubic_index] ** 3

    def mass_forcing_direction(self, force_pattern: np.ndarray) -> np.ndarray:
        """First-order (mass-normalized) direction of a per-mass force pattern."""
        g = np.asarray(force_pattern, dtype=float)
        if g.shape != (self.n_dof,):
            raise ValueError(f"force pattern must have length {self.n_dof}")
        return np.concatenate([np.zeros(self.n_dof), np.linalg.solve(self.mass, g)])

    def energy(self, x: np.ndarray) -> float:
        """Mechanical energy 0.5 v'Mv + 0.5 y'Ky of a first-order state (linear part only)."""
        m = self.n_dof
        y, v = x[:m], x[m:]
        return 0.5 * float(v @ self.mass @ v + y @ self.stiffness @ y)


@dataclass(frozen=True)
class HarmonicForcing:
    """Additive forcing ``amplitude * direction * cos(frequency * t)`` on the first-order states."""

    direction: np.ndarray
    amplitude: float
    frequency: float

    def __post_init__(self):
        object.__setattr__(self, "direction", _readonly(self.direction))
        if self.amplitude < 0:
            raise ValueError("forcing amplitude must be nonnegative")
        if self.frequency <= 0:
            raise ValueError("forcing frequency must be positive")


def linear_2d(alpha: float, beta: float, delta: float) -> LinearSystem:
    """Two real decay rates with upper-triangular coupling delta.

    Eigenvectors are (1, 0) and (delta/(alpha-beta), 1); for delta != 0 the
    slow and fast directions are not orthogonal.
    """
    if not beta > alpha > 0:
        raise ValueError(f"need beta > alpha > 0, got alpha={alpha}, beta={beta}")
    return LinearSystem(np.array([[-alpha, delta], [0.0, -beta]]))


def linear_4d(
    alpha: float,
    beta: float,
    omega: float,
    nu: float,
    coupling: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0),
) -> LinearSystem:
    """Two damped oscillatory modes; the 2x2 coupling block tilts slow against fast."""
    if not beta > alpha > 0:
        raise ValueError(f"need beta > alpha > 0, got alpha={alpha}, beta={beta}")
    a, b, c, d = coupling
    return LinearSystem(
        np.array(
            [
                [-alpha, -omega, a, b],
                [omega, -alpha, c, d],
                [0.0, 0.0, -beta, -nu],
                [0.0, 0.0, nu, -beta],
            ]
        )
    )


def shaw_pierre(
    m1: float = 1.0,
    m2: float = 1.0,
    c1: float = 0.05,
    c2: float = 0.01,
    k1: float = 1.0,
    k2: float = 3.325,
    alpha: float = 0.5,
) -> MechanicalSystem:
    """Two-mass oscillator chain with a wall damper and a cubic spring on mass 1.

    Observed in the relative coordinates (y1, y2) = (q1, q2 - q1); the default
    parameters put the slow mode at -0.025 +/- 0.9997i and the fast mode at
    -0.035 +/- 2.7656i. The cubic acts on the y1'' row of the first-order
    system as -alpha/m1 * y1^3 (hardening).
    """
    mass = np.array([[m1, 0.0], [m2, m2]])
    damping = np.array([[c1, -c2], [c1, c1 + c2]])
    stiffness = np.array([[k1, -k2], [k1, k1 + k2]])
    pattern = np.array([0.0, 0.0, -1.0 / m1, 0.0])
    return MechanicalSystem(mass, damping, stiffness, alpha, 0, pattern)


def shaw_pierre_cart(
    m1: float = 1.0,
    m2: float = 1.0,
    mf: float = 1.0,
    c1: float = 0.05,
    c2: float = 0.01,
    cf: float = 0.01,
    k1: float = 1.0,
    k2: float = 3.325,
    kf: float = 33.25,
    alpha: float = 0.5,
) -> MechanicalSystem:
    """The oscillator chain of :func:`shaw_pierre` mounted on a sprung, damped cart.

    Coordinates are (y1, y2, xf): relative mass displacements plus the
    absolute cart position. Default parameters give eigenvalues
    -0.022 +/- 0.97i, -0.035 +/- 2.77i and -0.059 +/- 5.94i. The cubic force
    pattern is (alpha*y1^3, 0, -alpha*y1^3) in second-order form.
    """
    mass = np.array([[m1, 0.0, m1], [m2, m2, m2], [0.0, 0.0, mf]])
    damping = np.array([[c1, -c2, 0.0], [c1, c1 + c2, 0.0], [-2 * c1, -c1, cf]])
    stiffness = np.array([[k1, -k2, 0.0], [k1, k1 + k2, 0.0], [-2 * k1, -k1, kf]])
    fnl_pattern = np.array([1.0, 0.0, -1.0])
    first_order = np.concatenate([np.zeros(3), -np.linalg.solve(mass, fnl_pattern)])
    return MechanicalSystem(mass, damping, stiffness, alpha, 0, first_order, fnl_pattern)


def _flow(system):
    """(A, F_nl, n) triple of a benchmark system."""
    a = system.first_order_matrix()
    return a, system.nonlinear, a.shape[0]


def _output_grid(t_end: float, dt_out: float) -> np.ndarray:
    if dt_out <= 0 or t_end <= 0:
        raise ValueError("t_end and dt_out must be positive")
    n = int(np.floor(t_end / dt_out + 1e-9)) + 1
    if n < 2:
        raise ValueError("t_end must cover at least one output step")
    return np.arange(n) * dt_out


def simulate_decay(system, x0, t_end: float, dt_out: float) -> Trajectory:
    """Integrate the unforced system from x0, sampled uniformly at dt_out.

    Deterministic: identical inputs produce bitwise identical outputs.
    """
    a, fnl, n = _flow(system)
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (n,):
        raise ValueError(f"initial state must have length {n}")
    times = _output_grid(t_end, dt_out)

    def rhs(t, x):
        return a @ x + fnl(x)

    sol = solve_ivp(
        rhs,
        (0.0, float(times[-1])),
        x0,
        method="RK45",
        rtol=DECAY_RTOL,
        atol=DECAY_ATOL,
        dense_output=True,
    )
    if not sol.success:
        raise RuntimeError(f"integration failed: {sol.message}")
    labels = tuple(f"x{i + 1}" for i in range(n))
    return Trajectory(times, sol.sol(times), labels)


def _linear_steady_state(a: np.ndarray, forcing: HarmonicForcing) -> np.ndarray:
    """State at t=0 of the harmonic steady response of the linearized system."""
    n = a.shape[0]
    zhat = np.linalg.solve(
        1j * forcing.frequency * np.eye(n) - a, forcing.amplitude * forcing.direction
    )
    return zhat.real


def _forced_run(
    system,
    forcing: HarmonicForcing,
    observable_index: int,
    settle_periods: int,
    measure_periods: int,
    x0=None,
    drift_tol: float = 0.01,
    max_windows: int = 50,
    rtol: float = 1e-9,
    atol: float = 1e-12,
):
    """Steady response (amplitude, phase, final state) under harmonic forcing.

    Amplitude is half the peak-to-peak steady response of the chosen
    observable; the phase is the fundamental Fourier phase relative to the
    cos(Omega t) drive. Steadiness means the window-to-window amplitude drift
    fell below ``drift_tol``.
    """
    a, fnl, n = _flow(system)
    omega = forcing.frequency
    period = 2.0 * np.pi / omega
    drive = forcing.amplitude * forcing.direction
    if x0 is None:
        # Starting on the linearized steady orbit shortens the transient.
        x0 = _linear_steady_state(a, forcing)
    x0 = np.asarray(x0, dtype=float)

    def rhs(t, x):
        return a @ x + fnl(x) + drive * np.cos(omega * t)

    def integrate(x_start, t_start, t_stop, dense):
        sol = solve_ivp(
            rhs,
            (t_start, t_stop),
            x_start,
            method="RK45",
            rtol=rtol,
            atol=atol,
            dense_output=dense,
        )
        if not sol.success:
            raise RuntimeError(f"forced integration failed: {sol.message}")
        return sol

    t = 0.0
    x = x0
    if settle_periods > 0:
        sol = integrate(x, t, t + settle_periods * period, dense=False)
        t = sol.t[-1]
        x = sol.y[:, -1]

    samples_per_period = 256
    prev_amp = None
    for _ in range(max_windows):
        t_next = t + measure_periods * period
        sol = integrate(x, t, t_next, dense=True)
        grid = np.linspace(t, t_next, measure_periods * samples_per_period, endpoint=False)
        sig = sol.sol(grid)[observable_index]
        amp = 0.5 * (sig.max() - sig.min())
        # Fundamental Fourier coefficient over an integer number of periods.
        coeff = 2.0 * np.mean(sig * np.exp(-1j * omega * grid))
        phase = float(np.angle(coeff))
        x = sol.y[:, -1]
        t = t_next
        if prev_amp is not None:
            scale = max(abs(prev_amp), 1e-300)
            if abs(amp - prev_amp) / scale <= drift_tol or amp < 1e-14:
                return float(amp), phase, x
        prev_amp = amp
    raise RuntimeError(
        f"steady state not reached: amplitude still drifting more than "
        f"{drift_tol:.0%} after {max_windows} measurement windows"
    )


def simulate_forced_steady_amplitude(
    system,
    forcing: HarmonicForcing,
    observable_index: int,
    settle_periods: int = 20,
    measure_periods: int = 4,
    x0=None,
) -> tuple[float, float]:
    """Steady-state amplitude and phase of one observable under harmonic forcing."""
    amp, phase, _ = _forced_run(
        system, forcing, observable_index, settle_periods, measure_periods, x0=x0
    )
    return amp, phase


def forced_sweep(
    system,
    direction: np.ndarray,
    amplitude: float,
    omegas: np.ndarray,
    observable_index: int,
    settle_periods: int = 20,
    measure_periods: int = 4,
) -> tuple[np.ndarray, np.ndarray]:
    """Steady amplitude/phase across a frequency sweep with state continuation.

    The final state at each frequency seeds the next one (as a stepped-sine
    experiment would), which keeps the response on a consistent branch across
    folds and shortens transients.
    """
    omegas = np.asarray(omegas, dtype=float)
    amps = np.empty_like(omegas)
    phases = np.empty_like(omegas)
    x = None
    for i, om in enumerate(omegas):
        forcing = HarmonicForcing(direction, amplitude, float(om))
        amps[i], phases[i], x = _forced_run(
            system, forcing, observable_index, settle_periods, measure_periods, x0=x
        )
    return amps, phases
