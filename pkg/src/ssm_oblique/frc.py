"""Backbone and forced-response prediction from the polar reduced model.

At fixed forcing (modal amplitude f, frequency Omega), steady states of the
slow-phase averaged dynamics satisfy

    a(rho)^2 + rho^2 (omega(rho) - Omega)^2 = f^2,

whose real roots in rho give the forced-response branches; the backbone is
the f -> 0 locus (Omega = omega(rho)). Reduced amplitudes map to observable
units through the manifold parametrization: the reported amplitude is the
per-period maximum of the readout along the reduced periodic orbit, matching
how the brute-force oracle measures (half peak-to-peak of a centered
signal). Stability follows from the 2x2 Jacobian of the averaged system.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import BackboneCurve
from .ssm import SsmModel
from .systems import LinearSystem, MechanicalSystem

RESIDUAL_RTOL = 1e-10


def _readonly(a) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FrcBranch:
    """Forced-response points at one modal forcing amplitude, ordered by Omega."""

    forcing_amplitude: float
    omega: np.ndarray  # rad/s
    rho: np.ndarray  # reduced (polar) amplitude
    amplitude: np.ndarray  # observable units
    phase: np.ndarray  # rad, in (-pi, 0)
    stable: np.ndarray  # bool

    def __post_init__(self):
        for name in ("omega", "rho", "amplitude", "phase"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "stable", _readonly(np.asarray(self.stable, dtype=bool)))
        if np.any(np.diff(self.omega) < 0):
            raise ValueError("FRC points must be ordered by forcing frequency")
        if np.any(self.amplitude < 0):
            raise ValueError("FRC amplitudes must be nonnegative")

    def __len__(self) -> int:
        return self.omega.size


def observable_amplitude(model: SsmModel, rho, n_phase: int = 256) -> np.ndarray:
    """Per-period maximum of the readout of h along the reduced orbit of radius rho."""
    if model.polar is None:
        raise ValueError("model has no polar form")
    rhos = np.atleast_1d(np.asarray(rho, dtype=float))
    out = np.empty_like(rhos)
    for i, r in enumerate(rhos):
        if r == 0.0:
            out[i] = 0.0
            continue
        orbit = model.polar.orbit(float(r), n_phase)
        out[i] = np.max(np.abs(model.readout @ model.parametrization(orbit)))
    return out if np.ndim(rho) else out[0]


def backbone_from_model(model: SsmModel, rho_max: float, n_rho: int = 200) -> BackboneCurve:
    """Backbone curve (omega(rho), observable amplitude) of the polar reduced model.

    Points are emitted from large to small amplitude, mimicking a decaying
    signal; the time stamps are synthetic ordinals.
    """
    if model.polar is None:
        raise ValueError("model has no polar form")
    if rho_max <= 0:
        raise ValueError("rho_max must be positive")
    rhos = np.linspace(rho_max, rho_max / n_rho, n_rho)
    freqs = model.polar.frequency(rhos)
    amps = observable_amplitude(model, rhos)
    return BackboneCurve(freqs, amps, np.arange(n_rho, dtype=float))


def _steady_phase(a_val: float, rho: float, detune: float) -> float:
    """Observable phase relative to the cos drive; crosses -pi/2 at resonance."""
    return float(np.arctan2(rho * detune, -a_val) - 0.5 * np.pi)


def _is_stable(polar, rho: float, detune: float) -> bool:
    a_val = float(polar.decay_rate(rho))
    a_slope = float(polar.decay_rate_slope(rho))
    w_slope = float(polar.frequency_slope(rho))
    trace = a_slope + a_val / rho
    det = a_slope * a_val / rho + rho * detune * w_slope + detune**2
    return trace < 0.0 and det > 0.0


def _bisect(fun, lo: float, hi: float, f_lo: float, tol: float) -> float:
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        f_mid = fun(mid)
        if f_mid == 0.0 or (hi - lo) < tol:
            return mid
        if (f_lo < 0) == (f_mid < 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def frc_analytic(
    model: SsmModel,
    f_values,
    omega_range: tuple[float, float],
    n_points: int,
    rho_points: int = 2000,
    rho_max: float | None = None,
) -> list[FrcBranch]:
    """Forced-response branches of the polar model for each modal amplitude.

    For every (f, Omega) the steady-state equation is solved for rho by
    bracketing on a dense grid up to ``rho_max`` (default 1.5x the training
    amplitude) plus bisection; all real roots are kept, so folds produce the
    multi-valued branch structure. Frequencies without a root contribute no
    point. Fails when the radial dynamics a(rho) are not strictly decaying
    on the grid, in which case the model cannot support an FRC.
    """
    if model.polar is None:
        raise ValueError("model has no polar form")
    polar = model.polar
    if rho_max is None:
        rho_max = 1.5 * model.rho_max
    if rho_max <= 0:
        raise ValueError("rho_max must be positive (is the model fitted?)")
    rhos = np.linspace(rho_max / rho_points, rho_max, rho_points)
    a_vals = polar.decay_rate(rhos)
    if np.any(a_vals >= 0):
        bad = rhos[np.argmax(a_vals >= 0)]
        raise ValueError(
            f"radial dynamics lose stability at rho = {bad:.4g}; model invalid for FRC"
        )
    omegas = np.linspace(omega_range[0], omega_range[1], n_points)
    w_vals = polar.frequency(rhos)

    branches = []
    for f in f_values:
        f = float(f)
        if f < 0:
            raise ValueError("modal forcing amplitudes must be nonnegative")
        pts = []  # (omega, rho)
        if f == 0.0:
            pts = [(float(om), 0.0) for om in omegas]
        else:
            for om in omegas:
                g_vals = a_vals**2 + rhos**2 * (w_vals - om) ** 2 - f**2

                def g(r, _om=om):
                    return float(
                        polar.decay_rate(r) ** 2 + r**2 * (polar.frequency(r) - _om) ** 2 - f**2
                    )

                if g_vals[0] < 0:  # root below the first grid node
                    pts.append((float(om), _bisect(g, 1e-16, float(rhos[0]), g(1e-16), 1e-14 * rho_max)))
                hit = np.nonzero(g_vals == 0.0)[0]
                for i in hit:
                    pts.append((float(om), float(rhos[i])))
                sign_change = np.nonzero(g_vals[:-1] * g_vals[1:] < 0)[0]
                for i in sign_change:
                    root = _bisect(
                        g, float(rhos[i]), float(rhos[i + 1]), float(g_vals[i]), 1e-14 * rho_max
                    )
                    pts.append((float(om), root))
        omega_arr = np.array([p[0] for p in pts])
        rho_arr = np.array([p[1] for p in pts])
        amp_arr = np.zeros_like(rho_arr)
        phase_arr = np.zeros_like(rho_arr)
        stable_arr = np.ones(rho_arr.size, dtype=bool)
        for i, (om, r) in enumerate(pts):
            if r == 0.0:
                phase_arr[i] = -0.5 * np.pi
                continue
            detune = float(polar.frequency(r)) - om
            amp_arr[i] = observable_amplitude(model, r)
            phase_arr[i] = _steady_phase(float(polar.decay_rate(r)), r, detune)
            stable_arr[i] = _is_stable(polar, r, detune)
            residual = abs(polar.decay_rate(r) ** 2 + r**2 * detune**2 - f**2)
            if residual > RESIDUAL_RTOL * f**2:
                raise RuntimeError(
                    f"FRC root failed residual check: {residual:.3e} > {RESIDUAL_RTOL} * f^2"
                )
        branches.append(
            FrcBranch(f, omega_arr, rho_arr, amp_arr, phase_arr, stable_arr)
        )
    return branches


@dataclass(frozen=True)
class EmbeddedObservable:
    """Delay-embedded scalar observable: which state row, how many copies, at what spacing."""

    state_row: int
    dim: int
    lag: int
    dt: float

    def to_dict(self) -> dict:
        return {"state_row": self.state_row, "dim": self.dim, "lag": self.lag, "dt": self.dt}

    @classmethod
    def from_dict(cls, d: dict) -> "EmbeddedObservable":
        return cls(d["state_row"], d["dim"], d["lag"], d["dt"])


def _modal_weight(model: SsmModel) -> np.ndarray:
    """Complex row mapping reduced coordinates to the rotating modal variable w."""
    t_inv = np.linalg.inv(model.polar.transform)
    return t_inv[0] + 1j * t_inv[1]


def calibrate_forcing(
    model: SsmModel,
    system,
    force_pattern,
    amplitude: float,
    embedding: EmbeddedObservable | None = None,
) -> float:
    """Modal forcing amplitude equivalent to a physical harmonic force.

    The physical force enters the first-order dynamics along a direction
    vector (for mechanical systems, a per-mass pattern is mass-normalized
    into the velocity rows). Its slow-modal content is the component of the
    projected direction along the rotating eigendirection of the reduced
    model; the factor 1/2 converts the cos drive into the rotating-frame
    amplitude that the steady-state equation of :func:`frc_analytic` expects.

    For a delay-embedded model the direction must first be expressed in
    embedding space, which is done through the linearized transfer response
    of the scalar observable at the model's resonant frequency.

    A force aligned with the projector kernel has zero modal content and
    calibrates to f = 0.
    """
    if model.polar is None:
        raise ValueError("model has no polar form")
    if amplitude < 0:
        raise ValueError("physical amplitude must be nonnegative")
    pattern = np.asarray(force_pattern, dtype=float)
    if isinstance(system, MechanicalSystem) and pattern.shape == (system.n_dof,):
        direction = system.mass_forcing_direction(pattern)
    else:
        direction = pattern
    a_mat = system.first_order_matrix()
    if direction.shape != (a_mat.shape[0],):
        raise ValueError(
            f"force direction must have length {a_mat.shape[0]}, got {direction.shape}"
        )
    e_row = _modal_weight(model)
    lam = complex(model.polar.radial[0], model.polar.angular[0])
    omega_res = model.polar.angular[0]

    if embedding is None:
        if model.projector.n_observables != a_mat.shape[0]:
            raise ValueError("model and system do not share observables; pass an embedding")
        gamma = e_row @ model.reduce(direction)
    else:
        # Steady linear response of the scalar observable at resonance,
        # replicated at the embedding delays.
        resp = np.linalg.solve(
            1j * omega_res * np.eye(a_mat.shape[0]) - a_mat, direction
        )
        scalar = resp[embedding.state_row]
        z = scalar * np.exp(
            1j * omega_res * embedding.lag * embedding.dt * np.arange(embedding.dim)
        )
        u = model.subspace.Q_tilde.T @ (model.projector.P @ z)
        gamma = abs(1j * omega_res - lam) * (e_row @ u)
    return float(0.5 * amplitude * abs(gamma))
