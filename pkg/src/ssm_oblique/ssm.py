"""Polynomial manifold parametrization, reduced dynamics, polar form, prediction.

The invariant manifold over the slow subspace is fitted as a multivariate
polynomial y = h(xi) of the reduced coordinates, with the linear part
constrained so that the reduced coordinates are self-consistent
(Q_tilde' h(xi) has identity linear part). The reduced vector field is
regressed from finite-difference derivatives of xi(t). For planar (d = 2)
models with an oscillatory linear part, the resonant part of the field in
the complex eigenbasis gives the polar form rho' = sum a_j rho^(2j+1),
theta' = sum b_j rho^(2j).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb

import numpy as np
from scipy.integrate import solve_ivp

from .projection import ObliqueProjector
from .subspace import SlowSubspace
from .trajectory import Trajectory

INTEGRATE_RTOL = 1e-10
INTEGRATE_ATOL = 1e-12
OVERDETERMINATION = 3  # required ratio of samples to unknowns per output row
POOR_FIT_RATIO = 0.2


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@lru_cache(maxsize=None)
def monomial_exponents(dim: int, order: int) -> tuple[tuple[int, ...], ...]:
    """Exponent tuples of all monomials of total degree 1..order in ``dim`` variables.

    Graded-lexicographic: degree blocks in ascending order, highest power of
    the first variable first within each block. No constant term (the fixed
    point sits at the origin).
    """
    out = []
    for total in range(1, order + 1):
        for combo in combinations_with_replacement(range(dim), total):
            e = [0] * dim
            for i in combo:
                e[i] += 1
            out.append(tuple(e))
    return tuple(out)


def monomial_count(dim: int, order: int) -> int:
    return comb(dim + order, order) - 1


def _features(x: np.ndarray, order: int) -> np.ndarray:
    """Monomial feature matrix (n_monomials, N) for columns of x (dim, N)."""
    dim, n = x.shape
    powers = [np.vander(x[i], order + 1, increasing=True).T for i in range(dim)]
    rows = [
        np.prod([powers[i][e[i]] for i in range(dim)], axis=0)
        for e in monomial_exponents(dim, order)
    ]
    return np.asarray(rows).reshape(len(rows), n)


@dataclass(frozen=True)
class PolynomialMap:
    """Dense polynomial map R^d -> R^q with monomials of degree 1..order.

    ``coeffs[:, k]`` multiplies the k-th monomial of
    :func:`monomial_exponents`; evaluation at the origin is identically zero.
    """

    input_dim: int
    output_dim: int
    order: int
    coeffs: np.ndarray  # (output_dim, n_monomials)
    residual_rms: np.ndarray | None = None  # per-output-row fit residual, if fitted

    def __post_init__(self):
        c = _readonly(self.coeffs)
        object.__setattr__(self, "coeffs", c)
        expected = (self.output_dim, monomial_count(self.input_dim, self.order))
        if c.shape != expected:
            raise ValueError(f"coefficient matrix must be {expected}, got {c.shape}")
        if self.residual_rms is not None:
            object.__setattr__(self, "residual_rms", _readonly(self.residual_rms))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        cols = x[:, np.newaxis] if single else x
        if cols.shape[0] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} input rows, got {cols.shape[0]}")
        out = self.coeffs @ _features(cols, self.order)
        return out[:, 0] if single else out

    @property
    def linear_part(self) -> np.ndarray:
        """(q, d) coefficient block of the degree-1 monomials."""
        return np.asarray(self.coeffs[:, : self.input_dim])

    def to_dict(self) -> dict:
        d = {
            "input_dim": self.input_dim,
            "output_dim": self.output_dim,
            "order": self.order,
            "coeffs": self.coeffs.tolist(),
        }
        if self.residual_rms is not None:
            d["residual_rms"] = self.residual_rms.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PolynomialMap":
        res = d.get("residual_rms")
        return cls(
            d["input_dim"],
            d["output_dim"],
            d["order"],
            np.array(d["coeffs"]),
            None if res is None else np.array(res),
        )


@dataclass(frozen=True)
class PolarForm:
    """Planar reduced dynamics in polar coordinates: resonant terms only.

    rho' = sum_j radial[j] rho^(2j+1), theta' = sum_j angular[j] rho^(2j).
    ``transform`` maps polar-plane coordinates to reduced coordinates:
    xi = transform @ (rho cos theta, rho sin theta).
    """

    radial: np.ndarray
    angular: np.ndarray
    transform: np.ndarray  # (2, 2)

    def __post_init__(self):
        object.__setattr__(self, "radial", _readonly(self.radial))
        object.__setattr__(self, "angular", _readonly(self.angular))
        object.__setattr__(self, "transform", _readonly(self.transform))
        if self.radial[0] >= 0:
            raise ValueError(f"radial linear coefficient must be negative, got {self.radial[0]}")
        if self.angular[0] <= 0:
            raise ValueError(f"angular linear coefficient must be positive, got {self.angular[0]}")

    def decay_rate(self, rho) -> np.ndarray:
        """rho' = a(rho)."""
        rho = np.asarray(rho, dtype=float)
        return rho * np.polynomial.polynomial.polyval(rho**2, self.radial)

    def decay_rate_slope(self, rho) -> np.ndarray:
        """da/drho."""
        rho = np.asarray(rho, dtype=float)
        j = np.arange(self.radial.size)
        return np.polynomial.polynomial.polyval(rho**2, (2 * j + 1) * self.radial)

    def frequency(self, rho) -> np.ndarray:
        """theta' = omega(rho)."""
        rho = np.asarray(rho, dtype=float)
        return np.polynomial.polynomial.polyval(rho**2, self.angular)

    def frequency_slope(self, rho) -> np.ndarray:
        """domega/drho."""
        rho = np.asarray(rho, dtype=float)
        j = np.arange(self.angular.size)
        if self.angular.size < 2:
            return np.zeros_like(rho)
        return rho * np.polynomial.polynomial.polyval(rho**2, (2 * j * self.angular)[1:])

    def orbit(self, rho: float, n_phase: int = 256) -> np.ndarray:
        """Reduced-coordinate samples (2, n_phase) of the circle of radius rho."""
        theta = np.linspace(0.0, 2.0 * np.pi, n_phase, endpoint=False)
        circle = np.vstack([rho * np.cos(theta), rho * np.sin(theta)])
        return self.transform @ circle

    def radius_of(self, xi: np.ndarray) -> np.ndarray:
        """Polar radius of reduced-coordinate columns."""
        zeta = np.linalg.solve(self.transform, np.asarray(xi, dtype=float).reshape(2, -1))
        return np.hypot(zeta[0], zeta[1])

    def to_dict(self) -> dict:
        return {
            "radial": self.radial.tolist(),
            "angular": self.angular.tolist(),
            "transform": self.transform.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolarForm":
        return cls(np.array(d["radial"]), np.array(d["angular"]), np.array(d["transform"]))


def _as_segments(data) -> list[Trajectory]:
    if isinstance(data, Trajectory):
        return [data]
    segs = list(data)
    if not segs:
        raise ValueError("no trajectories given")
    return segs


def _lstsq_rows(design: np.ndarray, targets: np.ndarray, ridge: float) -> np.ndarray:
    """Solve min ||targets - C design||_F over C; optional ridge penalty on C."""
    a = design.T
    b = targets.T
    if ridge > 0.0:
        k = design.shape[0]
        a = np.vstack([a, np.sqrt(ridge) * np.eye(k)])
        b = np.vstack([b, np.zeros((k, targets.shape[0]))])
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    return sol.T


def fit_parametrization(
    y,
    xi,
    order: int,
    q_tilde: np.ndarray | None = None,
    ridge: float = 0.0,
) -> PolynomialMap:
    """Least-squares polynomial graph y = h(xi) over the reduced coordinates.

    ``y`` and ``xi`` may be single trajectories or matching lists of
    trajectory segments (sample columns are pooled). When ``q_tilde`` is
    given, the linear part is constrained to satisfy Q_tilde' M1 = I (the
    manifold is tangent to the identified subspace and the reduced
    coordinates are consistent); the constraint is eliminated by splitting
    the target into components along and orthogonal to span(Q_tilde).

    A fit whose residual exceeds 20% of the signal RMS is returned with a
    warning, not rejected.
    """
    y_segs = _as_segments(y)
    xi_segs = _as_segments(xi)
    if len(y_segs) != len(xi_segs):
        raise ValueError("y and xi must contain the same number of segments")
    for ty, tx in zip(y_segs, xi_segs):
        if not np.array_equal(ty.times, tx.times):
            raise ValueError("y and xi segments must share their sample times")
    ymat = np.hstack([t.states for t in y_segs])
    ximat = np.hstack([t.states for t in xi_segs])
    p, n = ymat.shape
    d = ximat.shape[0]
    n_mono = monomial_count(d, order)
    if n < OVERDETERMINATION * n_mono:
        raise ValueError(
            f"under-determined fit: {n} samples for {n_mono} monomials "
            f"(need at least {OVERDETERMINATION}x)"
        )
    phi = _features(ximat, order)

    if q_tilde is None:
        coeffs = _lstsq_rows(phi, ymat, ridge)
    else:
        qt = np.asarray(q_tilde, dtype=float)
        if qt.shape != (p, d):
            raise ValueError(f"q_tilde must be {(p, d)}, got {qt.shape}")
        full, _ = np.linalg.qr(qt, mode="complete")
        q_perp = full[:, d:]
        resid = ymat - qt @ ximat  # remove the pinned tangent contribution
        phi_nl = phi[d:]
        # Component along span(Q_tilde): only nonlinear monomials remain free.
        a_par = _lstsq_rows(phi_nl, qt.T @ resid, ridge)
        # Orthogonal component: free linear and nonlinear coefficients.
        a_perp_full = _lstsq_rows(phi, q_perp.T @ resid, ridge)
        m1 = qt + q_perp @ a_perp_full[:, :d]
        m_nl = qt @ a_par + q_perp @ a_perp_full[:, d:]
        coeffs = np.hstack([m1, m_nl])

    residual = ymat - coeffs @ phi
    res_rms = np.sqrt(np.mean(residual**2, axis=1))
    sig_rms = np.sqrt(np.mean(ymat**2))
    if np.sqrt(np.mean(residual**2)) > POOR_FIT_RATIO * max(sig_rms, 1e-300):
        warnings.warn(
            f"poor fit: residual RMS {np.sqrt(np.mean(residual ** 2)):.3g} exceeds "
            f"{POOR_FIT_RATIO:.0%} of signal RMS {sig_rms:.3g}",
            stacklevel=2,
        )
    return PolynomialMap(d, p, order, coeffs, res_rms)


# Fourth-order finite-difference stencils: interior central plus one-sided
# closures for the first and last two grid points.
_FD_FORWARD_0 = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0
_FD_FORWARD_1 = np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0


def _derivative_uniform(values: np.ndarray, dt: float) -> np.ndarray:
    """4th-order accurate time derivative of row-wise samples on a uniform grid."""
    n = values.shape[1]
    if n < 5:
        raise ValueError("derivative estimation impossible: need at least 5 samples")
    out = np.empty_like(values)
    out[:, 2:-2] = (
        -values[:, 4:] + 8.0 * values[:, 3:-1] - 8.0 * values[:, 1:-3] + values[:, :-4]
    ) / (12.0 * dt)
    out[:, 0] = values[:, :5] @ _FD_FORWARD_0 / dt
    out[:, 1] = values[:, :5] @ _FD_FORWARD_1 / dt
    out[:, -1] = values[:, -5:] @ -_FD_FORWARD_0[::-1] / dt
    out[:, -2] = values[:, -5:] @ -_FD_FORWARD_1[::-1] / dt
    return out


def fit_reduced_dynamics(xi, order: int, ridge: float = 0.0) -> PolynomialMap:
    """Regress the reduced vector field xi' = f(xi) from sampled trajectories.

    Derivatives are estimated by 4th-order finite differences per trajectory
    segment (one-sided stencils at the two boundary points of each segment),
    then all samples are pooled into one least-squares problem over the
    monomials of degree 1..order.
    """
    segs = _as_segments(xi)
    d = segs[0].n_observables
    xs, dxs = [], []
    for seg in segs:
        xs.append(seg.states)
        dxs.append(_derivative_uniform(seg.states, seg.dt))
    ximat = np.hstack(xs)
    dximat = np.hstack(dxs)
    n_mono = monomial_count(d, order)
    if ximat.shape[1] < OVERDETERMINATION * n_mono:
        raise ValueError(
            f"under-determined fit: {ximat.shape[1]} samples for {n_mono} monomials"
        )
    phi = _features(ximat, order)
    coeffs = _lstsq_rows(phi, dximat, ridge)
    res = dximat - coeffs @ phi
    return PolynomialMap(d, d, order, coeffs, np.sqrt(np.mean(res**2, axis=1)))


def _oscillatory_eigenbasis(linear: np.ndarray) -> tuple[complex, np.ndarray]:
    """Eigenvalue with positive imaginary part and a normalized real transform T.

    T = [Re v, -Im v] satisfies T^-1 L T = [[a, -b], [b, a]]. The complex
    eigenvector phase is chosen so the two columns of T have equal norm, then
    both are scaled to unit norm; this reduces to a pure rotation (and hence
    to the identity radius scale) whenever L is already in rotation form.
    """
    lam, vecs = np.linalg.eig(linear)
    if np.all(np.abs(lam.imag) < 1e-12 * np.abs(lam)):
        raise ValueError("linear part has real eigenvalues: no oscillatory polar form")
    k = int(np.argmax(lam.imag))
    lam_plus = lam[k]
    v = vecs[:, k]
    vr, vi = v.real, v.imag
    # Rotate the eigenvector phase to equalize the column norms of T.
    a = vr @ vr - vi @ vi
    b = 2.0 * (vr @ vi)
    phi = 0.5 * np.arctan2(a, b)
    v = v * np.exp(1j * phi)
    vr, vi = v.real, v.imag
    scale = np.sqrt(0.5 * (vr @ vr + vi @ vi))
    v = v / scale
    # Deterministic sign: largest entry of Re v positive.
    k_max = int(np.argmax(np.abs(v.real)))
    if v.real[k_max] < 0:
        v = -v
    t = np.column_stack([v.real, -v.imag])
    return lam_plus, t


def to_polar(rd: PolynomialMap) -> PolarForm:
    """Resonant polar form of a planar polynomial vector field.

    The field is pushed to the complex eigenbasis w of its linear part;
    non-resonant monomials are discarded and the coefficients of the
    resonant terms w |w|^(2j) become (radial, angular) pairs, with the j = 0
    pair set exactly to (Re lambda, Im lambda). The resonant coefficients
    are extracted numerically (Fourier in the phase, Vandermonde in the
    radius), which is exact for polynomial input.
    """
    if rd.input_dim != 2 or rd.output_dim != 2:
        raise ValueError("polar form requires a planar (2 -> 2) vector field")
    linear = rd.linear_part
    lam, t = _oscillatory_eigenbasis(linear)
    t_inv = np.linalg.inv(t)
    w_row = t_inv[0] + 1j * t_inv[1]

    n_res = (rd.order - 1) // 2  # resonant pairs beyond the linear one
    radial = np.zeros(n_res + 1)
    angular = np.zeros(n_res + 1)
    radial[0] = lam.real
    angular[0] = lam.imag
    if n_res > 0:
        n_theta = 4 * (rd.order + 2)
        theta = np.linspace(0.0, 2.0 * np.pi, n_theta, endpoint=False)
        rhos = np.linspace(0.5, 1.0, n_res)
        g1 = np.empty(n_res, dtype=complex)
        for i, rho in enumerate(rhos):
            xi = t @ np.vstack([rho * np.cos(theta), rho * np.sin(theta)])
            f_nl = rd(xi) - linear @ xi  # degree >= 2 part only
            w_dot = w_row @ f_nl
            g1[i] = np.mean(w_dot * np.exp(-1j * theta)) / rho
        vander = np.vander(rhos**2, n_res, increasing=True) * rhos[:, np.newaxis] ** 2
        c = np.linalg.solve(vander, g1)
        radial[1:] = c.real
        angular[1:] = c.imag
    return PolarForm(radial, angular, t)


@dataclass(frozen=True)
class SsmModel:
    """Fitted reduced-order model: subspace, projector, manifold, reduced dynamics."""

    subspace: SlowSubspace
    projector: ObliqueProjector
    parametrization: PolynomialMap  # d -> p
    reduced_dynamics: PolynomialMap  # d -> d
    polar: PolarForm | None
    readout: np.ndarray  # (p,) observable weights for scalar amplitudes
    xi_max: float  # largest ||xi|| seen in training
    rho_max: float  # largest polar radius seen in training (0 when polar is None)
    dt: float  # training sample step

    def __post_init__(self):
        object.__setattr__(self, "readout", _readonly(self.readout))
        lam_fit = np.sort_complex(np.linalg.eigvals(self.reduced_dynamics.linear_part))
        lam_ref = np.sort_complex(np.asarray(self.subspace.eigenvalues))
        err = np.max(np.abs(lam_fit - lam_ref) / np.maximum(np.abs(lam_ref), 1e-300))
        if err > 0.05:
            raise ValueError(
                "fitted reduced dynamics disagree with the identified subspace "
                f"eigenvalues by {err:.1%} (limit 5%)"
            )

    @property
    def dim(self) -> int:
        return self.parametrization.input_dim

    def reduce(self, y: np.ndarray) -> np.ndarray:
        """Reduced coordinates of one observable vector: Q_tilde' P y."""
        return self.subspace.Q_tilde.T @ (self.projector.P @ np.asarray(y, dtype=float))

    def to_dict(self) -> dict:
        return {
            "format": "ssm-oblique-model/1",
            "subspace": self.subspace.to_dict(),
            "projector": self.projector.to_dict(),
            "parametrization": self.parametrization.to_dict(),
            "reduced_dynamics": self.reduced_dynamics.to_dict(),
            "polar": None if self.polar is None else self.polar.to_dict(),
            "readout": self.readout.tolist(),
            "xi_max": self.xi_max,
            "rho_max": self.rho_max,
            "dt": self.dt,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SsmModel":
        return cls(
            subspace=SlowSubspace.from_dict(d["subspace"]),
            projector=ObliqueProjector.from_dict(d["projector"]),
            parametrization=PolynomialMap.from_dict(d["parametrization"]),
            reduced_dynamics=PolynomialMap.from_dict(d["reduced_dynamics"]),
            polar=None if d["polar"] is None else PolarForm.from_dict(d["polar"]),
            readout=np.array(d["readout"]),
            xi_max=d["xi_max"],
            rho_max=d["rho_max"],
            dt=d["dt"],
        )


def reconstruct(model: SsmModel, xi) -> Trajectory:
    """Map reduced coordinates through the manifold parametrization."""
    if isinstance(xi, Trajectory):
        if xi.n_observables != model.dim:
            raise ValueError(f"expected {model.dim} reduced coordinates, got {xi.n_observables}")
        return Trajectory(xi.times, model.parametrization(xi.states))
    return model.parametrization(np.asarray(xi, dtype=float))


def predict_trajectory(model: SsmModel, y0: np.ndarray, t_end: float, dt_out: float) -> Trajectory:
    """Reduce an initial observable vector, evolve the reduced model, lift back.

    Warns when the reduced initial condition lies outside the fitted
    amplitude range (extrapolation).
    """
    xi0 = model.reduce(y0)
    if np.linalg.norm(xi0) > 1.05 * model.xi_max:
        warnings.warn(
            f"initial condition at ||xi|| = {np.linalg.norm(xi0):.3g} exceeds the "
            f"fitted amplitude range {model.xi_max:.3g}; extrapolating",
            stacklevel=2,
        )
    n = int(np.floor(t_end / dt_out + 1e-9)) + 1
    times = np.arange(n) * dt_out
    rd = model.reduced_dynamics

    sol = solve_ivp(
        lambda t, x: rd(x),
        (0.0, float(times[-1])),
        xi0,
        method="RK45",
        rtol=INTEGRATE_RTOL,
        atol=INTEGRATE_ATOL,
        dense_output=True,
    )
    if not sol.success:
        raise RuntimeError(f"reduced-model integration failed: {sol.message}")
    xi = sol.sol(times)
    return Trajectory(times, model.parametrization(xi))


def nmte(predicted: Trajectory, truth: Trajectory) -> float:
    """Normalized mean trajectory error: mean_t ||err|| / max_t ||truth||."""
    if predicted.states.shape != truth.states.shape or not np.array_equal(
        predicted.times, truth.times
    ):
        raise ValueError("predicted and truth trajectories must share times and shape")
    err = np.linalg.norm(predicted.states - truth.states, axis=0)
    scale = np.linalg.norm(truth.states, axis=0).max()
    return float(err.mean() / scale)
