"""Oblique projectors P = Q (B'Q)^-1 B' and the backbone-variance optimization of B.

The projector's range is spanned by Q (the identified slow subspace) and its
kernel is orthogonal to the columns of B. B is found by quasi-Newton descent
on the normalized backbone-frequency variance of the projected signal: a
trajectory projected exactly along the fast subspace has a flat frequency
history, so the variance vanishes at the correct projection direction.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .backbone import scalar_backbone_variance
from .trajectory import Trajectory

COND_CAP = 1e8
INVARIANT_TOL = 1e-10
PENALTY_FACTOR = 1e6


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class OptimizeDiagnostics:
    iterations: int
    objective_initial: float
    objective_final: float
    gradient_norm: float
    converged: bool
    message: str

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "objective_initial": self.objective_initial,
            "objective_final": self.objective_final,
            "gradient_norm": self.gradient_norm,
            "converged": self.converged,
            "message": self.message,
        }


@dataclass(frozen=True)
class ObliqueProjector:
    """Validated projector with range span(Q) and kernel orthogonal to span(B)."""

    Q: np.ndarray  # (p, d)
    B: np.ndarray  # (p, d)
    P: np.ndarray  # (p, p), cached product
    diagnostics: OptimizeDiagnostics | None = None

    def __post_init__(self):
        object.__setattr__(self, "Q", _readonly(self.Q))
        object.__setattr__(self, "B", _readonly(self.B))
        object.__setattr__(self, "P", _readonly(self.P))

    @property
    def dim(self) -> int:
        return self.Q.shape[1]

    @property
    def n_observables(self) -> int:
        return self.Q.shape[0]

    def kernel_basis(self) -> np.ndarray:
        """Orthonormal basis of ker(P) = the discarded (fast) directions."""
        _, s, vt = np.linalg.svd(self.P)
        rank = int(np.sum(s > 1e-10 * max(s[0], 1e-300)))
        return vt[rank:].T

    def to_dict(self) -> dict:
        d = {"Q": self.Q.tolist(), "B": self.B.tolist(), "P": self.P.tolist()}
        if self.diagnostics is not None:
            d["diagnostics"] = self.diagnostics.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ObliqueProjector":
        diag = d.get("diagnostics")
        return cls(
            np.array(d["Q"]),
            np.array(d["B"]),
            np.array(d["P"]),
            OptimizeDiagnostics(**diag) if diag else None,
        )


def _build_projection_matrix(q: np.ndarray, b: np.ndarray) -> np.ndarray:
    """P = Q (B'Q)^-1 B', rejecting near-singular B'Q."""
    btq = b.T @ q
    cond = np.linalg.cond(btq)
    if not np.isfinite(cond) or cond >= COND_CAP:
        raise ValueError(
            f"projection direction nearly parallel to range (cond(B'Q) = {cond:.2e})"
        )
    return q @ np.linalg.solve(btq, b.T)


def make_projector(Q: np.ndarray, B: np.ndarray, diagnostics=None) -> ObliqueProjector:
    """Construct and validate the oblique projector defined by (Q, B).

    Checks shape agreement, conditioning of B'Q, idempotency, range
    containment (PQ = Q) and kernel orthogonality to B.
    """
    q = np.atleast_2d(np.asarray(Q, dtype=float))
    b = np.atleast_2d(np.asarray(B, dtype=float))
    if q.ndim != 2 or q.shape != b.shape:
        raise ValueError(f"Q and B must be matching p x d matrices, got {q.shape} vs {b.shape}")
    p_mat = _build_projection_matrix(q, b)
    norm_p = np.linalg.norm(p_mat)
    tol = INVARIANT_TOL * max(1.0, norm_p) ** 2
    if np.linalg.norm(p_mat @ p_mat - p_mat) > tol:
        raise ValueError("projector failed idempotency check (B'Q too ill-conditioned)")
    if np.linalg.norm(p_mat @ q - q) > tol * max(1.0, np.linalg.norm(q)):
        raise ValueError("projector failed range check PQ = Q")
    if np.linalg.norm(b.T @ (np.eye(q.shape[0]) - p_mat)) > tol * max(1.0, np.linalg.norm(b)):
        raise ValueError("projector kernel is not orthogonal to B")
    return ObliqueProjector(q, b, p_mat, diagnostics)


def normal_projector(Q: np.ndarray) -> ObliqueProjector:
    """Symmetric (orthogonal) projector onto span(Q): the B = Q special case."""
    q = np.atleast_2d(np.asarray(Q, dtype=float))
    sv = np.linalg.svd(q, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise ValueError("Q is rank deficient")
    return make_projector(q, q)


def project(proj: ObliqueProjector, traj: Trajectory) -> Trajectory:
    """Apply the projector column-wise; sample times are preserved."""
    if traj.n_observables != proj.n_observables:
        raise ValueError(
            f"projector acts on {proj.n_observables} observables, trajectory has {traj.n_observables}"
        )
    return Trajectory(traj.times, proj.P @ traj.states, traj.labels)


def reduced_coordinates(proj: ObliqueProjector, q_tilde: np.ndarray, traj: Trajectory) -> Trajectory:
    """Reduced coordinates xi(t) = Q_tilde' P y(t) on the slow subspace."""
    q_tilde = np.asarray(q_tilde, dtype=float)
    if q_tilde.shape[0] != proj.n_observables or traj.n_observables != proj.n_observables:
        raise ValueError("observable dimensions of projector, basis and trajectory disagree")
    xi = q_tilde.T @ (proj.P @ traj.states)
    labels = tuple(f"xi{i + 1}" for i in range(xi.shape[0]))
    return Trajectory(traj.times, xi, labels)


def _orthonormal_columns(b: np.ndarray) -> np.ndarray:
    """Column-wise orthonormalization (thin QR with positive diagonal).

    Right-multiplication by the inverse triangular factor leaves the projector
    unchanged, so this only removes the gauge freedom B -> B G.
    """
    q, r = np.linalg.qr(b)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def _fd_gradient(fun, x: np.ndarray, rel_step: float) -> np.ndarray:
    """Central finite differences with a per-entry relative step."""
    g = np.empty_like(x)
    for i in range(x.size):
        h = rel_step * max(abs(x[i]), 1.0)
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (fun(xp) - fun(xm)) / (2.0 * h)
    return g


def optimize_projection(
    Q: np.ndarray,
    y_lin: Trajectory,
    readout: np.ndarray | None = None,
    *,
    rel_step: float = 1e-6,
    grad_tol: float = 1e-8,
    stall_tol: float = 1e-12,
    stall_iters: int = 5,
    max_iters: int = 500,
) -> ObliqueProjector:
    """Minimize the projected-trajectory backbone variance over B, starting at B = Q.

    The objective is the mean of the normalized backbone-frequency variances
    of all d reduced components of the projected trajectory (plus the given
    readout combination, if any). Flattening a single scalar readout is not
    enough: fast-mode leakage can hide in the combination the readout cannot
    see, leaving the other reduced component contaminated while the scalar
    objective sits at its floor. Aggregating over the reduced components
    makes the exact fast-parallel projector the unique minimizer.

    BFGS with central-difference gradients on the p*d entries of B; the
    iterate is re-orthonormalized column-wise after every accepted step (the
    objective only depends on span(B), so this removes flat directions that
    would stall the Hessian update). Degenerate projections (ill-conditioned
    B'Q, or a projected component that stops oscillating) are penalized with
    a large finite value; if the optimum itself is penalized the operation
    fails. Termination: gradient max-norm below ``grad_tol``, or relative
    objective decrease below ``stall_tol`` for ``stall_iters`` consecutive
    iterations; hitting ``max_iters`` returns the best iterate flagged as not
    converged.
    """
    q = np.atleast_2d(np.asarray(Q, dtype=float))
    p, d = q.shape
    if readout is not None:
        readout = np.asarray(readout, dtype=float)
        if readout.shape != (p,):
            raise ValueError(f"readout weights must have length {p}")
    times = y_lin.times
    data = y_lin.states
    if data.shape[0] != p:
        raise ValueError("y_lin observable dimension does not match Q")
    q_orth = _orthonormal_columns(q)
    # Rows whose backbone variances are aggregated: the d reduced components,
    # plus the user's readout combination when it is not one of them already.
    probe = q_orth.T
    if readout is not None:
        probe = np.vstack([probe, readout])

    def raw_objective(b_flat: np.ndarray) -> float:
        p_mat = _build_projection_matrix(q, b_flat.reshape(p, d))
        signals = probe @ (p_mat @ data)
        return float(
            np.mean([scalar_backbone_variance(times, row) for row in signals])
        )

    x = q_orth.ravel()
    try:
        f = raw_objective(x)
    except ValueError as exc:
        raise ValueError(f"objective not evaluable at the initializer B = Q: {exc}") from exc
    penalty = PENALTY_FACTOR * max(f, 1e-300)

    def objective(b_flat: np.ndarray) -> float:
        try:
            return raw_objective(b_flat)
        except ValueError:
            return penalty

    f0 = f
    g = _fd_gradient(objective, x, rel_step)
    h_inv = np.eye(x.size)
    stalled = 0
    iterations = 0
    converged = False
    message = "max iterations exceeded"

    for iterations in range(1, max_iters + 1):
        if np.max(np.abs(g)) < grad_tol:
            converged = True
            message = "gradient below tolerance"
            break

        direction = -h_inv @ g
        if direction @ g >= 0:  # Hessian approximation lost positive definiteness
            h_inv = np.eye(x.size)
            direction = -g

        # Backtracking Armijo line search, with one steepest-descent retry.
        step, f_new, x_trial = _line_search(objective, x, f, g, direction)
        if step is None and not np.array_equal(direction, -g):
            h_inv = np.eye(x.size)
            direction = -g
            step, f_new, x_trial = _line_search(objective, x, f, g, direction)
        if step is None:
            converged = True
            message = "no descent direction (objective at numerical floor)"
            break

        # Gauge fixing; skipped if rounding would push the objective up.
        x_orth = _orthonormal_columns(x_trial.reshape(p, d)).ravel()
        f_orth = objective(x_orth)
        if f_orth <= f_new:
            x_new, f_new = x_orth, f_orth
        else:
            x_new = x_trial

        g_new = _fd_gradient(objective, x_new, rel_step)
        s = x_new - x
        yv = g_new - g
        sy = s @ yv
        if sy > 1e-12 * np.linalg.norm(s) * max(np.linalg.norm(yv), 1e-300):
            rho = 1.0 / sy
            i_mat = np.eye(x.size)
            left = i_mat - rho * np.outer(s, yv)
            h_inv = left @ h_inv @ left.T + rho * np.outer(s, s)

        rel_decrease = (f - f_new) / max(f, 1e-300)
        stalled = stalled + 1 if rel_decrease < stall_tol else 0
        x, f, g = x_new, f_new, g_new
        if stalled >= stall_iters:
            converged = True
            message = "objective decrease stalled"
            break

    grad_norm = float(np.max(np.abs(g)))
    diag = OptimizeDiagnostics(
        iterations=iterations,
        objective_initial=float(f0),
        objective_final=float(f),
        gradient_norm=grad_norm,
        converged=converged,
        message=message,
    )
    if f >= 0.5 * penalty:
        raise ValueError(
            "projection optimization ended in a degenerate configuration "
            f"(projected signal lost its oscillations); diagnostics: {diag}"
        )
    if not converged:
        warnings.warn(f"projection optimization not converged: {diag}", stacklevel=2)
    return make_projector(q, x.reshape(p, d), diagnostics=diag)


def _line_search(objective, x, f, g, direction, c1: float = 1e-4, max_halvings: int = 40):
    """Backtracking Armijo search; returns (step, f_new, x_new) or (None, None, None)."""
    slope = g @ direction
    step = 1.0
    for _ in range(max_halvings):
        x_new = x + step * direction
        f_new = objective(x_new)
        if f_new <= f + c1 * step * slope:
            return step, f_new, x_new
        step *= 0.5
    return None, None, None
