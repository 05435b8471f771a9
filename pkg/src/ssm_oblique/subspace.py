"""Slow-subspace identification from linear-regime snapshots via SVD + DMD.

The one-step map between shifted snapshot matrices is compressed onto the
leading d singular directions of the first matrix, its eigendecomposition
yields discrete-time modes, and the retained (slowest) eigenvectors are
lifted back and realified into a basis Q of the slow spectral subspace.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._modes import realify_basis, sort_modes_slow_first
from .trajectory import SnapshotPair

SVD_RANK_RTOL = 1e-10
ORTHO_TOL = 1e-12


def _readonly(a) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SlowSubspace:
    """Identified slow subspace: raw eigenvector basis Q, its orthonormalization, eigenvalues."""

    Q: np.ndarray  # (p, d) real eigenvector basis
    eigenvalues: np.ndarray  # (d,) continuous-time estimates, conjugate pairs adjacent
    Q_tilde: np.ndarray  # (p, d) orthonormal basis of span(Q)
    notes: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self):
        q = _readonly(np.asarray(self.Q, dtype=float))
        lam = _readonly(np.asarray(self.eigenvalues, dtype=complex))
        qt = _readonly(np.asarray(self.Q_tilde, dtype=float))
        object.__setattr__(self, "Q", q)
        object.__setattr__(self, "eigenvalues", lam)
        object.__setattr__(self, "Q_tilde", qt)
        p, d = q.shape
        if lam.shape != (d,) or qt.shape != (p, d):
            raise ValueError("inconsistent subspace shapes")
        if np.any(lam.real >= 0):
            raise ValueError(f"identified eigenvalues must decay, got {lam}")
        sv = np.linalg.svd(q, compute_uv=False)
        if sv[-1] <= 1e-12 * sv[0]:
            raise ValueError("Q is rank deficient")
        gram = qt.T @ qt
        if np.max(np.abs(gram - np.eye(d))) > ORTHO_TOL:
            raise ValueError("Q_tilde is not orthonormal")

    @property
    def dim(self) -> int:
        return self.Q.shape[1]

    def to_dict(self) -> dict:
        return {
            "Q": self.Q.tolist(),
            "Q_tilde": self.Q_tilde.tolist(),
            "eigenvalues": [[z.real, z.imag] for z in self.eigenvalues],
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SlowSubspace":
        lam = np.array([complex(re, im) for re, im in d["eigenvalues"]])
        return cls(np.array(d["Q"]), lam, np.array(d["Q_tilde"]), tuple(d.get("notes", ())))


def dmd_slow_subspace(pair: SnapshotPair, d: int, dt: float) -> SlowSubspace:
    """Identify the d slowest modes of the one-step data map.

    Rank-d truncated SVD of the first snapshot matrix compresses the shift
    map to a d x d operator; its eigenvalues are converted to continuous time
    via log(mu)/dt and sorted slowest-first (smallest |Re|, conjugate pairs
    grouped). Q collects the lifted eigenvectors as a real basis and Q_tilde
    its orthonormalization.

    Raises if the data cannot support rank d, or if a retained discrete
    eigenvalue has modulus >= 1.
    """
    if d <= 0 or d % 2 != 0:
        raise ValueError(f"subspace dimension must be an even positive integer, got {d}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    v1, v2 = pair.V1, pair.V2
    p, n_cols = v1.shape
    if n_cols < d + 1:
        raise ValueError(f"need at least {d + 1} snapshot columns for d={d}, got {n_cols}")
    if d > p:
        raise ValueError(f"d={d} exceeds the observable dimension p={p}")

    u, s, wt = np.linalg.svd(v1, full_matrices=False)
    if s[d - 1] <= SVD_RANK_RTOL * s[0]:
        raise ValueError(
            f"snapshot matrix is numerically rank deficient at rank {d} "
            f"(singular-value ratio {s[d - 1] / s[0]:.2e})"
        )
    u = u[:, :d]
    w = wt[:d].T
    a_tilde = (u.T @ v2 @ w) / s[:d]

    mu, vecs = np.linalg.eig(a_tilde)
    if np.any(np.abs(mu) >= 1.0):
        raise ValueError(
            "identified mode not decaying -- regime likely not linear or d too large "
            f"(|mu| = {np.abs(mu)})"
        )
    lam = np.log(mu) / dt
    lam_sorted, vecs_sorted, notes = sort_modes_slow_first(lam, vecs)

    q = u @ realify_basis(lam_sorted, vecs_sorted)
    q_tilde, r = np.linalg.qr(q)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q_tilde = q_tilde * signs  # deterministic orientation
    return SlowSubspace(q, lam_sorted, q_tilde, tuple(notes))
