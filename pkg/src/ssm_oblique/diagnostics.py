"""Cross-cutting verification utilities: resonance checks, exact projectors, angles.

These back the test suite and the ``doctor`` CLI command: an eigenvalue
nonresonance scan, the exact slow/fast spectral projector of a known system
matrix (the ground-truth oracle for the data-driven oblique projector), and
principal angles between subspaces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np

from ._modes import realify_basis, sort_modes_slow_first
from .projection import ObliqueProjector, make_projector


@dataclass(frozen=True)
class SpectrumReport:
    """Eigenvalues sorted by decay rate plus any near-resonances up to a given order."""

    eigenvalues: np.ndarray  # sorted by |Re|
    nonresonant: bool
    near_resonances: tuple  # (target index j, multi-index m, defect)
    max_order: int
    tol: float
    semisimple: bool = True
    warnings: tuple[str, ...] = field(default_factory=tuple)

    def to_dict(self) -> dict:
        return {
            "eigenvalues": [[z.real, z.imag] for z in self.eigenvalues],
            "nonresonant": self.nonresonant,
            "near_resonances": [
                {"target": int(j), "multi_index": list(map(int, m)), "defect": float(dmag)}
                for j, m, dmag in self.near_resonances
            ],
            "max_order": self.max_order,
            "tol": self.tol,
            "semisimple": self.semisimple,
            "warnings": list(self.warnings),
        }


def check_nonresonance(A: np.ndarray, max_order: int = 7, tol: float = 1e-6) -> SpectrumReport:
    """Scan for eigenvalue combinations lambda_j ~ sum_k m_k lambda_k, 2 <= sum m_k <= max_order.

    A combination is flagged when the defect is below ``tol`` relative to
    |lambda_j|. A numerically defective (non-semisimple) matrix gets a
    warning attached but is still scanned.
    """
    a = np.asarray(A, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("expected a square matrix")
    n = a.shape[0]
    lam, vecs = np.linalg.eig(a)
    order = np.argsort(np.abs(lam.real), kind="stable")
    lam = lam[order]

    warnings: list[str] = []
    sv = np.linalg.svd(vecs, compute_uv=False)
    semisimple = sv[-1] > 1e-10 * sv[0]
    if not semisimple:
        warnings.append("eigenvector matrix is numerically singular; matrix may be defective")

    hits = []
    for total in range(2, max_order + 1):
        for combo in combinations_with_replacement(range(n), total):
            m = np.bincount(combo, minlength=n)
            target = lam @ m
            defects = np.abs(lam - target)
            for j in np.nonzero(defects < tol * np.abs(lam))[0]:
                hits.append((int(j), tuple(int(x) for x in m), float(defects[j])))
    return SpectrumReport(
        eigenvalues=lam,
        nonresonant=not hits,
        near_resonances=tuple(hits),
        max_order=max_order,
        tol=tol,
        semisimple=semisimple,
        warnings=tuple(warnings),
    )


def spectral_projector(A: np.ndarray, slow_dim: int) -> ObliqueProjector:
    """Exact projector onto the slow eigenspace of A along the fast one.

    Built from right eigenvectors and the matching rows of their inverse
    (the biorthogonal left eigenvectors), so it commutes with A. Requires a
    clear slow/fast split: no decay-rate tie at position ``slow_dim``.
    """
    a = np.asarray(A, dtype=float)
    n = a.shape[0]
    if not 0 < slow_dim < n:
        raise ValueError(f"slow_dim must be in (0, {n}), got {slow_dim}")
    lam, vecs = np.linalg.eig(a)
    lam, vecs, _ = sort_modes_slow_first(lam, vecs)
    gap_scale = max(abs(lam[slow_dim].real), abs(lam[slow_dim - 1].real), 1e-300)
    if abs(abs(lam[slow_dim].real) - abs(lam[slow_dim - 1].real)) <= 1e-9 * gap_scale:
        raise ValueError(
            f"no spectral gap at dimension {slow_dim}: decay rates "
            f"{lam[slow_dim - 1].real} and {lam[slow_dim].real} tie"
        )
    left = np.linalg.inv(vecs)  # rows biorthogonal to the eigenvector columns
    q = realify_basis(lam[:slow_dim], vecs[:, :slow_dim])
    b = realify_basis(np.conj(lam[:slow_dim]), left[:slow_dim].conj().T)
    return make_projector(q, b)


def principal_angles(S1: np.ndarray, S2: np.ndarray) -> np.ndarray:
    """Principal angles (ascending, in [0, pi/2]) between the spans of two bases."""
    out = []
    for s in (S1, S2):
        s = np.atleast_2d(np.asarray(s, dtype=float))
        if s.ndim != 2:
            raise ValueError("expected matrices whose columns span the subspaces")
        sv = np.linalg.svd(s, compute_uv=False)
        if sv[-1] <= 1e-12 * sv[0]:
            raise ValueError("rank-deficient basis")
        q, _ = np.linalg.qr(s)
        out.append(q)
    cosines = np.linalg.svd(out[0].T @ out[1], compute_uv=False)
    return np.arccos(np.clip(cosines, -1.0, 1.0))[::-1]
