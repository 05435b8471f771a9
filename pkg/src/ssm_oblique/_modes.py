"""Eigenmode ordering and complex-to-real basis conversion shared by DMD and oracles."""

from __future__ import annotations

import numpy as np

# Two decay rates within this relative gap count as a tie; ties are then
# broken by oscillation frequency (larger |Im| ranks faster).
TIE_RTOL = 0.01


def sort_modes_slow_first(
    eigenvalues: np.ndarray, eigenvectors: np.ndarray
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Order eigenpairs by decay rate |Re| (slowest first), conjugates adjacent.

    Complex pairs are emitted with the Im > 0 member first. Returns the
    reordered eigenvalues, eigenvectors, and any tie notes.
    """
    lam = np.asarray(eigenvalues)
    notes: list[str] = []
    used = np.zeros(lam.size, dtype=bool)
    groups = []  # (|Re|, |Im|, [indices])
    for i in range(lam.size):
        if used[i]:
            continue
        used[i] = True
        if abs(lam[i].imag) > 1e-12 * max(abs(lam[i]), 1e-300):
            # Find the conjugate partner (exact for real input matrices).
            partner = None
            for j in range(i + 1, lam.size):
                if not used[j] and abs(lam[j] - lam[i].conjugate()) <= 1e-8 * max(abs(lam[i]), 1e-300):
                    partner = j
                    break
            if partner is None:
                raise ValueError(f"complex eigenvalue {lam[i]} has no conjugate partner")
            used[partner] = True
            plus, minus = (i, partner) if lam[i].imag > 0 else (partner, i)
            groups.append((abs(lam[i].real), abs(lam[i].imag), [plus, minus]))
        else:
            groups.append((abs(lam[i].real), 0.0, [i]))
    groups.sort(key=lambda g: (g[0], g[1]))
    for a, b in zip(groups, groups[1:]):
        if a[0] > 0 and abs(a[0] - b[0]) <= TIE_RTOL * a[0] and a[1] != b[1]:
            notes.append(
                f"near-equal decay rates {a[0]:.6g} and {b[0]:.6g}; "
                "ranked by oscillation frequency"
            )
    order = [i for g in groups for i in g[2]]
    return lam[order], eigenvectors[:, order], notes


def realify_basis(eigenvalues: np.ndarray, eigenvectors: np.ndarray) -> np.ndarray:
    """Real basis spanning the eigenvectors: (Re v, Im v) per conjugate pair.

    Expects the ordering produced by :func:`sort_modes_slow_first`. Real
    eigenvectors are rotated to kill any residual complex phase.
    """
    cols = []
    i = 0
    lam = np.asarray(eigenvalues)
    while i < lam.size:
        v = eigenvectors[:, i]
        if abs(lam[i].imag) > 1e-12 * max(abs(lam[i]), 1e-300):
            cols.append(v.real)
            cols.append(v.imag)
            i += 2
        else:
            k = int(np.argmax(np.abs(v)))
            phase = v[k] / abs(v[k])
            cols.append((v / phase).real)
            i += 1
    return np.column_stack(cols)
