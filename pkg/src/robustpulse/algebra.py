"""Dense complex-matrix helpers: su(n) generator bases, norms, projections.

Everything here works on small ``numpy`` arrays (n <= 10 or so).  The
propagation code re-implements the few operations it needs in ``jax.numpy``;
these functions are the reference versions used for setup and checking.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import reduce

import numpy as np
from scipy import linalg as sla

__all__ = [
    "PAULI",
    "GeneratorBasis",
    "SubspaceProjection",
    "generator_basis",
    "pauli_string",
    "frobenius_norm",
    "matrix_exp",
    "project",
    "is_hermitian",
    "is_unitary",
    "ladder",
]

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


class InvalidDimension(ValueError):
    pass


class InvalidShape(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GeneratorBasis:
    """Traceless Hermitian generators normalised to ``tr(L_i L_j) = n delta_ij``."""

    n: int
    generators: tuple
    labels: tuple

    def __len__(self):
        return len(self.generators)

    def __getitem__(self, i):
        return self.generators[i]

    def gram(self) -> np.ndarray:
        G = np.array(self.generators)
        return np.einsum("iab,jba->ij", G, G)

    def coefficients(self, A: np.ndarray) -> np.ndarray:
        """Expansion coefficients of a traceless Hermitian ``A``."""
        return np.array([np.trace(g @ A).real / self.n for g in self.generators])


@dataclass(frozen=True, eq=False)
class SubspaceProjection:
    """Rectangular ``D x n`` selector onto the logical subspace."""

    P: np.ndarray

    def __post_init__(self):
        P = np.asarray(self.P, dtype=complex)
        if P.ndim != 2 or P.shape[0] > P.shape[1]:
            raise InvalidShape(f"projection must be D x n with D <= n, got {P.shape}")
        if not np.allclose(P @ P.conj().T, np.eye(P.shape[0]), atol=1e-12):
            raise ValueError("projection rows must be orthonormal")
        object.__setattr__(self, "P", P)

    @property
    def D(self) -> int:
        return self.P.shape[0]

    @property
    def n(self) -> int:
        return self.P.shape[1]

    @classmethod
    def levels(cls, n: int, keep) -> "SubspaceProjection":
        return cls(np.eye(n, dtype=complex)[list(keep)])

    @classmethod
    def identity(cls, n: int) -> "SubspaceProjection":
        return cls(np.eye(n, dtype=complex))


def pauli_string(label: str) -> np.ndarray:
    """Tensor product of Pauli matrices, e.g. ``"ZZ"`` or ``"XI"``."""
    try:
        mats = [PAULI[c] for c in label.upper()]
    except KeyError as exc:
        raise ValueError(f"bad Pauli label {label!r}") from exc
    return reduce(np.kron, mats)


def _gell_mann(n: int):
    gens, labels = [], []
    for j in range(n):
        for k in range(j + 1, n):
            S = np.zeros((n, n), dtype=complex)
            S[j, k] = S[k, j] = 1
            A = np.zeros((n, n), dtype=complex)
            A[j, k], A[k, j] = -1j, 1j
            gens += [S, A]
            labels += [f"S{j}{k}", f"A{j}{k}"]
    for l in range(1, n):
        d = np.zeros(n)
        d[:l] = 1
        d[l] = -l
        gens.append(np.diag(d * np.sqrt(2 / (l * (l + 1)))).astype(complex))
        labels.append(f"D{l}")
    # Standard Gell-Mann has tr(L^2) = 2; rescale to n.
    scale = np.sqrt(n / 2)
    return [g * scale for g in gens], labels


def generator_basis(n: int) -> GeneratorBasis:
    """Basis of su(n) with ``tr(L_i L_j) = n delta_ij``.

    Powers of two get Pauli strings (already normalised), anything else a
    rescaled generalised Gell-Mann basis.
    """
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise InvalidDimension(f"dimension must be an integer >= 2, got {n!r}")
    k = int(n).bit_length() - 1
    if 2**k == n:
        labels = ["".join(s) for s in itertools.product("IXYZ", repeat=k)][1:]
        gens = [pauli_string(s) for s in labels]
    else:
        gens, labels = _gell_mann(int(n))
    return GeneratorBasis(int(n), tuple(gens), tuple(labels))


def _square(A):
    A = np.asarray(A)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidShape(f"expected a square matrix, got shape {A.shape}")
    return A


def frobenius_norm(A) -> float:
    A = _square(A)
    return float(np.sqrt(np.trace(A @ A.conj().T).real))


def matrix_exp(A) -> np.ndarray:
    """``exp(A)``; eigendecomposition for anti-Hermitian input, Pade otherwise."""
    A = _square(A).astype(complex)
    if np.allclose(A, -A.conj().T, atol=1e-14 * max(1.0, np.abs(A).max())):
        w, V = np.linalg.eigh(1j * A)
        return (V * np.exp(-1j * w)) @ V.conj().T
    return sla.expm(A)


def project(P: SubspaceProjection, A, single_sided: bool = False) -> np.ndarray:
    """``P A P^dagger`` (D x D) or, with ``single_sided``, ``P A`` (D x n)."""
    A = _square(A)
    if A.shape[0] != P.n:
        raise InvalidShape(f"operator is {A.shape[0]}-dimensional, projection expects {P.n}")
    PA = P.P @ A
    return PA if single_sided else PA @ P.P.conj().T


def is_hermitian(A, atol: float = 1e-12) -> bool:
    A = np.asarray(A)
    return bool(np.linalg.norm(A - A.conj().T) <= atol)


def is_unitary(A, atol: float = 1e-12) -> bool:
    A = np.asarray(A)
    return bool(np.linalg.norm(A.conj().T @ A - np.eye(A.shape[1])) <= atol)


def ladder(levels: int) -> np.ndarray:
    """Truncated annihilation operator."""
    return np.diag(np.sqrt(np.arange(1, levels)), 1).astype(complex)
