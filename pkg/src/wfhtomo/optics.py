"""Beam-splitter standardization, passive linear transformations on Fock space,
and normal/anti-normal ordered powers of the total number operator."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .fock import DenseOperator, OccupationBasis

__all__ = [
    "PartitionSpec",
    "ModeMatrix",
    "standardize_bs",
    "plt_on_fock",
    "number_power_normal",
    "number_power_antinormal",
    "standard_block",
    "haar_unitary",
]

_GROUP_TOL = 1e-9


@dataclass(frozen=True)
class PartitionSpec:
    """Distinct beam-splitter sectors in standardized real form.

    ``sectors`` holds K pairs (eta_i, zeta_i) with eta_i^2 + zeta_i^2 = 1 and
    pairwise distinct eta; the sector containing input mode 1 comes first.
    ``s1_multi`` records whether the first sector contains more than one input
    mode (the only piece of the sector sizes anything downstream depends on).
    """

    sectors: tuple[tuple[float, float], ...]
    s1_multi: bool

    def __post_init__(self):
        object.__setattr__(self, "sectors",
                           tuple((float(e), float(z)) for e, z in self.sectors))
        if len(self.sectors) < 1:
            raise ValueError("at least one sector required")
        for e, z in self.sectors:
            if not (0.0 < e < 1.0 and 0.0 < z < 1.0):
                raise ValueError(f"sector (eta={e}, zeta={z}) must lie strictly inside (0,1)")
            if abs(e * e + z * z - 1.0) > 1e-12:
                raise ValueError(f"sector (eta={e}, zeta={z}) violates eta^2+zeta^2=1")
        etas = [e for e, _ in self.sectors]
        for i in range(len(etas)):
            for j in range(i + 1, len(etas)):
                if abs(etas[i] - etas[j]) <= _GROUP_TOL:
                    raise ValueError("sector eta values must be pairwise distinct")

    @property
    def K(self) -> int:
        return len(self.sectors)

    def to_json(self) -> dict:
        return {
            "sectors": [{"eta": e, "zeta": z} for e, z in self.sectors],
            "s1_multi": bool(self.s1_multi),
        }

    @classmethod
    def from_json(cls, d: dict) -> "PartitionSpec":
        return cls(
            sectors=tuple((float(s["eta"]), float(s["zeta"])) for s in d["sectors"]),
            s1_multi=bool(d["s1_multi"]),
        )


@dataclass(frozen=True)
class ModeMatrix:
    """Unitary matrix acting on the vector of mode operators."""

    entries: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.entries, dtype=np.complex128)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("mode matrix must be square")
        if np.max(np.abs(m.conj().T @ m - np.eye(m.shape[0]))) > 1e-10:
            raise ValueError("mode matrix is not unitary within 1e-10")
        object.__setattr__(self, "entries", m)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]


def standard_block(eta: float, zeta: float) -> np.ndarray:
    """Standardized real 2x2 beam-splitter block [[eta, zeta], [zeta, -eta]]."""
    return np.array([[eta, zeta], [zeta, -eta]], dtype=np.complex128)


def standardize_bs(blocks: Sequence[np.ndarray]) -> PartitionSpec:
    """Group per-mode 2x2 beam-splitter blocks into sectors of equal |eta|.

    Block i couples the signal mode a_i with its probe partner b_i. Blocks are
    grouped when their |eta| values agree within 1e-9; each group is reported
    as one real (eta, zeta) sector, with the group containing mode 1 first.
    """
    if len(blocks) == 0:
        raise ValueError("need at least one beam-splitter block")
    mags: list[float] = []
    for i, raw in enumerate(blocks):
        b = np.asarray(raw, dtype=np.complex128)
        if b.shape != (2, 2):
            raise ValueError(f"block {i} is not 2x2")
        if np.max(np.abs(b.conj().T @ b - np.eye(2))) > 1e-10:
            raise ValueError(f"block {i} is not unitary within 1e-10")
        eta = abs(b[0, 0])
        if eta <= _GROUP_TOL or eta >= 1.0 - _GROUP_TOL:
            raise ValueError(
                f"block {i} is a trivial beam splitter (|eta| = {eta}); "
                "every block must mix both modes")
        mags.append(eta)
    reps: list[float] = []
    counts: list[int] = []
    for eta in mags:
        for s, rep in enumerate(reps):
            if abs(eta - rep) <= _GROUP_TOL:
                counts[s] += 1
                break
        else:
            reps.append(eta)
            counts.append(1)
    sectors = tuple((eta, math.sqrt(1.0 - eta * eta)) for eta in reps)
    return PartitionSpec(sectors=sectors, s1_multi=counts[0] > 1)


def plt_on_fock(U_M, basis: OccupationBasis) -> DenseOperator:
    """Fock-space unitary of a passive linear transformation.

    The transformation sends a_i^dag to sum_j U[j,i] a_j^dag (creation
    operators transform by the columns of U, so coherent amplitude vectors
    transform as v -> U v and the map U -> plt_on_fock(U) is a homomorphism).
    The image of |n> is the normalized product of transformed creation
    operators acting on vacuum. Columns are built recursively over the graded
    basis: the column for n equals (transformed creation op of the first
    occupied mode) applied to the column for n - e_i, divided by sqrt(n_i).
    The result is exactly block diagonal in total photon number.
    """
    if not isinstance(U_M, ModeMatrix):
        U_M = ModeMatrix(np.asarray(U_M))
    U = U_M.entries
    S = basis.num_modes
    if U.shape != (S, S):
        raise ValueError(f"mode matrix dimension {U.shape[0]} != num_modes {S}")
    dim = basis.size
    # raising maps: applying a_j^dag to basis state b lands on raise_idx[j, b]
    raise_idx = np.full((S, dim), -1, dtype=np.int64)
    raise_amp = np.zeros((S, dim))
    for b, occ in enumerate(basis.states):
        if basis.totals[b] == basis.cutoff:
            continue
        for j in range(S):
            target = list(occ)
            target[j] += 1
            raise_idx[j, b] = basis.index(target)
            raise_amp[j, b] = math.sqrt(occ[j] + 1)
    valid = [raise_idx[j] >= 0 for j in range(S)]
    out = np.zeros((dim, dim), dtype=np.complex128)
    out[0, 0] = 1.0
    for col in range(1, dim):
        occ = basis.states[col]
        i = next(m for m in range(S) if occ[m] > 0)
        prev_occ = list(occ)
        prev_occ[i] -= 1
        w = out[:, basis.index(prev_occ)]
        acc = np.zeros(dim, dtype=np.complex128)
        for j in range(S):
            v = valid[j]
            np.add.at(acc, raise_idx[j, v], U[j, i] * raise_amp[j, v] * w[v])
        out[:, col] = acc / math.sqrt(occ[i])
    return DenseOperator(basis, out)


def number_power_normal(k: int, basis: OccupationBasis) -> DenseOperator:
    """Normally ordered k-th power of the total number operator.

    Diagonal with eigenvalue equal to the falling factorial
    (n)_k = n (n-1) ... (n-k+1) of the total photon number n.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    n = basis.totals.astype(np.float64)
    vals = np.ones(basis.size)
    for j in range(k):
        vals = vals * (n - j)
    return DenseOperator(basis, np.diag(vals.astype(np.complex128)))


def number_power_antinormal(k: int, basis: OccupationBasis) -> DenseOperator:
    """Anti-normally ordered k-th power of the total number operator.

    Diagonal with eigenvalue (n + S - 1 + k)_k where S is the mode count.
    """
    if k < 0:
        raise ValueError("k must be >= 0")
    n = basis.totals.astype(np.float64)
    shift = basis.num_modes - 1 + k
    vals = np.ones(basis.size)
    for j in range(k):
        vals = vals * (n + shift - j)
    return DenseOperator(basis, np.diag(vals.astype(np.complex128)))


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed random unitary via phase-fixed QR of a Ginibre matrix."""
    g = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / math.sqrt(2)
    q, r = np.linalg.qr(g)
    d = np.diagonal(r)
    return q * (d / np.abs(d))
