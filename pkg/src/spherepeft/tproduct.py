"""T-products of 3-order and higher-order tensors and their transform domain.

``tprod3`` and ``tprodN`` follow the block-circulant definition
``fold(circ(A) * unfold(B))`` and are the ground truth. ``transform_tprod``
computes ``S^-1(S(A) (.) S(B))`` for a set of invertible mode matrices; it
coincides with the T-product only when every mode matrix diagonalizes
circulants (the DFT). For other invertible matrices it is a generalized
product and no identity with the circulant definition is claimed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor_core import as_tensor, circ, facewise_product, fold, mode_n_product, unfold

__all__ = [
    "TransformSet",
    "dft_matrix",
    "t_identity",
    "tprod3",
    "tprodN",
    "transform_forward",
    "transform_inverse",
    "transform_tprod",
]

IMAG_TOL = 1e-9


@dataclass
class TransformSet:
    """Invertible matrices ``S_3, ..., S_p`` acting on modes 3..p.

    ``mats[0]`` acts on mode index 2 (0-based), ``mats[1]`` on 3, and so on.
    Inverses are computed once at construction and checked.
    """

    mats: list
    inverses: list = field(init=False)
    tol: float = 1e-8

    def __post_init__(self):
        mats, inverses = [], []
        for i, S in enumerate(self.mats):
            S = np.asarray(S)
            if not np.iscomplexobj(S):
                S = S.astype(np.float64)
            if S.ndim != 2 or S.shape[0] != S.shape[1]:
                raise ValueError(f"S_{i + 3} must be square, got shape {S.shape}")
            try:
                S_inv = np.linalg.inv(S)
            except np.linalg.LinAlgError as exc:
                raise ValueError(f"S_{i + 3} is singular") from exc
            residual = np.linalg.norm(S @ S_inv - np.eye(S.shape[0]))
            if not residual <= self.tol:
                raise ValueError(f"S_{i + 3} is numerically singular (residual {residual:.3e})")
            mats.append(S)
            inverses.append(S_inv)
        self.mats = mats
        self.inverses = inverses

    @classmethod
    def identity(cls, extents) -> "TransformSet":
        return cls([np.eye(n) for n in extents])

    @classmethod
    def dft(cls, extents) -> "TransformSet":
        return cls([dft_matrix(n) for n in extents])

    @property
    def extents(self) -> tuple[int, ...]:
        return tuple(S.shape[0] for S in self.mats)

    @property
    def is_complex(self) -> bool:
        return any(np.iscomplexobj(S) for S in self.mats)


def dft_matrix(n: int) -> np.ndarray:
    """Unnormalized DFT matrix ``F[k, j] = exp(-2*pi*i*k*j/n)``; its inverse carries 1/n."""
    k = np.arange(n)
    return np.exp(-2j * np.pi * np.outer(k, k) / n)


def t_identity(n: int, trailing) -> np.ndarray:
    """T-identity of size ``n x n x trailing``: first frontal slice I, the rest zero."""
    trailing = tuple(trailing)
    I = np.zeros((n, n) + trailing)
    I[(slice(None), slice(None)) + (0,) * len(trailing)] = np.eye(n)
    return I


def _check_pair(A: np.ndarray, B: np.ndarray):
    if A.ndim != B.ndim:
        raise ValueError(f"operand orders differ: {A.ndim} vs {B.ndim}")
    if A.shape[1] != B.shape[0]:
        raise ValueError(f"inner extents differ: {A.shape[1]} vs {B.shape[0]}")
    if A.shape[2:] != B.shape[2:]:
        raise ValueError(f"trailing extents differ: {A.shape[2:]} vs {B.shape[2:]}")


def _tprod(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if A.ndim == 2:
        return A @ B
    return fold(_tprod(circ(A), unfold(B)), A.shape[-1])


def tprod3(A, B) -> np.ndarray:
    """3-order T-product ``fold(circ(A) @ unfold(B))`` of ``(n1,n2,n3)`` and ``(n2,l,n3)``."""
    A = as_tensor(A)
    B = as_tensor(B)
    if A.ndim != 3 or B.ndim != 3:
        raise ValueError(f"tprod3 needs 3-order operands, got orders {A.ndim} and {B.ndim}")
    _check_pair(A, B)
    return fold(circ(A) @ unfold(B), A.shape[2])


def tprodN(A, B) -> np.ndarray:
    """Higher-order T-product, recursing on (p-1)-order blocks down to ``tprod3``."""
    A = as_tensor(A)
    B = as_tensor(B)
    if A.ndim < 3:
        raise ValueError(f"tprodN needs order >= 3, got {A.ndim}")
    _check_pair(A, B)
    return _tprod(A, B)


def _check_extents(A: np.ndarray, S: TransformSet):
    if A.shape[2:] != S.extents:
        raise ValueError(f"transform extents {S.extents} do not match trailing modes {A.shape[2:]}")


def transform_forward(A, S: TransformSet) -> np.ndarray:
    """``A x_3 S_3 x_4 S_4 ... x_p S_p``."""
    A = np.asarray(A)
    _check_extents(A, S)
    for offset, M in enumerate(S.mats):
        A = mode_n_product(A, M, 2 + offset)
    return A


def transform_inverse(Abar, S: TransformSet) -> np.ndarray:
    """``Abar x_3 S_3^-1 x_4 S_4^-1 ... x_p S_p^-1`` (same mode order as the forward)."""
    Abar = np.asarray(Abar)
    _check_extents(Abar, S)
    for offset, M in enumerate(S.inverses):
        Abar = mode_n_product(Abar, M, 2 + offset)
    return Abar


def transform_tprod(A, B, S: TransformSet) -> np.ndarray:
    """Transform-domain product ``S^-1(S(A) (.) S(B))``.

    Complex transforms are handled internally; the result is returned real
    after checking the discarded imaginary part is at most ``IMAG_TOL``.
    """
    A = as_tensor(A, min_order=3)
    B = as_tensor(B, min_order=3)
    _check_pair(A, B)
    C = transform_inverse(facewise_product(transform_forward(A, S), transform_forward(B, S)), S)
    if np.iscomplexobj(C):
        residue = float(np.max(np.abs(C.imag)))
        if residue > IMAG_TOL:
            raise ArithmeticError(f"imaginary residue {residue:.3e} exceeds {IMAG_TOL:g}")
        C = np.ascontiguousarray(C.real)
    return C
