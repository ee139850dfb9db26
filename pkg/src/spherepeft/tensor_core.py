"""Dense p-order tensors and their structural operations.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. Whenever a
tensor is flattened (serialization, checkpoints) the canonical order is
*first index fastest*, i.e. numpy's Fortran order. All indices are 0-based.

Frontal slices of a p-order tensor are addressed with a single linear index
over the trailing modes ``n3 * n4 * ... * np`` with mode 3 varying fastest,
which is again the Fortran reshape ``A.reshape(n1, n2, -1, order="F")``.

Block operations (``circ``, ``unfold``, ``fold``) split a tensor along its
last mode into the (p-1)-order blocks ``A[..., i]``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "TensorP",
    "as_tensor",
    "frontal_slice",
    "frontal_slices",
    "from_frontal_slices",
    "circ",
    "unfold",
    "fold",
    "mode_n_product",
    "facewise_product",
]


@dataclass(frozen=True)
class TensorP:
    """Flat carrier of a p-order tensor in canonical (first-index-fastest) order.

    Used at serialization boundaries; the numerical code works on ndarrays.
    """

    dims: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) < 1 or any(n < 1 for n in dims):
            raise ValueError(f"invalid tensor dims {dims}")
        data = np.asarray(self.data, dtype=np.float64).ravel()
        if data.size != int(np.prod(dims)):
            raise ValueError(
                f"data length {data.size} does not match prod{dims}={int(np.prod(dims))}"
            )
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array) -> "TensorP":
        array = as_tensor(array)
        return cls(array.shape, array.ravel(order="F"))

    def to_array(self) -> np.ndarray:
        return self.data.reshape(self.dims, order="F").copy()

    def __getitem__(self, index):
        index = tuple(index) if not isinstance(index, (int, np.integer)) else (index,)
        if len(index) != len(self.dims):
            raise IndexError(f"expected {len(self.dims)} indices, got {len(index)}")
        for i, n in zip(index, self.dims):
            if not 0 <= i < n:
                raise IndexError(f"index {index} out of range for dims {self.dims}")
        return float(self.data[np.ravel_multi_index(index, self.dims, order="F")])


def as_tensor(A, min_order: int = 1) -> np.ndarray:
    """Return ``A`` as a float64 ndarray, checking its order."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim < min_order:
        raise ValueError(f"expected a tensor of order >= {min_order}, got {A.ndim}")
    if A.size == 0:
        raise ValueError("tensor extents must all be >= 1")
    return A


def _n_faces(A: np.ndarray) -> int:
    return int(np.prod(A.shape[2:], dtype=np.int64))


def frontal_slices(A) -> np.ndarray:
    """View ``A`` as an ``n1 x n2 x (n3*...*np)`` 3-order tensor (mode-3 fastest)."""
    A = np.asarray(A)
    if A.ndim < 3:
        raise ValueError(f"frontal slices need order >= 3, got {A.ndim}")
    return A.reshape(A.shape[0], A.shape[1], -1, order="F")


def frontal_slice(A, k: int) -> np.ndarray:
    """The k-th frontal slice ``A(:, :, k)`` under linear trailing-mode indexing."""
    faces = frontal_slices(as_tensor(A))
    if not 0 <= k < faces.shape[2]:
        raise IndexError(f"frontal slice {k} out of range [0, {faces.shape[2]})")
    return faces[:, :, k].copy()


def from_frontal_slices(faces, trailing: tuple[int, ...]) -> np.ndarray:
    """Inverse of :func:`frontal_slices` for the given trailing extents."""
    faces = np.asarray(faces)
    return faces.reshape(faces.shape[:2] + tuple(trailing), order="F")


def circ(A) -> np.ndarray:
    """Block-circulant arrangement of the blocks ``A[..., 0], ..., A[..., np-1]``.

    Block ``(r, c)`` of the result is ``A[..., (r - c) % np]``, so the first
    block row reads ``A_1, A_np, A_{np-1}, ..., A_2``. The result has dims
    ``(n1*np, n2*np, n3, ..., n_{p-1})``; for a matrix the blocks are its
    columns and the result is ``(n1*np, np)``.
    """
    A = as_tensor(A, min_order=2)
    n_p = A.shape[-1]
    blocks = [A[..., i] for i in range(n_p)]
    if A.ndim == 2:
        blocks = [b[:, None] for b in blocks]
    rows = [
        np.concatenate([blocks[(r - c) % n_p] for c in range(n_p)], axis=1)
        for r in range(n_p)
    ]
    return np.concatenate(rows, axis=0)


def unfold(A) -> np.ndarray:
    """Stack the last-mode blocks along mode 1: dims ``(n1*np, n2, ..., n_{p-1})``."""
    A = as_tensor(A, min_order=2)
    return np.concatenate([A[..., i] for i in range(A.shape[-1])], axis=0)


def fold(B, n_p: int) -> np.ndarray:
    """Inverse of :func:`unfold`: ``fold(unfold(A), A.shape[-1]) == A``."""
    B = as_tensor(B)
    if n_p < 1 or B.shape[0] % n_p:
        raise ValueError(f"leading extent {B.shape[0]} is not divisible by {n_p}")
    return np.stack(np.split(B, n_p, axis=0), axis=-1)


def mode_n_product(A, M, mode: int) -> np.ndarray:
    """Mode-n product ``A x_mode M``.

    ``M`` has shape ``(m, A.shape[mode])``; the result replaces extent
    ``A.shape[mode]`` with ``m``. Complex ``M`` yields a complex result.
    """
    A = np.asarray(A)
    M = np.asarray(M)
    if not 0 <= mode < A.ndim:
        raise ValueError(f"mode {mode} out of range for order {A.ndim}")
    if M.ndim != 2 or M.shape[1] != A.shape[mode]:
        raise ValueError(
            f"matrix of shape {M.shape} cannot act on mode {mode} of extent {A.shape[mode]}"
        )
    return np.moveaxis(np.tensordot(M, A, axes=(1, mode)), 0, mode)


def facewise_product(Abar, Bbar) -> np.ndarray:
    """Frontal-slice-wise product: ``C(:, :, k) = Abar(:, :, k) @ Bbar(:, :, k)``."""
    Abar = np.asarray(Abar)
    Bbar = np.asarray(Bbar)
    if Abar.ndim < 2 or Bbar.ndim < 2:
        raise ValueError("facewise product needs order >= 2 operands")
    if Abar.shape[2:] != Bbar.shape[2:]:
        raise ValueError(f"trailing extents differ: {Abar.shape[2:]} vs {Bbar.shape[2:]}")
    if Abar.shape[1] != Bbar.shape[0]:
        raise ValueError(f"face shapes {Abar.shape[:2]} and {Bbar.shape[:2]} do not compose")
    if Abar.ndim == 2:
        return Abar @ Bbar
    fa = np.moveaxis(frontal_slices(Abar), 2, 0)
    fb = np.moveaxis(frontal_slices(Bbar), 2, 0)
    faces = np.moveaxis(fa @ fb, 0, 2)
    return from_frontal_slices(faces, Abar.shape[2:])
