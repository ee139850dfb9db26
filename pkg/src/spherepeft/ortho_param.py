"""Partial orthogonal parameterization of block-diagonal weight transforms.

Text-tower blocks are Cayley images of skew-symmetric matrices and are
orthogonal by construction. Image-tower blocks are unconstrained and written
as ``I + G`` so that zero parameters give the identity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from .config import RunConfig

__all__ = [
    "SkewParam",
    "GeneralBlockParam",
    "BlockDiagTransform",
    "n_skew",
    "to_skew",
    "skew_grad",
    "cayley",
    "cayley_vjp",
    "pop_block",
    "assemble_block_diag",
    "orthogonality_residual",
    "param_count_pop",
]

TEXT = "text"
IMAGE = "image"
SKEW_TOL = 1e-12


def n_skew(q: int) -> int:
    return q * (q - 1) // 2


@dataclass
class SkewParam:
    """Strict upper triangle of ``U`` (row-major) for ``Q = U - U^T``."""

    q: int
    upper: np.ndarray = None

    def __post_init__(self):
        if self.upper is None:
            self.upper = np.zeros(n_skew(self.q))
        self.upper = np.asarray(self.upper, dtype=np.float64).reshape(-1)
        if self.upper.size != n_skew(self.q):
            raise ValueError(f"q={self.q} needs {n_skew(self.q)} parameters, got {self.upper.size}")


@dataclass
class GeneralBlockParam:
    q: int
    g: np.ndarray = None

    def __post_init__(self):
        if self.g is None:
            self.g = np.zeros((self.q, self.q))
        self.g = np.asarray(self.g, dtype=np.float64)
        if self.g.shape != (self.q, self.q):
            raise ValueError(f"expected a {self.q}x{self.q} block, got {self.g.shape}")


@dataclass
class BlockDiagTransform:
    blocks: list
    modality: str
    layer: int = 0
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        if self.modality not in (TEXT, IMAGE):
            raise ValueError(f"unknown modality {self.modality!r}")
        if not self.blocks:
            raise ValueError("need at least one block")
        self.blocks = [np.asarray(b, dtype=np.float64) for b in self.blocks]
        q = self.blocks[0].shape[0]
        for b in self.blocks:
            if b.shape != (q, q):
                raise ValueError(f"inconsistent block shape {b.shape}, expected {(q, q)}")
        if self.check and self.modality == TEXT:
            worst = max(orthogonality_residual(b) for b in self.blocks)
            if worst > 1e-10:
                raise ValueError(f"text-tower block is not orthogonal (residual {worst:.3e})")

    @property
    def q(self) -> int:
        return self.blocks[0].shape[0]

    @property
    def dim(self) -> int:
        return self.q * len(self.blocks)


def to_skew(p: SkewParam) -> np.ndarray:
    """``Q = U - U^T`` from the strict upper-triangle parameters."""
    U = np.zeros((p.q, p.q))
    U[np.triu_indices(p.q, 1)] = p.upper
    return U - U.T


def skew_grad(dQ: np.ndarray) -> np.ndarray:
    """Pull a gradient w.r.t. ``Q`` back to the upper-triangle parameters."""
    iu = np.triu_indices(dQ.shape[0], 1)
    return dQ[iu] - dQ.T[iu]


def cayley(Q, check: bool = True) -> np.ndarray:
    """Cayley map ``(I + Q)(I - Q)^-1``.

    ``I - Q`` is nonsingular for real skew ``Q`` and commutes with ``I + Q``,
    so the product is computed as one dense solve ``(I - Q)^-1 (I + Q)``.
    """
    Q = np.asarray(Q, dtype=np.float64)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {Q.shape}")
    if check:
        asym = np.max(np.abs(Q + Q.T), initial=0.0)
        if asym > SKEW_TOL:
            raise ValueError(f"input is not skew-symmetric (max |Q + Q^T| = {asym:.3e})")
    I = np.eye(Q.shape[0])
    return np.linalg.solve(I - Q, I + Q)


def cayley_vjp(Q: np.ndarray, dR: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. ``Q`` given the gradient ``dR`` w.r.t. ``cayley(Q)``.

    With ``K = (I - Q)^-1`` the differential is ``dR = 2 K dQ K``.
    """
    I = np.eye(Q.shape[0])
    Kt = np.linalg.inv(I - Q).T
    return 2.0 * Kt @ dR @ Kt


def pop_block(param, modality: str) -> np.ndarray:
    """One q x q block: Cayley-orthogonal for text, ``I + G`` for image."""
    if modality == TEXT:
        if not isinstance(param, SkewParam):
            raise TypeError("text-tower blocks take a SkewParam")
        return cayley(to_skew(param))
    if modality == IMAGE:
        if not isinstance(param, GeneralBlockParam):
            raise TypeError("image-tower blocks take a GeneralBlockParam")
        return np.eye(param.q) + param.g
    raise ValueError(f"unknown modality {modality!r}")


def assemble_block_diag(t: BlockDiagTransform) -> np.ndarray:
    return block_diag(*t.blocks)


def orthogonality_residual(R) -> float:
    """``||R^T R - I||_F``."""
    R = np.asarray(R)
    return float(np.linalg.norm(R.T @ R - np.eye(R.shape[1])))


def param_count_pop(cfg: RunConfig) -> dict:
    """Closed-form trainable counts of the block transforms, per tower."""
    for name, d in (("d_v", cfg.d_v), ("d_e", cfg.d_e)):
        if d % cfg.q:
            raise ValueError(f"q={cfg.q} does not divide {name}={d}")
    text = cfg.L * cfg.m * cfg.b_e * n_skew(cfg.q)
    image = cfg.L * cfg.m * cfg.b_v * cfg.q * cfg.q
    return {"text_skew": text, "image_general": image, "pop_total": text + image}
