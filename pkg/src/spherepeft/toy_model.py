"""Frozen toy dual-tower encoder, synthetic paired data, and the alignment loss.

Each tower is a bias-free stack ``h_{l+1} = phi(W'_l h_l)`` with ``phi = tanh``
on hidden layers and the identity on the last, followed by a frozen
projection to the shared embedding space and L2 normalization. Batches are
row-major: ``X`` has shape ``(n, d)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .config import RunConfig
from .ortho_param import IMAGE, TEXT

__all__ = [
    "PretrainedStack",
    "SynthBatch",
    "make_pretrained",
    "synth_pairs",
    "forward_tower",
    "tower_forward",
    "tower_vjp",
    "alignment_loss",
    "alignment_loss_grad",
    "COLUMN_NORM_BOUNDS",
]

COLUMN_NORM_BOUNDS = (1e-3, 1e3)


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class PretrainedStack:
    """Frozen per-layer weights of both towers plus their output projections."""

    text: tuple
    image: tuple
    proj_text: np.ndarray
    proj_image: np.ndarray
    seed: int
    frozen: bool = True

    def __post_init__(self):
        object.__setattr__(self, "text", tuple(_frozen(W) for W in self.text))
        object.__setattr__(self, "image", tuple(_frozen(W) for W in self.image))
        object.__setattr__(self, "proj_text", _frozen(self.proj_text))
        object.__setattr__(self, "proj_image", _frozen(self.proj_image))
        if len(self.text) != len(self.image):
            raise ValueError("towers must have the same number of layers")
        lo, hi = COLUMN_NORM_BOUNDS
        for W in self.text + self.image:
            if not np.all(np.isfinite(W)):
                raise ValueError("pretrained weights must be finite")
            norms = np.linalg.norm(W, axis=0)
            if norms.min() < lo or norms.max() > hi:
                raise ValueError(f"column norms outside [{lo:g}, {hi:g}]")

    @property
    def L(self) -> int:
        return len(self.text)

    def layer_weight(self, modality: str, layer: int) -> np.ndarray:
        return self.weights(modality)[layer]

    def weights(self, modality: str) -> tuple:
        if modality == TEXT:
            return self.text
        if modality == IMAGE:
            return self.image
        raise ValueError(f"unknown modality {modality!r}")

    def projection(self, modality: str) -> np.ndarray:
        return self.proj_text if modality == TEXT else self.proj_image

    def fingerprint(self) -> bytes:
        arrays = self.text + self.image + (self.proj_text, self.proj_image)
        return b"".join(a.tobytes() for a in arrays)


def _clip_columns(W: np.ndarray) -> np.ndarray:
    lo, hi = COLUMN_NORM_BOUNDS
    norms = np.linalg.norm(W, axis=0)
    return W * (np.clip(norms, lo, hi) / norms)


def make_pretrained(cfg: RunConfig, seed: int) -> PretrainedStack:
    """Scaled-Gaussian towers, deterministic in ``seed``."""
    if cfg.d_v % cfg.q or cfg.d_e % cfg.q:
        raise ValueError(f"q={cfg.q} must divide d_v={cfg.d_v} and d_e={cfg.d_e}")
    rng = np.random.default_rng([seed, 0])

    def gaussian(rows, cols):
        return _clip_columns(rng.standard_normal((rows, cols)) / np.sqrt(cols))

    text = [gaussian(cfg.d_e, cfg.d_e) for _ in range(cfg.L)]
    image = [gaussian(cfg.d_v, cfg.d_v) for _ in range(cfg.L)]
    d_s = cfg.embed_dim
    return PretrainedStack(
        text=tuple(text),
        image=tuple(image),
        proj_text=gaussian(d_s, cfg.d_e),
        proj_image=gaussian(d_s, cfg.d_v),
        seed=seed,
    )


@dataclass(frozen=True)
class SynthBatch:
    """Index-aligned pairs ``x_image[i] <-> x_text[i]``."""

    x_image: np.ndarray
    x_text: np.ndarray
    seed: int
    pairing: str = "shared-latent-linear"

    def __post_init__(self):
        if self.x_image.shape[0] != self.x_text.shape[0]:
            raise ValueError("paired arrays must have the same number of rows")
        if self.x_image.shape[0] < 2:
            raise ValueError("a batch needs at least 2 pairs")

    @property
    def n(self) -> int:
        return self.x_image.shape[0]

    def concat(self, other: "SynthBatch") -> "SynthBatch":
        return SynthBatch(
            np.concatenate([self.x_image, other.x_image]),
            np.concatenate([self.x_text, other.x_text]),
            self.seed,
            self.pairing,
        )


def mixing_maps(cfg: RunConfig):
    """Fixed latent-to-input maps ``(A_v, A_e)`` of the synthetic task."""
    rng = np.random.default_rng([cfg.seed, 2])
    d_z = cfg.embed_dim
    A_v = rng.standard_normal((cfg.d_v, d_z)) / np.sqrt(d_z)
    A_e = rng.standard_normal((cfg.d_e, d_z)) / np.sqrt(d_z)
    return A_v, A_e


def synth_pairs(cfg: RunConfig, seed: int, n: int, noise_scale=None) -> SynthBatch:
    """Draw ``n`` pairs ``x_v = A_v z + noise``, ``x_e = A_e z + noise``.

    The mixing maps depend on ``cfg.seed`` only, so batches drawn with
    different ``seed`` values share one task.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    noise = cfg.noise_scale if noise_scale is None else noise_scale
    A_v, A_e = mixing_maps(cfg)
    rng = np.random.default_rng([seed, 1])
    z = rng.standard_normal((n, A_v.shape[1]))
    x_image = z @ A_v.T + noise * rng.standard_normal((n, cfg.d_v))
    x_text = z @ A_e.T + noise * rng.standard_normal((n, cfg.d_e))
    return SynthBatch(x_image, x_text, seed)


def tower_forward(weights, proj, X):
    """Run one tower on a batch; returns embeddings and a backward cache."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    H = X
    hidden, pre = [H], []
    for ell, W in enumerate(weights):
        A = H @ W.T
        pre.append(A)
        H = np.tanh(A) if ell < len(weights) - 1 else A
        hidden.append(H)
    Z = H @ proj.T
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("tower output is the zero vector and cannot be normalized")
    E = Z / norms
    return E, (list(weights), proj, hidden, pre, E, norms)


def tower_vjp(cache, dE):
    """Gradients w.r.t. each adjusted layer weight given ``dE``."""
    weights, proj, hidden, pre, E, norms = cache
    dZ = (dE - E * np.sum(E * dE, axis=1, keepdims=True)) / norms
    dH = dZ @ proj
    grads = [None] * len(weights)
    for ell in range(len(weights) - 1, -1, -1):
        dA = dH * (1.0 - np.tanh(pre[ell]) ** 2) if ell < len(weights) - 1 else dH
        grads[ell] = dA.T @ hidden[ell]
        dH = dA @ weights[ell]
    return grads


def forward_tower(stack: PretrainedStack, adjusted_weights, x, modality: str) -> np.ndarray:
    """Embed ``x`` (one vector or a batch) with the given per-layer weights."""
    weights = stack.weights(modality) if adjusted_weights is None else adjusted_weights
    if len(weights) != stack.L:
        raise ValueError(f"expected {stack.L} layer weights, got {len(weights)}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != weights[0].shape[1]:
        raise ValueError(f"input width {x.shape[-1]} does not match {weights[0].shape[1]}")
    E, _ = tower_forward(weights, stack.projection(modality), x)
    return E[0] if x.ndim == 1 else E


def alignment_loss(emb_v, emb_e, tau: float) -> float:
    """Symmetric in-batch contrastive cross-entropy with matched-index targets."""
    return alignment_loss_grad(emb_v, emb_e, tau)[0]


def alignment_loss_grad(emb_v, emb_e, tau: float):
    """Loss and its gradients w.r.t. both embedding matrices."""
    if not tau > 0:
        raise ValueError("temperature must be > 0")
    emb_v = np.asarray(emb_v, dtype=np.float64)
    emb_e = np.asarray(emb_e, dtype=np.float64)
    n = emb_v.shape[0]
    if n < 2 or emb_e.shape != emb_v.shape:
        raise ValueError("need matching (n, d_s) embeddings with n >= 2")
    logits = emb_v @ emb_e.T / tau
    diag = np.diag(logits)
    row = np.mean(logsumexp(logits, axis=1) - diag)
    col = np.mean(logsumexp(logits, axis=0) - diag)
    loss = 0.5 * (row + col)
    eye = np.eye(n)
    dlogits = 0.5 * ((softmax(logits, axis=1) - eye) + (softmax(logits, axis=0) - eye)) / n
    d_v = dlogits @ emb_e / tau
    d_e = dlogits.T @ emb_v / tau
    return float(loss), d_v, d_e
