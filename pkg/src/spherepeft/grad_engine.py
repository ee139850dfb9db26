"""Adapter state, exact gradients of the toy loss, a finite-difference oracle and Adam.

Flat parameter order (normative for checkpoints and oracles):

1. text skew parameters, shape ``(L, b_e, q(q-1)/2)``, layer-major then block
2. image block deviations ``G``, shape ``(L, b_v, q, q)``
3. mode-3 maps (``s3``, or the ``f3`` weights in depth order)
4. mode-4 maps (``s4``, or the ``f4`` weights in depth order)
5. the gate ``alpha``, shape ``(b_v + b_e, L)``

Every array is flattened in C order. Items 3-5 are absent when the relation
variant is ``"none"``.

Gradients are computed by an explicit reverse pass through the alignment
loss, both towers, the block-diagonal weight adjustment, the gated relation
update, the relation maps and the Cayley map.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from .config import RunConfig
from .dcrc import (
    RelationMaps,
    RelationTensor,
    dcrc_update,
    relation_maps_forward,
    relation_maps_vjp,
    slice_order,
    tower_blocks,
)
from .hyperspherical import hyperspherical_energy
from .ortho_param import (
    IMAGE,
    TEXT,
    cayley,
    cayley_vjp,
    n_skew,
    orthogonality_residual,
    skew_grad,
)
from .toy_model import PretrainedStack, SynthBatch, alignment_loss_grad, tower_forward, tower_vjp

__all__ = [
    "AdapterState",
    "AdamState",
    "AdapterForward",
    "adapter_forward",
    "loss",
    "loss_and_grad",
    "finite_diff_grad",
    "central_differences",
    "adam_step",
    "energy_diagnostics",
]


@dataclass
class AdapterState:
    """All trainable quantities for one run configuration."""

    cfg: RunConfig
    text_skew: np.ndarray
    image_g: np.ndarray
    maps: RelationMaps | None = None
    alpha: np.ndarray | None = None

    def __post_init__(self):
        cfg = self.cfg
        if cfg.m != 1:
            raise ValueError("the toy model adapts exactly one matrix per layer (m=1)")
        self.text_skew = np.asarray(self.text_skew, dtype=np.float64)
        self.image_g = np.asarray(self.image_g, dtype=np.float64)
        if self.text_skew.shape != (cfg.L, cfg.b_e, n_skew(cfg.q)):
            raise ValueError(f"text_skew has shape {self.text_skew.shape}")
        if self.image_g.shape != (cfg.L, cfg.b_v, cfg.q, cfg.q):
            raise ValueError(f"image_g has shape {self.image_g.shape}")
        if cfg.uses_dcrc:
            if self.maps is None or self.alpha is None:
                raise ValueError("relation maps and alpha are required when DCRC is enabled")
            if self.maps.variant != cfg.relation_variant:
                raise ValueError("relation map variant does not match the config")
            self.alpha = np.asarray(self.alpha, dtype=np.float64)
            if self.alpha.shape != (cfg.n_slices, cfg.L):
                raise ValueError(f"alpha has shape {self.alpha.shape}")

    @classmethod
    def init(cls, cfg: RunConfig, rng: np.random.Generator | None = None) -> "AdapterState":
        """Zero block parameters, near-identity maps, ``alpha = cfg.alpha_init``."""
        rng = np.random.default_rng([cfg.seed, 3]) if rng is None else rng
        maps = alpha = None
        if cfg.uses_dcrc:
            maps = RelationMaps.init(cfg, rng)
            alpha = np.full((cfg.n_slices, cfg.L), float(cfg.alpha_init))
        return cls(
            cfg,
            np.zeros((cfg.L, cfg.b_e, n_skew(cfg.q))),
            np.zeros((cfg.L, cfg.b_v, cfg.q, cfg.q)),
            maps,
            alpha,
        )

    @classmethod
    def random(cls, cfg: RunConfig, rng: np.random.Generator, scale: float = 0.3) -> "AdapterState":
        """A generic non-identity state, used to probe gradients away from init."""
        state = cls.init(cfg, rng)
        return state.unflatten(state.flatten() + scale * rng.standard_normal(state.size))

    def _parts(self) -> list[np.ndarray]:
        parts = [self.text_skew, self.image_g]
        if self.cfg.uses_dcrc:
            parts += self.maps.matrices() + [self.alpha]
        return parts

    @property
    def size(self) -> int:
        return sum(p.size for p in self._parts())

    def flatten(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self._parts()])

    def unflatten(self, vec) -> "AdapterState":
        """A new state of the same layout filled from ``vec``."""
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.size,):
            raise ValueError(f"expected a flat vector of length {self.size}, got {vec.shape}")
        chunks, offset = [], 0
        for p in self._parts():
            chunks.append(vec[offset:offset + p.size].reshape(p.shape).copy())
            offset += p.size
        maps = alpha = None
        if self.cfg.uses_dcrc:
            maps = self.maps.with_matrices(chunks[2:-1])
            alpha = chunks[-1]
        return AdapterState(self.cfg, chunks[0], chunks[1], maps, alpha)

    def layout(self) -> list[tuple[str, tuple[int, ...]]]:
        """Names and shapes of the flat segments, in order."""
        names = ["text_skew", "image_g"]
        if self.cfg.uses_dcrc:
            if self.maps.variant == "linear":
                names += ["s3", "s4"]
            else:
                names += [f"f3[{j}]" for j in range(self.maps.k)]
                names += [f"f4[{j}]" for j in range(self.maps.k)]
            names.append("alpha")
        return [(name, p.shape) for name, p in zip(names, self._parts())]

    def region_of(self, index: int) -> str:
        offset = 0
        for name, shape in self.layout():
            size = int(np.prod(shape))
            if index < offset + size:
                return f"{name}{tuple(int(i) for i in np.unravel_index(index - offset, shape))}"
            offset += size
        raise IndexError(index)


@dataclass
class AdapterForward:
    """Intermediate results of the adapter pipeline for one state."""

    skews: dict
    T: RelationTensor
    T_w: np.ndarray | None
    T_adj: RelationTensor
    text_weights: list
    image_weights: list
    maps_cache: tuple | None = field(default=None, repr=False)

    def pre_blocks(self, modality: str, layer: int) -> list[np.ndarray]:
        return tower_blocks(self.T, modality, layer)

    def post_blocks(self, modality: str, layer: int) -> list[np.ndarray]:
        return tower_blocks(self.T_adj, modality, layer)


def _slice_index(order):
    return {tag: s for s, tag in enumerate(order)}


def adapter_forward(state: AdapterState, stack: PretrainedStack) -> AdapterForward:
    """Blocks -> relation tensor -> gated update -> adjusted weights."""
    cfg = state.cfg
    q, L = cfg.q, cfg.L
    order = slice_order(cfg.b_v, cfg.b_e)
    index = _slice_index(order)
    T = np.empty((q, q, cfg.n_slices, L))
    skews = {}
    iu = np.triu_indices(q, 1)
    for ell in range(L):
        for i in range(cfg.b_e):
            U = np.zeros((q, q))
            U[iu] = state.text_skew[ell, i]
            Q = U - U.T
            skews[ell, i] = Q
            T[:, :, index[TEXT, i], ell] = cayley(Q, check=False)
        for i in range(cfg.b_v):
            T[:, :, index[IMAGE, i], ell] = np.eye(q) + state.image_g[ell, i]
    T = RelationTensor(T, order)
    T_w = cache = None
    if cfg.uses_dcrc:
        T_w, cache = relation_maps_forward(T.T, state.maps)
        T_adj = dcrc_update(T, T_w, state.alpha)
    else:
        T_adj = T
    text_w = [block_diag(*tower_blocks(T_adj, TEXT, ell)) @ stack.text[ell] for ell in range(L)]
    image_w = [block_diag(*tower_blocks(T_adj, IMAGE, ell)) @ stack.image[ell] for ell in range(L)]
    return AdapterForward(skews, T, T_w, T_adj, text_w, image_w, cache)


def loss(state: AdapterState, stack: PretrainedStack, batch: SynthBatch) -> float:
    fw = adapter_forward(state, stack)
    E_v, _ = tower_forward(fw.image_weights, stack.proj_image, batch.x_image)
    E_e, _ = tower_forward(fw.text_weights, stack.proj_text, batch.x_text)
    value, _, _ = alignment_loss_grad(E_v, E_e, state.cfg.tau)
    return value


def loss_and_grad(state: AdapterState, stack: PretrainedStack, batch: SynthBatch):
    """The alignment loss and its exact gradient as a flat vector."""
    cfg = state.cfg
    q = cfg.q
    fw = adapter_forward(state, stack)
    E_v, cache_v = tower_forward(fw.image_weights, stack.proj_image, batch.x_image)
    E_e, cache_e = tower_forward(fw.text_weights, stack.proj_text, batch.x_text)
    value, dE_v, dE_e = alignment_loss_grad(E_v, E_e, cfg.tau)
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value}; {_nonfinite_region(state)}")

    index = _slice_index(fw.T.order)
    dT_adj = np.zeros_like(fw.T.T)
    for modality, grads, weights, n_blocks in (
        (IMAGE, tower_vjp(cache_v, dE_v), stack.image, cfg.b_v),
        (TEXT, tower_vjp(cache_e, dE_e), stack.text, cfg.b_e),
    ):
        for ell, dW in enumerate(grads):
            dB = dW @ weights[ell].T
            for i in range(n_blocks):
                dT_adj[:, :, index[modality, i], ell] = dB[i * q:(i + 1) * q, i * q:(i + 1) * q]

    parts_maps = []
    if cfg.uses_dcrc:
        d_alpha = np.einsum("abil,abil->il", dT_adj, fw.T_w)
        dT_maps, d_mats = relation_maps_vjp(fw.maps_cache, state.alpha[None, None] * dT_adj)
        dT = dT_adj + dT_maps
        parts_maps = [M.ravel() for M in d_mats] + [d_alpha.ravel()]
    else:
        dT = dT_adj

    d_skew = np.empty_like(state.text_skew)
    d_g = np.empty_like(state.image_g)
    for ell in range(cfg.L):
        for i in range(cfg.b_e):
            dQ = cayley_vjp(fw.skews[ell, i], dT[:, :, index[TEXT, i], ell])
            d_skew[ell, i] = skew_grad(dQ)
        for i in range(cfg.b_v):
            d_g[ell, i] = dT[:, :, index[IMAGE, i], ell]
    grad = np.concatenate([d_skew.ravel(), d_g.ravel()] + parts_maps)
    if not np.all(np.isfinite(grad)):
        bad = int(np.flatnonzero(~np.isfinite(grad))[0])
        raise FloatingPointError(f"non-finite gradient at {state.region_of(bad)}")
    return value, grad


def _nonfinite_region(state: AdapterState) -> str:
    flat = state.flatten()
    bad = np.flatnonzero(~np.isfinite(flat))
    if bad.size:
        return f"non-finite parameter at {state.region_of(int(bad[0]))}"
    return f"parameters finite, max |param| = {np.max(np.abs(flat)):.3e}"


def central_differences(f, x, h: float = 1e-5) -> np.ndarray:
    """Coordinate-wise central differences of a scalar function."""
    if not h > 0:
        raise ValueError("step must be > 0")
    x = np.asarray(x, dtype=np.float64)
    grad = np.empty_like(x)
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        grad[j] = (f(xp) - f(xm)) / (2 * h)
    return grad


def finite_diff_grad(state: AdapterState, stack: PretrainedStack, batch: SynthBatch, h: float = 1e-5):
    return central_differences(lambda v: loss(state.unflatten(v), stack, batch), state.flatten(), h)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, size: int) -> "AdamState":
        return cls(np.zeros(size), np.zeros(size), 0)


def adam_step(params, grad, moments: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns ``(params, moments)`` without mutating inputs."""
    t = moments.t + 1
    m = beta1 * moments.m + (1 - beta1) * grad
    v = beta2 * moments.v + (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1 ** t)
    v_hat = v / (1 - beta2 ** t)
    params = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return params, AdamState(m, v, t)


def energy_diagnostics(fw: AdapterForward, stack: PretrainedStack) -> dict:
    """Text-tower pre-DCRC energy gaps and post-DCRC block orthogonality."""
    rel_gaps, residuals = [], []
    for ell in range(stack.L):
        W0 = stack.text[ell]
        R = block_diag(*fw.pre_blocks(TEXT, ell))
        he0 = hyperspherical_energy(W0).energy
        rel_gaps.append(abs(hyperspherical_energy(R @ W0).energy - he0) / he0)
        residuals += [orthogonality_residual(B) for B in fw.post_blocks(TEXT, ell)]
    return {"text_pre_dcrc_rel_gap": max(rel_gaps), "text_post_dcrc_ortho_residual": max(residuals)}
