"""Cross-modality and cross-layer communication between adapter blocks.

All q x q blocks of a layer become the frontal slices of a 3-order tensor,
the layers are stacked along a fourth mode, and learnable maps mix the
slices along mode 3 (modality/block axis, 0-based axis 2) and mode 4 (layer
axis, 0-based axis 3). The mixed tensor is gated per slice by ``alpha`` and
added back.

Every forward function here has a matching ``*_vjp`` used by the gradient
engine.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import block_diag

from .config import RunConfig
from .ortho_param import IMAGE, TEXT
from .tensor_core import mode_n_product

__all__ = [
    "RelationTensor",
    "RelationMaps",
    "slice_order",
    "assemble_layer_tensor",
    "disassemble_layer_tensor",
    "assemble_relation_tensor",
    "relation_transform",
    "relation_transform_mlp",
    "apply_relation_maps",
    "dcrc_update",
    "apply_adjustment",
    "tower_blocks",
    "param_count_dcrc",
    "relation_maps_forward",
    "relation_maps_vjp",
    "ACTIVATIONS",
]

MODALITY_AXIS = 2
LAYER_AXIS = 3


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_grad(z):
    return (z > 0).astype(np.float64)


def _tanh_grad(z):
    return 1.0 - np.tanh(z) ** 2


ACTIVATIONS = {
    "relu": (_relu, _relu_grad),
    "tanh": (np.tanh, _tanh_grad),
    "identity": (lambda x: x, np.ones_like),
}


def slice_order(b_v: int, b_e: int) -> list[tuple[str, int]]:
    """Mode-3 slice order: ``v1, e1, v2, e2, ...`` then the surplus tower's blocks."""
    order = []
    for i in range(min(b_v, b_e)):
        order += [(IMAGE, i), (TEXT, i)]
    order += [(IMAGE, i) for i in range(b_e, b_v)]
    order += [(TEXT, i) for i in range(b_v, b_e)]
    return order


@dataclass
class RelationTensor:
    """4-order tensor ``(q, q, b_v + b_e, L)`` with per-slice provenance."""

    T: np.ndarray
    order: list = field(default_factory=list)

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=np.float64)
        if self.T.ndim != 4 or self.T.shape[0] != self.T.shape[1]:
            raise ValueError(f"relation tensor must be (q, q, slices, L), got {self.T.shape}")
        if len(self.order) != self.T.shape[2]:
            raise ValueError(f"{len(self.order)} slice tags for {self.T.shape[2]} slices")

    @property
    def slice_tags(self) -> list[tuple[str, int, int]]:
        """``(modality, block, layer)`` for every frontal slice in linear order."""
        return [(mod, blk, layer) for layer in range(self.T.shape[3]) for mod, blk in self.order]

    def indices(self, modality: str) -> list[int]:
        return [i for i, (mod, _) in enumerate(self.order) if mod == modality]

    def replace(self, T) -> "RelationTensor":
        return RelationTensor(T, list(self.order))


@dataclass
class RelationMaps:
    """Learnable mixing maps.

    ``linear`` uses ``s3`` (slices x slices) and ``s4`` (L x L); ``mlp`` uses
    weight lists ``f3`` and ``f4`` of depth ``k`` with ``activation`` between
    consecutive maps (none after the last).
    """

    variant: str
    s3: np.ndarray = None
    s4: np.ndarray = None
    f3: list = None
    f4: list = None
    activation: str = "relu"

    def __post_init__(self):
        if self.variant == "linear":
            self.s3 = np.asarray(self.s3, dtype=np.float64)
            self.s4 = np.asarray(self.s4, dtype=np.float64)
            _square(self.s3, "s3")
            _square(self.s4, "s4")
        elif self.variant == "mlp":
            if not self.f3 or not self.f4 or len(self.f3) != len(self.f4):
                raise ValueError("mlp maps need f3 and f4 weight lists of equal depth k >= 1")
            self.f3 = [np.asarray(W, dtype=np.float64) for W in self.f3]
            self.f4 = [np.asarray(W, dtype=np.float64) for W in self.f4]
            for W in self.f3:
                _square(W, "f3 weight", self.f3[0].shape[0])
            for W in self.f4:
                _square(W, "f4 weight", self.f4[0].shape[0])
            if self.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {self.activation!r}")
        else:
            raise ValueError(f"unknown relation variant {self.variant!r}")

    @property
    def k(self) -> int:
        return 1 if self.variant == "linear" else len(self.f3)

    @classmethod
    def init(cls, cfg: RunConfig, rng: np.random.Generator, noise: float = 1e-3) -> "RelationMaps":
        """Identity maps plus ``noise``-scaled Gaussian perturbations."""
        nb, L = cfg.n_slices, cfg.L

        def near_eye(n):
            return np.eye(n) + noise * rng.standard_normal((n, n))

        if cfg.relation_variant == "linear":
            return cls("linear", s3=near_eye(nb), s4=near_eye(L))
        if cfg.relation_variant == "mlp":
            f3 = [near_eye(nb) for _ in range(cfg.k)]
            f4 = [near_eye(L) for _ in range(cfg.k)]
            return cls("mlp", f3=f3, f4=f4, activation=cfg.activation)
        raise ValueError(f"no relation maps for variant {cfg.relation_variant!r}")

    def matrices(self) -> list[np.ndarray]:
        """All weight matrices in flattening order (mode-3 maps, then mode-4 maps)."""
        if self.variant == "linear":
            return [self.s3, self.s4]
        return list(self.f3) + list(self.f4)

    def with_matrices(self, mats) -> "RelationMaps":
        if self.variant == "linear":
            return RelationMaps("linear", s3=mats[0], s4=mats[1])
        k = len(self.f3)
        return RelationMaps("mlp", f3=mats[:k], f4=mats[k:], activation=self.activation)


def _square(M, name, n=None):
    if M.ndim != 2 or M.shape[0] != M.shape[1] or (n is not None and M.shape[0] != n):
        raise ValueError(f"{name} must be square{'' if n is None else f' of size {n}'}, got {M.shape}")


def assemble_layer_tensor(text_blocks, image_blocks, layer: int = 0):
    """Stack one layer's blocks into a ``(q, q, b_v + b_e)`` tensor.

    Returns the tensor and its slice tags ``(modality, block, layer)``.
    """
    blocks = {TEXT: [np.asarray(b, dtype=np.float64) for b in text_blocks],
              IMAGE: [np.asarray(b, dtype=np.float64) for b in image_blocks]}
    shapes = {b.shape for bl in blocks.values() for b in bl}
    if len(shapes) != 1:
        raise ValueError(f"blocks must share one q x q shape, got {sorted(shapes)}")
    (shape,) = shapes
    if len(shape) != 2 or shape[0] != shape[1]:
        raise ValueError(f"blocks must be square, got {shape}")
    order = slice_order(len(blocks[IMAGE]), len(blocks[TEXT]))
    tensor = np.stack([blocks[mod][i] for mod, i in order], axis=2)
    return tensor, [(mod, i, layer) for mod, i in order]


def disassemble_layer_tensor(tensor, tags):
    """Inverse of :func:`assemble_layer_tensor`: ``(text_blocks, image_blocks)``."""
    out = {TEXT: {}, IMAGE: {}}
    for s, (mod, i, _) in enumerate(tags):
        out[mod][i] = tensor[:, :, s].copy()
    return [out[TEXT][i] for i in sorted(out[TEXT])], [out[IMAGE][i] for i in sorted(out[IMAGE])]


def assemble_relation_tensor(layer_tensors, order) -> RelationTensor:
    """Stack L layer tensors along mode 4 in layer order.

    ``order`` is the per-layer slice order, either ``(modality, block)`` pairs
    or the tags returned by :func:`assemble_layer_tensor`.
    """
    if not layer_tensors:
        raise ValueError("need at least one layer tensor")
    shapes = {np.shape(t) for t in layer_tensors}
    if len(shapes) != 1:
        raise ValueError(f"layer tensors differ in shape: {sorted(shapes)}")
    T = np.stack([np.asarray(t, dtype=np.float64) for t in layer_tensors], axis=3)
    order = [(mod, i) for mod, i, *_ in order]
    return RelationTensor(T, order)


def relation_transform(T: RelationTensor, maps: RelationMaps) -> np.ndarray:
    """Linear mixing ``T x_3 S3 x_4 S4``."""
    if maps.variant != "linear":
        raise ValueError("relation_transform takes linear maps")
    _check_map_shapes(T.T, maps)
    return mode_n_product(mode_n_product(T.T, maps.s3, MODALITY_AXIS), maps.s4, LAYER_AXIS)


def _mlp_forward(X, weights, axis, act):
    """Returns the output and the pre-activations of every map."""
    pre = []
    for j, W in enumerate(weights):
        Z = mode_n_product(X, W, axis)
        pre.append(Z)
        X = act(Z) if j < len(weights) - 1 else Z
    return X, pre


def relation_transform_mlp(T: RelationTensor, maps: RelationMaps) -> np.ndarray:
    """``f4(f3(T))`` with ``f(X) = s(...s(X x W_1)...) x W_k`` along each mode."""
    if maps.variant != "mlp":
        raise ValueError("relation_transform_mlp takes mlp maps")
    _check_map_shapes(T.T, maps)
    act = ACTIVATIONS[maps.activation][0]
    X, _ = _mlp_forward(T.T, maps.f3, MODALITY_AXIS, act)
    X, _ = _mlp_forward(X, maps.f4, LAYER_AXIS, act)
    return X


def apply_relation_maps(T: RelationTensor, maps: RelationMaps) -> np.ndarray:
    if maps.variant == "linear":
        return relation_transform(T, maps)
    return relation_transform_mlp(T, maps)


def _check_map_shapes(T, maps):
    nb, L = T.shape[2], T.shape[3]
    mats = maps.matrices()
    half = len(mats) // 2
    for M in mats[:half]:
        if M.shape != (nb, nb):
            raise ValueError(f"mode-3 map of shape {M.shape} does not match {nb} slices")
    for M in mats[half:]:
        if M.shape != (L, L):
            raise ValueError(f"mode-4 map of shape {M.shape} does not match {L} layers")


def dcrc_update(T: RelationTensor, T_w, alpha) -> RelationTensor:
    """``T'(:, :, i, l) = T(:, :, i, l) + alpha[i, l] * T_w(:, :, i, l)``."""
    T_w = np.asarray(T_w)
    alpha = np.asarray(alpha, dtype=np.float64)
    if T_w.shape != T.T.shape:
        raise ValueError(f"T_w shape {T_w.shape} differs from T shape {T.T.shape}")
    if alpha.shape != T.T.shape[2:]:
        raise ValueError(f"alpha must have shape {T.T.shape[2:]}, got {alpha.shape}")
    return T.replace(T.T + alpha[None, None] * T_w)


def tower_blocks(T: RelationTensor, modality: str, layer: int) -> list[np.ndarray]:
    """The q x q blocks of one tower at one layer, in block-index order."""
    picks = sorted((blk, s) for s, (mod, blk) in enumerate(T.order) if mod == modality)
    return [T.T[:, :, s, layer] for _, s in picks]


def apply_adjustment(T: RelationTensor, stack, modality: str, layer: int) -> np.ndarray:
    """Adjusted weight ``blockdiag(tower blocks of layer) @ W_layer``."""
    W = stack.layer_weight(modality, layer)
    blocks = tower_blocks(T, modality, layer)
    if not blocks:
        raise ValueError(f"no {modality} slices in relation tensor")
    q = T.T.shape[0]
    if W.shape[0] != q * len(blocks):
        raise ValueError(
            f"{modality} weight has {W.shape[0]} rows but {len(blocks)} blocks of size {q}"
        )
    return block_diag(*blocks) @ W


def param_count_dcrc(cfg: RunConfig) -> dict:
    """Trainable counts of the relation maps and the gate.

    With ``m`` adapted matrices per layer the layer mode has extent ``L * m``.
    """
    nb, slots = cfg.n_slices, cfg.L * cfg.m
    if not cfg.uses_dcrc:
        return {"mode3_maps": 0, "mode4_maps": 0, "alpha": 0, "dcrc_total": 0}
    depth = 1 if cfg.relation_variant == "linear" else cfg.k
    counts = {"mode3_maps": depth * nb * nb, "mode4_maps": depth * slots * slots, "alpha": nb * slots}
    counts["dcrc_total"] = sum(counts.values())
    return counts


# --- vector-Jacobian products -------------------------------------------------


def _mode_weight_grad(dZ, X, axis):
    """Gradient of ``Z = X x_axis W`` w.r.t. ``W`` given ``dZ``."""
    dZm = np.moveaxis(dZ, axis, 0).reshape(dZ.shape[axis], -1)
    Xm = np.moveaxis(X, axis, 0).reshape(X.shape[axis], -1)
    return dZm @ Xm.T


def _mlp_vjp(X0, weights, pre, dX, axis, act_name):
    _, act_grad = ACTIVATIONS[act_name]
    act = ACTIVATIONS[act_name][0]
    k = len(weights)
    dWs = [None] * k
    dZ = dX
    for j in range(k - 1, -1, -1):
        X_in = X0 if j == 0 else act(pre[j - 1])
        dWs[j] = _mode_weight_grad(dZ, X_in, axis)
        dX_in = mode_n_product(dZ, weights[j].T, axis)
        dZ = dX_in * act_grad(pre[j - 1]) if j > 0 else dX_in
    return dZ, dWs


def relation_maps_forward(T: np.ndarray, maps: RelationMaps):
    """Forward pass returning ``T_w`` and a cache for :func:`relation_maps_vjp`."""
    if maps.variant == "linear":
        act_name = "identity"
        mode3, mode4 = [maps.s3], [maps.s4]
    else:
        act_name = maps.activation
        mode3, mode4 = maps.f3, maps.f4
    act = ACTIVATIONS[act_name][0]
    X3, pre3 = _mlp_forward(T, mode3, MODALITY_AXIS, act)
    X4, pre4 = _mlp_forward(X3, mode4, LAYER_AXIS, act)
    return X4, (T, X3, pre3, pre4, mode3, mode4, act_name)


def relation_maps_vjp(cache, dT_w):
    """Gradients w.r.t. the input tensor and every map (in ``matrices()`` order)."""
    T, X3, pre3, pre4, mode3, mode4, act_name = cache
    dX3, dW4 = _mlp_vjp(X3, mode4, pre4, dT_w, LAYER_AXIS, act_name)
    dT, dW3 = _mlp_vjp(T, mode3, pre3, dX3, MODALITY_AXIS, act_name)
    return dT, dW3 + dW4
