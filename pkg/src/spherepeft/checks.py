"""Fixed-seed invariant suite behind ``spherepeft check``.

Each property returns the observed value that is compared against its
tolerance. Fault injection deliberately corrupts one computation so the
suite can be shown to catch it.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import block_diag

from .config import RunConfig
from .dcrc import (
    RelationMaps,
    RelationTensor,
    apply_relation_maps,
    dcrc_update,
    relation_transform,
    relation_transform_mlp,
    slice_order,
)
from .grad_engine import AdapterState, finite_diff_grad, loss_and_grad
from .hyperspherical import energy_gap, hyperspherical_energy
from .ortho_param import SkewParam, cayley, orthogonality_residual, to_skew
from .tensor_core import fold, mode_n_product, unfold
from .toy_model import make_pretrained, synth_pairs
from .tproduct import TransformSet, tprod3, tprodN, transform_forward, transform_inverse, transform_tprod

__all__ = ["PropertyResult", "FAMILIES", "FAULTS", "run_checks"]

FAULTS = ("cayley",)
_REGISTRY: list = []


@dataclass
class PropertyResult:
    family: str
    name: str
    tolerance: float
    observed: float | None
    passed: bool
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def prop(family: str, tolerance: float):
    def register(fn):
        _REGISTRY.append((family, fn.__name__, tolerance, fn))
        return fn

    return register


def _rng(tag: int) -> np.random.Generator:
    return np.random.default_rng([20240, tag])


def _cayley(Q, faults):
    if "cayley" in faults:
        # flip the sign of the transposed half: U - U^T becomes U + U^T
        return cayley(Q + 2 * np.triu(Q, 1).T, check=False)
    return cayley(Q)


def _random_skew(rng, q):
    return to_skew(SkewParam(q, rng.standard_normal(q * (q - 1) // 2)))


def _circulant_oracle(A, B):
    """Cyclic convolution of frontal slices over all trailing modes."""
    trailing = A.shape[2:]
    C = np.zeros((A.shape[0], B.shape[1]) + trailing)
    for out in np.ndindex(*trailing):
        for j in np.ndindex(*trailing):
            shift = tuple((o - jj) % n for o, jj, n in zip(out, j, trailing))
            C[(slice(None), slice(None)) + out] += A[(slice(None), slice(None)) + shift] @ B[(slice(None), slice(None)) + j]
    return C


# --- tensor_core ---------------------------------------------------------------


@prop("tensor_core", 0.0)
def fold_unfold_roundtrip(faults):
    rng = _rng(1)
    worst = 0.0
    for dims in [(2, 3, 2), (3, 2, 4), (2, 2, 3, 2), (1, 4, 2, 3)]:
        A = rng.standard_normal(dims)
        worst = max(worst, float(np.max(np.abs(fold(unfold(A), dims[-1]) - A))))
    return worst


@prop("tensor_core", 1e-10)
def mode_product_inverse(faults):
    rng = _rng(2)
    A = rng.standard_normal((2, 3, 4, 3))
    worst = 0.0
    for mode in range(4):
        n = A.shape[mode]
        M = np.eye(n) + 0.3 * rng.standard_normal((n, n))
        back = mode_n_product(mode_n_product(A, M, mode), np.linalg.inv(M), mode)
        worst = max(worst, float(np.max(np.abs(back - A))))
    return worst


# --- tproduct ------------------------------------------------------------------


@prop("tproduct", 1e-12)
def tprod3_matches_circulant(faults):
    rng = _rng(3)
    worst = 0.0
    for _ in range(20):
        n1, n2, l, n3 = rng.integers(1, 5, size=3).tolist() + [int(rng.integers(1, 6))]
        A = rng.standard_normal((n1, n2, n3))
        B = rng.standard_normal((n2, l, n3))
        worst = max(worst, float(np.max(np.abs(tprod3(A, B) - _circulant_oracle(A, B)))))
    return worst


@prop("tproduct", 1e-11)
def tprodN_matches_expansion(faults):
    rng = _rng(4)
    worst = 0.0
    for dims in [(2, 2, 2, 2), (3, 2, 2, 2), (2, 2, 3, 2, 2)]:
        A = rng.standard_normal(dims)
        B = rng.standard_normal((dims[1], 2) + dims[2:])
        worst = max(worst, float(np.max(np.abs(tprodN(A, B) - _circulant_oracle(A, B)))))
    return worst


@prop("tproduct", 1e-9)
def dft_transform_equivalence(faults):
    rng = _rng(5)
    worst = 0.0
    for dims in [(4, 4, 5), (3, 2, 4), (2, 3, 3, 2)]:
        A = rng.standard_normal(dims)
        B = rng.standard_normal((dims[1], 3) + dims[2:])
        C = transform_tprod(A, B, TransformSet.dft(dims[2:]))
        worst = max(worst, float(np.max(np.abs(C - tprodN(A, B)))))
    return worst


@prop("tproduct", 1e-10)
def transform_roundtrip(faults):
    rng = _rng(6)
    A = rng.standard_normal((2, 2, 3, 4))
    mats = []
    for n in (3, 4):
        U, _ = np.linalg.qr(rng.standard_normal((n, n)))
        V, _ = np.linalg.qr(rng.standard_normal((n, n)))
        mats.append(U @ np.diag(np.geomspace(1.0, 1e3, n)) @ V)
    S = TransformSet(mats)
    return float(np.max(np.abs(transform_inverse(transform_forward(A, S), S) - A)))


# --- hyperspherical --------------------------------------------------------------


@prop("hyperspherical", 1e-12)
def identity_energy(faults):
    return abs(hyperspherical_energy(np.eye(2)).energy - np.sqrt(2.0))


@prop("hyperspherical", 1e-8)
def orthogonal_invariance(faults):
    rng = _rng(7)
    worst = 0.0
    for _ in range(20):
        W0 = rng.standard_normal((8, 12))
        R = block_diag(*[_cayley(_random_skew(rng, 4), faults) for _ in range(2)])
        worst = max(worst, energy_gap(R @ W0, W0) / hyperspherical_energy(W0).energy)
    return worst


# --- ortho_param -----------------------------------------------------------------


@prop("ortho_param", 1e-10)
def cayley_orthogonality(faults):
    rng = _rng(8)
    worst = 0.0
    for q in (2, 4, 8, 16):
        for _ in range(25):
            R = _cayley(_random_skew(rng, q), faults)
            worst = max(worst, orthogonality_residual(R), orthogonality_residual(R.T))
    return worst


@prop("ortho_param", 1e-10)
def cayley_defining_equation(faults):
    rng = _rng(9)
    worst = 0.0
    for _ in range(20):
        Q = _random_skew(rng, 8)
        R = _cayley(Q, faults)
        I = np.eye(8)
        worst = max(worst, float(np.linalg.norm((I - Q) @ R - (I + Q))))
    return worst


# --- dcrc ------------------------------------------------------------------------


def _toy_relation(rng, cfg):
    T = rng.standard_normal((cfg.q, cfg.q, cfg.n_slices, cfg.L))
    return RelationTensor(T, slice_order(cfg.b_v, cfg.b_e))


@prop("dcrc", 0.0)
def gate_zero_neutral(faults):
    rng = _rng(10)
    cfg = RunConfig()
    T = _toy_relation(rng, cfg)
    maps = RelationMaps.init(cfg, rng, noise=0.5)
    out = dcrc_update(T, apply_relation_maps(T, maps), np.zeros((cfg.n_slices, cfg.L)))
    return float(np.max(np.abs(out.T - T.T)))


@prop("dcrc", 1e-12)
def linear_equals_depth_one_mlp(faults):
    rng = _rng(11)
    cfg = RunConfig()
    T = _toy_relation(rng, cfg)
    s3 = rng.standard_normal((cfg.n_slices, cfg.n_slices))
    s4 = rng.standard_normal((cfg.L, cfg.L))
    lin = relation_transform(T, RelationMaps("linear", s3=s3, s4=s4))
    mlp = relation_transform_mlp(T, RelationMaps("mlp", f3=[s3], f4=[s4], activation="identity"))
    return float(np.max(np.abs(lin - mlp)))


@prop("dcrc", 1e-12)
def relation_transform_composition(faults):
    rng = _rng(12)
    cfg = RunConfig()
    T = _toy_relation(rng, cfg)
    s3 = rng.standard_normal((cfg.n_slices, cfg.n_slices))
    s4 = rng.standard_normal((cfg.L, cfg.L))
    oracle = np.einsum("ij,lm,abjm->abil", s3, s4, T.T)
    return float(np.max(np.abs(relation_transform(T, RelationMaps("linear", s3=s3, s4=s4)) - oracle)))


# --- grad_engine -----------------------------------------------------------------


@prop("grad_engine", 1e-4)
def gradient_matches_finite_differences(faults):
    worst = 0.0
    for seed, variant in [(0, "linear"), (1, "mlp")]:
        cfg = RunConfig(seed=seed, relation_variant=variant)
        rng = _rng(13 + seed)
        state = AdapterState.random(cfg, rng)
        stack = make_pretrained(cfg, seed)
        batch = synth_pairs(cfg, seed, 16)
        _, g = loss_and_grad(state, stack, batch)
        fd = finite_diff_grad(state, stack, batch, 1e-5)
        rel = np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), 1e-8)
        worst = max(worst, float(rel.max()))
    return worst


@prop("grad_engine", 1e-12)
def zero_gate_blocks_map_gradients(faults):
    cfg = RunConfig(relation_variant="linear")
    rng = _rng(15)
    state = AdapterState.random(cfg, rng)
    state.alpha[:] = 0.0
    _, g = loss_and_grad(state, make_pretrained(cfg, 0), synth_pairs(cfg, 0, 16))
    start = state.text_skew.size + state.image_g.size
    stop = start + sum(M.size for M in state.maps.matrices())
    return float(np.max(np.abs(g[start:stop])))


FAMILIES = tuple(dict.fromkeys(family for family, *_ in _REGISTRY))


def run_checks(filter_name: str | None = None, faults=()) -> list[PropertyResult]:
    unknown = set(faults) - set(FAULTS)
    if unknown:
        raise ValueError(f"unknown fault(s) {sorted(unknown)}; available: {FAULTS}")
    results = []
    for family, name, tol, fn in _REGISTRY:
        if filter_name and filter_name not in (family, name):
            continue
        try:
            observed = float(fn(set(faults)))
            passed = bool(observed <= tol)
            detail = ""
        except Exception as exc:  # a crashing property is a failed property
            observed, passed, detail = None, False, f"{type(exc).__name__}: {exc}"
        results.append(PropertyResult(family, name, tol, observed, passed, detail))
    return results
