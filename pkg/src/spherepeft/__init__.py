"""Hyperspherical parameter-efficient fine-tuning on a toy dual-tower encoder.

Block-diagonal Cayley-orthogonal adapters for the text tower, unconstrained
block adapters for the image tower, cross-relation mixing of all adapter
blocks through mode-n products, and the T-product algebra that motivates it.
"""
from .config import RunConfig, load_config
from .dcrc import RelationMaps, RelationTensor, dcrc_update, relation_transform, relation_transform_mlp
from .grad_engine import AdamState, AdapterState, adam_step, finite_diff_grad, loss_and_grad
from .hyperspherical import EnergyReport, energy_gap, hyperspherical_energy
from .ortho_param import cayley, pop_block, to_skew
from .tensor_core import circ, facewise_product, fold, frontal_slice, mode_n_product, unfold
from .toy_model import make_pretrained, synth_pairs
from .tproduct import TransformSet, tprod3, tprodN, transform_forward, transform_inverse, transform_tprod
from .train import train

__version__ = "0.1.0"
