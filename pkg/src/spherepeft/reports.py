"""JSON-ready reports: per-layer hyperspherical energy and parameter accounting."""
from __future__ import annotations

from scipy.linalg import block_diag

from .config import CLIP_LIKE_PRESET, RunConfig
from .grad_engine import AdapterState, adapter_forward
from .hyperspherical import hyperspherical_energy
from .ortho_param import IMAGE, TEXT
from .toy_model import PretrainedStack
from .train import CLIP_CAVEAT, parameter_summary

__all__ = ["energy_report", "param_count_report", "PRESERVATION_TOL"]

PRESERVATION_TOL = 1e-8


def _gap(he, he0):
    gap = abs(he - he0)
    return gap, gap / he0


def energy_report(cfg: RunConfig, state: AdapterState, stack: PretrainedStack) -> dict:
    """Energy of pretrained, pre-DCRC and adjusted weights per layer and tower.

    Text-tower pre-DCRC relative gaps above ``PRESERVATION_TOL`` are listed as
    violations. Post-DCRC and image-tower gaps are reported only.
    """
    fw = adapter_forward(state, stack)
    adjusted = {TEXT: fw.text_weights, IMAGE: fw.image_weights}
    entries, violations = [], []
    for ell in range(cfg.L):
        for modality in (TEXT, IMAGE):
            W0 = stack.layer_weight(modality, ell)
            pre = block_diag(*fw.pre_blocks(modality, ell)) @ W0
            he0 = hyperspherical_energy(W0).energy
            he_pre = hyperspherical_energy(pre).energy
            he_adj = hyperspherical_energy(adjusted[modality][ell]).energy
            gap_pre, rel_pre = _gap(he_pre, he0)
            gap_adj, rel_adj = _gap(he_adj, he0)
            entry = {
                "layer": ell,
                "tower": modality,
                "he_pretrained": he0,
                "he_pre_dcrc": he_pre,
                "he_adjusted": he_adj,
                "gap_pre_dcrc": gap_pre,
                "rel_gap_pre_dcrc": rel_pre,
                "gap_adjusted": gap_adj,
                "rel_gap_adjusted": rel_adj,
                "violation": modality == TEXT and rel_pre > PRESERVATION_TOL,
            }
            if entry["violation"]:
                violations.append({"layer": ell, "tower": modality, "rel_gap_pre_dcrc": rel_pre})
            entries.append(entry)
    return {
        "schema": "energy-report/1",
        "config_hash": cfg.config_hash(),
        "tolerance": PRESERVATION_TOL,
        "layers": entries,
        "violations": violations,
    }


def param_count_report(cfg: RunConfig) -> dict:
    summary = parameter_summary(cfg)
    clip_like = (cfg.d_v, cfg.d_e, cfg.q, cfg.L) == (
        CLIP_LIKE_PRESET.d_v,
        CLIP_LIKE_PRESET.d_e,
        CLIP_LIKE_PRESET.q,
        CLIP_LIKE_PRESET.L,
    )
    return {
        "schema": "param-count/1",
        "config": cfg.to_dict(),
        "counts": summary,
        "reference_fraction": 0.04 if clip_like else None,
        "note": CLIP_CAVEAT if clip_like else None,
    }
