"""Pipeline steps shared by the command line, the demos and the tests.

All randomness is derived from ``cfg.seed`` with one stream label per step,
so any step can be rerun in isolation and reproduce the same artifacts.
"""

from __future__ import annotations

from .atpg import TestVectorSet, generate_test_vectors
from .campaign import CampaignResult, run_campaign
from .config import PipelineConfig
from .detector import UncertaintyProfile, fit_profile
from .network import BinaryNetwork
from .rng import RngStream
from .training import Dataset, load_idx, synth_dataset, train

# stream labels under the master seed
DATA, TRAIN, EVAL, ATPG, PROFILE, CAMPAIGN, CHECK, FAULT = 10, 11, 12, 13, 14, 15, 16, 17


def stream(cfg: PipelineConfig, label: int) -> RngStream:
    return RngStream(cfg.seed).derive(label)


def build_dataset(cfg: PipelineConfig) -> Dataset:
    d = cfg.data
    seed = stream(cfg, DATA).int_seed()
    if d.source == "idx":
        return load_idx(d.images, d.labels, d.binarize_threshold, d.eval_fraction, seed)
    return synth_dataset(d.n_per_class, d.n_classes, d.dim, seed)


def train_model(cfg: PipelineConfig, data: Dataset) -> BinaryNetwork:
    dims = [data.dim, *cfg.model.hidden, data.n_classes]
    seed = stream(cfg, TRAIN).int_seed()
    return train(dims, cfg.model.dropout(), data, cfg.train.train_config(seed))


def build_kit(cfg: PipelineConfig, net: BinaryNetwork,
              data: Dataset) -> tuple[TestVectorSet, UncertaintyProfile]:
    a = cfg.atpg
    tvs = generate_test_vectors(net, None, data.X_train, a.R, a.T, a.N, stream(cfg, ATPG),
                                a.pool_size)
    prof = fit_profile(net, None, tvs, a.R_fit, a.T, stream(cfg, PROFILE),
                       domain=a.profile_domain)
    return tvs, prof


def campaign(cfg: PipelineConfig, net: BinaryNetwork, data: Dataset, tvs: TestVectorSet,
             prof: UncertaintyProfile, campaign_cfg=None) -> CampaignResult:
    camp = cfg.campaign if campaign_cfg is None else campaign_cfg
    return run_campaign(net, data.X_eval, data.y_eval, tvs, prof, camp,
                        calibration_X=data.X_train, root=stream(cfg, CAMPAIGN))
