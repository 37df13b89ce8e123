"""
Uniform fit interface over every algorithm the runner knows:
stl, avg, imkl, mkmtrl and mkmtrl_online.

Each algorithm is fit from (bank, labels, params); mkmtrl_online also needs
its stage-one result, which does not depend on C and is computed once per
training set by `prepare`.
"""

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
from sklearn.model_selection import ParameterGrid

from ..core.config import ExperimentConfig
from ..core.data_io import REGRESSION, DatasetBundle
from ..core.errors import ConfigError
from ..mkl.baselines import as_model, fit_average, fit_imkl, fit_stl, stl_weights
from ..mkl.joint_trainer import MkMtrlModel, TrainConfig, fit_joint
from ..mkl.kernel_bank import KernelBank
from ..mkl.online_trainer import StageOneResult, online_stage_one, online_stage_two
from ..mkl.solvers import KRR, SVM

STL = "stl"
AVG = "avg"
IMKL = "imkl"
MKMTRL = "mkmtrl"
MKMTRL_ONLINE = "mkmtrl_online"


@dataclass(frozen=True)
class FitSettings:
    kind: str = SVM
    max_outer: int = 50
    max_inner: int = 20
    tol_B: float = 1e-4
    weight_update: str = "normalized"
    online_rounds: int = 100000
    online_omega_period: int = 100
    online_predicate: str = "margin"
    online_mu: float = 1.0
    seed: int = 0
    n_jobs: int = 1

    @classmethod
    def from_config(cls, config: ExperimentConfig, seed: int, n_jobs: int = 1) -> "FitSettings":
        return cls(
            kind=KRR if config.data_kind == REGRESSION else SVM,
            max_outer=config.max_outer,
            max_inner=config.max_inner,
            tol_B=config.tol_b,
            weight_update=config.weight_update,
            online_rounds=config.online_rounds,
            online_omega_period=config.online_omega_period,
            online_predicate=config.online_predicate,
            online_mu=config.online_mu,
            seed=seed,
            n_jobs=n_jobs,
        )

    def train_config(self, params: dict) -> TrainConfig:
        return TrainConfig(
            C=params.get("C", 1.0),
            lam=params.get("lam", 1.0),
            mu=params.get("mu"),
            max_outer=self.max_outer,
            max_inner=self.max_inner,
            tol_B=self.tol_B,
            kind=self.kind,
            n_jobs=self.n_jobs,
        )


def param_grid(name: str, config: ExperimentConfig, n_kernels: int) -> List[Dict]:
    """Hyperparameter points cross-validated for one algorithm"""
    if config.data_kind == REGRESSION:
        base = {"lam": list(config.grid_lambda)}
    else:
        base = {"C": list(config.c_grid)}

    if name == STL:
        base["kernel"] = list(range(n_kernels))
    elif name == IMKL:
        base["p"] = list(config.grid_p)
    elif name == MKMTRL and config.weight_update == "mu":
        base["mu"] = list(config.grid_mu)
    elif name not in (AVG, MKMTRL, MKMTRL_ONLINE):
        raise ConfigError(f"unknown algorithm '{name}'")
    return list(ParameterGrid(base))


def prepare(name: str, bundle: DatasetBundle, specs, settings: FitSettings) -> Optional[StageOneResult]:
    """Work shared by every grid point on one training set"""
    if name != MKMTRL_ONLINE:
        return None
    return online_stage_one(bundle, specs, settings.online_rounds, settings.online_mu,
                            settings.online_omega_period, settings.seed, settings.online_predicate)


def fit(name: str, bank: KernelBank, labels, params: dict, settings: FitSettings,
        prepared: Optional[StageOneResult] = None) -> MkMtrlModel:
    """
    Fit one algorithm at one grid point

    Args:
        name: Algorithm name
        bank: Train grams (T x K)
        labels: T label vectors
        params: Grid point (C or lam, plus kernel / p / mu where relevant)
        settings: Loop and online settings
        prepared: prepare() output for mkmtrl_online

    Returns:
        MkMtrlModel, including baselines (Omega = I/T)
    """
    cfg = settings.train_config(params)
    if name == STL:
        kernel = int(params.get("kernel", 0))
        return as_model(bank, labels, stl_weights(bank, kernel), fit_stl(bank, labels, cfg, kernel), cfg, STL)
    if name == AVG:
        B = np.full((bank.n_kernels, bank.n_tasks), 1.0 / bank.n_kernels)
        return as_model(bank, labels, B, fit_average(bank, labels, cfg), cfg, AVG)
    if name == IMKL:
        B, models = fit_imkl(bank, labels, cfg, p=params.get("p", 2.0))
        return as_model(bank, labels, B, models, cfg, IMKL)
    if name == MKMTRL:
        return fit_joint(bank, labels, cfg)
    if name == MKMTRL_ONLINE:
        if prepared is None:
            raise ConfigError("mkmtrl_online needs its stage-one result")
        return online_stage_two(bank, labels, prepared, cfg)
    raise ConfigError(f"unknown algorithm '{name}'")
