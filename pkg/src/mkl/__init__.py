# MKL module initialization

from .kernel_bank import KernelSpec, GramMatrix, KernelBank, build_bank, grid_specs
from .solvers import DualSolution, SolverConfig, svm_dual_solve, krr_solve
from .relationship import update_relationship, update_weights_mu, update_weights_normalized
from .joint_trainer import TrainConfig, MkMtrlModel, fit_joint, predict
from .online_trainer import fit_online, online_stage_one, online_stage_two
from .baselines import fit_stl, fit_average, fit_imkl
from .task_clusters import TaskClusteringEngine, cluster_tasks
from .model_store import save_model, load_model, predict_points

__all__ = [
    "KernelSpec",
    "GramMatrix",
    "KernelBank",
    "build_bank",
    "grid_specs",
    "DualSolution",
    "SolverConfig",
    "svm_dual_solve",
    "krr_solve",
    "update_relationship",
    "update_weights_mu",
    "update_weights_normalized",
    "TrainConfig",
    "MkMtrlModel",
    "fit_joint",
    "predict",
    "fit_online",
    "online_stage_one",
    "online_stage_two",
    "fit_stl",
    "fit_average",
    "fit_imkl",
    "TaskClusteringEngine",
    "cluster_tasks",
    "save_model",
    "load_model",
    "predict_points",
]
