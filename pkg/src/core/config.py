import os
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

from dotenv import load_dotenv, dotenv_values

from .errors import ConfigError

# 加载 .env 文件
load_dotenv()

ALGORITHMS = ("stl", "avg", "imkl", "mkmtrl", "mkmtrl_online")
KERNEL_TEMPLATES = ("linear", "polynomial", "rbf", "univariate_rbf", "univariate_linear")
DATA_FORMATS = ("sparse", "csv", "synthetic")
TASK_KINDS = ("classification", "regression")


@dataclass
class Settings:
    """Process-wide settings, read from the environment"""

    # 默认并行 worker 数
    workers: int = int(os.getenv("MKMTRL_WORKERS", "1"))

    # 输出根目录
    output_root: str = os.getenv("MKMTRL_OUTPUT_ROOT", os.path.join(os.getcwd(), "results"))

    # Debug 模式: PSD 检查 (O(n^3)) 和 SMO 单调性断言
    debug: bool = os.getenv("MKMTRL_DEBUG", "false").lower() == "true"

    log_level: str = os.getenv("MKMTRL_LOG_LEVEL", "INFO")

    # 可选的 gram 矩阵磁盘缓存目录
    gram_cache: Optional[str] = os.getenv("MKMTRL_GRAM_CACHE") or None


class ConfigManager:
    _instance = None

    @classmethod
    def get_instance(cls):
        if cls._instance is None:
            cls._instance = Settings()
        return cls._instance


def _default_c_grid() -> List[float]:
    return [10.0 ** e for e in range(-3, 4)]


def _default_mu_grid() -> List[float]:
    return [10.0 ** e for e in range(-7, 4)]


@dataclass
class ExperimentConfig:
    """
    Declarative description of one experiment file.

    Keys map one to one onto the flat KEY=value lines of the file; see
    load_experiment_config for the names.
    """

    data_format: str = "sparse"
    data_path: List[str] = field(default_factory=list)
    data_kind: str = "classification"
    normalize: bool = True
    add_bias: bool = False
    csv_label_col: int = -1
    csv_task_col: int = 0
    csv_header: bool = False

    synth_tasks: int = 8
    synth_clusters: int = 2
    synth_n: int = 100
    synth_dim: int = 5
    synth_noise: float = 0.1
    # None: all features informative
    synth_active: Optional[int] = None

    kernels: List[Tuple[str, int]] = field(default_factory=lambda: [("polynomial", 5)])
    algorithms: List[str] = field(default_factory=lambda: ["mkmtrl"])
    train_per_task: List[int] = field(default_factory=lambda: [30, 50, 80])
    runs: int = 10
    seed: int = 0
    cv_folds: int = 5

    grid_c: List[float] = field(default_factory=_default_c_grid)
    grid_mu: List[float] = field(default_factory=_default_mu_grid)
    grid_lambda: List[float] = field(default_factory=lambda: [1e-3, 1e-2, 1e-1, 1.0, 10.0])
    grid_p: List[float] = field(default_factory=lambda: [2.0, 3.0, 4.0, 6.0, 8.67])

    weight_update: str = "normalized"
    protocol: str = "default"
    fixed_c: float = 1000.0

    max_outer: int = 50
    max_inner: int = 20
    tol_b: float = 1e-4

    online_rounds: int = 100000
    online_omega_period: int = 100
    online_predicate: str = "margin"
    online_mu: float = 1.0

    output_dir: str = ""
    workers: int = 1
    source: Optional[str] = None

    @property
    def c_grid(self) -> List[float]:
        # 物体识别协议: C 固定
        if self.protocol == "object_recognition":
            return [self.fixed_c]
        return list(self.grid_c)

    def resolve_path(self, path: str) -> str:
        """Data paths are relative to the experiment file"""
        if os.path.isabs(path) or not self.source:
            return path
        return os.path.join(os.path.dirname(os.path.abspath(self.source)), path)

    def with_overrides(self, seed: Optional[int] = None, workers: Optional[int] = None,
                       output_dir: Optional[str] = None) -> "ExperimentConfig":
        changes = {}
        if seed is not None:
            changes["seed"] = seed
        if workers is not None:
            changes["workers"] = workers
        if output_dir:
            changes["output_dir"] = output_dir
        return replace(self, **changes)

    def validate(self) -> "ExperimentConfig":
        if self.data_format not in DATA_FORMATS:
            raise ConfigError(f"DATA_FORMAT must be one of {DATA_FORMATS}, got '{self.data_format}'")
        if self.data_kind not in TASK_KINDS:
            raise ConfigError(f"DATA_KIND must be one of {TASK_KINDS}, got '{self.data_kind}'")
        if self.data_format != "synthetic" and not self.data_path:
            raise ConfigError("DATA_PATH is required unless DATA_FORMAT=synthetic")
        if not self.algorithms:
            raise ConfigError("ALGORITHMS must name at least one algorithm")
        for name in self.algorithms:
            if name not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm '{name}', expected one of {ALGORITHMS}")
        if not self.kernels:
            raise ConfigError("KERNELS must name at least one kernel template")
        for template, count in self.kernels:
            if template not in KERNEL_TEMPLATES:
                raise ConfigError(f"unknown kernel template '{template}'")
            if count < 1:
                raise ConfigError(f"kernel grid count must be >= 1, got {count} for '{template}'")
        if self.runs < 1:
            raise ConfigError("RUNS must be >= 1")
        if not self.train_per_task or min(self.train_per_task) < 1:
            raise ConfigError("TRAIN_PER_TASK must list counts >= 1")
        if self.cv_folds < 2:
            raise ConfigError("CV_FOLDS must be >= 2")
        if not self.c_grid and self.data_kind == "classification":
            raise ConfigError("GRID_C is empty")
        if self.data_kind == "regression" and not self.grid_lambda:
            raise ConfigError("GRID_LAMBDA is empty")
        if self.weight_update not in ("normalized", "mu"):
            raise ConfigError("WEIGHT_UPDATE must be 'normalized' or 'mu'")
        if self.weight_update == "mu" and not self.grid_mu:
            raise ConfigError("WEIGHT_UPDATE=mu needs a non-empty GRID_MU")
        if "imkl" in self.algorithms and not self.grid_p:
            raise ConfigError("GRID_P is empty")
        if self.protocol not in ("default", "object_recognition"):
            raise ConfigError(f"unknown PROTOCOL '{self.protocol}'")
        if self.max_outer < 1 or self.max_inner < 1 or self.tol_b <= 0:
            raise ConfigError("MAX_OUTER, MAX_INNER and TOL_B must be positive")
        if "mkmtrl_online" in self.algorithms:
            if self.online_rounds < 1 or self.online_omega_period < 1 or self.online_mu <= 0:
                raise ConfigError("ONLINE_ROUNDS, ONLINE_OMEGA_PERIOD and ONLINE_MU must be positive")
            if self.online_predicate not in ("margin", "sign"):
                raise ConfigError("ONLINE_PREDICATE must be 'margin' or 'sign'")
        if self.data_format == "synthetic":
            if self.synth_dim < 1:
                raise ConfigError("SYNTH_DIM must be >= 1")
            if not 1 <= self.synth_clusters <= self.synth_tasks:
                raise ConfigError("SYNTH_CLUSTERS must be between 1 and SYNTH_TASKS")
            if self.synth_active is not None and not 1 <= self.synth_active <= self.synth_dim:
                raise ConfigError("SYNTH_ACTIVE must be between 1 and SYNTH_DIM")
        if self.workers < 1:
            raise ConfigError("WORKERS must be >= 1")
        return self


def _as_bool(key: str, value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{key}: expected a boolean, got '{value}'")


def _as_number(key: str, value: str, cast):
    try:
        return cast(value.strip())
    except ValueError:
        raise ConfigError(f"{key}: expected {cast.__name__}, got '{value}'") from None


def _as_list(key: str, value: str, cast) -> list:
    return [_as_number(key, part, cast) for part in value.split(",") if part.strip()]


def _parse_kernels(value: str) -> List[Tuple[str, int]]:
    kernels = []
    for part in value.split(","):
        part = part.strip()
        if not part:
            continue
        template, _, count = part.partition(":")
        kernels.append((template.strip(), _as_number("KERNELS", count or "1", int)))
    return kernels


# KEY -> (attribute, parser)
_FIELDS: Dict[str, tuple] = {
    "DATA_FORMAT": ("data_format", lambda k, v: v.strip()),
    "DATA_PATH": ("data_path", lambda k, v: [p.strip() for p in v.split(",") if p.strip()]),
    "DATA_KIND": ("data_kind", lambda k, v: v.strip()),
    "DATA_NORMALIZE": ("normalize", _as_bool),
    "DATA_ADD_BIAS": ("add_bias", _as_bool),
    "CSV_LABEL_COL": ("csv_label_col", lambda k, v: _as_number(k, v, int)),
    "CSV_TASK_COL": ("csv_task_col", lambda k, v: _as_number(k, v, int)),
    "CSV_HEADER": ("csv_header", _as_bool),
    "SYNTH_TASKS": ("synth_tasks", lambda k, v: _as_number(k, v, int)),
    "SYNTH_CLUSTERS": ("synth_clusters", lambda k, v: _as_number(k, v, int)),
    "SYNTH_N": ("synth_n", lambda k, v: _as_number(k, v, int)),
    "SYNTH_DIM": ("synth_dim", lambda k, v: _as_number(k, v, int)),
    "SYNTH_NOISE": ("synth_noise", lambda k, v: _as_number(k, v, float)),
    "SYNTH_ACTIVE": ("synth_active", lambda k, v: _as_number(k, v, int)),
    "KERNELS": ("kernels", lambda k, v: _parse_kernels(v)),
    "ALGORITHMS": ("algorithms", lambda k, v: [a.strip() for a in v.split(",") if a.strip()]),
    "TRAIN_PER_TASK": ("train_per_task", lambda k, v: _as_list(k, v, int)),
    "RUNS": ("runs", lambda k, v: _as_number(k, v, int)),
    "SEED": ("seed", lambda k, v: _as_number(k, v, int)),
    "CV_FOLDS": ("cv_folds", lambda k, v: _as_number(k, v, int)),
    "GRID_C": ("grid_c", lambda k, v: _as_list(k, v, float)),
    "GRID_MU": ("grid_mu", lambda k, v: _as_list(k, v, float)),
    "GRID_LAMBDA": ("grid_lambda", lambda k, v: _as_list(k, v, float)),
    "GRID_P": ("grid_p", lambda k, v: _as_list(k, v, float)),
    "WEIGHT_UPDATE": ("weight_update", lambda k, v: v.strip()),
    "PROTOCOL": ("protocol", lambda k, v: v.strip()),
    "FIXED_C": ("fixed_c", lambda k, v: _as_number(k, v, float)),
    "MAX_OUTER": ("max_outer", lambda k, v: _as_number(k, v, int)),
    "MAX_INNER": ("max_inner", lambda k, v: _as_number(k, v, int)),
    "TOL_B": ("tol_b", lambda k, v: _as_number(k, v, float)),
    "ONLINE_ROUNDS": ("online_rounds", lambda k, v: _as_number(k, v, int)),
    "ONLINE_OMEGA_PERIOD": ("online_omega_period", lambda k, v: _as_number(k, v, int)),
    "ONLINE_PREDICATE": ("online_predicate", lambda k, v: v.strip()),
    "ONLINE_MU": ("online_mu", lambda k, v: _as_number(k, v, float)),
    "OUTPUT_DIR": ("output_dir", lambda k, v: v.strip()),
    "WORKERS": ("workers", lambda k, v: _as_number(k, v, int)),
}


def load_experiment_config(path: str) -> ExperimentConfig:
    """
    Read a flat KEY=value experiment file.

    Args:
        path: Experiment file path

    Returns:
        ExperimentConfig with environment defaults filled in (not yet validated)
    """
    if not os.path.exists(path):
        raise FileNotFoundError(f"Experiment config not found at: {path}")

    settings = ConfigManager.get_instance()
    values = dotenv_values(path, interpolate=False)

    config = ExperimentConfig(output_dir=settings.output_root, workers=settings.workers, source=path)
    for key, raw in values.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown key '{key}' in {path}")
        if raw is None:
            raise ConfigError(f"key '{key}' has no value in {path}")
        attribute, parse = _FIELDS[key]
        setattr(config, attribute, parse(key, raw))
    return config
