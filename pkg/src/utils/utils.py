import os
import re
from typing import Iterable, List, Sequence

import numpy as np


def sanitize_filename(filename: str) -> str:
    """
    清洗文件名，移除文件系统不支持的字符。
    用于模型文件名 (algorithm, train size, run)。
    """
    if not filename:
        return "unnamed"

    # 定义非法字符集合: \ / : * ? " < > | 以及空白
    sanitized = re.sub(r'[\\/:*?"<>|\s]+', '_', filename)
    sanitized = sanitized.strip('_')

    # 限制长度 (防止路径过长)
    if len(sanitized) > 150:
        sanitized = sanitized[:150]

    return sanitized or "unnamed"


def safe_path_join(*args):
    """
    安全地连接路径
    """
    return os.path.join(*args)


def derive_seed(master: int, *counters: int) -> int:
    """
    Counter-based seed derivation.

    The seed for (run, task) depends only on the master seed and the
    counters, so adding runs never changes the seeds of earlier runs.
    """
    sequence = np.random.SeedSequence([int(master) & 0xFFFFFFFF] + [int(c) for c in counters])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def relative_change(new: np.ndarray, old: np.ndarray) -> float:
    """Relative Frobenius change ||new - old|| / max(||old||, tiny)"""
    denominator = max(float(np.linalg.norm(old)), np.finfo(float).tiny)
    return float(np.linalg.norm(new - old)) / denominator


def floats_to_hex(values: Iterable[float]) -> List[str]:
    return [float(v).hex() for v in values]


def hex_to_floats(values: Sequence[str]) -> List[float]:
    return [float.fromhex(v) for v in values]


def encode_array(array) -> dict:
    """Lossless JSON form of an array: shape plus hex-encoded row-major data"""
    array = np.asarray(array, dtype=float)
    return {"shape": list(array.shape), "data": floats_to_hex(array.ravel())}


def decode_array(payload: dict) -> np.ndarray:
    data = np.array(hex_to_floats(payload["data"]), dtype=float)
    return data.reshape(payload["shape"])
