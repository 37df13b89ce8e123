"""
Report emission: per-task rows, summaries, plot-ready curves, timings,
chosen hyperparameters, task clusters and serialized models.

Everything except timings.csv depends only on the config and the seed.
"""

import csv
import json
import logging
import os
from collections import OrderedDict
from typing import Dict, List, Tuple

from ..core.errors import ConfigError
from ..mkl.model_store import save_model
from ..utils.utils import safe_path_join, sanitize_filename
from .metrics import MetricReport

logger = logging.getLogger("Reporter")


def _fmt(value: float) -> str:
    return repr(float(value))


class ReportExporter:
    def __init__(self, output_dir: str):
        self.output_dir = output_dir

    def _writer(self, name: str, header: List[str]):
        handle = open(safe_path_join(self.output_dir, name), "w", newline="", encoding="utf-8")
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        return handle, writer

    def export(self, results) -> Dict[str, str]:
        """
        Write every report file for an ExperimentResults

        Returns:
            Mapping of report name to path
        """
        if not results.runs:
            raise ConfigError("nothing to report")
        try:
            os.makedirs(self.output_dir, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"cannot create output directory {self.output_dir}: {e}") from None
        if not os.access(self.output_dir, os.W_OK):
            raise ConfigError(f"output directory {self.output_dir} is not writable")

        logger.info(f"Writing reports to: {self.output_dir}")
        paths = {
            "report": self._write_report(results.runs),
            "summary": self._write_summary(results.runs, results.partial),
            "curves": self._write_curves(results.runs),
            "timings": self._write_timings(results.runs),
            "params": self._write_params(results.runs),
            "clusters": self._write_clusters(results.runs),
            "model": self._write_models(results.runs),
        }
        if results.partial:
            with open(safe_path_join(self.output_dir, "errors.txt"), "w", encoding="utf-8") as handle:
                handle.write("\n".join(results.errors) + "\n")
        return paths

    def _write_report(self, runs) -> str:
        handle, writer = self._writer("report.csv", ["algorithm", "train_size", "run", "task", "metric", "value"])
        with handle:
            for r in runs:
                for task, value in enumerate(r.per_task):
                    writer.writerow([r.algorithm, r.train_size, r.run, task, r.metric, _fmt(value)])
        return handle.name

    @staticmethod
    def _grouped(runs) -> "OrderedDict[Tuple[str, int], MetricReport]":
        tables = OrderedDict()
        for r in runs:
            tables.setdefault((r.algorithm, r.train_size), (r.metric, []))[1].append(r.per_task)
        return OrderedDict((key, MetricReport.from_runs(rows, metric)) for key, (metric, rows) in tables.items())

    def _write_summary(self, runs, partial: bool) -> str:
        handle, writer = self._writer(
            "summary.csv", ["algorithm", "train_size", "metric", "mean", "std", "runs", "partial"])
        with handle:
            for (algorithm, size), report in self._grouped(runs).items():
                writer.writerow([algorithm, size, report.metric_kind, _fmt(report.mean),
                                 _fmt(report.std_over_runs), report.per_run.shape[0], str(partial).lower()])
        return handle.name

    def _write_curves(self, runs) -> str:
        handle, writer = self._writer("curves.csv", ["algorithm", "train_size", "mean", "std"])
        with handle:
            for (algorithm, size), report in self._grouped(runs).items():
                writer.writerow([algorithm, size, _fmt(report.mean), _fmt(report.std_over_runs)])
        return handle.name

    def _write_timings(self, runs) -> str:
        handle, writer = self._writer("timings.csv", ["algorithm", "train_size", "run", "fit_seconds"])
        with handle:
            for r in runs:
                writer.writerow([r.algorithm, r.train_size, r.run, f"{r.fit_seconds:.6f}"])
        return handle.name

    def _write_params(self, runs) -> str:
        handle, writer = self._writer("params.csv", ["algorithm", "train_size", "run", "params"])
        with handle:
            for r in runs:
                writer.writerow([r.algorithm, r.train_size, r.run, json.dumps(r.params, sort_keys=True)])
        return handle.name

    def _write_clusters(self, runs) -> str:
        handle, writer = self._writer(
            "clusters.csv", ["algorithm", "train_size", "run", "n_clusters", "within", "cross", "ari"])
        with handle:
            for r in runs:
                if not r.cluster_stats:
                    continue
                stats = r.cluster_stats
                writer.writerow([r.algorithm, r.train_size, r.run, int(stats["n_clusters"])] +
                                [_fmt(stats[key]) if key in stats else "" for key in ("within", "cross", "ari")])
        return handle.name

    def _write_models(self, runs) -> str:
        # 模型文件名: algorithm, train size, run
        directory = safe_path_join(self.output_dir, "model")
        os.makedirs(directory, exist_ok=True)
        for r in runs:
            if r.model is None:
                continue
            name = sanitize_filename(f"{r.algorithm}_n{r.train_size}_run{r.run}") + ".json"
            save_model(r.model, safe_path_join(directory, name))
        return directory


def emit_report(results, output_dir: str) -> Dict[str, str]:
    return ReportExporter(output_dir).export(results)
