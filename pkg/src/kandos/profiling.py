"""Model size accounting and inference latency/throughput benchmarks."""

from __future__ import annotations

import statistics
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from kandos.errors import ConfigError
from kandos.model import REFERENCE_MODEL_SIZE_MB, REFERENCE_TOTAL_PARAMS, REFERENCE_TRAINABLE_PARAMS, KanModel, count_params, logits

BYTES_PER_PARAM = 4  # float32 at rest
REFERENCE_LATENCY_MS = 2.00
REFERENCE_THROUGHPUT = 500.0
DEFAULT_BATCH_SIZES = (1, 10, 100, 1000)


def size_mb(n_params: int) -> float:
    return n_params * BYTES_PER_PARAM / 2**20


@dataclass
class ParamReport:
    trainable: int
    model_size_mb: float
    breakdown: list

    def lines(self) -> list:
        out = [f"{'':<22}{'this model':>14}{'reference':>14}"]
        out.append(f"{'total parameters':<22}{self.trainable:>14,}{REFERENCE_TOTAL_PARAMS:>14,}")
        out.append(f"{'trainable parameters':<22}{self.trainable:>14,}{REFERENCE_TRAINABLE_PARAMS:>14,}")
        out.append(f"{'model size (MB)':<22}{self.model_size_mb:>14.3f}{REFERENCE_MODEL_SIZE_MB:>14.2f}")
        for i, row in enumerate(self.breakdown):
            out.append(
                f"  layer {i} ({row['in_dim']}->{row['out_dim']}): {row['edges']} splines, "
                f"{row['coeffs']} coeffs + {row['scales']} scales + {row['biases']} biases = {row['total']}"
            )
        return out

    def to_dict(self) -> dict:
        return {
            "trainable": self.trainable,
            "model_size_mb": self.model_size_mb,
            "breakdown": self.breakdown,
            "reference": {
                "total_params": REFERENCE_TOTAL_PARAMS,
                "trainable_params": REFERENCE_TRAINABLE_PARAMS,
                "model_size_mb": REFERENCE_MODEL_SIZE_MB,
            },
        }


def param_report(model) -> ParamReport:
    trainable, breakdown = count_params(model)
    return ParamReport(trainable, size_mb(trainable), breakdown)


@dataclass
class ResourceReport:
    trainable_params: int
    model_size_mb: float
    batch_size_used: int
    repetitions: int
    per_sample_latency_ms: float  # median batch time / batch size
    mean_per_sample_latency_ms: float
    throughput_samples_per_s: float
    threads: int = 1

    COLUMNS = (
        "batch_size", "repetitions", "threads", "median_ms_per_sample", "mean_ms_per_sample",
        "throughput_samples_per_s", "trainable_params", "model_size_mb", "ref_ms_per_sample",
        "ref_samples_per_s", "ref_model_size_mb",
    )

    def row(self) -> list:
        return [
            self.batch_size_used, self.repetitions, self.threads, f"{self.per_sample_latency_ms:.6f}",
            f"{self.mean_per_sample_latency_ms:.6f}", f"{self.throughput_samples_per_s:.1f}",
            self.trainable_params, f"{self.model_size_mb:.4f}", f"{REFERENCE_LATENCY_MS:.2f}",
            f"{REFERENCE_THROUGHPUT:.0f}", f"{REFERENCE_MODEL_SIZE_MB:.2f}",
        ]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["reference"] = {"ms_per_sample": REFERENCE_LATENCY_MS, "samples_per_s": REFERENCE_THROUGHPUT}
        return d


def _score(model: KanModel, X: np.ndarray, threads: int):
    if threads <= 1 or X.shape[0] < 2 * threads:
        return logits(model, X)
    chunks = np.array_split(X, threads)
    with ThreadPoolExecutor(threads) as pool:
        return np.concatenate(list(pool.map(lambda c: logits(model, c), chunks)))


def bench_inference(
    model: KanModel,
    batch_sizes=DEFAULT_BATCH_SIZES,
    repetitions: int = 20,
    seed: int = 0,
    warmup: int = 2,
    threads: int = 1,
) -> list:
    """Time full inference (splines through logits) per batch size.

    Inputs are standard-normal draws clipped to the grid, seeded so every run
    scores the same data. Warm-up passes are not timed.
    """
    if repetitions < 3:
        raise ConfigError("repetitions must be >= 3")
    sizes = [int(b) for b in batch_sizes]
    if not sizes or any(b < 1 for b in sizes):
        raise ConfigError(f"batch sizes must be positive integers, got {list(batch_sizes)}")
    trainable, _ = count_params(model)
    lo, hi = model.config.grid_range
    rng = np.random.default_rng(seed)
    reports = []
    for b in sizes:
        X = np.clip(rng.standard_normal((b, model.in_dim)), lo, hi)
        for _ in range(warmup):
            _score(model, X, threads)
        times = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            _score(model, X, threads)
            times.append(time.perf_counter() - t0)
        med = statistics.median(times)
        reports.append(
            ResourceReport(
                trainable_params=trainable,
                model_size_mb=size_mb(trainable),
                batch_size_used=b,
                repetitions=repetitions,
                per_sample_latency_ms=1000.0 * med / b,
                mean_per_sample_latency_ms=1000.0 * statistics.fmean(times) / b,
                throughput_samples_per_s=b / med,
                threads=threads,
            )
        )
    return reports
