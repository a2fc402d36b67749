"""Image and depth quality metrics plus run-cost accounting."""

from __future__ import annotations

import hashlib
import json
import resource
import time
import tracemalloc
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

REPORT_SCHEMA = "panoshift.metrics/1"
METRIC_KEYS = (
    "ssim", "psnr", "rmse", "rmse_log", "delta1", "delta2", "delta3",
    "wall_time_s", "peak_mem_mb", "lpips",
)


class MetricError(ValueError):
    pass


def _same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(a, b, max_value: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(10.0 * np.log10(max_value ** 2 / mse))


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable Gaussian, keeping only windows fully inside the image
    r = len(g) // 2
    out = correlate1d(correlate1d(img, g, axis=0, mode="nearest"), g, axis=1, mode="nearest")
    return out[r:-r, r:-r]


def ssim_map(a, b, data_range: float = 1.0, win: int = 11, sigma: float = 1.5,
             k1: float = 0.01, k2: float = 0.03) -> np.ndarray:
    """Local SSIM over every fully contained Gaussian window, single channel."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    if a.ndim != 2:
        raise MetricError("ssim_map expects a single-channel image")
    if min(a.shape) < win:
        raise MetricError(f"image {a.shape} smaller than the {win}x{win} window")
    g = gaussian_window(win, sigma)
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a ** 2
    var_b = _filter_valid(b * b, g) - mu_b ** 2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    return num / den


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM; colour images are scored per channel and averaged."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    if a.ndim == 3:
        return float(np.mean([ssim_map(a[..., c], b[..., c], data_range).mean() for c in range(a.shape[2])]))
    return float(ssim_map(a, b, data_range).mean())


@dataclass(frozen=True)
class DepthMetrics:
    rmse: float
    rmse_log: float
    delta1: float
    delta2: float
    delta3: float

    def as_dict(self) -> dict:
        return dict(rmse=self.rmse, rmse_log=self.rmse_log, delta1=self.delta1,
                    delta2=self.delta2, delta3=self.delta3)


def delta_accuracy(pred: np.ndarray, gt: np.ndarray, threshold: float) -> float:
    ratio = np.maximum(pred / gt, gt / pred)
    return float(np.mean(ratio < threshold))


def depth_metrics(pred, gt, valid_mask=None) -> DepthMetrics:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    _same_shape(pred, gt)
    valid = np.ones(gt.shape, dtype=bool) if valid_mask is None else np.asarray(valid_mask, dtype=bool)
    _same_shape(valid, gt)
    if not valid.any():
        raise MetricError("empty valid mask")
    p = pred[valid]
    g = gt[valid]
    if np.any(p <= 0) or np.any(g <= 0):
        raise MetricError("depth must be positive under the valid mask")
    return DepthMetrics(
        rmse=float(np.sqrt(np.mean((p - g) ** 2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        delta1=delta_accuracy(p, g, 1.25),
        delta2=delta_accuracy(p, g, 1.25 ** 2),
        delta3=delta_accuracy(p, g, 1.25 ** 3),
    )


def crop_view(img: np.ndarray, fov_deg: float = 90.0) -> np.ndarray:
    """Central band of an equirectangular frame spanning fov_deg in both axes."""
    h, w = img.shape[:2]
    half_w = int(round(w * fov_deg / 720.0))
    half_h = int(round(h * fov_deg / 360.0))
    return img[h // 2 - half_h: h // 2 + half_h, w // 2 - half_w: w // 2 + half_w]


# --- run accounting ----------------------------------------------------------


def _rss_peak_mb() -> float:
    # VmHWM belongs to the current image; ru_maxrss also counts the pre-exec parent after fork
    try:
        with open("/proc/self/status") as fh:
            for line in fh:
                if line.startswith("VmHWM:"):
                    return int(line.split()[1]) / 1024.0
    except OSError:
        pass
    # ru_maxrss is KiB on Linux
    return resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024.0


@dataclass
class RunCost:
    wall_time_s: float
    peak_mem_mb: float
    peak_rss_mb: float


def measure_run(op, *args, **kwargs):
    """Run ``op`` and return (result, RunCost).

    peak_mem_mb is the peak of traced heap allocations (numpy buffers
    included) during the call; peak_rss_mb is the process high-water mark.
    """
    was_tracing = tracemalloc.is_tracing()
    if not was_tracing:
        tracemalloc.start()
    tracemalloc.reset_peak()
    base, _ = tracemalloc.get_traced_memory()
    t0 = time.perf_counter()
    try:
        result = op(*args, **kwargs)
    finally:
        elapsed = time.perf_counter() - t0
        _, peak = tracemalloc.get_traced_memory()
        if not was_tracing:
            tracemalloc.stop()
    cost = RunCost(wall_time_s=elapsed, peak_mem_mb=max(peak - base, 0) / 2 ** 20, peak_rss_mb=_rss_peak_mb())
    return result, cost


@dataclass
class MetricsReport:
    metrics: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def validate(self) -> None:
        m = self.metrics
        if "ssim" in m and not -1.0 - 1e-12 <= m["ssim"] <= 1.0 + 1e-12:
            raise MetricError("ssim outside [-1, 1]")
        for k in ("delta1", "delta2", "delta3"):
            if k in m and not 0.0 <= m[k] <= 1.0:
                raise MetricError(f"{k} outside [0, 1]")
        for k in ("rmse", "rmse_log"):
            if k in m and m[k] < 0:
                raise MetricError(f"{k} negative")
        unknown = set(m) - set(METRIC_KEYS) - {"peak_rss_mb"}
        if unknown:
            raise MetricError(f"unknown metric keys: {sorted(unknown)}")

    def to_dict(self) -> dict:
        self.validate()
        return {"schema": REPORT_SCHEMA, "metrics": dict(self.metrics), "metadata": dict(self.metadata)}

    @classmethod
    def from_dict(cls, doc: dict) -> MetricsReport:
        if doc.get("schema") != REPORT_SCHEMA:
            raise MetricError(f"unsupported report schema: {doc.get('schema')!r}")
        rep = cls(metrics=dict(doc.get("metrics", {})), metadata=dict(doc.get("metadata", {})))
        rep.validate()
        return rep


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def image_metrics(pred_color, gt_color, pred_depth=None, gt_depth=None, lpips=None) -> dict:
    """Metric dict comparing a rendered frame to ground truth."""
    out = {"ssim": ssim(pred_color, gt_color), "psnr": psnr(pred_color, gt_color)}
    if pred_depth is not None and gt_depth is not None:
        out.update(depth_metrics(pred_depth, gt_depth).as_dict())
    if lpips is not None:
        out["lpips"] = float(lpips(pred_color, gt_color))
    return out
