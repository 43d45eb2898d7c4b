"""Image-quality metrics and the diagnostic analyses (difference maps, Grad-CAM)."""

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ShapeError, UsageError
from .losses import ssim

RECORD_FIELDS = ("method", "image_id", "psnr", "ssim", "success", "iterations", "deviation_pixel_ratio")
AGGREGATE_FIELDS = (
    "method",
    "n",
    "n_success",
    "success_rate",
    "n_inf_excluded",
    "psnr_mean",
    "psnr_std",
    "ssim_mean",
    "ssim_std",
    "ratio_mean",
    "iterations_mean",
)


def _pair(z, x, op):
    z = np.asarray(z.data if isinstance(z, ad.Tensor) else z, dtype=np.float64)
    x = np.asarray(x.data if isinstance(x, ad.Tensor) else x, dtype=np.float64)
    if z.shape != x.shape:
        raise ShapeError(f"{op}: shapes {z.shape} and {x.shape} differ")
    return z, x


def psnr(z, x):
    """PSNR in dB with peak 1.0; ``math.inf`` for identical images."""
    z, x = _pair(z, x, "psnr")
    mse = float(np.mean((z - x) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def ssim_eval(z, x):
    z, x = _pair(z, x, "ssim_eval")
    return float(ssim(z, x).data)


def abs_diff_map(z, x):
    """Per-channel |Z - X| scaled so each channel's maximum becomes 255 (uint8)."""
    z, x = _pair(z, x, "abs_diff_map")
    d = np.abs(z - x)
    peak = d.max(axis=(-2, -1), keepdims=True)
    scaled = np.divide(d * 255.0, peak, out=np.zeros_like(d), where=peak > 0)
    return np.rint(scaled).astype(np.uint8)


def deviation_pixel_ratio(z, x, threshold=0):
    """Fraction of channel samples whose 8-bit values differ by more than ``threshold``."""
    z, x = _pair(z, x, "deviation_pixel_ratio")
    qz = np.rint(np.clip(z, 0, 1) * 255.0)
    qx = np.rint(np.clip(x, 0, 1) * 255.0)
    return float(np.mean(np.abs(qz - qx) > threshold))


def _bilinear(img, height, width):
    """Half-pixel-centred bilinear resize of a 2-D map."""
    h, w = img.shape

    def coords(n_out, n_in):
        src = (np.arange(n_out) + 0.5) * n_in / n_out - 0.5
        src = np.clip(src, 0, n_in - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, src - lo

    r0, r1, fr = coords(height, h)
    c0, c1, fc = coords(width, w)
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bot = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr)[:, None] + bot * fr[:, None]


def grad_cam(classifier, image, class_index):
    """Grad-CAM heatmap (H, W) in [0, 1] over the last convolutional activation."""
    if not 0 <= class_index < classifier.num_classes:
        raise UsageError(f"class_index {class_index} outside [0, {classifier.num_classes})")
    x = ad.Tensor(np.asarray(image, dtype=np.float64), requires_grad=True)
    u, act = classifier.logits(x, capture=True)
    sel = np.zeros(classifier.num_classes)
    sel[class_index] = 1.0
    ad.sum(ad.mul(u, sel)).backward()
    weights = act.grad.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(weights, act.data, axes=1), 0.0)
    cam = _bilinear(cam, x.shape[1], x.shape[2])
    lo, hi = cam.min(), cam.max()
    if hi - lo <= 0:
        return np.zeros_like(cam)
    return (cam - lo) / (hi - lo)


# ---------------------------------------------------------------- aggregation


def summarize(values):
    """(mean, sample std) of finite values; nan where undefined."""
    v = [float(a) for a in values if math.isfinite(a)]
    if not v:
        return math.nan, math.nan
    mean = math.fsum(v) / len(v)
    if len(v) < 2:
        return mean, math.nan
    var = math.fsum((a - mean) ** 2 for a in v) / (len(v) - 1)
    return mean, math.sqrt(var)


@dataclass
class IqaReport:
    records: list
    rows: list = field(default_factory=list)

    def row(self, method):
        for r in self.rows:
            if r["method"] == method:
                return r
        raise KeyError(method)


def aggregate(records, order=None):
    """Per-method mean and sample std of PSNR/SSIM over successful attacks.

    Records are dicts with the :data:`RECORD_FIELDS` keys. Infinite PSNR values
    (adversarial identical to clean) are left out of the PSNR mean and counted in
    ``n_inf_excluded``. Methods appear in ``order`` first, then by first
    appearance.
    """
    groups = {}
    for rec in records:
        groups.setdefault(rec["method"], []).append(rec)
    names = [m for m in (order or ()) if m in groups] + [m for m in groups if m not in (order or ())]
    rows = []
    for name in names:
        recs = groups[name]
        if len(recs) < 2:
            raise UsageError(f"method {name!r} has {len(recs)} record(s); need at least 2")
        ok = [r for r in recs if _truthy(r["success"])]
        ps = [float(r["psnr"]) for r in ok]
        pm, psd = summarize(ps)
        sm, ssd = summarize(float(r["ssim"]) for r in ok)
        rm, _ = summarize(float(r["deviation_pixel_ratio"]) for r in ok)
        im, _ = summarize(float(r["iterations"]) for r in recs)
        rows.append(
            {
                "method": name,
                "n": len(recs),
                "n_success": len(ok),
                "success_rate": len(ok) / len(recs),
                "n_inf_excluded": sum(1 for p in ps if math.isinf(p)),
                "psnr_mean": pm,
                "psnr_std": psd,
                "ssim_mean": sm,
                "ssim_std": ssd,
                "ratio_mean": rm,
                "iterations_mean": im,
            }
        )
    return IqaReport(list(records), rows)


def _truthy(v):
    if isinstance(v, str):
        return v.strip().lower() in ("1", "true", "yes")
    return bool(v)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return "inf" if v == math.inf else repr(float(v))
    if isinstance(v, np.integer):
        return str(int(v))
    return str(v)


def write_csv(path, rows, fields):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for r in rows:
            w.writerow([_fmt(r[f]) for f in fields])


def read_records_csv(path):
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                {
                    "method": row["method"],
                    "image_id": row["image_id"],
                    "psnr": float(row["psnr"]),
                    "ssim": float(row["ssim"]),
                    "success": _truthy(row["success"]),
                    "iterations": int(row["iterations"]),
                    "deviation_pixel_ratio": float(row["deviation_pixel_ratio"]),
                }
            )
    return out
