"""Adversarial and perceptual quality-preserving losses, differentiable in Z.

All image losses accept a single image (C, H, W) and return a scalar, or a
batch (N, C, H, W) and return one value per image.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, ShapeError

C1 = (0.01 * 1.0) ** 2
C2 = (0.03 * 1.0) ** 2
ROOT_EPS = 1e-12
_ROOT_EPS_SQRT = float(np.sqrt(np.float64(ROOT_EPS)))

NORMS = ("L1", "L2", "none")
REDUCTIONS = ("sum", "mean")

SOBEL_X = np.array([[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]])
SOBEL_Y = np.array([[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]])
# conv2d correlates; flipping gives a true convolution (the magnitude is unaffected either way)
_SOBEL_WEIGHT = np.stack([SOBEL_X[::-1, ::-1], SOBEL_Y[::-1, ::-1]])[:, None]


@dataclass(frozen=True)
class LossWeights:
    """Weights and switches of the perceptual loss.

    ``reduction="mean"`` divides the deviation and gradient-similarity terms by
    the number of image samples, putting them on the per-pixel scale of SSIM.
    ``scale`` multiplies all three weights; it adapts the published weights to
    a classifier whose input gradients have a different magnitude.
    """

    beta1: float = 100.0
    beta2: float = 100.0
    beta3: float = 100.0
    r: float = 0.0625
    dev_norm: str = "L1"
    grad_norm: str = "L1"
    use_ssim: bool = True
    reduction: str = "mean"
    scale: float = 1.0

    def __post_init__(self):
        for name in ("beta1", "beta2", "beta3"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.r <= 0:
            raise ConfigurationError(f"r must be > 0, got {self.r}")
        if self.scale < 0:
            raise ConfigurationError(f"scale must be >= 0, got {self.scale}")
        if self.dev_norm not in NORMS:
            raise ConfigurationError(f"dev_norm must be one of {NORMS}")
        if self.grad_norm not in NORMS:
            raise ConfigurationError(f"grad_norm must be one of {NORMS}")
        if self.reduction not in REDUCTIONS:
            raise ConfigurationError(f"reduction must be one of {REDUCTIONS}")


# Table-I row order; each preset keeps only the named terms of the full weights
PRESETS = ("No norm", "L2", "L1", "SSIM", "L2+SSIM", "L1+SSIM", "MND")


def preset(name, base=None):
    """Ablation variant of ``base`` (defaults to the full objective)."""
    base = base or LossWeights()
    table = {
        "No norm": dict(dev_norm="none", use_ssim=False, grad_norm="none"),
        "L1": dict(dev_norm="L1", use_ssim=False, grad_norm="none"),
        "L2": dict(dev_norm="L2", use_ssim=False, grad_norm="none"),
        "SSIM": dict(dev_norm="none", use_ssim=True, grad_norm="none"),
        "L1+SSIM": dict(dev_norm="L1", use_ssim=True, grad_norm="none"),
        "L2+SSIM": dict(dev_norm="L2", use_ssim=True, grad_norm="none"),
        "MND": dict(dev_norm="L1", use_ssim=True, grad_norm="L1"),
    }
    if name not in table:
        raise ConfigurationError(f"unknown preset {name!r}; expected one of {PRESETS}")
    sw = table[name]
    return replace(
        base,
        beta1=base.beta1 if sw["dev_norm"] != "none" else 0.0,
        beta2=base.beta2 if sw["use_ssim"] else 0.0,
        beta3=base.beta3 if sw["grad_norm"] != "none" else 0.0,
        **sw,
    )


def _same_shape(z, x, op):
    if z.shape != x.shape:
        raise ShapeError(f"{op}: shapes {z.shape} and {x.shape} differ")


def _image_axes(t):
    if t.ndim not in (3, 4):
        raise ShapeError(f"expected (C,H,W) or (N,C,H,W), got {t.shape}")
    return (-3, -2, -1)


# ---------------------------------------------------------------- adversarial


def adv_nontargeted(y_gt, y_hat, u_hat):
    """``<y_gt, y_hat + u_hat>``: probability plus logit of the true class."""
    y_gt, y_hat, u_hat = ad.as_tensor(y_gt), ad.as_tensor(y_hat), ad.as_tensor(u_hat)
    if not (y_gt.shape == y_hat.shape == u_hat.shape):
        raise ShapeError(f"adv_nontargeted: {y_gt.shape}, {y_hat.shape}, {u_hat.shape}")
    return ad.sum(ad.mul(y_gt, ad.add(y_hat, u_hat)), axis=-1)


def adv_nontargeted_powered(y_gt, y_hat, r):
    """Alternative non-targeted form ``<y_gt, y_hat ** r>``."""
    if r <= 0:
        raise ConfigurationError(f"r must be > 0, got {r}")
    y_gt, y_hat = ad.as_tensor(y_gt), ad.as_tensor(y_hat)
    if y_gt.shape != y_hat.shape:
        raise ShapeError(f"adv_nontargeted_powered: {y_gt.shape} vs {y_hat.shape}")
    p = ad.sum(ad.mul(y_gt, y_hat), axis=-1)
    return ad.pow(ad.clip(p, 1e-300, None), r)


def adv_targeted(y_t, y_hat, r):
    """``-<y_t, y_hat ** r>``; lies in [-1, 0] and reaches -1 when the target has probability 1."""
    if r <= 0:
        raise ConfigurationError(f"r must be > 0, got {r}")
    y_t, y_hat = ad.as_tensor(y_t), ad.as_tensor(y_hat)
    if y_t.shape != y_hat.shape:
        raise ShapeError(f"adv_targeted: {y_t.shape} vs {y_hat.shape}")
    # pick the target probability before the power so untouched classes never see p**(r-1)
    p = ad.sum(ad.mul(y_t, y_hat), axis=-1)
    return ad.neg(ad.pow(ad.clip(p, 1e-300, None), r))


def select_target(y):
    """One-hot at the least likely class (lowest index on ties)."""
    y = np.asarray(y.data if isinstance(y, ad.Tensor) else y, dtype=np.float64)
    out = np.zeros_like(y)
    np.put_along_axis(out, np.argmin(y, axis=-1)[..., None], 1.0, axis=-1)
    return out


# ---------------------------------------------------------------- perceptual


def _norm(d, norm, axes):
    if norm == "L1":
        return ad.sum(ad.abs_(d), axis=axes)
    if norm == "L2":
        s = ad.sum(ad.mul(d, d), axis=axes)
        # shifted so the value is exactly 0 at d == 0 while staying smooth there
        return ad.sub(ad.sqrt(ad.add(s, ROOT_EPS)), _ROOT_EPS_SQRT)
    raise ConfigurationError(f"norm must be 'L1' or 'L2', got {norm!r}")


def deviation(z, x, norm="L1"):
    z, x = ad.as_tensor(z), ad.as_tensor(x)
    _same_shape(z, x, "deviation")
    return _norm(ad.sub(z, x), norm, _image_axes(z))


@dataclass
class SsimStats:
    mu_z: np.ndarray
    mu_x: np.ndarray
    sigma_z: np.ndarray
    sigma_x: np.ndarray
    sigma_zx: np.ndarray
    c1: float = C1
    c2: float = C2


def ssim_stats(z, x):
    """Per-channel global statistics (N-1 normalisation) as plain arrays."""
    z = np.asarray(z.data if isinstance(z, ad.Tensor) else z, dtype=np.float64)
    x = np.asarray(x.data if isinstance(x, ad.Tensor) else x, dtype=np.float64)
    if z.shape != x.shape:
        raise ShapeError(f"ssim: shapes {z.shape} and {x.shape} differ")
    n = z.shape[-1] * z.shape[-2]
    mz = z.mean(axis=(-2, -1))
    mx = x.mean(axis=(-2, -1))
    dz = z - mz[..., None, None]
    dx = x - mx[..., None, None]
    return SsimStats(
        mu_z=mz,
        mu_x=mx,
        sigma_z=np.sqrt((dz * dz).sum(axis=(-2, -1)) / (n - 1)),
        sigma_x=np.sqrt((dx * dx).sum(axis=(-2, -1)) / (n - 1)),
        sigma_zx=(dz * dx).sum(axis=(-2, -1)) / (n - 1),
    )


def ssim(z, x):
    """Global-statistics SSIM per colour channel, averaged over channels.

    Uses ``2 * sigma_zx`` in the contrast-structure term so that SSIM(X, X) is
    exactly 1.
    """
    z, x = ad.as_tensor(z), ad.as_tensor(x)
    _same_shape(z, x, "ssim")
    _image_axes(z)
    n = z.shape[-1] * z.shape[-2]
    if n < 2:
        raise ShapeError("ssim needs at least two pixels per channel")
    sp = (-2, -1)
    mu_z = ad.mean(z, axis=sp, keepdims=True)
    mu_x = ad.mean(x, axis=sp, keepdims=True)
    dz = ad.sub(z, ad.expand(mu_z, z.shape))
    dx = ad.sub(x, ad.expand(mu_x, x.shape))
    var_z = ad.scale(ad.sum(ad.mul(dz, dz), axis=sp), 1.0 / (n - 1))
    var_x = ad.scale(ad.sum(ad.mul(dx, dx), axis=sp), 1.0 / (n - 1))
    cov = ad.scale(ad.sum(ad.mul(dz, dx), axis=sp), 1.0 / (n - 1))
    mz = ad.reshape(mu_z, var_z.shape)
    mx = ad.reshape(mu_x, var_x.shape)
    lum_num = ad.add(ad.scale(ad.mul(mz, mx), 2.0), C1)
    lum_den = ad.add(ad.add(ad.mul(mz, mz), ad.mul(mx, mx)), C1)
    cs_num = ad.add(ad.scale(cov, 2.0), C2)
    cs_den = ad.add(ad.add(var_z, var_x), C2)
    per_channel = ad.div(ad.mul(lum_num, cs_num), ad.mul(lum_den, cs_den))
    return ad.mean(per_channel, axis=-1)


def sobel(x):
    """Sobel gradient magnitude per channel, replicate padding, same shape as ``x``."""
    x = ad.as_tensor(x)
    _image_axes(x)
    if x.shape[-1] < 3 or x.shape[-2] < 3:
        raise ShapeError(f"sobel needs at least 3x3 pixels, got {x.shape[-2:]}")
    lead = x.shape[:-2]
    h, w = x.shape[-2:]
    flat = ad.reshape(x, (-1, 1, h, w))
    g = ad.conv2d(flat, _SOBEL_WEIGHT, padding="replicate")
    mag2 = ad.sum(ad.mul(g, g), axis=1)
    mag = ad.sub(ad.sqrt(ad.add(mag2, ROOT_EPS)), _ROOT_EPS_SQRT)
    return ad.reshape(mag, lead + (h, w))


def grad_similarity(z, x, norm="L1", x_sobel=None):
    """Norm of the difference of Sobel magnitude maps; ``x_sobel`` may be precomputed."""
    z, x = ad.as_tensor(z), ad.as_tensor(x)
    _same_shape(z, x, "grad_similarity")
    gx = sobel(x) if x_sobel is None else ad.as_tensor(x_sobel)
    return _norm(ad.sub(sobel(z), gx), norm, _image_axes(z))


def pqp_loss(z, x, w, x_sobel=None):
    """``b1 * dev(Z, X) - b2 * SSIM(Z, X) + b3 * gradsim(Z, X)`` honouring the switches in ``w``."""
    z, x = ad.as_tensor(z), ad.as_tensor(x)
    _same_shape(z, x, "pqp_loss")
    axes = _image_axes(z)
    per = w.scale
    if w.reduction == "mean":
        per = w.scale / float(np.prod([z.shape[a] for a in axes]))
    total = ad.Tensor(np.zeros(z.shape[:-3]))
    if w.dev_norm != "none" and w.beta1 > 0:
        total = ad.add(total, ad.scale(deviation(z, x, w.dev_norm), w.beta1 * per))
    if w.use_ssim and w.beta2 > 0:
        total = ad.sub(total, ad.scale(ssim(z, x), w.beta2 * w.scale))
    if w.grad_norm != "none" and w.beta3 > 0:
        total = ad.add(total, ad.scale(grad_similarity(z, x, w.grad_norm, x_sobel), w.beta3 * per))
    return total


def adversarial_term(u, mode, onehot, r=0.0625, nontargeted_form="logit"):
    """Adversarial loss from logits ``u`` for ``mode`` in {"non_targeted", "targeted"}.

    ``onehot`` is the true class for non-targeted attacks and the target class
    for targeted ones.
    """
    y = ad.softmax(u)
    if mode == "targeted":
        return adv_targeted(onehot, y, r)
    if mode != "non_targeted":
        raise ConfigurationError(f"unknown attack mode {mode!r}")
    if nontargeted_form == "logit":
        return adv_nontargeted(onehot, y, u)
    if nontargeted_form == "powered":
        return adv_nontargeted_powered(onehot, y, r)
    raise ConfigurationError(f"unknown non-targeted form {nontargeted_form!r}")


def total_loss(z, x, classifier, config, label=None, x_sobel=None):
    """Adversarial loss plus perceptual loss.

    ``label`` (class index or one-hot) is the ground truth for non-targeted
    attacks and the target for targeted ones. When omitted it falls back to the
    clean prediction's argmax (non-targeted) or its argmin (targeted).
    """
    z, x = ad.as_tensor(z), ad.as_tensor(x)
    _same_shape(z, x, "total_loss")
    if label is None:
        y_clean = ad.softmax(classifier.logits(x.detach())).data
        if config.mode == "targeted":
            onehot = select_target(y_clean)
        else:
            onehot = np.zeros_like(y_clean)
            np.put_along_axis(onehot, np.argmax(y_clean, axis=-1)[..., None], 1.0, axis=-1)
    else:
        onehot = np.asarray(label, dtype=np.float64)
        if onehot.shape != (z.shape[:-3] + (classifier.num_classes,)):
            idx = np.asarray(label, dtype=np.int64)
            onehot = np.zeros(idx.shape + (classifier.num_classes,))
            np.put_along_axis(onehot, idx[..., None], 1.0, axis=-1)
    u = classifier.logits(z)
    adv = adversarial_term(u, config.mode, onehot, config.weights.r, config.nontargeted_form)
    return ad.add(adv, pqp_loss(z, x, config.weights, x_sobel))
