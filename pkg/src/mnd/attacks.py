"""MND optimisation loop and the FGSM-family baseline attacks.

Every attack has a batched core that works on a stack of images (N, C, H, W)
and a thin single-image wrapper. Images in a batch are independent: each
keeps its own loss history and stops on its own.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .classifier import cross_entropy, one_hot
from .data import quantize
from .errors import ConfigurationError, DivergenceError, ShapeError
from .losses import PRESETS, LossWeights, adversarial_term, pqp_loss, preset, select_target, sobel

MODES = ("non_targeted", "targeted")
BASELINES = ("PGD", "MIFGSM", "BIM", "DI2FGSM")


@dataclass(frozen=True)
class AttackConfig:
    mode: str = "non_targeted"
    weights: LossWeights = field(default_factory=LossWeights)
    alpha: float = 1e-4
    max_iters: int = 1000
    convergence_tol: float = 1e-6
    patience: int = 10
    seed: int = 0
    clamp_each_step: bool = False
    nontargeted_form: str = "logit"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.alpha < 0:
            raise ConfigurationError(f"alpha must be >= 0, got {self.alpha}")
        if self.max_iters < 1:
            raise ConfigurationError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.patience < 1:
            raise ConfigurationError(f"patience must be >= 1, got {self.patience}")
        if self.nontargeted_form not in ("logit", "powered"):
            raise ConfigurationError(f"nontargeted_form must be 'logit' or 'powered'")


@dataclass(frozen=True)
class BaselineConfig:
    epsilon: float = 8 / 255
    step: float = 2 / 255
    steps: int = 10
    decay: float = 1.0
    transform_prob: float = 0.5
    resize_range: tuple = (0.9, 1.0)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.step <= self.epsilon:
            raise ConfigurationError(f"need 0 < step <= epsilon, got step={self.step}, epsilon={self.epsilon}")
        if self.steps < 1:
            raise ConfigurationError(f"steps must be >= 1, got {self.steps}")
        if not 0.0 <= self.transform_prob <= 1.0:
            raise ConfigurationError(f"transform_prob must lie in [0, 1], got {self.transform_prob}")
        lo, hi = self.resize_range
        if not 0 < lo <= hi <= 1.0:
            raise ConfigurationError(f"resize_range must satisfy 0 < lo <= hi <= 1, got {self.resize_range}")
        if self.decay < 0:
            raise ConfigurationError(f"decay must be >= 0, got {self.decay}")


@dataclass
class AttackResult:
    adversarial: np.ndarray
    success: bool
    iterations_used: int
    clean_class: int
    adversarial_class: int
    target_class: int = None
    final_loss: float = float("nan")
    method: str = ""


def _batch(images, classifier):
    x = np.asarray(images, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or tuple(x.shape[1:]) != classifier.input_shape:
        raise ShapeError(f"images of shape {np.shape(images)} do not match classifier input {classifier.input_shape}")
    return x, single


def _classify(classifier, x):
    return np.argmax(classifier.logits(ad.Tensor(x)).data, axis=1)


def _as_labels(labels, n):
    if labels is None:
        return None
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    return labels


# ---------------------------------------------------------------- MND


def mnd_attack_batch(images, classifier, config, labels=None, method="MND"):
    """Run the MND loop on every image of a batch; returns one result per image.

    ``labels`` are the ground-truth classes for the non-targeted loss; when
    omitted the clean prediction is used. Targeted attacks aim at the clean
    prediction's least likely class.
    """
    x, _ = _batch(images, classifier)
    n = len(x)
    labels = _as_labels(labels, n)
    clean_u = classifier.logits(ad.Tensor(x)).data
    clean_cls = np.argmax(clean_u, axis=1)
    clean_y = ad.softmax(ad.Tensor(clean_u)).data
    targeted = config.mode == "targeted"
    if targeted:
        target_onehot = select_target(clean_y)
        target_cls = np.argmax(target_onehot, axis=1)
        onehot = target_onehot
    else:
        target_cls = None
        onehot = one_hot(labels if labels is not None else clean_cls, classifier.num_classes)

    def succeeded(pred, idx):
        return pred == target_cls[idx] if targeted else pred != clean_cls[idx]

    x_sobel = sobel(ad.Tensor(x)).data if config.weights.grad_norm != "none" else None
    z = x.copy()
    active = np.ones(n, dtype=bool)
    iters = np.full(n, config.max_iters, dtype=np.int64)
    prev = np.full(n, np.nan)
    streak = np.zeros(n, dtype=np.int64)
    final_loss = np.full(n, np.nan)

    for t in range(config.max_iters):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        zt = ad.Tensor(z[idx], requires_grad=True)
        xs = ad.Tensor(x[idx])
        u = classifier.logits(zt)
        adv = adversarial_term(u, config.mode, onehot[idx], config.weights.r, config.nontargeted_form)
        per = ad.add(adv, pqp_loss(zt, xs, config.weights, None if x_sobel is None else x_sobel[idx]))
        vals = per.data
        if not np.all(np.isfinite(vals)):
            raise DivergenceError(f"non-finite loss at iteration {t}", iteration=t)
        final_loss[idx] = vals

        with np.errstate(invalid="ignore", divide="ignore"):
            rel = np.abs(vals - prev[idx]) / np.maximum(np.abs(prev[idx]), 1e-12)
        streak[idx] = np.where(rel < config.convergence_tol, streak[idx] + 1, 0)
        prev[idx] = vals

        pred = np.argmax(u.data, axis=1)
        stop = succeeded(pred, idx) & (streak[idx] >= config.patience)
        if stop.any():
            cand = idx[stop]
            ok = succeeded(_classify(classifier, quantize(z[cand])), cand)
            done = cand[ok]
            active[done] = False
            iters[done] = t
            stop[stop] = ok

        ad.sum(per).backward()
        step = config.alpha * zt.grad
        move = idx[~stop]
        z[move] = z[move] - step[~stop]
        if config.clamp_each_step:
            z[move] = np.clip(z[move], 0.0, 1.0)

    adv_img = quantize(z)
    adv_cls = _classify(classifier, adv_img)
    results = []
    for i in range(n):
        ok = adv_cls[i] == target_cls[i] if targeted else adv_cls[i] != clean_cls[i]
        results.append(
            AttackResult(
                adversarial=adv_img[i],
                success=bool(ok),
                iterations_used=int(iters[i]),
                clean_class=int(clean_cls[i]),
                adversarial_class=int(adv_cls[i]),
                target_class=None if target_cls is None else int(target_cls[i]),
                final_loss=float(final_loss[i]),
                method=method,
            )
        )
    return results


def mnd_attack(image, classifier, config, label=None):
    """Single-image MND attack."""
    x, single = _batch(image, classifier)
    if not single:
        raise ShapeError("mnd_attack takes one (C, H, W) image; use mnd_attack_batch for stacks")
    return mnd_attack_batch(x, classifier, config, None if label is None else [label])[0]


# ---------------------------------------------------------------- baselines


def _project_ball(z, x, eps):
    return np.clip(np.clip(z, x - eps, x + eps), 0.0, 1.0)


def _quantize_in_ball(z, x, eps):
    """Snap to the 1/255 grid without leaving the eps-ball or [0, 1]."""
    q = quantize(z)
    over = np.abs(q - x) > eps + 1e-9
    q = np.where(over, np.where(q > x, q - 1 / 255, q + 1 / 255), q)
    return q


def _ce_grad(classifier, z, onehot, transform=None):
    zt = ad.Tensor(z, requires_grad=True)
    inp = zt if transform is None else transform(zt)
    u = classifier.logits(inp)
    per = cross_entropy(onehot, ad.softmax(u))
    ad.sum(per).backward()
    return zt.grad, per.data


def _fgsm_family(images, classifier, labels, config, variant):
    x, single = _batch(images, classifier)
    n = len(x)
    clean_cls = _classify(classifier, x)
    labels = _as_labels(labels, n)
    if labels is None:
        labels = clean_cls
    onehot = one_hot(labels, classifier.num_classes)
    rng = np.random.default_rng(config.seed)
    eps = config.epsilon
    z = x.copy()
    if variant == "PGD":
        z = np.clip(z + rng.uniform(-eps, eps, size=z.shape), 0.0, 1.0)
    momentum = np.zeros_like(z)
    _, _, h, w = x.shape
    loss = np.full(n, np.nan)
    for _ in range(config.steps):
        transform = None
        if variant == "DI2FGSM" and rng.random() < config.transform_prob:
            lo, hi = config.resize_range
            nh = int(rng.integers(int(np.ceil(lo * h)), int(np.floor(hi * h)) + 1))
            nw = int(rng.integers(int(np.ceil(lo * w)), int(np.floor(hi * w)) + 1))
            top = int(rng.integers(0, h - nh + 1))
            left = int(rng.integers(0, w - nw + 1))

            def transform(t, nh=nh, nw=nw, top=top, left=left):
                return ad.resize_pad(t, (nh, nw), (top, left))

        g, loss = _ce_grad(classifier, z, onehot, transform)
        if variant == "MIFGSM":
            l1 = np.abs(g).sum(axis=(1, 2, 3), keepdims=True)
            momentum = config.decay * momentum + g / np.maximum(l1, 1e-12)
            g = momentum
        z = _project_ball(z + config.step * np.sign(g), x, eps)
    adv = _quantize_in_ball(z, x, eps)
    adv_cls = _classify(classifier, adv)
    return [
        AttackResult(
            adversarial=adv[i],
            success=bool(adv_cls[i] != clean_cls[i]),
            iterations_used=config.steps,
            clean_class=int(clean_cls[i]),
            adversarial_class=int(adv_cls[i]),
            final_loss=float(loss[i]),
            method=variant,
        )
        for i in range(n)
    ], single


def _baseline(variant):
    def attack(images, classifier, y_gt=None, config=None):
        results, single = _fgsm_family(images, classifier, y_gt, config or BaselineConfig(), variant)
        return results[0] if single else results

    attack.__name__ = f"{variant.lower()}_attack"
    return attack


bim_attack = _baseline("BIM")
bim_attack.__doc__ = "Iterative sign-gradient ascent on cross-entropy, clamped to the eps-ball each step."
pgd_attack = _baseline("PGD")
pgd_attack.__doc__ = "BIM from a seeded uniform start inside the eps-ball."
mifgsm_attack = _baseline("MIFGSM")
mifgsm_attack.__doc__ = "BIM on an accumulated, L1-normalised gradient (momentum ``decay``)."
di2fgsm_attack = _baseline("DI2FGSM")
di2fgsm_attack.__doc__ = (
    "BIM whose gradient is taken, with probability ``transform_prob`` per step, through a random "
    "resize-and-pad of the input. The transform is drawn once per step for the whole batch."
)

BASELINE_ATTACKS = {
    "PGD": pgd_attack,
    "MIFGSM": mifgsm_attack,
    "BIM": bim_attack,
    "DI2FGSM": di2fgsm_attack,
}


# ---------------------------------------------------------------- ablation


@dataclass
class AblationRow:
    preset: str
    results: list
    psnr_mean: float
    psnr_std: float
    ssim_mean: float
    ssim_std: float
    success_rate: float


def run_ablation(images, classifier, base_config, labels=None, presets=PRESETS):
    """Run every ablation preset with the same budget and seed; one row per preset."""
    from .metrics import psnr, ssim_eval, summarize

    x, _ = _batch(images, classifier)
    rows = []
    for name in presets:
        cfg = replace(base_config, weights=preset(name, base_config.weights))
        results = mnd_attack_batch(x, classifier, cfg, labels, method=name)
        p = [psnr(r.adversarial, xi) for r, xi in zip(results, x) if r.success]
        s = [ssim_eval(r.adversarial, xi) for r, xi in zip(results, x) if r.success]
        pm, ps = summarize(p)
        sm, ss = summarize(s)
        rows.append(AblationRow(name, results, pm, ps, sm, ss, float(np.mean([r.success for r in results]))))
    return rows
