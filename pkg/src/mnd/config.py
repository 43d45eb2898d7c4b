"""JSON experiment configuration with strict key and range checking.

The defaults are the desk-scale settings used by the acceptance suite. Every
run is determined by the config document plus the top-level ``seed``.
"""

import dataclasses
import json
from dataclasses import dataclass, field

from .attacks import BASELINES, MODES, AttackConfig, BaselineConfig
from .errors import ConfigurationError
from .losses import NORMS, PRESETS, REDUCTIONS, LossWeights

METHODS = BASELINES + PRESETS


@dataclass
class DatasetSection:
    source: str = "synthetic"  # or "folder"
    folder: str = ""
    num_classes: int = 10
    train_per_class: int = 500
    test_per_class: int = 100


@dataclass
class ClassifierSection:
    epochs: int = 20
    learning_rate: float = 0.01
    batch_size: int = 32
    checkpoint: str = "classifier.ckpt"


@dataclass
class ModeSection:
    alpha: float = 1e-3
    beta1: float = 100.0
    beta2: float = 100.0
    beta3: float = 100.0
    scale: float = 0.5
    r: float = 0.0625
    dev_norm: str = "L1"
    grad_norm: str = "L1"
    reduction: str = "mean"


def _targeted_defaults():
    return ModeSection(alpha=0.2, beta1=2.0, beta2=0.1, beta3=2.0, scale=1.0)


@dataclass
class BaselineSection:
    epsilon: float = 8 / 255
    step: float = 2 / 255
    steps: int = 10
    decay: float = 1.0
    transform_prob: float = 0.5
    resize_range: list = field(default_factory=lambda: [0.9, 1.0])


@dataclass
class AttackSection:
    num_images: int = 100
    methods: list = field(default_factory=lambda: list(METHODS))
    modes: list = field(default_factory=lambda: list(MODES))
    max_iters: int = 1000
    convergence_tol: float = 1e-2
    patience: int = 10
    clamp_each_step: bool = False
    nontargeted_form: str = "logit"
    non_targeted: ModeSection = field(default_factory=ModeSection)
    targeted: ModeSection = field(default_factory=_targeted_defaults)
    baseline: BaselineSection = field(default_factory=BaselineSection)


@dataclass
class EvaluationSection:
    diff_maps: bool = False
    grad_cam: bool = False
    artifact_limit: int = 10


@dataclass
class ExperimentConfig:
    seed: int = 0
    dataset: DatasetSection = field(default_factory=DatasetSection)
    classifier: ClassifierSection = field(default_factory=ClassifierSection)
    attack: AttackSection = field(default_factory=AttackSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    def to_dict(self):
        return dataclasses.asdict(self)

    def dumps(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def attack_config(self, mode, method="MND"):
        """AttackConfig for one MND preset in ``mode``."""
        from .losses import preset

        ms = getattr(self.attack, mode)
        weights = LossWeights(
            beta1=ms.beta1,
            beta2=ms.beta2,
            beta3=ms.beta3,
            r=ms.r,
            dev_norm=ms.dev_norm,
            grad_norm=ms.grad_norm,
            reduction=ms.reduction,
            scale=ms.scale,
        )
        return AttackConfig(
            mode=mode,
            weights=preset(method, weights),
            alpha=ms.alpha,
            max_iters=self.attack.max_iters,
            convergence_tol=self.attack.convergence_tol,
            patience=self.attack.patience,
            seed=self.seed,
            clamp_each_step=self.attack.clamp_each_step,
            nontargeted_form=self.attack.nontargeted_form,
        )

    def baseline_config(self):
        b = self.attack.baseline
        return BaselineConfig(
            epsilon=b.epsilon,
            step=b.step,
            steps=b.steps,
            decay=b.decay,
            transform_prob=b.transform_prob,
            resize_range=tuple(b.resize_range),
            seed=self.seed,
        )


# ---------------------------------------------------------------- parsing


def _build(base, doc, path):
    """Overlay ``doc`` on the dataclass instance ``base``; missing keys keep their defaults."""
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path or 'config'}: expected an object")
    fields = {f.name: f for f in dataclasses.fields(base)}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigurationError(f"unknown config key '{where}{unknown[0]}'")
    kwargs = {}
    for name, value in doc.items():
        key = f"{path}.{name}" if path else name
        default = getattr(base, name)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(default, value, key)
        else:
            kwargs[name] = _coerce(value, default, key)
    return dataclasses.replace(base, **kwargs)


def _coerce(value, default, key):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigurationError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigurationError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigurationError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigurationError(f"{key}: expected a string, got {value!r}")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigurationError(f"{key}: expected a list, got {value!r}")
        return list(value)
    return value


def _check(cond, key, msg):
    if not cond:
        raise ConfigurationError(f"{key}: {msg}")


def validate(cfg):
    """Range checks; raises ConfigurationError naming the offending key."""
    ds = cfg.dataset
    _check(ds.source in ("synthetic", "folder"), "dataset.source", "must be 'synthetic' or 'folder'")
    _check(ds.source != "folder" or ds.folder, "dataset.folder", "required when source is 'folder'")
    _check(ds.num_classes == 10, "dataset.num_classes", "the synthetic generator has exactly 10 classes")
    _check(ds.train_per_class >= 1, "dataset.train_per_class", "must be >= 1")
    _check(ds.test_per_class >= 1, "dataset.test_per_class", "must be >= 1")
    _check(cfg.seed >= 0, "seed", "must be >= 0")
    c = cfg.classifier
    _check(c.epochs >= 1, "classifier.epochs", "must be >= 1")
    _check(c.learning_rate >= 0, "classifier.learning_rate", "must be >= 0")
    _check(c.batch_size >= 1, "classifier.batch_size", "must be >= 1")
    _check(bool(c.checkpoint), "classifier.checkpoint", "must be a non-empty path")
    a = cfg.attack
    _check(a.num_images >= 2, "attack.num_images", "must be >= 2 (aggregates need two records)")
    for m in a.methods:
        _check(m in METHODS, "attack.methods", f"unknown method {m!r}; expected a subset of {list(METHODS)}")
    _check(len(a.methods) > 0, "attack.methods", "must not be empty")
    for m in a.modes:
        _check(m in MODES, "attack.modes", f"unknown mode {m!r}; expected a subset of {list(MODES)}")
    _check(len(a.modes) > 0, "attack.modes", "must not be empty")
    _check(a.max_iters >= 1, "attack.max_iters", "must be >= 1")
    _check(a.convergence_tol >= 0, "attack.convergence_tol", "must be >= 0")
    _check(a.patience >= 1, "attack.patience", "must be >= 1")
    _check(a.nontargeted_form in ("logit", "powered"), "attack.nontargeted_form", "must be 'logit' or 'powered'")
    for mode in MODES:
        ms = getattr(a, mode)
        key = f"attack.{mode}"
        _check(ms.alpha > 0, f"{key}.alpha", "must be > 0")
        for b in ("beta1", "beta2", "beta3", "scale"):
            _check(getattr(ms, b) >= 0, f"{key}.{b}", "must be >= 0")
        _check(ms.r > 0, f"{key}.r", "must be > 0")
        _check(ms.dev_norm in NORMS, f"{key}.dev_norm", f"must be one of {list(NORMS)}")
        _check(ms.grad_norm in NORMS, f"{key}.grad_norm", f"must be one of {list(NORMS)}")
        _check(ms.reduction in REDUCTIONS, f"{key}.reduction", f"must be one of {list(REDUCTIONS)}")
    b = a.baseline
    _check(b.epsilon > 0, "attack.baseline.epsilon", "must be > 0")
    _check(0 < b.step <= b.epsilon, "attack.baseline.step", "must satisfy 0 < step <= epsilon")
    _check(b.steps >= 1, "attack.baseline.steps", "must be >= 1")
    _check(b.decay >= 0, "attack.baseline.decay", "must be >= 0")
    _check(0 <= b.transform_prob <= 1, "attack.baseline.transform_prob", "must lie in [0, 1]")
    rr = b.resize_range
    _check(
        len(rr) == 2 and all(isinstance(v, (int, float)) for v in rr) and 0 < rr[0] <= rr[1] <= 1,
        "attack.baseline.resize_range",
        "must be [lo, hi] with 0 < lo <= hi <= 1",
    )
    e = cfg.evaluation
    _check(e.artifact_limit >= 0, "evaluation.artifact_limit", "must be >= 0")
    return cfg


def from_dict(doc):
    return validate(_build(ExperimentConfig(), doc, ""))


def load_config(path=None):
    """Parse a JSON config file; ``None`` gives the defaults."""
    if path is None:
        return validate(ExperimentConfig())
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"{path}: invalid JSON ({exc})") from None
    return from_dict(doc)
