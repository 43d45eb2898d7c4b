"""The frozen target classifier: a small CNN, its training loop and checkpoints.

Checkpoint layout (all integers little-endian)::

    b"MNDCKPT1"                 8-byte magic
    uint32                      header length L
    L bytes                     UTF-8 JSON header: num_classes, input_shape, layers
    float64[...]                parameters, layer order, weight before bias
    uint64                      blake2b-64 checksum of the parameter bytes
"""

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ChecksumError, ConfigurationError, CorruptCheckpointError, ShapeError, UsageError

MAGIC = b"MNDCKPT1"
LOG_CLAMP = 1e-12


class Classifier:
    """``f = softmax(f1(x))`` where ``f1`` is a stack of conv/pool/affine layers.

    ``layers`` is a list of descriptor dicts; layers with parameters carry a
    ``params`` list of :class:`~mnd.autodiff.Tensor`.
    """

    def __init__(self, layers, num_classes, input_shape):
        self.layers = layers
        self.num_classes = int(num_classes)
        self.input_shape = tuple(int(s) for s in input_shape)

    def parameters(self):
        return [p for layer in self.layers for p in layer.get("params", ())]

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False
            p.grad = None
        return self

    def unfreeze(self):
        for p in self.parameters():
            p.requires_grad = True
        return self

    def _check_input(self, x):
        if tuple(x.shape[-3:]) != self.input_shape or x.ndim not in (3, 4):
            raise ShapeError(f"input shape {x.shape} does not match classifier input {self.input_shape}")

    def logits(self, x, capture=False):
        """Run ``f1``. With ``capture`` also return the last conv activation (post-ReLU)."""
        x = ad.as_tensor(x)
        self._check_input(x)
        last_conv = max(i for i, layer in enumerate(self.layers) if layer["kind"] == "conv2d")
        act = None
        h = x
        for i, layer in enumerate(self.layers):
            kind = layer["kind"]
            if kind == "conv2d":
                w, b = layer["params"]
                h = ad.conv2d(h, w, b, padding="replicate")
            elif kind == "relu":
                h = ad.relu(h)
                if i == last_conv + 1:
                    act = h
            elif kind == "maxpool2d":
                h = ad.maxpool2d(h, layer["size"])
            elif kind == "flatten":
                h = ad.reshape(h, (-1,)) if x.ndim == 3 else ad.flatten(h)
            elif kind == "linear":
                w, b = layer["params"]
                h = ad.linear(h, w, b)
            else:
                raise ConfigurationError(f"unknown layer kind {kind!r}")
        return (h, act) if capture else h

    def __call__(self, x):
        return ad.softmax(self.logits(x))

    def checksum(self):
        h = hashlib.blake2b(digest_size=8)
        for p in self.parameters():
            h.update(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
        return h.hexdigest()


def build_small_cnn(input_shape=(3, 32, 32), num_classes=10, seed=0):
    """conv(->16)+relu+pool, conv(->32)+relu+pool, flatten, linear(->128)+relu, linear(->C)."""
    n, h, w = (int(s) for s in input_shape)
    if num_classes < 2:
        raise ConfigurationError(f"need at least 2 classes, got {num_classes}")
    if h < 16 or w < 16:
        raise ConfigurationError(f"input {h}x{w} too small for two 2x poolings (need >= 16x16)")
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return ad.Tensor(rng.uniform(-bound, bound, size=shape))

    flat = 32 * (h // 4) * (w // 4)
    layers = [
        {"kind": "conv2d", "in": n, "out": 16, "kernel": 3},
        {"kind": "relu"},
        {"kind": "maxpool2d", "size": 2},
        {"kind": "conv2d", "in": 16, "out": 32, "kernel": 3},
        {"kind": "relu"},
        {"kind": "maxpool2d", "size": 2},
        {"kind": "flatten"},
        {"kind": "linear", "in": flat, "out": 128},
        {"kind": "relu"},
        {"kind": "linear", "in": 128, "out": num_classes},
    ]
    for layer in layers:
        if layer["kind"] == "conv2d":
            fan_in = layer["in"] * 9
            layer["params"] = [
                uniform((layer["out"], layer["in"], 3, 3), fan_in),
                uniform((layer["out"],), fan_in),
            ]
        elif layer["kind"] == "linear":
            fan_in = layer["in"]
            layer["params"] = [uniform((layer["out"], fan_in), fan_in), uniform((layer["out"],), fan_in)]
    return Classifier(layers, num_classes, input_shape).freeze()


def cross_entropy(y_gt, y_hat):
    """``-sum(y_gt * log(max(y_hat, 1e-12)))`` over the last axis."""
    y_gt, y_hat = ad.as_tensor(y_gt), ad.as_tensor(y_hat)
    if y_gt.shape != y_hat.shape:
        raise ShapeError(f"cross_entropy: {y_gt.shape} vs {y_hat.shape}")
    return ad.neg(ad.sum(ad.mul(y_gt, ad.log(ad.clip(y_hat, LOG_CLAMP, None))), axis=-1))


def one_hot(index, num_classes):
    index = np.asarray(index)
    out = np.zeros(index.shape + (num_classes,))
    np.put_along_axis(out, index[..., None], 1.0, axis=-1)
    return out


def predict(classifier, image):
    """Return ``(class_index, probabilities, logits)``; ties go to the lowest index."""
    x = ad.as_tensor(image)
    if x.shape != classifier.input_shape:
        raise ShapeError(f"image shape {x.shape} != classifier input {classifier.input_shape}")
    u = classifier.logits(x.detach())
    y = ad.softmax(u)
    return int(np.argmax(y.data)), y.data, u.data


def predict_batch(classifier, images, batch_size=256):
    """Class indices for a stack of images."""
    images = np.asarray(images, dtype=np.float64)
    out = []
    for start in range(0, len(images), batch_size):
        u = classifier.logits(ad.Tensor(images[start:start + batch_size]))
        out.append(np.argmax(u.data, axis=1))
    return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


@dataclass
class TrainingReport:
    epoch_loss: list = field(default_factory=list)
    epoch_accuracy: list = field(default_factory=list)


def train(classifier, images, labels, epochs=20, learning_rate=0.01, batch_size=32, seed=0, log=None):
    """Mini-batch gradient descent on mean cross-entropy.

    Per-epoch loss and accuracy are running averages over the epoch's batches.
    The classifier is left frozen afterwards.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if len(images) == 0:
        raise UsageError("cannot train on an empty dataset")
    if labels.min() < 0 or labels.max() >= classifier.num_classes:
        raise UsageError(f"labels must lie in [0, {classifier.num_classes})")
    rng = np.random.default_rng(seed)
    params = classifier.unfreeze().parameters()
    report = TrainingReport()
    targets = one_hot(labels, classifier.num_classes)
    try:
        for epoch in range(epochs):
            order = rng.permutation(len(images))
            total_loss, correct = 0.0, 0
            for start in range(0, len(order), batch_size):
                idx = order[start:start + batch_size]
                for p in params:
                    p.grad = None
                u = classifier.logits(ad.Tensor(images[idx]))
                loss = ad.mean(cross_entropy(targets[idx], ad.softmax(u)))
                loss.backward()
                for p in params:
                    p.data = p.data - learning_rate * p.grad
                total_loss += loss.item() * len(idx)
                correct += int((np.argmax(u.data, axis=1) == labels[idx]).sum())
            report.epoch_loss.append(total_loss / len(images))
            report.epoch_accuracy.append(correct / len(images))
            if log is not None:
                log(f"epoch {epoch + 1}/{epochs} loss={report.epoch_loss[-1]:.4f} acc={report.epoch_accuracy[-1]:.4f}")
    finally:
        classifier.freeze()
    return report


def accuracy(classifier, images, labels):
    return float(np.mean(predict_batch(classifier, images) == np.asarray(labels)))


# ---------------------------------------------------------------- checkpoints


def _descriptors(classifier):
    out = []
    for layer in classifier.layers:
        d = {k: v for k, v in layer.items() if k != "params"}
        if "params" in layer:
            d["shapes"] = [list(p.shape) for p in layer["params"]]
        out.append(d)
    return out


def save(classifier, path):
    header = json.dumps(
        {
            "num_classes": classifier.num_classes,
            "input_shape": list(classifier.input_shape),
            "layers": _descriptors(classifier),
        },
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(p.data, dtype="<f8").tobytes() for p in classifier.parameters())
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)
        fh.write(digest)


def load(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(MAGIC) + 4 or blob[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic")
    (hlen,) = struct.unpack_from("<I", blob, len(MAGIC))
    start = len(MAGIC) + 4
    if len(blob) < start + hlen:
        raise CorruptCheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[start:start + hlen].decode("utf-8"))
        layers = header["layers"]
        num_classes = int(header["num_classes"])
        input_shape = tuple(header["input_shape"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable header ({exc})") from None
    sizes = [int(np.prod(s)) for layer in layers for s in layer.get("shapes", ())]
    payload_start = start + hlen
    payload_end = payload_start + 8 * sum(sizes)
    if len(blob) != payload_end + 8:
        raise CorruptCheckpointError(f"{path}: expected {payload_end + 8} bytes, found {len(blob)}")
    payload = blob[payload_start:payload_end]
    if hashlib.blake2b(payload, digest_size=8).digest() != blob[payload_end:]:
        raise ChecksumError(f"{path}: payload checksum mismatch")
    values = np.frombuffer(payload, dtype="<f8")
    offset = 0
    for layer in layers:
        shapes = layer.pop("shapes", None)
        if shapes is None:
            continue
        params = []
        for s in shapes:
            k = int(np.prod(s))
            params.append(ad.Tensor(values[offset:offset + k].reshape(s)))
            offset += k
        layer["params"] = params
    clf = Classifier(layers, num_classes, input_shape).freeze()
    try:
        clf.logits(np.zeros(input_shape))
    except (ShapeError, ValueError) as exc:
        raise CorruptCheckpointError(f"{path}: layer shapes inconsistent ({exc})") from None
    return clf
