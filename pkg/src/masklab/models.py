"""Scorer abstraction, the bundled trainable CNN, baseline construction and model files.

The CNN is small on purpose (32x32 grayscale inputs, two conv blocks, one dense
hidden layer) so that every downstream claim in this package can be verified
offline in seconds.  Forward and backward passes are written directly in numpy;
input gradients are exact up to the usual subgradient conventions (ReLU' at 0
is 0, max-pool ties route to the first element).
"""

from __future__ import annotations

import abc
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BaselineError, CapabilityError, InputError, TrainingError

MODEL_MAGIC = b"SFRG"
MODEL_VERSION = 1


# ---------------------------------------------------------------------------
# images


def validate_image(image) -> np.ndarray:
    """Check the H x W x C in-[0,1] contract and return the array as float64."""
    arr = np.asarray(image, dtype=float)
    if arr.ndim != 3:
        raise InputError(f"image must be H x W x C, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("image contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise InputError("image values must lie in [0, 1]")
    return arr


# ---------------------------------------------------------------------------
# scorer abstraction


class Scorer(abc.ABC):
    """An evaluatable classifier exposing class probabilities.

    Evaluation must be pure: identical inputs yield identical outputs.
    Subclasses that can differentiate their output override
    ``input_gradient`` and report ``gradient_capable = True``.
    """

    class_count: int
    input_shape: tuple[int, int, int]

    @property
    def gradient_capable(self) -> bool:
        return False

    @abc.abstractmethod
    def score_vector(self, image) -> np.ndarray:
        """Probability vector over classes for one image."""

    def score_batch(self, images) -> np.ndarray:
        return np.stack([self.score_vector(img) for img in images])

    def input_gradient(self, image, class_index: int) -> np.ndarray:
        raise CapabilityError(f"{type(self).__name__} is forward-only")

    def input_gradient_batch(self, images, class_index: int) -> np.ndarray:
        return np.stack([self.input_gradient(img, class_index) for img in images])


def score(scorer: Scorer, image, class_index: int) -> float:
    """Class probability with full input validation."""
    arr = validate_image(image)
    if arr.shape != tuple(scorer.input_shape):
        raise InputError(f"image shape {arr.shape} != scorer input shape {scorer.input_shape}")
    if not 0 <= class_index < scorer.class_count:
        raise InputError(f"class index {class_index} out of range [0, {scorer.class_count})")
    return float(scorer.score_vector(arr)[class_index])


def input_gradient(scorer: Scorer, image, class_index: int) -> np.ndarray:
    """d score / d image, raising CapabilityError on forward-only scorers."""
    arr = validate_image(image)
    if arr.shape != tuple(scorer.input_shape):
        raise InputError(f"image shape {arr.shape} != scorer input shape {scorer.input_shape}")
    if not 0 <= class_index < scorer.class_count:
        raise InputError(f"class index {class_index} out of range [0, {scorer.class_count})")
    if not scorer.gradient_capable:
        raise CapabilityError(f"{type(scorer).__name__} is forward-only")
    return scorer.input_gradient(arr, class_index)


# ---------------------------------------------------------------------------
# numpy layers (batched, NHWC)


def _softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _conv_cols(x):
    """3x3 same-padding im2col: (N,H,W,C) -> (N,H,W,9*C)."""
    n, h, w, c = x.shape
    xp = np.zeros((n, h + 2, w + 2, c), dtype=x.dtype)
    xp[:, 1:-1, 1:-1, :] = x
    cols = np.empty((n, h, w, 9 * c), dtype=x.dtype)
    k = 0
    for dy in range(3):
        for dx in range(3):
            cols[..., k * c : (k + 1) * c] = xp[:, dy : dy + h, dx : dx + w, :]
            k += 1
    return cols


def _conv_forward(x, kernel, bias):
    n, h, w, c = x.shape
    out_c = kernel.shape[-1]
    cols = _conv_cols(x)
    out = cols.reshape(n * h * w, 9 * c) @ kernel.reshape(9 * c, out_c) + bias
    return out.reshape(n, h, w, out_c), cols


def _conv_backward_input(dout, kernel, in_shape):
    n, h, w, c = in_shape
    out_c = kernel.shape[-1]
    dcols = dout.reshape(n * h * w, out_c) @ kernel.reshape(9 * c, out_c).T
    dcols = dcols.reshape(n, h, w, 9 * c)
    dxp = np.zeros((n, h + 2, w + 2, c), dtype=dout.dtype)
    k = 0
    for dy in range(3):
        for dx in range(3):
            dxp[:, dy : dy + h, dx : dx + w, :] += dcols[..., k * c : (k + 1) * c]
            k += 1
    return dxp[:, 1:-1, 1:-1, :]


def _conv_backward_params(dout, cols):
    n, h, w, out_c = dout.shape
    kc = cols.shape[-1]
    dk = cols.reshape(n * h * w, kc).T @ dout.reshape(n * h * w, out_c)
    return dk.reshape(3, 3, kc // 9, out_c), dout.sum(axis=(0, 1, 2))


def _pool_forward(x):
    n, h, w, c = x.shape
    xv = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4)
    xv = xv.reshape(n, h // 2, w // 2, c, 4)
    idx = xv.argmax(axis=4)
    out = np.take_along_axis(xv, idx[..., None], axis=4)[..., 0]
    return out, idx


def _pool_backward(dout, idx, in_shape):
    n, h, w, c = in_shape
    dxv = np.zeros((n, h // 2, w // 2, c, 4), dtype=dout.dtype)
    np.put_along_axis(dxv, idx[..., None], dout[..., None], axis=4)
    dx = dxv.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    return dx.reshape(n, h, w, c)


# ---------------------------------------------------------------------------
# toy CNN

_PARAM_ORDER = ("k1", "b1", "k2", "b2", "w3", "b3", "w4", "b4")


class ToyCnn(Scorer):
    """conv(3x3,8)+ReLU+pool2 -> conv(3x3,16)+ReLU+pool2 -> dense hidden+ReLU -> logits.

    Weights are frozen at construction; the dense hidden activations (the
    embedding consumed by the concept-extraction module) are retrievable for
    any input.
    """

    def __init__(self, params: dict, input_shape=(32, 32, 1), class_count=3, rng_seed=0):
        h, w, c = input_shape
        if h % 4 or w % 4:
            raise InputError("input height/width must be divisible by 4 (two pool-2 layers)")
        self.input_shape = (h, w, c)
        self.class_count = class_count
        self.rng_seed = rng_seed
        self.params = {}
        for name in _PARAM_ORDER:
            arr = np.array(params[name], dtype=float)
            arr.flags.writeable = False
            self.params[name] = arr
        self.hidden_dim = self.params["w3"].shape[1]
        self._flat_dim = (h // 4) * (w // 4) * self.params["k2"].shape[-1]
        if self.params["w3"].shape[0] != self._flat_dim:
            raise InputError("dense layer does not match the conv stack output size")

    @property
    def gradient_capable(self) -> bool:
        return True

    @staticmethod
    def init_params(rng: np.random.Generator, input_shape=(32, 32, 1), class_count=3, hidden_dim=32):
        h, w, c = input_shape
        flat = (h // 4) * (w // 4) * 16
        def he(shape, fan_in):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)
        return {
            "k1": he((3, 3, c, 8), 9 * c),
            "b1": np.zeros(8),
            "k2": he((3, 3, 8, 16), 9 * 8),
            "b2": np.zeros(16),
            "w3": he((flat, hidden_dim), flat),
            "b3": np.zeros(hidden_dim),
            "w4": he((hidden_dim, class_count), hidden_dim),
            "b4": np.zeros(class_count),
        }

    # forward ---------------------------------------------------------------

    def _forward(self, x, want_cache=False):
        p = self.params
        a1, cols1 = _conv_forward(x, p["k1"], p["b1"])
        r1 = np.maximum(a1, 0.0)
        p1, i1 = _pool_forward(r1)
        a2, cols2 = _conv_forward(p1, p["k2"], p["b2"])
        r2 = np.maximum(a2, 0.0)
        p2, i2 = _pool_forward(r2)
        flat = p2.reshape(x.shape[0], -1)
        hpre = flat @ p["w3"] + p["b3"]
        hidden = np.maximum(hpre, 0.0)
        logits = hidden @ p["w4"] + p["b4"]
        if not want_cache:
            return logits, hidden
        cache = dict(x=x, a1=a1, cols1=cols1, r1=r1, i1=i1, p1=p1, a2=a2,
                     cols2=cols2, r2=r2, i2=i2, flat=flat, hpre=hpre, hidden=hidden)
        return logits, hidden, cache

    def _backward_to_input(self, dlogits, cache):
        p = self.params
        dh = dlogits @ p["w4"].T
        dhpre = dh * (cache["hpre"] > 0)
        dflat = dhpre @ p["w3"].T
        n = dlogits.shape[0]
        hq, wq = self.input_shape[0] // 4, self.input_shape[1] // 4
        dp2 = dflat.reshape(n, hq, wq, 16)
        dr2 = _pool_backward(dp2, cache["i2"], cache["r2"].shape)
        da2 = dr2 * (cache["a2"] > 0)
        dp1 = _conv_backward_input(da2, p["k2"], cache["p1"].shape)
        dr1 = _pool_backward(dp1, cache["i1"], cache["r1"].shape)
        da1 = dr1 * (cache["a1"] > 0)
        return _conv_backward_input(da1, p["k1"], cache["x"].shape)

    # scorer interface ------------------------------------------------------

    def score_vector(self, image):
        return self.score_batch(np.asarray(image, dtype=float)[None])[0]

    def score_batch(self, images):
        logits, _ = self._forward(np.asarray(images, dtype=float))
        return _softmax(logits)

    def logits_batch(self, images):
        logits, _ = self._forward(np.asarray(images, dtype=float))
        return logits

    def hidden_batch(self, images):
        """Dense hidden-layer activations, one row per image."""
        _, hidden = self._forward(np.asarray(images, dtype=float))
        return hidden

    def input_gradient(self, image, class_index):
        return self.input_gradient_batch(np.asarray(image, dtype=float)[None], class_index)[0]

    def input_gradient_batch(self, images, class_index):
        x = np.asarray(images, dtype=float)
        logits, _, cache = self._forward(x, want_cache=True)
        probs = _softmax(logits)
        # d softmax_c / d logits = p_c * (onehot_c - p)
        dlogits = -probs * probs[:, class_index : class_index + 1]
        dlogits[:, class_index] += probs[:, class_index]
        return self._backward_to_input(dlogits, cache)


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.

    The occlusion settings teach the network a graded response to partial
    evidence: random grid cells are swapped for their blurred counterparts,
    and for stamped images one whole stamp is occasionally blurred away so
    either stamp alone still supports the label.  Both matter downstream:
    perturbed images stay in-distribution, so masked-image confidences move
    smoothly with the amount of surviving evidence.
    """

    epochs: int = 8
    batch_size: int = 32
    learning_rate: float = 0.08
    momentum: float = 0.9
    holdout_fraction: float = 0.2
    hidden_dim: int = 32
    label_smoothing: float = 0.05
    occlude_prob: float = 0.5
    max_occluded_cells: int = 3
    occlude_grid: int = 7
    occlude_sigma: float = 2.0
    feature_dropout: float = 0.3


@dataclass
class TrainReport:
    model: ToyCnn
    holdout_accuracy: float
    loss_history: list = field(default_factory=list)


def train_toy(dataset, config: TrainConfig, seed: int) -> TrainReport:
    """Train the bundled CNN on a synthetic dataset; deterministic per seed."""
    images = np.asarray(dataset.images, dtype=float)
    labels = np.asarray(dataset.labels, dtype=int)
    if images.shape[0] == 0:
        raise InputError("dataset is empty")
    class_count = int(labels.max()) + 1
    if class_count < 2:
        raise InputError("dataset must contain at least 2 classes")
    feature_centers = getattr(dataset, "feature_centers", None)

    rng = np.random.default_rng(seed)
    params = ToyCnn.init_params(rng, images.shape[1:], class_count, config.hidden_dim)
    velocity = {k: np.zeros_like(v) for k, v in params.items()}

    n_hold = int(round(images.shape[0] * config.holdout_fraction))
    perm = rng.permutation(images.shape[0])
    train_idx, hold_idx = perm[n_hold:], perm[:n_hold]

    blurred = None
    cell_masks = None
    if config.occlude_prob > 0 or config.feature_dropout > 0:
        blurred = np.stack([gaussian_blur(img, config.occlude_sigma) for img in images])
    if config.occlude_prob > 0:
        from .perturbation import PatchGrid, block_upsample

        grid = PatchGrid(config.occlude_grid, config.occlude_grid,
                         images.shape[1], images.shape[2])
        cell_masks = np.stack([
            block_upsample(np.eye(grid.patch_count)[c].reshape(grid.rows, grid.cols), grid)
            for c in range(grid.patch_count)
        ])[..., None]

    model = ToyCnn(params, images.shape[1:], class_count, seed)
    losses = []
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(train_idx)
        for start in range(0, order.size, config.batch_size):
            batch = order[start : start + config.batch_size]
            x, y = images[batch].copy(), labels[batch]
            _augment_batch(x, batch, labels, blurred, cell_masks, feature_centers,
                           config, rng)
            logits, _, cache = model._forward(x, want_cache=True)
            probs = _softmax(logits)
            loss = -np.mean(np.log(probs[np.arange(y.size), y] + 1e-12))
            losses.append(float(loss))
            if not np.isfinite(loss):
                raise TrainingError("training loss became non-finite", iteration=step)
            target = np.full((y.size, class_count), config.label_smoothing / class_count)
            target[np.arange(y.size), y] += 1.0 - config.label_smoothing
            dlogits = (probs - target) / y.size
            grads = _param_gradients(model, dlogits, cache)
            new_params = {}
            for name in _PARAM_ORDER:
                velocity[name] = config.momentum * velocity[name] - config.learning_rate * grads[name]
                new_params[name] = params[name] + velocity[name]
            params = new_params
            model = ToyCnn(params, images.shape[1:], class_count, seed)
            step += 1

    if hold_idx.size:
        preds = model.score_batch(images[hold_idx]).argmax(axis=1)
        accuracy = float(np.mean(preds == labels[hold_idx]))
    else:
        accuracy = float("nan")
    return TrainReport(model=model, holdout_accuracy=accuracy, loss_history=losses)


def _augment_batch(x, batch, labels, blurred, cell_masks, feature_centers, config, rng):
    for j, gi in enumerate(batch):
        if (feature_centers is not None and labels[gi] != 0
                and config.feature_dropout > 0 and rng.random() < config.feature_dropout):
            cy, cx = feature_centers[gi][rng.integers(0, len(feature_centers[gi]))]
            if cy >= 0:
                half = 3
                ys = slice(max(cy - half, 0), cy + half + 1)
                xs = slice(max(cx - half, 0), cx + half + 1)
                x[j][ys, xs] = blurred[gi][ys, xs]
        if cell_masks is not None and rng.random() < config.occlude_prob:
            count = rng.integers(1, config.max_occluded_cells + 1)
            cells = rng.choice(cell_masks.shape[0], size=count, replace=False)
            for c in cells:
                m = cell_masks[c]
                x[j] = x[j] * (1 - m) + blurred[gi] * m


def _param_gradients(model: ToyCnn, dlogits, cache):
    p = model.params
    grads = {}
    grads["w4"] = cache["hidden"].T @ dlogits
    grads["b4"] = dlogits.sum(axis=0)
    dh = dlogits @ p["w4"].T
    dhpre = dh * (cache["hpre"] > 0)
    grads["w3"] = cache["flat"].T @ dhpre
    grads["b3"] = dhpre.sum(axis=0)
    dflat = dhpre @ p["w3"].T
    n = dlogits.shape[0]
    hq, wq = model.input_shape[0] // 4, model.input_shape[1] // 4
    dp2 = dflat.reshape(n, hq, wq, 16)
    dr2 = _pool_backward(dp2, cache["i2"], cache["r2"].shape)
    da2 = dr2 * (cache["a2"] > 0)
    grads["k2"], grads["b2"] = _conv_backward_params(da2, cache["cols2"])
    dp1 = _conv_backward_input(da2, p["k2"], cache["p1"].shape)
    dr1 = _pool_backward(dp1, cache["i1"], cache["r1"].shape)
    da1 = dr1 * (cache["a1"] > 0)
    grads["k1"], grads["b1"] = _conv_backward_params(da1, cache["cols1"])
    return grads


# ---------------------------------------------------------------------------
# blurred baseline


def gaussian_blur(image, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel radius ceil(3*sigma), reflect padding."""
    if sigma <= 0:
        raise InputError("sigma must be positive")
    arr = np.asarray(image, dtype=float)
    radius = int(np.ceil(3.0 * sigma))
    xs = np.arange(-radius, radius + 1, dtype=float)
    kernel = np.exp(-0.5 * (xs / sigma) ** 2)
    kernel /= kernel.sum()

    def blur_axis(a, axis):
        padding = [(0, 0)] * a.ndim
        padding[axis] = (radius, radius)
        padded = np.pad(a, padding, mode="reflect")
        out = np.zeros_like(a)
        for i, kv in enumerate(kernel):
            sl = [slice(None)] * a.ndim
            sl[axis] = slice(i, i + a.shape[axis])
            out += kv * padded[tuple(sl)]
        return out

    return np.clip(blur_axis(blur_axis(arr, 0), 1), 0.0, 1.0)


def blur_baseline(image, sigma: float, scorer: Scorer, class_index: int,
                  epsilon: float = 0.05, max_doublings: int = 8) -> np.ndarray:
    """Blur the image until the class confidence drops to at most epsilon.

    Sigma doubles on each failed check; if the bound is still violated after
    ``max_doublings`` escalations the failure is reported, never silently
    accepted.
    """
    arr = validate_image(image)
    if sigma <= 0:
        raise InputError("sigma must be positive")
    if not 0.0 < epsilon <= 1.0:
        raise InputError("epsilon must lie in (0, 1]")
    current = sigma
    for _ in range(max_doublings + 1):
        baseline = gaussian_blur(arr, current)
        confidence = score(scorer, baseline, class_index)
        if confidence <= epsilon:
            return baseline
        current *= 2.0
    raise BaselineError(
        f"confidence {confidence:.4f} still above epsilon {epsilon} after "
        f"{max_doublings} doublings (final sigma {current / 2.0})",
        final_sigma=current / 2.0,
        final_confidence=confidence,
    )


# ---------------------------------------------------------------------------
# model file format (.sfm)


def write_model_file(path, kind: str, descriptor: dict, arrays: list[tuple[str, np.ndarray]]) -> None:
    """Versioned binary container: magic, version, JSON descriptor, f32 LE blobs."""
    header = dict(descriptor)
    header["kind"] = kind
    header["arrays"] = [[name, list(arr.shape)] for name, arr in arrays]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", MODEL_VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_model_file(path) -> tuple[str, dict, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise InputError(f"not a model file (bad magic {magic!r})")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != MODEL_VERSION:
            raise InputError(f"unsupported model file version {version}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for name, shape in header["arrays"]:
            count = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4").astype(float)
            arrays[name] = data.reshape(shape)
    kind = header.pop("kind")
    header.pop("arrays")
    return kind, header, arrays


def save_toy_cnn(path, model: ToyCnn) -> None:
    descriptor = {
        "input_shape": list(model.input_shape),
        "class_count": model.class_count,
        "hidden_dim": model.hidden_dim,
        "rng_seed": model.rng_seed,
        "stack": "conv3x3x8-relu-pool2-conv3x3x16-relu-pool2-dense-relu-dense-softmax",
    }
    write_model_file(path, "toy-cnn", descriptor, [(n, model.params[n]) for n in _PARAM_ORDER])


def load_toy_cnn(path) -> ToyCnn:
    kind, header, arrays = read_model_file(path)
    if kind != "toy-cnn":
        raise InputError(f"expected a toy-cnn model file, found kind={kind!r}")
    return ToyCnn(
        arrays,
        input_shape=tuple(header["input_shape"]),
        class_count=int(header["class_count"]),
        rng_seed=int(header["rng_seed"]),
    )
