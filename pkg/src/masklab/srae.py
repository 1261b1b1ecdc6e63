"""Sparse reconstruction autoencoder over classifier embeddings.

Learns a small explanation space from intermediate activations of a trained
scorer.  The objective combines three terms:

* faithfulness: a linear head on the explanation features must reproduce the
  scorer's output for the explained class,
* sparse reconstruction: a decoder rebuilds the embedding, with a log(1 + q e)
  transform per dimension so unexplainable dimensions can be given up cheaply,
* pull-away: squared cosines between explanation-feature columns push the
  features toward orthogonality.

Encoder and decoder are one-hidden-layer perceptrons (hidden width twice the
embedding size, tanh activations); training is plain full-batch gradient
descent with a plateau stop, which keeps runs deterministic per seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, TrainingError
from .models import read_model_file, write_model_file

_PARAM_ORDER = ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4", "v")


@dataclass(frozen=True)
class SraeConfig:
    n_features: int = 2
    beta: float = 1.0        # reconstruction weight
    eta: float = 1.0         # pull-away weight
    q: float = 10.0          # sparsity steepness
    learning_rate: float = 0.15
    max_epochs: int = 4000
    plateau_patience: int = 500
    plateau_tol: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_features < 1:
            raise InputError("n_features must be at least 1")
        if min(self.beta, self.eta, self.q) < 0:
            raise InputError("beta, eta and q must be non-negative")


@dataclass
class XnnBatch:
    """Embeddings and the target outputs the explanation must reproduce."""

    embeddings: np.ndarray  # (N, S_z)
    targets: np.ndarray     # (N,)

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=float)
        self.targets = np.asarray(self.targets, dtype=float)
        if self.embeddings.ndim != 2:
            raise InputError("embeddings must be a 2D matrix")
        if self.targets.shape != (self.embeddings.shape[0],):
            raise InputError("targets must have one entry per embedding row")
        if self.embeddings.shape[0] < 2:
            raise InputError("a batch needs at least 2 examples")


class SraeModel:
    """Encoder, decoder and linear head; parameters frozen after training."""

    def __init__(self, params: dict, n_features: int, embed_dim: int,
                 config: SraeConfig | None = None):
        if n_features >= embed_dim:
            raise InputError("the explanation space must be smaller than the embedding")
        self.n_features = n_features
        self.embed_dim = embed_dim
        self.config = config
        self.params = {}
        for name in _PARAM_ORDER:
            arr = np.array(params[name], dtype=float)
            arr.flags.writeable = False
            self.params[name] = arr

    @staticmethod
    def init_params(rng: np.random.Generator, embed_dim: int, n_features: int):
        hidden = 2 * embed_dim
        def xavier(shape, fan_in):
            return rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape)
        return {
            "w1": xavier((embed_dim, hidden), embed_dim),
            "b1": np.zeros(hidden),
            "w2": xavier((hidden, n_features), hidden),
            "b2": np.zeros(n_features),
            "w3": xavier((n_features, hidden), n_features),
            "b3": np.zeros(hidden),
            "w4": xavier((hidden, embed_dim), hidden),
            "b4": np.zeros(embed_dim),
            "v": xavier((n_features,), n_features),
        }

    def encode(self, embeddings) -> np.ndarray:
        z = np.asarray(embeddings, dtype=float)
        h = np.tanh(z @ self.params["w1"] + self.params["b1"])
        return np.tanh(h @ self.params["w2"] + self.params["b2"])

    def decode(self, features) -> np.ndarray:
        h = np.tanh(np.asarray(features, dtype=float) @ self.params["w3"] + self.params["b3"])
        return h @ self.params["w4"] + self.params["b4"]

    def predict(self, embeddings) -> np.ndarray:
        return self.encode(embeddings) @ self.params["v"]


# ---------------------------------------------------------------------------
# objective


def _forward(params, z):
    a1 = z @ params["w1"] + params["b1"]
    h1 = np.tanh(a1)
    a2 = h1 @ params["w2"] + params["b2"]
    e = np.tanh(a2)
    p = e @ params["v"]
    a3 = e @ params["w3"] + params["b3"]
    h2 = np.tanh(a3)
    r = h2 @ params["w4"] + params["b4"]
    return dict(z=z, h1=h1, e=e, p=p, h2=h2, r=r)


def _loss_terms(cache, targets, config):
    n_rows = cache["z"].shape[0]
    embed_dim = cache["z"].shape[1]
    faith = float(np.mean((cache["p"] - targets) ** 2))

    residual_sq_mean = np.mean((cache["r"] - cache["z"]) ** 2, axis=0)  # per dimension
    recon = config.beta / embed_dim * float(np.sum(np.log1p(config.q * residual_sq_mean)))

    pull = _pullaway_value(cache["e"], config)
    return faith, recon, pull


def _pullaway_value(e, config):
    n = e.shape[1]
    if n < 2:
        return 0.0
    norms = np.linalg.norm(e, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    gram = (e.T @ e) / np.outer(safe, safe)
    cos2 = gram ** 2
    off_sum = float(cos2.sum() - np.trace(cos2))
    return config.eta * off_sum / (n * (n - 1))


def srae_loss(model: SraeModel, batch: XnnBatch, config: SraeConfig | None = None):
    """Total objective and its three reported terms (total is exactly their sum)."""
    config = config or model.config
    if config is None:
        raise InputError("an SraeConfig is required")
    cache = _forward(model.params, batch.embeddings)
    faith, recon, pull = _loss_terms(cache, batch.targets, config)
    terms = {"faithfulness": faith, "reconstruction": recon, "pullaway": pull}
    return faith + recon + pull, terms


def _gradients(params, cache, targets, config):
    z, h1, e, p, h2, r = (cache[k] for k in ("z", "h1", "e", "p", "h2", "r"))
    n_rows, embed_dim = z.shape
    n = e.shape[1]
    grads = {}

    # faithfulness
    dp = 2.0 * (p - targets) / n_rows
    grads["v"] = e.T @ dp
    de = np.outer(dp, params["v"])

    # reconstruction through log(1 + q * mean residual^2)
    residual = r - z
    residual_sq_mean = np.mean(residual ** 2, axis=0)
    dr = (config.beta / embed_dim) * (config.q * 2.0 * residual / n_rows) \
        / (1.0 + config.q * residual_sq_mean)
    grads["w4"] = h2.T @ dr
    grads["b4"] = dr.sum(axis=0)
    dh2 = dr @ params["w4"].T
    da3 = dh2 * (1.0 - h2 ** 2)
    grads["w3"] = e.T @ da3
    grads["b3"] = da3.sum(axis=0)
    de += da3 @ params["w3"].T

    # pull-away over feature columns
    if n >= 2 and config.eta > 0:
        norms = np.linalg.norm(e, axis=0)
        safe = np.where(norms > 0, norms, 1.0)
        unit = e / safe
        gram = unit.T @ unit
        np.fill_diagonal(gram, 0.0)
        scale = 4.0 * config.eta / (n * (n - 1))
        # d/dE_l sum_{l'!=l} 2*cos^2: 2c * (E_l'/(s_l s_l') - c E_l / s_l^2), summed
        de += scale * (unit @ gram - unit * (gram ** 2).sum(axis=0)) / safe

    da2 = de * (1.0 - e ** 2)
    grads["w2"] = h1.T @ da2
    grads["b2"] = da2.sum(axis=0)
    dh1 = da2 @ params["w2"].T
    da1 = dh1 * (1.0 - h1 ** 2)
    grads["w1"] = z.T @ da1
    grads["b1"] = da1.sum(axis=0)
    return grads


def srae_parameter_gradients(model: SraeModel, batch: XnnBatch,
                             config: SraeConfig | None = None) -> dict:
    """Analytic gradient of the total objective for every parameter array."""
    config = config or model.config
    if config is None:
        raise InputError("an SraeConfig is required")
    cache = _forward(model.params, batch.embeddings)
    return _gradients(model.params, cache, batch.targets, config)


# ---------------------------------------------------------------------------
# training


def train_srae(batch: XnnBatch, config: SraeConfig, seed: int | None = None) -> SraeModel:
    """Full-batch gradient descent to convergence or the epoch cap."""
    seed = config.seed if seed is None else seed
    embed_dim = batch.embeddings.shape[1]
    if config.n_features >= embed_dim:
        raise InputError("n_features must be smaller than the embedding dimension")
    rng = np.random.default_rng(seed)
    params = SraeModel.init_params(rng, embed_dim, config.n_features)

    best = np.inf
    stale = 0
    for epoch in range(config.max_epochs):
        cache = _forward(params, batch.embeddings)
        faith, recon, pull = _loss_terms(cache, batch.targets, config)
        loss = faith + recon + pull
        if not np.isfinite(loss):
            raise TrainingError("SRAE loss became non-finite", iteration=epoch)
        grads = _gradients(params, cache, batch.targets, config)
        params = {k: params[k] - config.learning_rate * grads[k] for k in _PARAM_ORDER}

        if loss < best - config.plateau_tol:
            best = loss
            stale = 0
        else:
            stale += 1
            if stale >= config.plateau_patience:
                break
    return SraeModel(params, config.n_features, embed_dim, config)


# ---------------------------------------------------------------------------
# automatic metrics


def faithfulness_metric(model: SraeModel, batch: XnnBatch) -> dict:
    """MSE and Pearson correlation between the head's output and the targets.

    Correlation is reported as None when either side is constant.
    """
    predicted = model.predict(batch.embeddings)
    mse = float(np.mean((predicted - batch.targets) ** 2))
    correlation = None
    if np.std(batch.targets) > 0 and np.std(predicted) > 0:
        correlation = float(np.corrcoef(predicted, batch.targets)[0, 1])
    return {"mse": mse, "correlation": correlation}


def orthogonality_metric(model: SraeModel, batch: XnnBatch) -> float:
    """Mean squared cosine over unordered feature pairs; 0 is perfectly orthogonal."""
    if model.n_features < 2:
        raise InputError("orthogonality needs at least 2 explanation features")
    e = model.encode(batch.embeddings)
    norms = np.linalg.norm(e, axis=0)
    safe = np.where(norms > 0, norms, 1.0)
    gram = (e.T @ e) / np.outer(safe, safe)
    cos2 = gram ** 2
    n = model.n_features
    return float((cos2.sum() - np.trace(cos2)) / (n * (n - 1)))


# ---------------------------------------------------------------------------
# persistence


def save_srae(path, model: SraeModel) -> None:
    config = model.config or SraeConfig(n_features=model.n_features)
    descriptor = {
        "n_features": model.n_features,
        "embed_dim": model.embed_dim,
        "beta": config.beta,
        "eta": config.eta,
        "q": config.q,
        "seed": config.seed,
    }
    write_model_file(path, "srae", descriptor, [(n, model.params[n]) for n in _PARAM_ORDER])


def load_srae(path) -> SraeModel:
    kind, header, arrays = read_model_file(path)
    if kind != "srae":
        raise InputError(f"expected an srae model file, found kind={kind!r}")
    config = SraeConfig(
        n_features=int(header["n_features"]),
        beta=float(header["beta"]),
        eta=float(header["eta"]),
        q=float(header["q"]),
        seed=int(header["seed"]),
    )
    return SraeModel(arrays, int(header["n_features"]), int(header["embed_dim"]), config)


def collect_xnn_batch(model, images, class_index: int) -> XnnBatch:
    """Hidden activations and pre-softmax logits of the explained class."""
    images = np.asarray(images, dtype=float)
    hidden = model.hidden_batch(images)
    logits = model.logits_batch(images)
    return XnnBatch(embeddings=hidden, targets=logits[:, class_index])
