"""A tiny differentiable classifier with a hand-written backward pass.

One ``ToyModel`` is ``logits = W2 @ tanh(W1 @ x + b1) + b2`` trained with
softmax cross-entropy. A bundle holds several independent models that
classify the same inputs; model ``l`` plays the role of layer ``l`` with
``W1`` as its ``mlp_in`` and ``W2`` as its ``mlp_out`` matrix. Accuracy and
loss are pooled over (model, example) pairs, and each model's gradients come
from its own loss only.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgumentError
from .linalg_core import thin_svd
from .tensor_store import MatrixRecord, ModelBundle

TARGETS = {"W1": "mlp_in", "W2": "mlp_out"}


@dataclass(frozen=True)
class ToyModel:
    W1: np.ndarray  # h x n
    b1: np.ndarray  # h
    W2: np.ndarray  # c x h
    b2: np.ndarray  # c

    def __post_init__(self):
        h, n = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape[1] != h or self.b2.shape != (self.W2.shape[0],):
            raise InvalidArgumentError("inconsistent toy model dimensions")
        if not all(np.all(np.isfinite(a)) for a in (self.W1, self.b1, self.W2, self.b2)):
            raise InvalidArgumentError("toy model has non-finite parameters")

    @property
    def dims(self):
        return self.W1.shape[1], self.W1.shape[0], self.W2.shape[0]


@dataclass(frozen=True)
class ToyDataset:
    inputs: np.ndarray  # N x n
    labels: np.ndarray  # N

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise InvalidArgumentError("inputs and labels differ in length")
        if len(self.labels) and np.min(self.labels) < 0:
            raise InvalidArgumentError("labels must be non-negative class indices")

    def __len__(self):
        return len(self.labels)

    def subset(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        return ToyDataset(self.inputs[ids], self.labels[ids])


def init_toy(n, h, c, seed, init_scale=1.0):
    """Gaussian entries scaled by ``init_scale / sqrt(fan_in)``."""
    if min(n, h, c) < 1:
        raise InvalidArgumentError("n, h and c must be >= 1")
    rng = np.random.default_rng(seed)
    a1 = init_scale / math.sqrt(n)
    a2 = init_scale / math.sqrt(h)
    return ToyModel(
        W1=rng.standard_normal((h, n)) * a1,
        b1=rng.standard_normal(h) * a1,
        W2=rng.standard_normal((c, h)) * a2,
        b2=rng.standard_normal(c) * a2,
    )


def _as_list(models):
    return [models] if isinstance(models, ToyModel) else list(models)


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def logits(model, X):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != model.W1.shape[1]:
        raise InvalidArgumentError(f"input has {X.shape[1]} features, model expects {model.W1.shape[1]}")
    return np.tanh(X @ model.W1.T + model.b1) @ model.W2.T + model.b2


def forward(model, x):
    """``(logits, probabilities)`` for one input vector (or a batch of rows)."""
    x = np.asarray(x, dtype=np.float64)
    z = logits(model, x)
    if x.ndim == 1:
        z = z[0]
    return z, softmax(z)


def predict(model, X):
    return np.argmax(logits(model, X), axis=1)


def correct_count(models, dataset):
    """Correct (model, example) pairs and their total."""
    models = _as_list(models)
    correct = sum(int(np.sum(predict(m, dataset.inputs) == dataset.labels)) for m in models)
    return correct, len(models) * len(dataset)


def accuracy(models, dataset):
    correct, total = correct_count(models, dataset)
    return correct / total


def batch_loss_and_gradients(models, X, y):
    """Cross-entropy summed over examples and models, plus one gradient tuple
    ``(G_W1, G_W2, G_b1, G_b2)`` per model (summed over the batch)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    rows = np.arange(len(y))
    loss = 0.0
    grads = []
    for m in _as_list(models):
        H = np.tanh(X @ m.W1.T + m.b1)
        z = H @ m.W2.T + m.b2
        z = z - z.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss += float(-logp[rows, y].sum())
        delta = np.exp(logp)
        delta[rows, y] -= 1.0  # dL/dlogits
        dpre = (delta @ m.W2) * (1.0 - H * H)
        grads.append((dpre.T @ X, delta.T @ H, dpre.sum(axis=0), delta.sum(axis=0)))
    return loss, grads


def loss_and_gradients(model, x, label):
    loss, [(gW1, gW2, gb1, gb2)] = batch_loss_and_gradients([model], x, [label])
    return loss, gW1, gW2, gb1, gb2


def mean_loss(models, dataset):
    loss, _ = batch_loss_and_gradients(models, dataset.inputs, dataset.labels)
    return loss / (len(_as_list(models)) * len(dataset))


def train(model, dataset, steps, learning_rate, seed, batch_size=32):
    """Minibatch gradient descent on the mean loss.

    ``model`` may be a single ``ToyModel`` or a list (all members see the
    same minibatches); the return value has the same shape.
    """
    if steps < 0:
        raise InvalidArgumentError("steps must be >= 0")
    single = isinstance(model, ToyModel)
    models = _as_list(model)
    rng = np.random.default_rng(seed)
    for _ in range(steps):
        idx = rng.choice(len(dataset), size=min(batch_size, len(dataset)), replace=False)
        _, grads = batch_loss_and_gradients(models, dataset.inputs[idx], dataset.labels[idx])
        scale = learning_rate / len(idx)
        models = [
            ToyModel(m.W1 - scale * g[0], m.b1 - scale * g[2], m.W2 - scale * g[1], m.b2 - scale * g[3])
            for m, g in zip(models, grads)
        ]
    return models[0] if single else models


def plant_noise(model, target, rank_r, scale, seed):
    """Add a rank-``rank_r`` perturbation to ``W1`` or ``W2``.

    The perturbation is Gaussian, projected off the top ``ceil(rank_r/4)``
    left and right singular directions of the target, and rescaled to
    Frobenius norm ``scale * ||target||_F``.
    """
    if target not in TARGETS:
        raise InvalidArgumentError(f"target must be one of {list(TARGETS)}")
    T = getattr(model, target)
    if not 1 <= rank_r <= min(T.shape):
        raise InvalidArgumentError(f"rank_r must lie in [1, {min(T.shape)}]")
    if scale < 0:
        raise InvalidArgumentError("scale must be non-negative")
    if scale == 0:
        return model
    rng = np.random.default_rng(seed)
    N = rng.standard_normal((T.shape[0], rank_r)) @ rng.standard_normal((rank_r, T.shape[1]))
    f = thin_svd(T)
    k = min(math.ceil(rank_r / 4), f.r)
    U, V = f.U[:, :k], f.V[:, :k]
    N = N - U @ (U.T @ N)
    N = N - (N @ V) @ V.T
    N *= scale * np.linalg.norm(T) / np.linalg.norm(N)
    return replace(model, **{target: T + N})


def make_blobs(n_samples, n_features, n_classes, seed, spread=1.0, separation=3.0, signal_dims=None, nuisance=None):
    """Gaussian class clusters in random order.

    Class centres live in a ``signal_dims``-dimensional subspace (all features
    by default) with within-class std ``spread``; the remaining directions
    carry pure noise of std ``nuisance``. Features are then rotated by a
    random orthogonal matrix so no coordinate is special.
    """
    k = n_features if signal_dims is None else signal_dims
    if not 1 <= k <= n_features:
        raise InvalidArgumentError(f"signal_dims must lie in [1, {n_features}]")
    if k < n_features and nuisance is None:
        raise InvalidArgumentError("nuisance std is required when signal_dims < n_features")
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((n_classes, k))
    centers *= separation / np.linalg.norm(centers, axis=1, keepdims=True)
    labels = rng.integers(0, n_classes, size=n_samples)
    inputs = np.empty((n_samples, n_features))
    inputs[:, :k] = centers[labels] + spread * rng.standard_normal((n_samples, k))
    if k < n_features:
        inputs[:, k:] = nuisance * rng.standard_normal((n_samples, n_features - k))
        Q, _ = np.linalg.qr(rng.standard_normal((n_features, n_features)))
        inputs = inputs @ Q.T
    return ToyDataset(inputs, labels)


def record_id(layer, kind, role="weight"):
    return f"L{layer}.{kind}" + (".grad" if role == "gradient" else "")


def to_bundle(models, name="toy"):
    models = _as_list(models)
    records = []
    for layer, m in enumerate(models):
        records.append(MatrixRecord(record_id(layer, "mlp_in"), layer, "mlp_in", "weight", m.W1))
        records.append(MatrixRecord(record_id(layer, "mlp_out"), layer, "mlp_out", "weight", m.W2))
    return ModelBundle(name=name, layer_count=len(models), records=records)


def models_from_bundle(bundle, template):
    """Toy models with weights taken from ``bundle`` and biases from ``template``."""
    out = []
    for layer, m in enumerate(_as_list(template)):
        W1 = bundle.find(layer, "mlp_in").data
        W2 = bundle.find(layer, "mlp_out").data
        out.append(ToyModel(W1, m.b1, W2, m.b2))
    return out


class ToyEvaluator:
    """Accuracy oracle and gradient source backed by toy models.

    Example ids index into ``dataset``. Weights come from the bundle being
    evaluated; biases are fixed by ``template``.
    """

    supports_gradients = True

    def __init__(self, template, dataset):
        self.template = _as_list(template)
        self.dataset = dataset

    def evaluate(self, bundle, example_ids):
        ids = np.asarray(example_ids, dtype=np.int64)
        return correct_count(models_from_bundle(bundle, self.template), self.dataset.subset(ids))

    def example_gradients(self, bundle, example_id):
        """Loss gradient of one example, keyed by weight record id."""
        models = models_from_bundle(bundle, self.template)
        x = self.dataset.inputs[example_id]
        y = self.dataset.labels[example_id]
        _, grads = batch_loss_and_gradients(models, x, [y])
        out = {}
        for layer, (gW1, gW2, _, _) in enumerate(grads):
            out[record_id(layer, "mlp_in")] = gW1
            out[record_id(layer, "mlp_out")] = gW2
        return out


@dataclass(frozen=True)
class PlantedScenario:
    """Clean and noise-planted members sharing one evaluation pool.

    ``dataset`` is the evaluation pool (ids ``0..d-1``); the members were
    trained on a disjoint pool of the same size.
    """

    seed: int
    clean: list
    noisy: list
    dataset: ToyDataset
    planted_id: str

    @property
    def d(self):
        return len(self.dataset)

    def bundle(self, noisy=True):
        return to_bundle(self.noisy if noisy else self.clean, name=f"toy-planted-{self.seed}")

    def evaluator(self):
        return ToyEvaluator(self.noisy, self.dataset)


def planted_noise_scenario(
    seed,
    members=3,
    planted_layer=1,
    target="W1",
    n=32,
    h=32,
    c=4,
    signal_dims=4,
    nuisance=4.0,
    spread=0.5,
    rank_r=24,
    scale=1.0,
    d=1500,
    steps=4000,
    learning_rate=0.2,
    init_scale=0.1,
):
    """Train ``members`` toy models and plant noise in one of their matrices.

    The inputs separate classes along a few directions only; the others carry
    large nuisance variance that trained models learn to ignore. Noise planted
    off the top singular directions reads that nuisance variance, so it hurts
    accuracy while staying below the signal singular values.
    """
    if not 0 <= planted_layer < members:
        raise InvalidArgumentError(f"planted_layer must lie in [0, {members})")
    data = make_blobs(2 * d, n, c, seed, spread=spread, separation=3.0, signal_dims=signal_dims, nuisance=nuisance)
    pool = data.subset(np.arange(d, 2 * d))
    clean = [
        train(init_toy(n, h, c, seed * 10 + l, init_scale=init_scale), pool, steps, learning_rate, seed * 10 + l)
        for l in range(members)
    ]
    noisy = list(clean)
    noisy[planted_layer] = plant_noise(clean[planted_layer], target, rank_r, scale, seed + 1000)
    return PlantedScenario(
        seed=seed,
        clean=clean,
        noisy=noisy,
        dataset=data.subset(np.arange(d)),
        planted_id=record_id(planted_layer, TARGETS[target]),
    )
