"""Sample-quality metrics and the local evaluation classifier.

Inception Score and Frechet distance are computed from the outputs of a
small spectrogram classifier trained on labelled data, standing in for a
pretrained audio classifier. Generated spectrograms are always taken
through waveform and back before scoring.
"""
import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from scipy.special import rel_entr
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DataError, GganError, RangeError
from .nets import DiscriminatorTrunk
from .spectro import TOY_SCALE, round_trip

FID_EPS = 1e-6
PROB_TOL = 1e-6


class ConvergenceError(GganError, RuntimeError):
    """A classifier failed to reach its required training accuracy."""


def _check_probs(probs):
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise DataError("probabilities must be a non-empty (n, classes) array")
    if (p < 0).any() or not np.allclose(p.sum(axis=1), 1.0, atol=PROB_TOL, rtol=0):
        raise DataError("probability rows must be non-negative and sum to 1")
    return p


def inception_score(probs, n_splits=10):
    """Mean and std over splits of exp(E[KL(p(y|x) || p(y))])."""
    p = _check_probs(probs)
    if n_splits < 1 or p.shape[0] < n_splits:
        raise DataError(f"need at least {n_splits} rows for {n_splits} splits")
    scores = []
    for part in np.array_split(p, n_splits):
        marginal = part.mean(axis=0, keepdims=True)
        kl = rel_entr(part, marginal).sum(axis=1)
        scores.append(math.exp(kl.mean()))
    return float(np.mean(scores)), float(np.std(scores))


def matrix_sqrt_psd(A, tol=1e-8):
    """Symmetric square root of a positive semi-definite matrix via eigh."""
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DataError("matrix_sqrt_psd needs a square matrix")
    A = 0.5 * (A + A.T)
    w, V = np.linalg.eigh(A)
    scale = max(1.0, float(np.abs(w).max(initial=0.0)))
    if w.size and w.min() < -tol * scale:
        raise RangeError(f"matrix is not positive semi-definite (min eigenvalue {w.min():.3g})")
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _regularize(cov, eps):
    w = np.linalg.eigvalsh(cov)
    if w.min() <= eps * max(1.0, abs(w).max()):
        warnings.warn("rank-deficient covariance; adding eps*I", RuntimeWarning, stacklevel=3)
        return cov + eps * np.eye(len(cov))
    return cov


def fid_from_moments(mu1, sigma1, mu2, sigma2, eps=FID_EPS):
    mu1, mu2 = np.atleast_1d(mu1).astype(np.float64), np.atleast_1d(mu2).astype(np.float64)
    s1, s2 = np.atleast_2d(sigma1).astype(np.float64), np.atleast_2d(sigma2).astype(np.float64)
    if mu1.shape != mu2.shape or s1.shape != s2.shape or s1.shape != (len(mu1), len(mu1)):
        raise DataError("mismatched moment shapes")
    s1, s2 = _regularize(0.5 * (s1 + s1.T), eps), _regularize(0.5 * (s2 + s2.T), eps)
    # tr sqrt(S1 S2) = tr sqrt(S1^1/2 S2 S1^1/2), a symmetric PSD product
    r1 = matrix_sqrt_psd(s1)
    inner = np.linalg.eigvalsh(0.5 * ((r1 @ s2 @ r1) + (r1 @ s2 @ r1).T))
    tr_covmean = np.sqrt(np.clip(inner, 0.0, None)).sum()
    diff = mu1 - mu2
    value = diff @ diff + np.trace(s1) + np.trace(s2) - 2.0 * tr_covmean
    return max(float(value), 0.0)


def _moments(feats):
    f = np.asarray(feats, dtype=np.float64)
    if f.ndim != 2:
        raise DataError("features must be a 2-d array")
    if f.shape[0] < f.shape[1] + 1:
        raise DataError(f"need at least {f.shape[1] + 1} rows for {f.shape[1]}-d features")
    return f.mean(axis=0), np.cov(f, rowvar=False)


def fid(feats_real, feats_gen, eps=FID_EPS):
    """Frechet distance between Gaussians fitted to two feature sets."""
    mu1, s1 = _moments(feats_real)
    mu2, s2 = _moments(feats_gen)
    if mu1.shape != mu2.shape:
        raise DataError("feature dimensions differ")
    return fid_from_moments(mu1, s1, mu2, s2, eps)


@dataclass
class MetricReport:
    is_mean: float
    is_std: float
    fid: float
    probe_accuracy: float = float("nan")
    n_samples: int = 0
    classifier_id: str = ""
    seed: int = 0
    feature_layer: str = "penultimate"
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def summary_line(self, label=""):
        return (f"{label:<16} IS={self.is_mean:8.4f}±{self.is_std:6.4f} FID={self.fid:10.4f} "
                f"probe={self.probe_accuracy:6.4f} n={self.n_samples:6d} "
                f"clf={self.classifier_id} seed={self.seed}")

    def append_to(self, path):
        with open(path, "a") as fh:
            fh.write(json.dumps(self.to_dict()) + "\n")


class _ClassifierNet(nn.Module):
    def __init__(self, ch, resolution, feature_dim, n_classes):
        super().__init__()
        self.trunk = DiscriminatorTrunk(ch, resolution, use_sn=False)
        self.hidden = nn.Linear(self.trunk.out_dim, feature_dim)
        self.head = nn.Linear(feature_dim, n_classes)

    def features(self, x):
        return F.relu(self.hidden(self.trunk(x)))

    def forward(self, x):
        return self.head(self.features(x))


def _to_tensor(X):
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3:
        X = X[..., None]
    if X.ndim != 4 or X.shape[-1] != 1:
        raise DataError(f"expected (n, H, W, 1) spectrograms, got shape {X.shape}")
    return torch.from_numpy(np.ascontiguousarray(X.transpose(0, 3, 1, 2)))


class SpectrogramClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Small convolutional classifier on (n, H, W, 1) spectrograms.

    The convolutional part is the discriminator trunk; a dense layer of
    width ``feature_dim`` feeds the softmax head. ``transform`` returns the
    activations of that layer, which serve as the features for FID.

    Parameters
    ----------
    ch : int
        Channel multiplier of the trunk.
    feature_dim : int
        Width of the penultimate layer.
    epochs, batch_size, lr : training schedule (Adam).
    min_train_accuracy : float or None
        Raise :class:`ConvergenceError` if the final training accuracy falls
        below this value. Skipped when ``epochs == 0``.
    """

    def __init__(self, ch=4, feature_dim=64, epochs=15, batch_size=32, lr=1e-3, seed=0,
                 min_train_accuracy=0.95):
        self.ch = ch
        self.feature_dim = feature_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.seed = seed
        self.min_train_accuracy = min_train_accuracy

    def fit(self, X, y):
        Xt = _to_tensor(X)
        y = np.asarray(y)
        if len(y) != len(Xt) or len(y) == 0:
            raise DataError("X and y must be non-empty and of equal length")
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise DataError("need at least two classes")
        torch.manual_seed(self.seed)
        self.net_ = _ClassifierNet(self.ch, tuple(Xt.shape[2:]), self.feature_dim,
                                   len(self.classes_))
        self.net_.train()
        target = torch.as_tensor(codes, dtype=torch.long)
        opt = torch.optim.Adam(self.net_.parameters(), lr=self.lr)
        rng = np.random.default_rng(self.seed)
        for _ in range(self.epochs):
            for idx in np.array_split(rng.permutation(len(Xt)),
                                      max(1, math.ceil(len(Xt) / self.batch_size))):
                loss = F.cross_entropy(self.net_(Xt[idx]), target[idx])
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
        self.net_.eval()
        self.train_accuracy_ = float(self.score(X, y))
        if self.epochs and self.min_train_accuracy is not None \
                and self.train_accuracy_ < self.min_train_accuracy:
            raise ConvergenceError(f"training accuracy {self.train_accuracy_:.3f} is below "
                                   f"{self.min_train_accuracy}")
        return self

    def _batched(self, X, fn):
        check_is_fitted(self, "net_")
        Xt = _to_tensor(X)
        with torch.no_grad():
            return torch.cat([fn(Xt[i:i + 256]) for i in range(0, len(Xt), 256)]).numpy()

    def decision_function(self, X):
        return self._batched(X, self.net_)

    def predict_proba(self, X):
        return self._batched(X, lambda x: torch.softmax(self.net_(x).double(), dim=1))

    def predict(self, X):
        return self.classes_[self.decision_function(X).argmax(axis=1)]

    def transform(self, X):
        return self._batched(X, self.net_.features)

    @property
    def classifier_id(self):
        """Short digest of the fitted weights."""
        check_is_fitted(self, "net_")
        h = hashlib.sha256()
        for k, v in sorted(self.net_.state_dict().items()):
            h.update(k.encode())
            h.update(v.numpy().tobytes())
        return h.hexdigest()[:12]


def _draw(generator, n_samples, seed):
    if callable(getattr(generator, "sample", None)):
        return np.asarray(generator.sample(n_samples, seed=seed))
    if callable(generator):
        return np.asarray(generator(n_samples, seed))
    samples = np.asarray(generator)
    if len(samples) != n_samples:
        raise DataError(f"got {len(samples)} samples, expected {n_samples}")
    return samples


def evaluate_generation(generator, classifier, reference, n_samples=10000, invert_iters=60,
                        seed=0, spectro_config=TOY_SCALE, n_splits=10, probe_accuracy=float("nan"),
                        round_trip_reference=True):
    """Score generated spectrograms with ``classifier`` after a waveform round trip.

    ``generator`` is an object with ``sample(n, seed=...)``, a callable
    ``(n, seed) -> array`` or a ready array of ``n_samples`` spectrograms.
    ``reference`` holds real spectrograms for the FID.
    """
    if n_samples < classifier.feature_dim + 1:
        raise DataError(f"n_samples must be at least {classifier.feature_dim + 1}")
    fake = round_trip(_draw(generator, n_samples, seed), spectro_config, invert_iters)
    real = np.asarray(reference, dtype=np.float32)
    if round_trip_reference:
        real = round_trip(real, spectro_config, invert_iters)
    is_mean, is_std = inception_score(classifier.predict_proba(fake), n_splits)
    score = fid(classifier.transform(real), classifier.transform(fake))
    return MetricReport(is_mean=is_mean, is_std=is_std, fid=score,
                        probe_accuracy=float(probe_accuracy), n_samples=len(fake),
                        classifier_id=classifier.classifier_id, seed=seed)
