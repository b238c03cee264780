"""scikit-learn style wrappers around the guided GAN and the baselines."""
import numpy as np
import torch
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import DataError
from .trainer import BigGANTrainer, GganTrainer, TrainingConfig, sample_latents, to_nchw, to_nhwc

UNLABELLED = -1


def check_spectrograms(X):
    """Validate an (n, H, W, 1) batch of normalized spectrograms."""
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 3:
        X = X[..., None]
    if X.ndim != 4 or X.shape[-1] != 1 or len(X) == 0:
        raise DataError(f"expected a non-empty (n, H, W, 1) array, got shape {X.shape}")
    if not np.isfinite(X).all():
        raise DataError("spectrograms contain non-finite values")
    return X


def _batched_eval(module, X, fn, batch=256):
    was_training = module.training
    module.eval()
    try:
        x = to_nchw(X).contiguous(memory_format=torch.channels_last)
        with torch.no_grad():
            return torch.cat([fn(x[i:i + batch]) for i in range(0, len(x), batch)])
    finally:
        module.train(was_training)


class GuidedGAN(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Guided GAN as an estimator.

    ``fit(X, y)`` treats rows with ``y == -1`` as unlabelled; the rest form
    the guidance set. Guidance from another source is passed with
    ``X_guidance``/``y_guidance``, in which case every row of ``X`` is
    unlabelled and ``y`` may be omitted.

    After fitting, ``transform`` gives the learned representation F(D(x)),
    ``predict``/``predict_proba`` use C_x on top of it and ``sample`` draws
    class-conditional spectrograms.
    """

    def __init__(self, ch=4, n_iter=2000, batch_size=32, k=2, lr_disc=2e-4, lr_other=5e-4,
                 equal_lr=False, alpha=1e-4, latent_dist="uniform", use_df=True, seed=0,
                 run_dir=None, checkpoint_every=0):
        self.ch = ch
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.k = k
        self.lr_disc = lr_disc
        self.lr_other = lr_other
        self.equal_lr = equal_lr
        self.alpha = alpha
        self.latent_dist = latent_dist
        self.use_df = use_df
        self.seed = seed
        self.run_dir = run_dir
        self.checkpoint_every = checkpoint_every

    def _config(self, resolution, n_classes):
        return TrainingConfig(
            k=self.k, batch_size=self.batch_size, lr_disc=self.lr_disc, lr_other=self.lr_other,
            equal_lr=self.equal_lr, alpha=self.alpha, ch=self.ch, n_classes=n_classes,
            resolution=resolution, latent_dist=self.latent_dist, use_df=self.use_df,
            total_iters=self.n_iter, seed=self.seed, checkpoint_every=self.checkpoint_every)

    def fit(self, X, y=None, X_guidance=None, y_guidance=None):
        X = check_spectrograms(X)
        if X_guidance is None:
            if y is None:
                raise DataError("labels are required unless X_guidance is given")
            y = np.asarray(y)
            if y.shape != (len(X),):
                raise DataError("y must have one entry per row of X")
            mask = y != UNLABELLED
            unlabelled, labelled, labels = X[~mask], X[mask], y[mask]
        else:
            unlabelled = X
            labelled = check_spectrograms(X_guidance)
            labels = np.asarray(y_guidance)
            if labels.shape != (len(labelled),):
                raise DataError("y_guidance must have one entry per guidance row")
        if len(unlabelled) == 0 or len(labelled) == 0:
            raise DataError("need both unlabelled rows and guidance rows")
        self.classes_, codes = np.unique(labels, return_inverse=True)
        if len(self.classes_) < 2:
            raise DataError("guidance must cover at least two classes")
        cfg = self._config(tuple(X.shape[1:3]), len(self.classes_))
        self.trainer_ = GganTrainer(cfg, unlabelled, labelled, codes, run_dir=self.run_dir)
        self.trainer_.train()
        self.model_ = self.trainer_.model
        self.history_ = self.trainer_.history
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        return _batched_eval(self.model_, check_spectrograms(X), self.model_.represent).numpy()

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return _batched_eval(self.model_, check_spectrograms(X), self.model_.classify).numpy()

    def predict_proba(self, X):
        logits = torch.from_numpy(self.decision_function(X)).double()
        return torch.softmax(logits, dim=1).numpy()

    def predict(self, X):
        return self.classes_[self.decision_function(X).argmax(axis=1)]

    def sample(self, n, seed=0, classes=None):
        """Draw ``n`` spectrograms, cycling over ``classes`` (default: all)."""
        check_is_fitted(self, "model_")
        if classes is None:
            codes = np.arange(n) % len(self.classes_)
        else:
            lookup = {c: i for i, c in enumerate(self.classes_)}
            try:
                codes = np.asarray([lookup[c] for c in np.resize(np.asarray(classes), n)])
            except KeyError as exc:
                raise DataError(f"unknown class {exc.args[0]!r}") from None
        return self.trainer_.sample(codes, seed=seed)


class BigGAN(BaseEstimator):
    """Supervised (``conditional=True``) or unsupervised BigGAN baseline."""

    def __init__(self, ch=4, conditional=False, n_iter=2000, batch_size=32, k=2, lr_g=5e-5,
                 lr_d=2e-4, latent_dist="uniform", seed=0):
        self.ch = ch
        self.conditional = conditional
        self.n_iter = n_iter
        self.batch_size = batch_size
        self.k = k
        self.lr_g = lr_g
        self.lr_d = lr_d
        self.latent_dist = latent_dist
        self.seed = seed

    def fit(self, X, y=None):
        X = check_spectrograms(X)
        n_classes = 2
        codes = None
        if self.conditional:
            if y is None:
                raise DataError("the supervised baseline needs labels")
            self.classes_, codes = np.unique(np.asarray(y), return_inverse=True)
            n_classes = max(2, len(self.classes_))
        cfg = TrainingConfig(k=self.k, batch_size=self.batch_size, ch=self.ch,
                             n_classes=n_classes, resolution=tuple(X.shape[1:3]),
                             latent_dist=self.latent_dist, total_iters=self.n_iter, seed=self.seed)
        self.trainer_ = BigGANTrainer(cfg, X, codes, conditional=self.conditional,
                                      lr_g=self.lr_g, lr_d=self.lr_d)
        self.trainer_.train()
        self.history_ = self.trainer_.history
        return self

    def sample(self, n, seed=0):
        check_is_fitted(self, "trainer_")
        G = self.trainer_.G
        gen = torch.Generator().manual_seed(seed)
        z = sample_latents(n, G.latent_dim, gen, self.latent_dist)
        was_training = G.training
        G.eval()
        try:
            with torch.no_grad():
                if self.conditional:
                    return to_nhwc(G(z, torch.arange(n) % len(self.classes_)))
                return to_nhwc(G(z))
        finally:
            G.train(was_training)
