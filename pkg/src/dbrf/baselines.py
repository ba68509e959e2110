"""Reference systems for the comparison suite.

Two building blocks: a vanilla VAE trained on features alone (its latent
block matches the fair model's z+b budget so representation capacity is
comparable), and a logistic classifier trained on frozen representations —
used both as the VAE's downstream head and directly on raw features as a
sanity floor. None of these ever see ideal labels during training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .data import TabularDataset
from .errors import ConfigurationError, NumericsError
from .model import recon_x_per_example


@dataclass
class VAEConfig:
    latent_dim: int = 12  # matches the fair model's default d_z + d_b
    hidden: int = 64
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 1e-3
    seed: int = 0
    kl_weight: float = 1.0  # 1.0 is the standard ELBO

    def __post_init__(self):
        if self.latent_dim <= 0 or self.hidden <= 0:
            raise ConfigurationError("latent_dim and hidden must be positive")
        if self.epochs < 0 or self.batch_size <= 0:
            raise ConfigurationError("epochs must be >= 0 and batch_size positive")
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.kl_weight < 0:
            raise ConfigurationError("kl_weight must be non-negative")


@dataclass
class VanillaVAE:
    enc_hidden: nn.DenseLayer
    enc_mu: nn.DenseLayer
    enc_log_var: nn.DenseLayer
    dec_hidden: nn.DenseLayer
    dec_out: nn.DenseLayer
    column_kinds: tuple[str, ...]

    @property
    def layers(self) -> tuple[nn.DenseLayer, ...]:
        return (self.enc_hidden, self.enc_mu, self.enc_log_var,
                self.dec_hidden, self.dec_out)

    def parameters(self) -> list[ad.Tensor]:
        return [t for layer in self.layers for t in layer.params]


def init_vanilla_vae(d_x: int, column_kinds: tuple[str, ...],
                     config: VAEConfig, seed: int) -> VanillaVAE:
    rng = np.random.default_rng(seed)
    return VanillaVAE(
        enc_hidden=nn.init_dense(rng, d_x, config.hidden, "relu"),
        enc_mu=nn.init_dense(rng, config.hidden, config.latent_dim),
        enc_log_var=nn.init_dense(rng, config.hidden, config.latent_dim),
        dec_hidden=nn.init_dense(rng, config.latent_dim, config.hidden, "relu"),
        dec_out=nn.init_dense(rng, config.hidden, d_x),
        column_kinds=column_kinds,
    )


def vae_encode(vae: VanillaVAE, x) -> nn.GaussianHead:
    h = nn.dense_forward(vae.enc_hidden, x)
    return nn.gaussian_head(nn.dense_forward(vae.enc_mu, h),
                            nn.dense_forward(vae.enc_log_var, h))


def vae_codes(vae: VanillaVAE, x: np.ndarray) -> np.ndarray:
    """Posterior means — the frozen representation handed to a downstream
    classifier."""
    return vae_encode(vae, x).mu.value


def elbo_loss(vae: VanillaVAE, x: np.ndarray, noise: np.ndarray,
              kl_weight: float = 1.0):
    """Negative ELBO per batch: mean reconstruction NLL + kl_weight * KL."""
    head = vae_encode(vae, x)
    code = nn.reparameterize(head, noise)
    x_pred = nn.dense_forward(vae.dec_out, nn.dense_forward(vae.dec_hidden, code))
    recon = ad.tmean(recon_x_per_example(x_pred, x, vae.column_kinds))
    kl = ad.tmean(nn.gaussian_kl(head))
    total = ad.add(recon, ad.mul(kl, kl_weight)) if kl_weight != 1.0 else ad.add(recon, kl)
    return recon, kl, total


def train_vanilla_vae(config: VAEConfig, train: TabularDataset,
                      ) -> tuple[VanillaVAE, list[dict[str, float]]]:
    """Unsupervised fit on features alone; returns the model and per-epoch
    averaged (recon, kl) records."""
    if config.batch_size > train.n:
        raise ConfigurationError(f"batch_size {config.batch_size} exceeds n={train.n}")
    vae = init_vanilla_vae(train.d, train.column_kinds, config, config.seed)
    opt = nn.Adam(vae.parameters(), learning_rate=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    x_all = train.features
    history = []
    for _ in range(config.epochs):
        perm = rng.permutation(train.n)
        sums = {"recon": 0.0, "kl": 0.0}
        batches = 0
        for start in range(0, train.n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            noise = rng.standard_normal((len(idx), config.latent_dim))
            recon, kl, total = elbo_loss(vae, x_all[idx], noise, config.kl_weight)
            if not np.isfinite(total.value):
                raise NumericsError("ELBO is non-finite")
            ad.backward(total)
            opt.step()
            sums["recon"] += float(recon.value)
            sums["kl"] += float(kl.value)
            batches += 1
        history.append({k: v / batches for k, v in sums.items()})
    return vae, history


@dataclass
class LogisticModel:
    layer: nn.DenseLayer

    def logits(self, representations: np.ndarray) -> np.ndarray:
        out = nn.dense_forward(self.layer, representations)
        return out.value.reshape(-1)

    def predict(self, representations: np.ndarray) -> np.ndarray:
        """Bit predictions; the 0.5 tie goes to the negative class."""
        return (ad.stable_sigmoid(self.logits(representations)) > 0.5).astype(float)

    def parameters(self) -> list[ad.Tensor]:
        return list(self.layer.params)


def train_downstream(representations: np.ndarray, observed_labels: np.ndarray,
                     epochs: int = 200, batch_size: int = 128,
                     learning_rate: float = 1e-2, seed: int = 0) -> LogisticModel:
    """Logistic classifier on frozen representations.

    Also produces the +LR variants: hand it the fair model's z-means or the
    vanilla VAE's codes.
    """
    reps = np.asarray(representations, dtype=float)
    y = np.asarray(observed_labels, dtype=float).reshape(-1)
    if reps.ndim != 2 or reps.shape[0] != y.shape[0]:
        raise ConfigurationError("representations must be (n, d) matching labels")
    rng = np.random.default_rng(seed)
    model = LogisticModel(nn.init_dense(rng, reps.shape[1], 1))
    opt = nn.Adam(model.parameters(), learning_rate=learning_rate)
    n = reps.shape[0]
    bs = min(batch_size, n)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for start in range(0, n, bs):
            idx = perm[start:start + bs]
            out = nn.dense_forward(model.layer, reps[idx])
            loss = nn.binary_cross_entropy(ad.reshape(out, (len(idx),)), y[idx])
            ad.backward(loss)
            opt.step()
    return model


def train_raw_lr(train: TabularDataset, epochs: int = 200, batch_size: int = 128,
                 learning_rate: float = 1e-2, seed: int = 0) -> LogisticModel:
    """Plain logistic regression on standardized features."""
    return train_downstream(train.features, train.observed_labels,
                            epochs=epochs, batch_size=batch_size,
                            learning_rate=learning_rate, seed=seed)


def parameter_count(tensors) -> int:
    return int(sum(t.value.size for t in tensors))
