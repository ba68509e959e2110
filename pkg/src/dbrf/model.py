"""The de-biasing model: a two-headed VAE whose latent code is split into a
fair part z and a biased part b.

The encoder produces Gaussian posteriors for (z, b). Decoders reconstruct x
from both codes, recover the sensitive bits a from b alone, and read a proxy
label logit r_m out of z alone. Two small prediction heads estimate y from z
(the supervised head) and from b (whose confidence also sets the per-example
supervision weight w_b = 1 - p(y|b)). A discriminator over (z, b) estimates
the total correlation between the two codes via the density-ratio trick;
its own training loss and the model loss route gradients to disjoint
parameter sets.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, asdict

import numpy as np

from . import autodiff as ad
from . import nn
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigurationError, NumericsError


@dataclass(frozen=True)
class Architecture:
    """Network sizes plus the per-column kinds that drive the x-likelihood."""

    d_x: int
    column_kinds: tuple[str, ...]
    k: int = 1
    d_z: int = 8
    d_b: int = 4
    hidden: int = 64
    dropout_rate: float = 0.2

    def __post_init__(self):
        if len(self.column_kinds) != self.d_x:
            raise ConfigurationError("column_kinds must cover every feature column")
        for name in ("d_x", "k", "d_z", "d_b", "hidden"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigurationError("dropout_rate must lie in [0, 1)")
        object.__setattr__(self, "column_kinds", tuple(self.column_kinds))

    @classmethod
    def for_dataset(cls, data, d_z: int = 8, d_b: int = 4, hidden: int = 64,
                    dropout_rate: float = 0.2) -> "Architecture":
        return cls(d_x=data.d, column_kinds=data.column_kinds, k=data.k,
                   d_z=d_z, d_b=d_b, hidden=hidden, dropout_rate=dropout_rate)


@dataclass(frozen=True)
class Hyperparams:
    """Loss weights. `lam` is the KL over-weighting (the objective scales the
    KL by 1 + lam); alpha weights sensitive reconstruction, gamma the total
    correlation, xi and beta the two label-entropy terms."""

    alpha: float = 1.0
    gamma: float = 1.0
    lam: float = 0.1
    beta: float = 0.1
    xi: float = 0.1

    def __post_init__(self):
        if self.alpha < 0 or self.gamma < 0:
            raise ConfigurationError("alpha and gamma must be non-negative")
        for name in ("lam", "beta", "xi"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigurationError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class TermMask:
    """Ablation switches: which optional loss terms participate in training.

    The VAE part (reconstructions, KL, TC) is always on; `umi_rm` gates
    xi*H(y|r_m), `umi_b` gates beta*H(y|b), `supervised` gates the weighted
    prediction loss.
    """

    umi_rm: bool = True
    umi_b: bool = True
    supervised: bool = True


_HEAD_LAYERS = {  # name -> (in_dim attr, out_dim attr or fixed, activation)
    "enc_hidden": ("d_x", "hidden", "relu"),
    "enc_z_mu": ("hidden", "d_z", "identity"),
    "enc_z_log_var": ("hidden", "d_z", "identity"),
    "enc_b_mu": ("hidden", "d_b", "identity"),
    "enc_b_log_var": ("hidden", "d_b", "identity"),
    "xdec_hidden": ("d_zb", "hidden", "relu"),
    "xdec_out": ("hidden", "d_x", "identity"),
    "adec_hidden": ("d_b", "hidden", "relu"),
    "adec_out": ("hidden", "k", "identity"),
    "rm_hidden": ("d_z", "hidden", "relu"),
    "rm_out": ("hidden", 1, "identity"),
    "yz_hidden": ("d_z", "hidden", "relu"),
    "yz_out": ("hidden", 1, "identity"),
    "yb_hidden": ("d_b", "hidden", "relu"),
    "yb_out": ("hidden", 1, "identity"),
    "disc_hidden": ("d_zb", "hidden", "relu"),
    "disc_out": ("hidden", 1, "identity"),
}


@dataclass
class ModelParams:
    enc_hidden: nn.DenseLayer
    enc_z_mu: nn.DenseLayer
    enc_z_log_var: nn.DenseLayer
    enc_b_mu: nn.DenseLayer
    enc_b_log_var: nn.DenseLayer
    xdec_hidden: nn.DenseLayer
    xdec_out: nn.DenseLayer
    adec_hidden: nn.DenseLayer
    adec_out: nn.DenseLayer
    rm_hidden: nn.DenseLayer
    rm_out: nn.DenseLayer
    yz_hidden: nn.DenseLayer
    yz_out: nn.DenseLayer
    yb_hidden: nn.DenseLayer
    yb_out: nn.DenseLayer
    disc_hidden: nn.DenseLayer
    disc_out: nn.DenseLayer


def _dims(arch: Architecture) -> dict:
    d = {"d_x": arch.d_x, "d_z": arch.d_z, "d_b": arch.d_b, "k": arch.k,
         "hidden": arch.hidden, "d_zb": arch.d_z + arch.d_b}
    return d


def init_model(arch: Architecture, seed: int = 0) -> ModelParams:
    rng = np.random.default_rng(seed)
    dims = _dims(arch)
    layers = {}
    for name, (in_key, out_key, act) in _HEAD_LAYERS.items():
        in_dim = dims[in_key] if isinstance(in_key, str) else in_key
        out_dim = dims[out_key] if isinstance(out_key, str) else out_key
        layers[name] = nn.init_dense(rng, in_dim, out_dim, act)
    return ModelParams(**layers)


def validate_params(params: ModelParams, arch: Architecture) -> None:
    dims = _dims(arch)
    for name, (in_key, out_key, act) in _HEAD_LAYERS.items():
        layer: nn.DenseLayer = getattr(params, name)
        in_dim = dims[in_key] if isinstance(in_key, str) else in_key
        out_dim = dims[out_key] if isinstance(out_key, str) else out_key
        if layer.weights.value.shape != (out_dim, in_dim):
            raise ConfigurationError(
                f"layer {name}: weights {layer.weights.value.shape} != ({out_dim}, {in_dim})")
        if layer.activation != act:
            raise ConfigurationError(f"layer {name}: activation {layer.activation!r} != {act!r}")


def model_parameters(params: ModelParams) -> list[ad.Tensor]:
    """Every trainable tensor except the discriminator's."""
    out = []
    for f in fields(params):
        if f.name.startswith("disc_"):
            continue
        out.extend(getattr(params, f.name).params)
    return out


def discriminator_parameters(params: ModelParams) -> list[ad.Tensor]:
    return params.disc_hidden.params + params.disc_out.params


def all_parameters(params: ModelParams) -> list[ad.Tensor]:
    return model_parameters(params) + discriminator_parameters(params)


# ---------------------------------------------------------------------------
# per-step noise


@dataclass
class StepNoise:
    """Every random draw one training step needs, sampled up front so the
    loss is a deterministic function of (params, batch, noise)."""

    z_noise: np.ndarray  # (n, d_z) standard normal
    b_noise: np.ndarray  # (n, d_b) standard normal
    fake_z: np.ndarray  # (n, d_z) standard normal (prior samples)
    fake_b: np.ndarray  # (n, d_b) uniform(0, 1)   (prior samples)
    yz_mask: np.ndarray | None = None  # (n, hidden) inverted-dropout mask
    yb_mask: np.ndarray | None = None


def sample_step_noise(arch: Architecture, n: int, rng: np.random.Generator,
                      training: bool = True) -> StepNoise:
    z_noise = rng.standard_normal((n, arch.d_z))
    b_noise = rng.standard_normal((n, arch.d_b))
    fake_z = rng.standard_normal((n, arch.d_z))
    fake_b = rng.random((n, arch.d_b))
    yz_mask = yb_mask = None
    if training and arch.dropout_rate > 0:
        keep = 1.0 - arch.dropout_rate
        yz_mask = (rng.random((n, arch.hidden)) < keep) / keep
        yb_mask = (rng.random((n, arch.hidden)) < keep) / keep
    return StepNoise(z_noise, b_noise, fake_z, fake_b, yz_mask, yb_mask)


# ---------------------------------------------------------------------------
# forward passes


@dataclass
class LatentBatch:
    z_head: nn.GaussianHead
    b_head: nn.GaussianHead
    z_sample: ad.Tensor
    b_sample: ad.Tensor
    rm_logit: ad.Tensor | None = None


def encode(params: ModelParams, x, noise: StepNoise) -> LatentBatch:
    x = x if isinstance(x, ad.Tensor) else ad.Tensor(x)
    h = nn.dense_forward(params.enc_hidden, x)
    z_head = nn.gaussian_head(nn.dense_forward(params.enc_z_mu, h),
                              nn.dense_forward(params.enc_z_log_var, h))
    b_head = nn.gaussian_head(nn.dense_forward(params.enc_b_mu, h),
                              nn.dense_forward(params.enc_b_log_var, h))
    return LatentBatch(
        z_head=z_head, b_head=b_head,
        z_sample=nn.reparameterize(z_head, noise.z_noise),
        b_sample=nn.reparameterize(b_head, noise.b_noise),
    )


def decode_x(params: ModelParams, z: ad.Tensor, b: ad.Tensor) -> ad.Tensor:
    h = nn.dense_forward(params.xdec_hidden, ad.concat_cols(z, b))
    return nn.dense_forward(params.xdec_out, h)


def decode_a(params: ModelParams, b: ad.Tensor) -> ad.Tensor:
    return nn.dense_forward(params.adec_out, nn.dense_forward(params.adec_hidden, b))


def decode_rm(params: ModelParams, z: ad.Tensor) -> ad.Tensor:
    out = nn.dense_forward(params.rm_out, nn.dense_forward(params.rm_hidden, z))
    return ad.reshape(out, (out.value.shape[0],))


def y_from_z(params: ModelParams, z: ad.Tensor, mask: np.ndarray | None = None) -> ad.Tensor:
    h = nn.dense_forward(params.yz_hidden, z)
    if mask is not None:
        h = ad.mul(h, mask)
    out = nn.dense_forward(params.yz_out, h)
    return ad.reshape(out, (out.value.shape[0],))


def y_from_b(params: ModelParams, b: ad.Tensor, mask: np.ndarray | None = None) -> ad.Tensor:
    h = nn.dense_forward(params.yb_hidden, b)
    if mask is not None:
        h = ad.mul(h, mask)
    out = nn.dense_forward(params.yb_out, h)
    return ad.reshape(out, (out.value.shape[0],))


def _const_layer(layer: nn.DenseLayer) -> nn.DenseLayer:
    return nn.DenseLayer(ad.Tensor(layer.weights.value), ad.Tensor(layer.bias.value),
                         layer.activation)


def _disc_logit(params: ModelParams, z, b, frozen: bool) -> ad.Tensor:
    hidden = _const_layer(params.disc_hidden) if frozen else params.disc_hidden
    out_layer = _const_layer(params.disc_out) if frozen else params.disc_out
    h = nn.dense_forward(hidden, ad.concat_cols(z, b))
    out = nn.dense_forward(out_layer, h)
    return ad.reshape(out, (out.value.shape[0],))


def tc_estimate(params: ModelParams, latent: LatentBatch) -> ad.Tensor:
    """Mean discriminator logit on encoder samples.

    The density-ratio identity log d(u=1|z,b) - log d(u=0|z,b) collapses to
    the raw logit, so no sigmoid is involved. The discriminator weights are
    frozen here: inside the model loss only the encoder feels this term.
    """
    return ad.tmean(_disc_logit(params, latent.z_sample, latent.b_sample, frozen=True))


def discriminator_loss(params: ModelParams, real: LatentBatch,
                       fake_z: np.ndarray, fake_b: np.ndarray) -> ad.Tensor:
    """Real-vs-fake cross-entropy; encoder samples are detached, so only
    discriminator parameters receive gradient."""
    if fake_z.shape != real.z_sample.value.shape or fake_b.shape != real.b_sample.value.shape:
        raise ConfigurationError("fake sample shapes must match the real batch")
    real_logit = _disc_logit(params, real.z_sample.detach(), real.b_sample.detach(),
                             frozen=False)
    fake_logit = _disc_logit(params, ad.Tensor(fake_z), ad.Tensor(fake_b), frozen=False)
    n = real_logit.value.shape[0]
    loss_real = nn.binary_cross_entropy(real_logit, np.ones(n))
    loss_fake = nn.binary_cross_entropy(fake_logit, np.zeros(n))
    return ad.mul(ad.add(loss_real, loss_fake), 0.5)


def permuted_fakes(latent: LatentBatch, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Batch-permutation fakes: z as-is, b shuffled across the batch.

    An alternative fake source for the discriminator that targets
    q(z)q(b) rather than the prior product; selected by the trainer's
    `tc_fake_source="permute"` switch.
    """
    perm = rng.permutation(latent.b_sample.value.shape[0])
    return latent.z_sample.value.copy(), latent.b_sample.value[perm].copy()


# ---------------------------------------------------------------------------
# losses


def recon_x_per_example(x_pred: ad.Tensor, x_target: np.ndarray,
                        column_kinds: tuple[str, ...]) -> ad.Tensor:
    """Negative log-likelihood of x per example: squared error on continuous
    columns, cross-entropy on one-hot columns."""
    cont = np.flatnonzero([k == "continuous" for k in column_kinds])
    onehot = np.flatnonzero([k == "onehot" for k in column_kinds])
    parts = []
    if cont.size:
        pred = x_pred if onehot.size == 0 else ad.take_cols(x_pred, cont)
        parts.append(nn.gaussian_recon_loss(pred, x_target[:, cont]))
    if onehot.size:
        pred = x_pred if cont.size == 0 else ad.take_cols(x_pred, onehot)
        parts.append(ad.tsum(ad.bce_with_logits(pred, x_target[:, onehot]), axis=1))
    total = parts[0]
    for p in parts[1:]:
        total = ad.add(total, p)
    return total


def umi_terms(rm_logits: ad.Tensor, yb_logits: ad.Tensor, y: np.ndarray):
    """Unweighted batch-mean cross-entropies (H(y|r_m), H(y|b))."""
    return (nn.binary_cross_entropy(rm_logits, y), nn.binary_cross_entropy(yb_logits, y))


def supervision_weights(yb_logits: ad.Tensor, y: np.ndarray) -> np.ndarray:
    """w_b = 1 - p(y|b): one minus the probability the b-head assigns to the
    observed label. Returned as a plain array — a constant in the backward
    pass."""
    p1 = ad.stable_sigmoid(yb_logits.value)
    p_observed = np.where(y == 1, p1, 1.0 - p1)
    return 1.0 - p_observed


@dataclass(frozen=True)
class LossBreakdown:
    """Weighted term values; `total` is their fixed-order sum, bit-exactly."""

    recon_x: float
    recon_a: float
    kl: float
    tc: float
    h_y_given_rm: float
    h_y_given_b: float
    supervised: float
    total: float


def dbrf_loss(params: ModelParams, arch: Architecture, x: np.ndarray,
              a: np.ndarray, y: np.ndarray, noise: StepNoise,
              hyper: Hyperparams, mask: TermMask = TermMask(),
              fixed_w_b: np.ndarray | None = None):
    """Assemble the full training objective.

    Returns (breakdown, loss, latent): the float-valued term breakdown, the
    scalar loss tensor to backpropagate, and the latent batch. Masked-off
    terms contribute an exact 0.0; the total-correlation term is skipped
    entirely when gamma == 0 so a saturated discriminator cannot poison
    the gradient. Non-finite terms raise NumericsError naming the culprit.

    `fixed_w_b` overrides the supervision weights. Training never passes it
    (the weights come from the live b-head, detached); finite-difference
    checks do, because w_b is a constant of the backward pass and the
    function being differentiated must hold it fixed.
    """
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(a, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]

    latent = encode(params, x, noise)
    zero = ad.Tensor(0.0)

    x_pred = decode_x(params, latent.z_sample, latent.b_sample)
    recon_x = ad.tmean(recon_x_per_example(x_pred, x, arch.column_kinds))

    a_logits = decode_a(params, latent.b_sample)
    recon_a = ad.mul(ad.tmean(ad.tsum(ad.bce_with_logits(a_logits, a), axis=1)),
                     hyper.alpha)

    kl_raw = ad.tmean(ad.add(nn.gaussian_kl(latent.z_head), nn.gaussian_kl(latent.b_head)))
    kl = ad.mul(kl_raw, 1.0 + hyper.lam)

    tc = ad.mul(tc_estimate(params, latent), hyper.gamma) if hyper.gamma > 0 else zero

    rm_logits = decode_rm(params, latent.z_sample)
    latent.rm_logit = rm_logits
    yb_logits = y_from_b(params, latent.b_sample, noise.yb_mask)
    h_rm_raw, h_b_raw = umi_terms(rm_logits, yb_logits, y)
    h_y_given_rm = ad.mul(h_rm_raw, hyper.xi) if mask.umi_rm else zero
    h_y_given_b = ad.mul(h_b_raw, hyper.beta) if mask.umi_b else zero

    if mask.supervised:
        w_b = supervision_weights(yb_logits, y) if fixed_w_b is None else np.asarray(fixed_w_b)
        yz_logits = y_from_z(params, latent.z_sample, noise.yz_mask)
        supervised = nn.binary_cross_entropy(yz_logits, y, w_b)
    else:
        supervised = zero

    terms = {"recon_x": recon_x, "recon_a": recon_a, "kl": kl, "tc": tc,
             "h_y_given_rm": h_y_given_rm, "h_y_given_b": h_y_given_b,
             "supervised": supervised}
    total = zero
    for name, term in terms.items():
        if not np.isfinite(term.value):
            raise NumericsError(f"loss term {name} is non-finite")
        total = ad.add(total, term)

    breakdown = LossBreakdown(total=float(total.value),
                              **{k: float(t.value) for k, t in terms.items()})
    return breakdown, total, latent


# ---------------------------------------------------------------------------
# inference


def posterior_means(params: ModelParams, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(mu_z, mu_b) for a batch; the deterministic codes used at evaluation."""
    x_t = ad.Tensor(np.asarray(x, dtype=np.float64))
    h = nn.dense_forward(params.enc_hidden, x_t)
    mu_z = nn.dense_forward(params.enc_z_mu, h).value
    mu_b = nn.dense_forward(params.enc_b_mu, h).value
    return mu_z, mu_b


def predict_ideal(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """The learned ideal labels: 1 where sigma(r_m) > 0.5 at the posterior
    mean of z, ties to 0."""
    mu_z, _ = posterior_means(params, x)
    rm = decode_rm(params, ad.Tensor(mu_z)).value
    return (ad.stable_sigmoid(rm) > 0.5).astype(np.int64)


def predict_supervised(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Labels from the z prediction head (dropout off, posterior mean)."""
    mu_z, _ = posterior_means(params, x)
    logit = y_from_z(params, ad.Tensor(mu_z), mask=None).value
    return (ad.stable_sigmoid(logit) > 0.5).astype(np.int64)


def predict_sensitive(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """Per-bit sensitive reconstruction from the posterior mean of b."""
    _, mu_b = posterior_means(params, x)
    logits = decode_a(params, ad.Tensor(mu_b)).value
    return (ad.stable_sigmoid(logits) > 0.5).astype(np.int64)


# ---------------------------------------------------------------------------
# persistence


def save_model(path, params: ModelParams, arch: Architecture,
               hyper: Hyperparams, extra: dict | None = None) -> None:
    arrays = {}
    for f in fields(params):
        layer: nn.DenseLayer = getattr(params, f.name)
        arrays[f"{f.name}.weights"] = layer.weights.value
        arrays[f"{f.name}.bias"] = layer.bias.value
    config = {"architecture": {**asdict(arch), "column_kinds": list(arch.column_kinds)},
              "hyperparams": asdict(hyper), **(extra or {})}
    save_checkpoint(path, arrays, config)


def load_model(path):
    """Returns (params, arch, hyper, config)."""
    arrays, config = load_checkpoint(path)
    arch_cfg = dict(config["architecture"])
    arch_cfg["column_kinds"] = tuple(arch_cfg["column_kinds"])
    arch = Architecture(**arch_cfg)
    hyper = Hyperparams(**config["hyperparams"])
    layers = {}
    for name, (_, _, act) in _HEAD_LAYERS.items():
        try:
            w = arrays[f"{name}.weights"]
            b = arrays[f"{name}.bias"]
        except KeyError:
            raise ConfigurationError(f"checkpoint missing arrays for layer {name}") from None
        layers[name] = nn.DenseLayer(ad.Tensor(w, requires_grad=True),
                                     ad.Tensor(b, requires_grad=True), act)
    params = ModelParams(**layers)
    validate_params(params, arch)
    return params, arch, hyper, config
