"""Alternating two-player training: discriminator steps, then a model step.

`fit` drives epochs over a corrupted training split with periodic evaluation
on the clean test split; all randomness (batch order, reparameterization
noise, dropout, fake samples) flows from one seeded generator, so a fixed
TrainConfig reproduces its history bit for bit.
"""

from __future__ import annotations

import copy
import csv
import math
from dataclasses import dataclass, field, fields as dc_fields, replace

import numpy as np

from . import model as M
from . import nn
from .autodiff import backward
from .data import TabularDataset, protected_conjunction, split
from .errors import ConfigurationError, MetricError, NumericsError
from .metrics import GroupedPredictions, accuracy, delta_dp, deo

FAKE_SOURCES = ("prior", "permute")


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr_model: float = 1e-3
    lr_disc: float = 1e-3
    disc_steps_per_model_step: int = 1
    seed: int = 0
    eval_every: int = 10  # 0 -> only a final record
    tc_fake_source: str = "prior"
    early_stop_patience: int = 0  # evals without improvement; 0 disables
    # The adversarial phase can throw a run into a constant-predictor basin
    # at any point, so the final epoch is an arbitrary snapshot. With
    # val_fraction > 0 a slice of the training split is held out and the
    # returned parameters are the snapshot maximizing held-out accuracy on
    # observed labels minus the parity gap (both computable without clean
    # labels), scored every select_every epochs.
    val_fraction: float = 0.0
    select_every: int = 5
    # A run that lands in the constant-predictor basin is identifiable
    # without clean labels: it emits one class for everything. Up to
    # max_restarts reseeded reruns are attempted when that happens (or when
    # the loss goes non-finite); the first healthy run wins. The first
    # attempt uses `seed` unchanged, so healthy runs are unaffected.
    max_restarts: int = 2
    checkpoint_path: str | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0:
            raise ConfigurationError("epochs must be >= 0 and batch_size positive")
        if self.lr_model <= 0 or self.lr_disc <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.disc_steps_per_model_step < 0 or self.eval_every < 0:
            raise ConfigurationError("counts must be non-negative")
        if self.tc_fake_source not in FAKE_SOURCES:
            raise ConfigurationError(f"tc_fake_source must be one of {FAKE_SOURCES}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ConfigurationError("val_fraction must be in [0, 1)")
        if self.select_every < 1:
            raise ConfigurationError("select_every must be >= 1")
        if self.max_restarts < 0:
            raise ConfigurationError("max_restarts must be >= 0")


@dataclass
class HistoryRecord:
    epoch: int
    recon_x: float
    recon_a: float
    kl: float
    tc: float
    h_y_rm: float
    h_y_b: float
    supervised: float
    disc_loss: float
    acc_observed: float
    acc_ideal: float
    dp: float
    deo: float


@dataclass
class TrainingHistory:
    records: list[HistoryRecord] = field(default_factory=list)

    def to_csv(self, path) -> None:
        names = [f.name for f in dc_fields(HistoryRecord)]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(names)
            for rec in self.records:
                writer.writerow([getattr(rec, n) for n in names])

    def series(self, name: str) -> list[float]:
        return [getattr(rec, name) for rec in self.records]


@dataclass
class TrainState:
    params: M.ModelParams
    arch: M.Architecture
    hyper: M.Hyperparams
    mask: M.TermMask
    config: TrainConfig
    opt_model: nn.Adam
    opt_disc: nn.Adam
    rng: np.random.Generator
    last_breakdown: M.LossBreakdown | None = None
    last_disc_loss: float = math.nan


def init_train_state(arch: M.Architecture, hyper: M.Hyperparams, config: TrainConfig,
                     mask: M.TermMask = M.TermMask(),
                     init_params: M.ModelParams | None = None) -> TrainState:
    params = init_params if init_params is not None else M.init_model(arch, seed=config.seed)
    M.validate_params(params, arch)
    return TrainState(
        params=params, arch=arch, hyper=hyper, mask=mask, config=config,
        opt_model=nn.Adam(M.model_parameters(params), learning_rate=config.lr_model),
        opt_disc=nn.Adam(M.discriminator_parameters(params), learning_rate=config.lr_disc),
        rng=np.random.default_rng(config.seed),
    )


def discriminator_phase(state: TrainState, x: np.ndarray) -> float:
    """Run the configured number of discriminator updates; model params frozen."""
    loss_val = math.nan
    for _ in range(state.config.disc_steps_per_model_step):
        noise = M.sample_step_noise(state.arch, x.shape[0], state.rng, training=False)
        latent = M.encode(state.params, x, noise)
        if state.config.tc_fake_source == "permute":
            fake_z, fake_b = M.permuted_fakes(latent, state.rng)
        else:
            fake_z, fake_b = noise.fake_z, noise.fake_b
        loss = M.discriminator_loss(state.params, latent, fake_z, fake_b)
        if not np.isfinite(loss.value):
            raise NumericsError("discriminator loss is non-finite")
        backward(loss)
        state.opt_disc.step()
        loss_val = loss.item()
    state.last_disc_loss = loss_val
    return loss_val


def model_phase(state: TrainState, x: np.ndarray, a: np.ndarray,
                y: np.ndarray) -> M.LossBreakdown:
    """One DBRF update with the discriminator frozen; w_b recomputed from the
    live b-head inside the loss."""
    noise = M.sample_step_noise(state.arch, x.shape[0], state.rng, training=True)
    breakdown, total, _ = M.dbrf_loss(state.params, state.arch, x, a, y, noise,
                                      state.hyper, state.mask)
    backward(total)
    state.opt_model.step()
    state.last_breakdown = breakdown
    return breakdown


def train_step(state: TrainState, batch: tuple[np.ndarray, np.ndarray, np.ndarray]) -> TrainState:
    """Discriminator update(s) followed by one model update."""
    x, a, y = batch
    discriminator_phase(state, x)
    model_phase(state, x, a, y)
    return state


def evaluate(params: M.ModelParams, dataset: TabularDataset,
             predict_fn=None) -> dict[str, float]:
    """Test-split metrics for the current parameters.

    Returns accuracy against observed labels, against ideal labels when the
    dataset carries them (nan otherwise), and the two parity gaps measured
    with the protected-group conjunction. Metric errors on degenerate splits
    surface as nan here: an evaluation snapshot should not abort training.
    """
    fn = predict_fn if predict_fn is not None else M.predict_ideal
    preds = fn(params, dataset.features)
    group = protected_conjunction(dataset)
    labels = dataset.ideal_labels if dataset.ideal_labels is not None else dataset.observed_labels
    out = {
        "acc_observed": accuracy(preds, dataset.observed_labels),
        "acc_ideal": (accuracy(preds, dataset.ideal_labels)
                      if dataset.ideal_labels is not None else math.nan),
    }
    gp = GroupedPredictions(preds, labels, group)
    try:
        out["dp"] = delta_dp(gp)
    except MetricError:
        out["dp"] = math.nan
    try:
        out["deo"] = deo(gp)
    except MetricError:
        out["deo"] = math.nan
    return out


def _fit_once(config: TrainConfig, hyper: M.Hyperparams, train: TabularDataset,
              test: TabularDataset, arch: M.Architecture,
              mask: M.TermMask, init_params: M.ModelParams | None,
              predict_fn) -> tuple[M.ModelParams, TrainingHistory, int | None, bool]:
    """One training run; returns (params, history, selected_epoch, degenerate).

    `degenerate` flags a finished run whose returned parameters predict a
    single class on the held-out slice (or the train split when there is
    none) -- the signature of the constant-predictor basin.
    """
    val_set = None
    if config.val_fraction > 0.0:
        core, val_set = split(train, 1.0 - config.val_fraction,
                              seed=np.random.default_rng([config.seed, 1])
                              .integers(2 ** 31))
        train = core
    if config.batch_size > train.n:
        raise ConfigurationError(f"batch_size {config.batch_size} exceeds n={train.n}")
    state = init_train_state(arch, hyper, config, mask, init_params)
    history = TrainingHistory()
    x_all = train.features
    a_all = train.sensitive
    y_all = train.observed_labels

    best_snapshot = None
    best_score = -math.inf
    selected_epoch = None

    def consider_snapshot(epoch: int) -> None:
        nonlocal best_snapshot, best_score, selected_epoch
        vm = evaluate(state.params, val_set, predict_fn)
        # acc_ideal is deliberately not consulted: selection must see only
        # what a practitioner has, corrupted labels and group membership.
        dp_pen = vm["dp"] if math.isfinite(vm["dp"]) else 0.0
        score = vm["acc_observed"] - dp_pen
        if math.isfinite(score) and score > best_score:
            best_score = score
            best_snapshot = copy.deepcopy(state.params)
            selected_epoch = epoch

    def record(epoch: int, sums: dict[str, float] | None, batches: int) -> HistoryRecord:
        metrics = evaluate(state.params, test, predict_fn)
        avg = {k: (v / batches if batches else math.nan) for k, v in (sums or {}).items()}
        rec = HistoryRecord(
            epoch=epoch,
            recon_x=avg.get("recon_x", math.nan), recon_a=avg.get("recon_a", math.nan),
            kl=avg.get("kl", math.nan), tc=avg.get("tc", math.nan),
            h_y_rm=avg.get("h_y_given_rm", math.nan), h_y_b=avg.get("h_y_given_b", math.nan),
            supervised=avg.get("supervised", math.nan),
            disc_loss=avg.get("disc_loss", math.nan),
            acc_observed=metrics["acc_observed"], acc_ideal=metrics["acc_ideal"],
            dp=metrics["dp"], deo=metrics["deo"],
        )
        history.records.append(rec)
        return rec

    best_loss = math.inf
    stale_evals = 0
    stopped = False
    for epoch in range(1, config.epochs + 1):
        perm = state.rng.permutation(train.n)
        sums = {k: 0.0 for k in ("recon_x", "recon_a", "kl", "tc", "h_y_given_rm",
                                 "h_y_given_b", "supervised", "disc_loss")}
        batches = 0
        for start in range(0, train.n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            disc_loss = discriminator_phase(state, x_all[idx])
            bd = model_phase(state, x_all[idx], a_all[idx], y_all[idx])
            for name in ("recon_x", "recon_a", "kl", "tc", "h_y_given_rm",
                         "h_y_given_b", "supervised"):
                sums[name] += getattr(bd, name)
            sums["disc_loss"] += disc_loss if math.isfinite(disc_loss) else 0.0
            batches += 1

        is_last = epoch == config.epochs
        if val_set is not None and (epoch % config.select_every == 0 or is_last):
            consider_snapshot(epoch)
        if (config.eval_every and epoch % config.eval_every == 0) or is_last:
            record(epoch, sums, batches)
            epoch_loss = sum(sums[k] for k in sums if k != "disc_loss") / batches
            if config.early_stop_patience:
                if epoch_loss < best_loss - 1e-9:
                    best_loss = epoch_loss
                    stale_evals = 0
                else:
                    stale_evals += 1
                    if stale_evals >= config.early_stop_patience:
                        stopped = True
        if stopped:
            break

    if not history.records:  # epochs == 0, or eval never fired
        record(config.epochs, None, 0)

    final_params = best_snapshot if best_snapshot is not None else state.params
    probe = val_set if val_set is not None else train
    degenerate = False
    if config.epochs > 0:
        preds = np.asarray((predict_fn or M.predict_ideal)(final_params, probe.features))
        degenerate = preds.size > 0 and bool((preds == preds.flat[0]).all())
    return final_params, history, selected_epoch, degenerate


def fit(config: TrainConfig, hyper: M.Hyperparams, train: TabularDataset,
        test: TabularDataset, arch: M.Architecture | None = None,
        mask: M.TermMask = M.TermMask(),
        init_params: M.ModelParams | None = None,
        predict_fn=None) -> tuple[M.ModelParams, TrainingHistory]:
    """Train on the (corrupted) train split, evaluating on the clean test split.

    Evaluation runs every `eval_every` epochs and always after the last
    epoch; eval_every=0 keeps only the final record. Loss columns hold the
    epoch's batch-averaged breakdown.

    With config.val_fraction > 0 that fraction of `train` is held out of the
    gradient batches, snapshots are scored on it every select_every epochs by
    observed-label accuracy minus parity gap, and the best snapshot is what
    gets returned and checkpointed. History still logs the run as it
    happened. The held-out slice uses its own rng stream, so turning
    selection off reproduces the undivided run bit for bit.

    A run that ends as a constant predictor, or dies with a non-finite
    loss, is retried with a reseeded noise stream up to config.max_restarts
    times; the first healthy run is returned. If every attempt degenerates
    the last one is returned as-is (a constant predictor is still a result;
    hiding it would be worse). The checkpoint records how many restarts were
    consumed under "restarts".
    """
    if arch is None:
        arch = M.Architecture.for_dataset(train)
    chosen = None
    restarts_used = 0
    for attempt in range(config.max_restarts + 1):
        run_seed = config.seed if attempt == 0 else int(
            np.random.default_rng([config.seed, 977, attempt]).integers(2 ** 31))
        run_config = replace(config, seed=run_seed, checkpoint_path=None)
        try:
            result = _fit_once(run_config, hyper, train, test, arch, mask,
                               init_params, predict_fn)
        except NumericsError:
            if attempt == config.max_restarts and chosen is None:
                raise
            continue
        chosen = result
        restarts_used = attempt
        if not result[3]:
            break
    final_params, history, selected_epoch, _ = chosen
    if config.checkpoint_path:
        extra = {"epochs_trained": config.epochs, "seed": config.seed}
        if selected_epoch is not None:
            extra["selected_epoch"] = selected_epoch
        if restarts_used:
            extra["restarts"] = restarts_used
        M.save_model(config.checkpoint_path, final_params, arch, hyper, extra=extra)
    return final_params, history
