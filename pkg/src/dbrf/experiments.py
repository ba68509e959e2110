"""Experiment driver: flip-rate sweeps, ablations, hyperparameter grids, and
representation projections, all emitting CSV (and SVG where a figure is the
natural artifact).

Reproducibility contract: every run derives its per-cell seed from the
SHA-256 of the experiment configuration plus the cell coordinates, so any
single (dataset, method, rho, fold) cell can be recomputed in isolation and
byte-matches the value from a full sweep.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import baselines as B
from . import kpca
from . import model as M
from . import svgplot
from . import trainer as T
from .data import (CorruptionSpec, SyntheticSpec, TabularDataset,
                   generate_synthetic, inject_label_bias, protected_conjunction,
                   split, standardize)
from .errors import ConfigurationError, MetricError
from .metrics import GroupedPredictions, accuracy, delta_dp, deo

METHODS = ("dbrf_star", "dbrf_lr", "vae_lr", "raw_lr")
RESULT_COLUMNS = ("dataset", "method", "rho", "fold", "seed",
                  "accuracy", "delta_dp", "deo", "config_hash")


def beta_for_rho(rho: float) -> float:
    """Entropy-penalty schedule: heavier weight once corruption is severe."""
    return 0.5 if rho >= 0.35 else 0.1


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"
    rho_values: tuple[float, ...] = (0.0, 0.45)
    methods: tuple[str, ...] = METHODS
    folds: int = 3
    train_fraction: float = 0.9
    seed: int = 0
    # The synthetic task has two non-sensitive features; three fair latents
    # are already over-provisioned, and a wider z mostly adds room for
    # group-correlated nuisance to leak through (the parity gap climbs with
    # d_z while accuracy stays flat).
    d_z: int = 3
    d_b: int = 2
    hidden: int = 64
    epochs: int = 150
    batch_size: int = 128
    lr_model: float = 1e-3
    # Discriminator runs at half the model rate: at 150 epochs a faster or
    # multi-step discriminator intermittently drives the encoder to a
    # constant predictor on some folds.
    lr_disc: float = 5e-4
    disc_steps: int = 1
    tc_fake_source: str = "permute"
    alpha: float = 1.0
    gamma: float = 1.0
    lam: float = 0.1
    xi: float = 0.1
    beta: float | None = None  # None -> beta_for_rho schedule
    vae_epochs: int = 60
    downstream_epochs: int = 600
    downstream_lr: float = 5e-2
    # Snapshot selection on a held-out slice of the (corrupted) training
    # data; see TrainConfig.val_fraction.
    val_fraction: float = 0.1
    select_every: int = 5
    workers: int = 1

    def __post_init__(self):
        if not self.rho_values:
            raise ConfigurationError("rho_values must be non-empty")
        for r in self.rho_values:
            if not 0.0 <= r < 0.5:
                raise ConfigurationError(f"rho={r} outside [0, 0.5)")
        if not self.methods:
            raise ConfigurationError("methods must be non-empty")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ConfigurationError(f"unknown methods: {sorted(unknown)}")
        if self.folds < 1:
            raise ConfigurationError("folds must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")

    def config_hash(self) -> str:
        """Identity of the whole experiment; stamped on every CSV row."""
        payload = asdict(self)
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def seed_hash(self) -> str:
        """Hash of the training-relevant fields only. Cell seeds derive from
        this, not from config_hash, so adding or removing sweep axes (rho
        values, methods) never perturbs the remaining cells."""
        payload = asdict(self)
        for axis in ("rho_values", "methods", "workers"):
            payload.pop(axis)
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def cell_seed(seed_hash: str, dataset: str, method: str, rho: float, fold: int) -> int:
    key = f"{seed_hash}|{dataset}|{method}|{rho:.6f}|{fold}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:4], "big")


@dataclass
class CellResult:
    dataset: str
    method: str
    rho: float
    fold: int
    seed: int
    accuracy: float
    delta_dp: float
    deo: float
    config_hash: str
    error: str | None = None


def _load_base_dataset(config: ExperimentConfig, fold: int,
                       data_override: TabularDataset | None) -> TabularDataset:
    if data_override is not None:
        return data_override
    if config.dataset == "synthetic":
        return generate_synthetic(SyntheticSpec(seed=config.seed + fold))
    raise ConfigurationError(
        f"dataset {config.dataset!r} needs an explicit TabularDataset "
        f"(prepare it via the CLI and pass it in)")


def _fold_splits(config: ExperimentConfig, fold: int,
                 data_override: TabularDataset | None):
    base = _load_base_dataset(config, fold, data_override)
    tr, te = split(base, config.train_fraction, seed=config.seed + fold)
    return standardize(tr, te)


def _corrupt(train: TabularDataset, rho: float, seed: int) -> TabularDataset:
    if rho == 0.0:
        return train
    return inject_label_bias(train, CorruptionSpec.symmetric(rho, seed=seed))


def _metrics_vs_ideal(preds: np.ndarray, test: TabularDataset) -> tuple[float, float, float]:
    labels = test.ideal_labels if test.ideal_labels is not None else test.observed_labels
    group = protected_conjunction(test)
    gp = GroupedPredictions(preds, labels, group)
    acc = accuracy(preds, labels)
    try:
        dp = delta_dp(gp)
    except MetricError:
        dp = math.nan
    try:
        d = deo(gp)
    except MetricError:
        d = math.nan
    return acc, dp, d


def _hyper_for(config: ExperimentConfig, rho: float) -> M.Hyperparams:
    beta = config.beta if config.beta is not None else beta_for_rho(rho)
    return M.Hyperparams(alpha=config.alpha, gamma=config.gamma, lam=config.lam,
                         beta=beta, xi=config.xi)


def _train_dbrf(config: ExperimentConfig, corrupted: TabularDataset,
                test: TabularDataset, rho: float, seed: int,
                mask: M.TermMask = M.TermMask()):
    arch = M.Architecture.for_dataset(corrupted, d_z=config.d_z, d_b=config.d_b,
                                      hidden=config.hidden)
    # Snapshot selection and collapse detection score the head the variant
    # will actually predict with; a variant with no live label head trains
    # straight through (an untrained head looks constant, which says nothing
    # about the run).
    restarts = T.TrainConfig.max_restarts
    if mask.umi_rm:
        select_fn = None  # proxy-label head, the default
        val_fraction = config.val_fraction
    elif mask.supervised:
        select_fn = M.predict_supervised
        val_fraction = config.val_fraction
    else:
        select_fn = None
        val_fraction = 0.0
        restarts = 0
    cfg = T.TrainConfig(epochs=config.epochs, batch_size=config.batch_size,
                        lr_model=config.lr_model, lr_disc=config.lr_disc,
                        disc_steps_per_model_step=config.disc_steps,
                        tc_fake_source=config.tc_fake_source,
                        val_fraction=val_fraction,
                        select_every=config.select_every,
                        max_restarts=restarts,
                        seed=seed, eval_every=0)
    params, _ = T.fit(cfg, _hyper_for(config, rho), corrupted, test,
                      arch=arch, mask=mask, predict_fn=select_fn)
    return params, arch


def run_cell(config: ExperimentConfig, method: str, rho: float, fold: int,
             data_override: TabularDataset | None = None) -> CellResult:
    """One (method, rho, fold) measurement; failures are recorded, not raised."""
    chash = config.config_hash()
    seed = cell_seed(config.seed_hash(), config.dataset, method, rho, fold)
    try:
        train, test = _fold_splits(config, fold, data_override)
        corrupted = _corrupt(train, rho, seed)
        if method == "dbrf_star":
            params, _ = _train_dbrf(config, corrupted, test, rho, seed)
            preds = M.predict_ideal(params, test.features)
        elif method == "dbrf_lr":
            params, _ = _train_dbrf(config, corrupted, test, rho, seed)
            z_tr = M.posterior_means(params, corrupted.features)[0]
            z_te = M.posterior_means(params, test.features)[0]
            clf = B.train_downstream(z_tr, corrupted.observed_labels,
                                     epochs=config.downstream_epochs,
                                     learning_rate=config.downstream_lr, seed=seed)
            preds = clf.predict(z_te)
        elif method == "vae_lr":
            vcfg = B.VAEConfig(latent_dim=config.d_z + config.d_b,
                               hidden=config.hidden, epochs=config.vae_epochs,
                               batch_size=config.batch_size, seed=seed)
            vae, _ = B.train_vanilla_vae(vcfg, corrupted)
            clf = B.train_downstream(B.vae_codes(vae, corrupted.features),
                                     corrupted.observed_labels,
                                     epochs=config.downstream_epochs,
                                     learning_rate=config.downstream_lr, seed=seed)
            preds = clf.predict(B.vae_codes(vae, test.features))
        elif method == "raw_lr":
            clf = B.train_raw_lr(corrupted, epochs=config.downstream_epochs,
                                 learning_rate=config.downstream_lr, seed=seed)
            preds = clf.predict(test.features)
        else:
            raise ConfigurationError(f"unknown method {method!r}")
        acc, dp, d = _metrics_vs_ideal(preds, test)
        return CellResult(config.dataset, method, rho, fold, seed, acc, dp, d, chash)
    except Exception as exc:  # noqa: BLE001 - cell isolation is the contract
        return CellResult(config.dataset, method, rho, fold, seed,
                          math.nan, math.nan, math.nan, chash, error=str(exc))


def _run_cell_star(args):
    return run_cell(*args)


def run_sweep(config: ExperimentConfig, out_dir: str,
              data_override: TabularDataset | None = None) -> list[CellResult]:
    """Full (rho × method × fold) grid; emits results.csv, summary.csv and the
    two figure SVGs. Returns all cell results (including failed cells)."""
    os.makedirs(out_dir, exist_ok=True)
    cells = [(config, method, rho, fold, data_override)
             for rho in config.rho_values
             for method in config.methods
             for fold in range(config.folds)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_cell_star, cells))
    else:
        results = [run_cell(*cell) for cell in cells]

    write_results_csv(os.path.join(out_dir, "results.csv"), results)
    summary = summarize(results)
    write_summary_csv(os.path.join(out_dir, "summary.csv"), summary)

    star_dp = reference_dp(config, data_override)
    _emit_sweep_charts(config, summary, star_dp, out_dir)
    return results


def reference_dp(config: ExperimentConfig,
                 data_override: TabularDataset | None = None) -> float:
    """Parity gap of the clean labels themselves, averaged over folds — the
    dashed reference line the corrupted-label methods are compared against."""
    gaps = []
    for fold in range(config.folds):
        _, test = _fold_splits(config, fold, data_override)
        labels = test.ideal_labels if test.ideal_labels is not None else test.observed_labels
        gp = GroupedPredictions(labels, labels, protected_conjunction(test))
        gaps.append(delta_dp(gp))
    return float(np.mean(gaps))


def summarize(results: list[CellResult]) -> dict[tuple[str, float], dict[str, float]]:
    """(method, rho) -> mean/std of each metric over completed folds."""
    out: dict[tuple[str, float], dict[str, float]] = {}
    keys = sorted({(r.method, r.rho) for r in results},
                  key=lambda k: (k[0], k[1]))
    for method, rho in keys:
        cells = [r for r in results
                 if r.method == method and r.rho == rho and r.error is None]
        stats: dict[str, float] = {"n": float(len(cells))}
        for name in ("accuracy", "delta_dp", "deo"):
            vals = [getattr(r, name) for r in cells]
            stats[f"{name}_mean"] = float(np.mean(vals)) if vals else math.nan
            stats[f"{name}_std"] = float(np.std(vals)) if vals else math.nan
        out[(method, rho)] = stats
    return out


def write_results_csv(path: str, results: list[CellResult]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_COLUMNS)
        for r in results:
            writer.writerow([r.dataset, r.method, f"{r.rho:g}", r.fold, r.seed,
                             _num(r.accuracy), _num(r.delta_dp), _num(r.deo),
                             r.config_hash])


def _num(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.6f}"


def write_summary_csv(path: str, summary) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "rho", "folds",
                         "accuracy_mean", "accuracy_std",
                         "delta_dp_mean", "delta_dp_std", "deo_mean", "deo_std"])
        for (method, rho), stats in summary.items():
            writer.writerow([method, f"{rho:g}", int(stats["n"]),
                             _num(stats["accuracy_mean"]), _num(stats["accuracy_std"]),
                             _num(stats["delta_dp_mean"]), _num(stats["delta_dp_std"]),
                             _num(stats["deo_mean"]), _num(stats["deo_std"])])


def _emit_sweep_charts(config: ExperimentConfig, summary, star_dp: float,
                       out_dir: str) -> None:
    acc_series, dp_series = [], []
    for method in config.methods:
        pts = [(rho, summary[(method, rho)]) for rho in config.rho_values
               if (method, rho) in summary and summary[(method, rho)]["n"] > 0]
        if not pts:
            continue
        xs = [p[0] for p in pts]
        acc_series.append(svgplot.Series(method, xs,
                                         [p[1]["accuracy_mean"] for p in pts]))
        dp_series.append(svgplot.Series(method, xs,
                                        [p[1]["delta_dp_mean"] for p in pts]))
    if acc_series:
        with open(os.path.join(out_dir, "accuracy_vs_rho.svg"), "w") as fh:
            fh.write(svgplot.emit_svg_linechart(
                acc_series, x_label="flip rate", y_label="accuracy vs ideal labels",
                title=f"{config.dataset}: accuracy under label bias"))
    if dp_series:
        with open(os.path.join(out_dir, "dp_vs_rho.svg"), "w") as fh:
            fh.write(svgplot.emit_svg_linechart(
                dp_series, x_label="flip rate", y_label="demographic parity gap",
                title=f"{config.dataset}: parity under label bias",
                reference_y=star_dp, reference_label="clean-label gap"))


def exit_status(results: list[CellResult], config: ExperimentConfig) -> int:
    """Non-zero when any (method, rho) cell has no successful fold."""
    summary = summarize(results)
    for key, stats in summary.items():
        if stats["n"] == 0:
            return 1
    expected = {(m, r) for m in config.methods for r in config.rho_values}
    return 0 if expected <= set(summary.keys()) else 1


# ---------------------------------------------------------------- ablations

ABLATION_VARIANTS: tuple[tuple[str, M.TermMask], ...] = (
    ("full", M.TermMask()),
    ("dbvae_only", M.TermMask(umi_rm=False, umi_b=False, supervised=False)),
    ("no_umi_rm", M.TermMask(umi_rm=False)),
    ("no_umi_b", M.TermMask(umi_b=False)),
    ("no_supervised", M.TermMask(supervised=False)),
    ("dbvae_plus_umi_b", M.TermMask(umi_rm=False, supervised=False)),
)


def ablation_predict_fn(mask: M.TermMask, params, arch,
                        corrupted: TabularDataset, seed: int,
                        downstream_epochs: int = 600, downstream_lr: float = 5e-2):
    """Prediction source for an ablated model, in claim-priority order: the
    proxy-label head when its loss term trained, else the supervised z-head,
    else a downstream classifier on the frozen fair code (the variant exposes
    no trained label head at all)."""
    if mask.umi_rm:
        return lambda p, x: M.predict_ideal(p, x)
    if mask.supervised:
        return lambda p, x: M.predict_supervised(p, x)
    z_tr = M.posterior_means(params, corrupted.features)[0]
    clf = B.train_downstream(z_tr, corrupted.observed_labels,
                             epochs=downstream_epochs, learning_rate=downstream_lr,
                             seed=seed)
    return lambda p, x: clf.predict(M.posterior_means(p, x)[0])


@dataclass
class AblationRow:
    variant: str
    accuracy_mean: float
    accuracy_std: float
    delta_dp_mean: float
    delta_dp_std: float
    folds: int


def run_ablation(config: ExperimentConfig, rho: float, out_dir: str,
                 variants=ABLATION_VARIANTS,
                 data_override: TabularDataset | None = None) -> list[AblationRow]:
    """Loss-term knockout table at a fixed flip rate."""
    os.makedirs(out_dir, exist_ok=True)
    shash = config.seed_hash()
    rows = []
    for name, mask in variants:
        accs, dps = [], []
        for fold in range(config.folds):
            seed = cell_seed(shash, config.dataset, f"ablate_{name}", rho, fold)
            train, test = _fold_splits(config, fold, data_override)
            corrupted = _corrupt(train, rho, seed)
            params, arch = _train_dbrf(config, corrupted, test, rho, seed, mask=mask)
            fn = ablation_predict_fn(mask, params, arch, corrupted, seed,
                                     config.downstream_epochs, config.downstream_lr)
            acc, dp, _ = _metrics_vs_ideal(fn(params, test.features), test)
            accs.append(acc)
            dps.append(dp)
        rows.append(AblationRow(name, float(np.mean(accs)), float(np.std(accs)),
                                float(np.mean(dps)), float(np.std(dps)),
                                config.folds))
    path = os.path.join(out_dir, "ablation.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "accuracy_mean", "accuracy_std",
                         "delta_dp_mean", "delta_dp_std", "folds"])
        for row in rows:
            writer.writerow([row.variant, _num(row.accuracy_mean),
                             _num(row.accuracy_std), _num(row.delta_dp_mean),
                             _num(row.delta_dp_std), row.folds])
    return rows


# ----------------------------------------------------------- hyperparameter grid

def run_hyper_grid(config: ExperimentConfig, rho: float, out_dir: str,
                   beta_values=(0.1, 0.3, 0.5), xi_values=(0.1, 0.3, 0.5),
                   alpha_values=(0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
                   lambda_values=(0.0, 0.1, 0.5),
                   data_override: TabularDataset | None = None) -> dict:
    """β×ξ grid, then an α line and a λ line (β, ξ at their defaults)."""
    os.makedirs(out_dir, exist_ok=True)
    shash = config.seed_hash()

    # Every point on one axis reuses the same per-fold seeds (data draw,
    # corruption, init, noise stream), so differences along the axis come
    # from the hyperparameter itself rather than from reseeding -- common
    # random numbers, the usual variance-reduction trick for sweeps.
    def measure(axis: str, **overrides) -> tuple[float, float]:
        accs, dps = [], []
        for fold in range(config.folds):
            seed = cell_seed(shash, config.dataset, f"hyper_{axis}", rho, fold)
            train, test = _fold_splits(config, fold, data_override)
            corrupted = _corrupt(train, rho, seed)
            cell_cfg = replace(config, **overrides)
            params, _ = _train_dbrf(cell_cfg, corrupted, test, rho, seed)
            acc, dp, _ = _metrics_vs_ideal(M.predict_ideal(params, test.features), test)
            accs.append(acc)
            dps.append(dp)
        return float(np.mean(accs)), float(np.mean(dps))

    grid_rows = []
    for beta in beta_values:
        for xi in xi_values:
            acc, dp = measure("grid", beta=beta, xi=xi)
            grid_rows.append((beta, xi, acc, dp))
    alpha_rows = [(a, *measure("alpha", alpha=a)) for a in alpha_values]
    lambda_rows = [(l, *measure("lambda", lam=l)) for l in lambda_values]

    with open(os.path.join(out_dir, "grid_beta_xi.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["beta", "xi", "accuracy_mean", "delta_dp_mean"])
        for beta, xi, acc, dp in grid_rows:
            writer.writerow([f"{beta:g}", f"{xi:g}", _num(acc), _num(dp)])
    with open(os.path.join(out_dir, "alpha_line.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["alpha", "accuracy_mean", "delta_dp_mean"])
        for a, acc, dp in alpha_rows:
            writer.writerow([f"{a:g}", _num(acc), _num(dp)])
    with open(os.path.join(out_dir, "lambda_line.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "accuracy_mean", "delta_dp_mean"])
        for l, acc, dp in lambda_rows:
            writer.writerow([f"{l:g}", _num(acc), _num(dp)])

    alpha_chart = svgplot.emit_svg_linechart(
        [svgplot.Series("accuracy", [r[0] for r in alpha_rows],
                        [r[1] for r in alpha_rows]),
         svgplot.Series("delta_dp", [r[0] for r in alpha_rows],
                        [r[2] for r in alpha_rows])],
        x_label="alpha", y_label="metric", title=f"alpha line at rho={rho:g}")
    with open(os.path.join(out_dir, "alpha_line.svg"), "w") as fh:
        fh.write(alpha_chart)
    return {"grid": grid_rows, "alpha": alpha_rows, "lambda": lambda_rows}


# ----------------------------------------------------------------- projection

def project_representations(checkpoint_path: str, dataset: TabularDataset,
                            out_dir: str, bandwidth: float | None = None,
                            seed: int = 0) -> dict[str, float]:
    """Kernel-PCA maps of raw features and the fair code from a checkpoint;
    emits coordinates CSV plus group-colored scatters, returns the
    group-separation score per space."""
    os.makedirs(out_dir, exist_ok=True)
    params, arch, hyper, _ = M.load_model(checkpoint_path)
    z_mu = M.posterior_means(params, dataset.features)[0]
    group = protected_conjunction(dataset)

    scores = {}
    for name, matrix in (("x", dataset.features), ("z", z_mu)):
        coords, _, idx = kpca.project(matrix, bandwidth=bandwidth, seed=seed)
        sub_group = group[idx]
        scores[name] = kpca.group_separation(coords, sub_group)
        with open(os.path.join(out_dir, f"projection_{name}.csv"), "w",
                  newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["component_1", "component_2", "protected"])
            for (c1, c2), g in zip(coords, sub_group):
                writer.writerow([f"{c1:.6f}", f"{c2:.6f}", int(g)])
        with open(os.path.join(out_dir, f"projection_{name}.svg"), "w") as fh:
            fh.write(svgplot.emit_svg_scatter(
                coords, sub_group, title=f"kernel-PCA of {name} "
                f"(separation {scores[name]:.3f})"))
    return scores
