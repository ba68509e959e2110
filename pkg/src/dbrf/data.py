"""Datasets: synthetic Gaussian generator, tabular CSV ingestion, label
corruption, splits, and standardization.

All operations are pure given explicit seeds; `TabularDataset` is immutable
(arrays are copied in and marked read-only), so instances can be shared
across workers freely.
"""

from __future__ import annotations

import csv
import json
import os
import warnings
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, IngestionError

COLUMN_KINDS = ("continuous", "onehot")

DATA_DIR_ENV = "DBRF_DATA_DIR"


def data_dir() -> Path:
    """Directory searched for raw dataset files (overridden by $DBRF_DATA_DIR)."""
    return Path(os.environ.get(DATA_DIR_ENV, "data"))


def _frozen(arr: np.ndarray) -> np.ndarray:
    out = arr.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class TabularDataset:
    """Features, sensitive bits, observed labels, and (optionally) the ideal
    labels that existed before any corruption."""

    features: np.ndarray  # (n, d) float
    sensitive: np.ndarray  # (n, k) bits
    observed_labels: np.ndarray  # (n,) bits
    ideal_labels: np.ndarray | None  # (n,) bits or None
    column_kinds: tuple[str, ...]
    feature_names: tuple[str, ...] | None = None
    sensitive_names: tuple[str, ...] | None = None

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        s = np.asarray(self.sensitive, dtype=np.int64)
        y = np.asarray(self.observed_labels, dtype=np.int64)
        if s.ndim == 1:
            s = s[:, None]
        n = f.shape[0]
        if f.ndim != 2 or s.shape[0] != n or y.shape != (n,):
            raise ConfigurationError("dataset row counts disagree")
        if not np.all((s == 0) | (s == 1)):
            raise ConfigurationError("sensitive entries must be bits")
        if not np.all((y == 0) | (y == 1)):
            raise ConfigurationError("labels must be bits")
        ym = self.ideal_labels
        if ym is not None:
            ym = np.asarray(ym, dtype=np.int64)
            if ym.shape != (n,):
                raise ConfigurationError("ideal_labels length differs from n")
            if not np.all((ym == 0) | (ym == 1)):
                raise ConfigurationError("ideal labels must be bits")
            ym = _frozen(ym)
        kinds = tuple(self.column_kinds)
        if len(kinds) != f.shape[1] or any(k not in COLUMN_KINDS for k in kinds):
            raise ConfigurationError(f"column_kinds must name {COLUMN_KINDS} per feature column")
        object.__setattr__(self, "features", _frozen(f))
        object.__setattr__(self, "sensitive", _frozen(s))
        object.__setattr__(self, "observed_labels", _frozen(y))
        object.__setattr__(self, "ideal_labels", ym)
        object.__setattr__(self, "column_kinds", kinds)
        if self.feature_names is not None:
            names = tuple(self.feature_names)
            if len(names) != f.shape[1]:
                raise ConfigurationError("feature_names length differs from d")
            object.__setattr__(self, "feature_names", names)
        if self.sensitive_names is not None:
            snames = tuple(self.sensitive_names)
            if len(snames) != s.shape[1]:
                raise ConfigurationError("sensitive_names length differs from k")
            object.__setattr__(self, "sensitive_names", snames)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def k(self) -> int:
        return self.sensitive.shape[1]


def protected_conjunction(data: TabularDataset) -> np.ndarray:
    """The protected-group bit: conjunction of all sensitive bits."""
    return np.all(data.sensitive == 1, axis=1).astype(np.int64)


def subset(data: TabularDataset, idx: np.ndarray) -> TabularDataset:
    return TabularDataset(
        features=data.features[idx],
        sensitive=data.sensitive[idx],
        observed_labels=data.observed_labels[idx],
        ideal_labels=None if data.ideal_labels is None else data.ideal_labels[idx],
        column_kinds=data.column_kinds,
        feature_names=data.feature_names,
        sensitive_names=data.sensitive_names,
    )


# ---------------------------------------------------------------------------
# synthetic generator


@dataclass
class SyntheticSpec:
    """Two rotated-density-labelled Gaussian classes in the plane.

    The sensitive bit is sampled per example with probability
    p(a=1|x) = p(x'|y=1) / (p(x'|y=1) + p(x'|y=0)) where x' rotates x by
    `rotation_phi`. The default angle was chosen so the clean labels are
    nearly demographic-parity-fair (ΔDP ≈ 0.02) while the groups stay
    unbalanced (≈ 5150 vs 5650 of 10800).
    """

    n: int = 10_800
    mean_pos: tuple[float, float] = (2.0, 2.0)
    cov_pos: tuple[tuple[float, float], tuple[float, float]] = ((5.0, 1.0), (1.0, 5.0))
    mean_neg: tuple[float, float] = (-2.0, -2.0)
    cov_neg: tuple[tuple[float, float], tuple[float, float]] = ((10.0, 1.0), (1.0, 3.0))
    rotation_phi: float = -0.39 * np.pi
    positive_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n <= 0:
            raise ConfigurationError("n must be positive")
        if not 0.0 < self.positive_fraction < 1.0:
            raise ConfigurationError("positive_fraction must lie in (0, 1)")


def _cholesky_spd(cov, name: str) -> np.ndarray:
    cov = np.asarray(cov, dtype=np.float64)
    if cov.shape != (2, 2) or not np.allclose(cov, cov.T, atol=1e-12):
        raise ConfigurationError(f"{name} must be a symmetric 2x2 matrix")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ConfigurationError(f"{name} is not positive-definite") from None


def _gaussian_pdf2(x: np.ndarray, mean, cov) -> np.ndarray:
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    diff = x - mean
    inv = np.linalg.inv(cov)
    quad = np.einsum("ni,ij,nj->n", diff, inv, diff)
    return np.exp(-0.5 * quad) / (2.0 * np.pi * np.sqrt(np.linalg.det(cov)))


def generate_synthetic(spec: SyntheticSpec) -> TabularDataset:
    l_pos = _cholesky_spd(spec.cov_pos, "cov_pos")
    l_neg = _cholesky_spd(spec.cov_neg, "cov_neg")
    rng = np.random.default_rng(spec.seed)

    n_pos = int(round(spec.n * spec.positive_fraction))
    n_neg = spec.n - n_pos
    x_pos = np.asarray(spec.mean_pos) + rng.standard_normal((n_pos, 2)) @ l_pos.T
    x_neg = np.asarray(spec.mean_neg) + rng.standard_normal((n_neg, 2)) @ l_neg.T
    x = np.concatenate([x_pos, x_neg])
    y = np.concatenate([np.ones(n_pos, dtype=np.int64), np.zeros(n_neg, dtype=np.int64)])
    perm = rng.permutation(spec.n)
    x, y = x[perm], y[perm]

    phi = spec.rotation_phi
    rot = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
    x_rot = x @ rot.T
    p1 = _gaussian_pdf2(x_rot, spec.mean_pos, spec.cov_pos)
    p0 = _gaussian_pdf2(x_rot, spec.mean_neg, spec.cov_neg)
    a = (rng.random(spec.n) < p1 / (p1 + p0)).astype(np.int64)

    return TabularDataset(
        features=x,
        sensitive=a[:, None],
        observed_labels=y,
        ideal_labels=y,
        column_kinds=("continuous", "continuous"),
        feature_names=("x0", "x1"),
        sensitive_names=("a",),
    )


# ---------------------------------------------------------------------------
# group-conditional label corruption


@dataclass
class CorruptionSpec:
    """Flip rates: rho0 = p(flip 1->0 | protected), rho1 = p(flip 0->1 | privileged)."""

    rho0: float
    rho1: float
    seed: int = 0

    def __post_init__(self):
        for name, r in (("rho0", self.rho0), ("rho1", self.rho1)):
            if not 0.0 <= r < 0.5:
                raise ConfigurationError(f"{name}={r} outside [0, 0.5)")

    @classmethod
    def symmetric(cls, rho: float, seed: int = 0) -> "CorruptionSpec":
        return cls(rho0=rho, rho1=rho, seed=seed)


def inject_label_bias(data: TabularDataset, spec: CorruptionSpec,
                      group_column: int | None = None) -> TabularDataset:
    """Return a copy whose observed labels are group-conditionally corrupted.

    Protected examples (group bit 1) with ideal label 1 flip to 0 with
    probability rho0; privileged examples (bit 0) with ideal label 0 flip to
    1 with probability rho1. Other cells are never touched. `group_column`
    selects one sensitive bit; by default the protected group is the
    conjunction of all bits.
    """
    if data.ideal_labels is None:
        raise ConfigurationError("corruption requires ideal_labels")
    g = (protected_conjunction(data) if group_column is None
         else data.sensitive[:, group_column])
    ym = data.ideal_labels
    u = np.random.default_rng(spec.seed).random(data.n)
    y = ym.copy()
    y[(g == 1) & (ym == 1) & (u < spec.rho0)] = 0
    y[(g == 0) & (ym == 0) & (u < spec.rho1)] = 1
    return replace(data, observed_labels=y)


# ---------------------------------------------------------------------------
# split / standardize


def split(data: TabularDataset, train_fraction: float, seed: int = 0):
    """Disjoint, exhaustive, seed-shuffled (train, test) partition."""
    if not 0.0 < train_fraction < 1.0:
        raise ConfigurationError("train_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(data.n)
    n_train = int(round(data.n * train_fraction))
    return subset(data, perm[:n_train]), subset(data, perm[n_train:])


def standardize(train: TabularDataset, test: TabularDataset):
    """Center/scale continuous columns by train statistics; one-hot untouched."""
    if train.column_kinds != test.column_kinds:
        raise ConfigurationError("train and test column kinds differ")
    cont = np.array([k == "continuous" for k in train.column_kinds])
    mean = np.zeros(train.d)
    scale = np.ones(train.d)
    mean[cont] = train.features[:, cont].mean(axis=0)
    sd = train.features[:, cont].std(axis=0)
    zero_var = sd == 0.0
    if np.any(zero_var):
        cols = np.flatnonzero(cont)[zero_var]
        warnings.warn(f"zero-variance continuous column(s) {cols.tolist()}: "
                      "centered only", RuntimeWarning)
        sd = np.where(zero_var, 1.0, sd)
    scale[cont] = sd

    def apply(ds: TabularDataset) -> TabularDataset:
        return replace(ds, features=(ds.features - mean) / scale)

    return apply(train), apply(test)


# ---------------------------------------------------------------------------
# schema-driven CSV ingestion


def load_schema(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"no schema file at {path}")
    schema = json.loads(path.read_text())
    _validate_schema(schema)
    return schema


def builtin_schema(name: str) -> dict:
    """A schema shipped with the package (adult, compas)."""
    here = Path(__file__).parent / "schemas" / f"{name}.json"
    if not here.exists():
        raise ConfigurationError(f"no builtin schema named {name!r}")
    return load_schema(here)


def _validate_schema(schema: dict) -> None:
    for key in ("name", "label", "sensitive", "features"):
        if key not in schema:
            raise IngestionError(f"schema missing {key!r}")
    for feat in schema["features"]:
        kind = feat.get("kind")
        if kind not in ("continuous", "categorical"):
            raise IngestionError(f"feature {feat.get('name')!r} has unknown kind {kind!r}")
        if kind == "categorical" and not feat.get("groups"):
            raise IngestionError(f"categorical feature {feat.get('name')!r} needs groups")


def _passes_filter(cell: str, flt: dict) -> bool:
    op = flt["op"]
    if op == "between":
        try:
            v = float(cell)
        except ValueError:
            return False
        return flt["lo"] <= v <= flt["hi"]
    if op == "in":
        return cell in flt["values"]
    if op == "not_in":
        return cell not in flt["values"]
    raise IngestionError(f"unknown filter op {op!r}")


def _match_group(cell: str, groups: dict) -> str | None:
    catch_all = None
    for gname, members in groups.items():
        if "*" in members:
            catch_all = gname
        if cell in members:
            return gname
    return catch_all


def load_tabular(path, schema: dict) -> TabularDataset:
    """Parse a CSV per the schema: filters, one-hot encoding, missing-row drops.

    Malformed rows, unknown categories, and unparseable numbers raise
    IngestionError naming the 1-based data row.
    """
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"no data file at {path}")
    missing = set(schema.get("missing_values", ["?", ""]))
    filters = schema.get("filters", [])
    label_spec = schema["label"]
    pos_values = set(label_spec["positive_values"])
    neg_values = set(label_spec.get("negative_values", [])) or None

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=schema.get("delimiter", ","))
        if schema.get("has_header", True):
            header = next(reader, None)
            if header is None:
                raise IngestionError(f"{path} is empty")
            header = [h.strip() for h in header]
        else:
            header = schema["file_columns"]
        col_index = {name: i for i, name in enumerate(header)}
        needed = ([label_spec["column"]] + [s["column"] for s in schema["sensitive"]]
                  + [f["name"] for f in schema["features"]]
                  + [f["column"] for f in filters])
        for name in needed:
            if name not in col_index:
                raise IngestionError(f"column {name!r} absent from {path}")

        feat_rows: list[list[float]] = []
        sens_rows: list[list[int]] = []
        labels: list[int] = []
        for row_idx, row in enumerate(reader, start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue  # ignore blank lines
            if len(row) != len(header):
                raise IngestionError(
                    f"row {row_idx}: {len(row)} fields, expected {len(header)}")
            cells = [c.strip() for c in row]

            if any(not _passes_filter(cells[col_index[f['column']]], f) for f in filters):
                continue

            raw_label = cells[col_index[label_spec["column"]]]
            if raw_label in missing:
                continue
            if raw_label in pos_values:
                label = 1
            elif neg_values is not None and raw_label not in neg_values:
                raise IngestionError(
                    f"row {row_idx}: unknown label value {raw_label!r}")
            else:
                label = 0

            drop = False
            sens_bits = []
            for s in schema["sensitive"]:
                cell = cells[col_index[s["column"]]]
                if cell in missing:
                    drop = True
                    break
                sens_bits.append(1 if cell in s["positive_values"] else 0)
            if drop:
                continue

            feats: list[float] = []
            for feat in schema["features"]:
                cell = cells[col_index[feat["name"]]]
                if feat["kind"] == "continuous":
                    if cell in missing:
                        drop = True
                        break
                    try:
                        feats.append(float(cell))
                    except ValueError:
                        raise IngestionError(
                            f"row {row_idx}: non-numeric {feat['name']}={cell!r}") from None
                else:
                    group = _match_group(cell, feat["groups"])
                    if group is None:
                        if cell in missing:
                            drop = True
                            break
                        raise IngestionError(
                            f"row {row_idx}: unknown {feat['name']} category {cell!r}")
                    feats.extend(1.0 if g == group else 0.0 for g in feat["groups"])
            if drop:
                continue

            feat_rows.append(feats)
            sens_rows.append(sens_bits)
            labels.append(label)

    if not feat_rows:
        raise IngestionError(f"{path}: no usable rows")

    names: list[str] = []
    kinds: list[str] = []
    for feat in schema["features"]:
        if feat["kind"] == "continuous":
            names.append(feat["name"])
            kinds.append("continuous")
        else:
            names.extend(f"{feat['name']}={g}" for g in feat["groups"])
            kinds.extend("onehot" for _ in feat["groups"])

    return TabularDataset(
        features=np.array(feat_rows, dtype=np.float64),
        sensitive=np.array(sens_rows, dtype=np.int64),
        observed_labels=np.array(labels, dtype=np.int64),
        ideal_labels=None,
        column_kinds=tuple(kinds),
        feature_names=tuple(names),
        sensitive_names=tuple(s["name"] for s in schema["sensitive"]),
    )


# ---------------------------------------------------------------------------
# canonical dump (CSV + sidecar metadata)

_RESERVED_Y = "__y"
_RESERVED_YM = "__ym"


def dump_dataset(data: TabularDataset, path) -> None:
    """Write features + `__a<i>` + optional `__ym` + `__y` with a sidecar
    .meta.json recording kinds and names, for cross-tool reproducibility."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fnames = list(data.feature_names or (f"x{i}" for i in range(data.d)))
    if any(name.startswith("__") for name in fnames):
        raise ConfigurationError("feature names must not use the reserved __ prefix")
    acols = [f"__a{i}" for i in range(data.k)]
    header = fnames + acols + ([_RESERVED_YM] if data.ideal_labels is not None else []) + [_RESERVED_Y]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            row = [repr(float(v)) for v in data.features[i]]
            row += [str(int(v)) for v in data.sensitive[i]]
            if data.ideal_labels is not None:
                row.append(str(int(data.ideal_labels[i])))
            row.append(str(int(data.observed_labels[i])))
            writer.writerow(row)
    meta = {"column_kinds": list(data.column_kinds),
            "feature_names": fnames,
            "sensitive_names": list(data.sensitive_names or acols)}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, indent=2))


def load_dump(path) -> TabularDataset:
    path = Path(path)
    meta_path = Path(str(path) + ".meta.json")
    if not path.exists() or not meta_path.exists():
        raise IngestionError(f"canonical dump {path} (+ .meta.json) not found")
    meta = json.loads(meta_path.read_text())
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise IngestionError(f"{path} is empty")
        rows = [row for row in reader if row]
    if not rows:
        raise IngestionError(f"{path}: no data rows")
    d = len(meta["column_kinds"])
    acols = [h for h in header if h.startswith("__a")]
    has_ym = _RESERVED_YM in header
    expected = d + len(acols) + (1 if has_ym else 0) + 1
    if len(header) != expected:
        raise IngestionError(f"{path}: header does not match sidecar metadata")
    arr = np.array(rows, dtype=np.float64)
    feats = arr[:, :d]
    sens = arr[:, d:d + len(acols)].astype(np.int64)
    ym = arr[:, d + len(acols)].astype(np.int64) if has_ym else None
    y = arr[:, -1].astype(np.int64)
    return TabularDataset(
        features=feats, sensitive=sens, observed_labels=y, ideal_labels=ym,
        column_kinds=tuple(meta["column_kinds"]),
        feature_names=tuple(meta["feature_names"]),
        sensitive_names=tuple(meta["sensitive_names"]),
    )
