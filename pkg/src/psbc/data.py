"""Dataset ingestion, the pair normalization map, and model persistence.

IDX containers are parsed bit-exactly: big-endian headers with magic 2051
(images) or 2049 (labels), then raw unsigned bytes in row-major order.
Model files are a line-oriented UTF-8 text format with canonical field
ordering and 17-significant-digit decimals, so that save -> load -> save is
byte-identical.
"""

from __future__ import annotations

import gzip
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from . import diffusion as diff
from .core import (
    CANONICAL,
    PCA,
    BasisMatrix,
    Hyperparameters,
    WeightStack,
    canonical_basis,
)
from .errors import DimensionError, DomainError, IdxParseError, ModelFormatError
from .propagation import PsbcModel

IMAGE_MAGIC = 2051
LABEL_MAGIC = 2049

MODEL_FORMAT_VERSION = 1

TRAIN_IMAGES = "train-images-idx3-ubyte"
TRAIN_LABELS = "train-labels-idx1-ubyte"
TEST_IMAGES = "t10k-images-idx3-ubyte"
TEST_LABELS = "t10k-labels-idx1-ubyte"


@dataclass(frozen=True)
class Dataset:
    """Flattened feature vectors in [0, 1] with integer labels."""

    features: np.ndarray  # (n_samples, n_u) float64
    labels: np.ndarray    # (n_samples,) int64

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        l = np.asarray(self.labels, dtype=np.int64)
        if f.ndim != 2 or l.ndim != 1 or f.shape[0] != l.shape[0]:
            raise DimensionError("features and labels do not conform")
        if f.size and ((f < 0).any() or (f > 1).any()):
            raise DomainError("features must lie in [0, 1]")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", l)

    def __len__(self) -> int:
        return self.features.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx])


@dataclass(frozen=True)
class NormalizationMap:
    """Affine recentering x -> 0.5 + 0.5 (x - mu) built from a training mean."""

    mu: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mu, dtype=np.float64)
        if m.ndim != 1:
            raise DimensionError("mu must be a vector")
        if m.size and ((m < 0).any() or (m > 1).any()):
            raise DomainError("mu must lie in [0, 1]")
        object.__setattr__(self, "mu", m)


def _read_file(path: str) -> bytes:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _read_be_u32(buf: bytes, offset: int, what: str) -> int:
    if offset + 4 > len(buf):
        raise IdxParseError(f"truncated header while reading {what}", offset)
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx_images(path: str) -> np.ndarray:
    """Parse an IDX image container into a (count, rows*cols) byte matrix."""
    buf = _read_file(path)
    magic = _read_be_u32(buf, 0, "magic")
    if magic != IMAGE_MAGIC:
        raise IdxParseError(f"expected image magic {IMAGE_MAGIC}, found {magic}", 0)
    count = _read_be_u32(buf, 4, "count")
    rows = _read_be_u32(buf, 8, "rows")
    cols = _read_be_u32(buf, 12, "cols")
    per_image = rows * cols
    expected = 16 + count * per_image
    if len(buf) != expected:
        raise IdxParseError(
            f"payload holds {len(buf) - 16} bytes, header promises {count * per_image}",
            min(len(buf), expected),
        )
    data = np.frombuffer(buf, dtype=np.uint8, offset=16)
    return data.reshape(count, per_image)


def load_idx_labels(path: str) -> np.ndarray:
    """Parse an IDX label container into an int array with entries 0..9."""
    buf = _read_file(path)
    magic = _read_be_u32(buf, 0, "magic")
    if magic != LABEL_MAGIC:
        raise IdxParseError(f"expected label magic {LABEL_MAGIC}, found {magic}", 0)
    count = _read_be_u32(buf, 4, "count")
    expected = 8 + count
    if len(buf) != expected:
        raise IdxParseError(
            f"payload holds {len(buf) - 8} labels, header promises {count}",
            min(len(buf), expected),
        )
    labels = np.frombuffer(buf, dtype=np.uint8, offset=8)
    bad = np.flatnonzero(labels > 9)
    if bad.size:
        raise IdxParseError(f"label byte {labels[bad[0]]} exceeds 9", 8 + int(bad[0]))
    return labels.astype(np.int64)


def write_idx_images(path: str, images: np.ndarray, rows: int, cols: int) -> None:
    """Inverse of load_idx_images, for fixtures and round-trip checks."""
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 2 or images.shape[1] != rows * cols:
        raise DimensionError("images must be (count, rows*cols) bytes")
    header = struct.pack(">IIII", IMAGE_MAGIC, images.shape[0], rows, cols)
    _atomic_write_bytes(path, header + images.tobytes())


def write_idx_labels(path: str, labels: np.ndarray) -> None:
    labels = np.asarray(labels)
    if (labels < 0).any() or (labels > 9).any():
        raise DomainError("labels must be in 0..9")
    header = struct.pack(">II", LABEL_MAGIC, labels.shape[0])
    _atomic_write_bytes(path, header + labels.astype(np.uint8).tobytes())


def scale_minmax(raw: np.ndarray) -> np.ndarray:
    """Map byte features onto [0, 1] by exact division by 255."""
    return np.asarray(raw, dtype=np.float64) / 255.0


def dataset_from_idx(image_path: str, label_path: str) -> Dataset:
    images = load_idx_images(image_path)
    labels = load_idx_labels(label_path)
    if images.shape[0] != labels.shape[0]:
        raise DimensionError(
            f"{images.shape[0]} images vs {labels.shape[0]} labels"
        )
    return Dataset(scale_minmax(images), labels)


def _find_idx(data_dir: str, stem: str) -> str:
    for name in (stem, stem + ".gz"):
        candidate = os.path.join(data_dir, name)
        if os.path.exists(candidate):
            return candidate
    raise FileNotFoundError(f"{stem}[.gz] not found under {data_dir}")


def load_mnist(data_dir: str) -> tuple[Dataset, Dataset]:
    """Load the standard four-file digit corpus: (train-dev, test).

    The first file pair is the 60,000-sample train-development split and the
    second the 10,000-sample test split.
    """
    train = dataset_from_idx(
        _find_idx(data_dir, TRAIN_IMAGES), _find_idx(data_dir, TRAIN_LABELS)
    )
    test = dataset_from_idx(
        _find_idx(data_dir, TEST_IMAGES), _find_idx(data_dir, TEST_LABELS)
    )
    return train, test


def select_pair(ds: Dataset, a: int, b: int) -> Dataset:
    """Restrict to two digits; the smaller digit maps to label 0."""
    if a == b:
        raise DomainError("digits must differ")
    if not (0 <= a <= 9 and 0 <= b <= 9):
        raise DomainError("digits must be in 0..9")
    lo, hi = min(a, b), max(a, b)
    mask = (ds.labels == lo) | (ds.labels == hi)
    return Dataset(ds.features[mask], (ds.labels[mask] == hi).astype(np.int64))


def fit_normalization(train: Dataset) -> NormalizationMap:
    """Feature-wise training mean; the map sends that mean to the 1/2 vector."""
    if len(train) == 0:
        raise DomainError("cannot fit a normalization map on an empty set")
    return NormalizationMap(train.features.mean(axis=0))


def apply_normalization(nmap: NormalizationMap, x: np.ndarray) -> np.ndarray:
    """Recenter onto [0, 1]: 0.5 + 0.5 (x - mu), applied row-wise."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != nmap.mu.shape[0]:
        raise DimensionError(
            f"expected {nmap.mu.shape[0]} features, got {x.shape[-1]}"
        )
    return 0.5 + 0.5 * (x - nmap.mu)


def normalize_dataset(nmap: NormalizationMap, ds: Dataset) -> Dataset:
    return Dataset(apply_normalization(nmap, ds.features), ds.labels)


# --- model persistence -------------------------------------------------------

def _fmt(values) -> str:
    return " ".join(f"{float(v):.17g}" for v in np.atleast_1d(values))


def save_model(model: PsbcModel, path: str, normalization: NormalizationMap | None = None) -> None:
    """Serialize a model (and optionally its normalization map) as text."""
    hp = model.hp
    lines = [
        f"psbc-model {MODEL_FORMAT_VERSION}",
        f"n_t {hp.n_t}",
        f"n_u {hp.n_u}",
        f"n_pt {hp.n_pt}",
        f"eps {hp.eps:.17g}",
        f"dt_u {hp.dt_u:.17g}",
        f"dt_p {hp.dt_p:.17g}",
        f"dt_star {hp.dt_star:.17g}",
        f"shared_k {hp.shared_k}",
        f"bc {hp.bc}",
        f"subordination {hp.subordination}",
        f"basis_u {model.basis_u.kind}",
    ]
    if model.basis_u.kind == PCA:
        for i, row in enumerate(model.basis_u.entries):
            lines.append(f"basis_row {i} {_fmt(row)}")
    elif model.basis_u.kind != CANONICAL:
        raise ModelFormatError(f"cannot serialize basis kind {model.basis_u.kind!r}", "basis_u")
    for g in range(model.weights.n_groups):
        lines.append(f"w_u {g} {_fmt(model.weights.w_u[g])}")
    for g in range(model.weights.n_groups):
        lines.append(f"w_p {g} {_fmt(model.weights.w_p[g])}")
    if normalization is None:
        lines.append("mu none")
    else:
        lines.append(f"mu {_fmt(normalization.mu)}")
    lines.append("end")
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _parse_scalar(fields: dict, key: str, cast):
    if key not in fields:
        raise ModelFormatError("missing field", key)
    try:
        return cast(fields[key])
    except ValueError as exc:
        raise ModelFormatError(f"cannot parse value {fields[key]!r}", key) from exc


def load_model(path: str) -> tuple[PsbcModel, NormalizationMap | None]:
    """Inverse of save_model; the loaded model predicts bit-identically."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    if not lines or not lines[0].startswith("psbc-model "):
        raise ModelFormatError("not a model file", "format_version")
    version = lines[0].split(" ", 1)[1]
    if version != str(MODEL_FORMAT_VERSION):
        raise ModelFormatError(f"unsupported version {version!r}", "format_version")
    if "end" not in lines:
        raise ModelFormatError("missing end marker", "end")

    fields: dict[str, str] = {}
    basis_rows: dict[int, np.ndarray] = {}
    w_u_rows: dict[int, np.ndarray] = {}
    w_p_rows: dict[int, np.ndarray] = {}
    mu: np.ndarray | None = None
    for ln in lines[1:]:
        if not ln or ln == "end":
            continue
        key, _, rest = ln.partition(" ")
        if key == "basis_row":
            idx, _, vals = rest.partition(" ")
            basis_rows[int(idx)] = _parse_vector(vals, f"basis_row {idx}")
        elif key in ("w_u", "w_p"):
            idx, _, vals = rest.partition(" ")
            target = w_u_rows if key == "w_u" else w_p_rows
            target[int(idx)] = _parse_vector(vals, f"{key}[{idx}]")
        elif key == "mu":
            mu = None if rest == "none" else _parse_vector(rest, "mu")
        else:
            fields[key] = rest

    hp = Hyperparameters(
        n_t=_parse_scalar(fields, "n_t", int),
        n_u=_parse_scalar(fields, "n_u", int),
        n_pt=_parse_scalar(fields, "n_pt", int),
        eps=_parse_scalar(fields, "eps", float),
        dt_u=_parse_scalar(fields, "dt_u", float),
        dt_p=_parse_scalar(fields, "dt_p", float),
        dt_star=_parse_scalar(fields, "dt_star", float),
        shared_k=_parse_scalar(fields, "shared_k", int),
        bc=_parse_scalar(fields, "bc", str),
        subordination=_parse_scalar(fields, "subordination", str),
    )
    kind = _parse_scalar(fields, "basis_u", str)
    if kind == CANONICAL:
        basis_u = canonical_basis(hp.n_u, hp.n_pt)
    elif kind == PCA:
        entries = _collect_rows(basis_rows, hp.n_u, "basis_row")
        if entries.shape != (hp.n_u, hp.n_pt):
            raise ModelFormatError(
                f"basis is {entries.shape}, expected ({hp.n_u}, {hp.n_pt})", "basis_row"
            )
        basis_u = BasisMatrix(entries, PCA)
    else:
        raise ModelFormatError(f"unknown basis kind {kind!r}", "basis_u")

    w_u = _collect_rows(w_u_rows, hp.n_groups, "w_u")
    w_p = _collect_rows(w_p_rows, hp.n_groups, "w_p")
    if w_u.shape[1] != hp.n_pt:
        raise ModelFormatError(f"group width {w_u.shape[1]}, expected {hp.n_pt}", "w_u")
    if w_p.shape[1] != hp.n_p:
        raise ModelFormatError(f"group width {w_p.shape[1]}, expected {hp.n_p}", "w_p")

    basis_sub = canonical_basis(hp.n_u, hp.n_p)
    try:
        model = PsbcModel(
            hp, basis_u, basis_sub, WeightStack(w_u, w_p), diff.build(hp.n_u, hp.bc, hp.eps)
        )
    except (DimensionError, DomainError) as exc:
        raise ModelFormatError(str(exc), "weights") from exc
    nmap = None
    if mu is not None:
        if mu.shape[0] != hp.n_u:
            raise ModelFormatError(f"mu has {mu.shape[0]} entries, expected {hp.n_u}", "mu")
        nmap = NormalizationMap(mu)
    return model, nmap


def _parse_vector(text: str, field: str) -> np.ndarray:
    try:
        return np.array([float(tok) for tok in text.split()], dtype=np.float64)
    except ValueError as exc:
        raise ModelFormatError(f"cannot parse vector: {exc}", field) from exc


def _collect_rows(rows: dict[int, np.ndarray], count: int, field: str) -> np.ndarray:
    if sorted(rows) != list(range(count)):
        raise ModelFormatError(f"expected rows 0..{count - 1}, found {sorted(rows)}", field)
    widths = {r.shape[0] for r in rows.values()}
    if len(widths) != 1:
        raise ModelFormatError("rows have inconsistent widths", field)
    return np.stack([rows[i] for i in range(count)])


def _atomic_write_bytes(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
