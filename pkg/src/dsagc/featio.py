"""Feature extraction, smoothing, datasets, synthetic data and LOSO splits.

Container format (``.feat``)::

    8 bytes   magic b"DSAGCFT1"
    4 bytes   little-endian uint32 header length H
    H bytes   UTF-8 JSON header {format, version, manifest, payload_shape}
    R*N*C     float64 LE differential entropy, record-major, channel-major, band-minor
    R         int16 LE labels (-1 = unlabeled)
    3*R       int32 LE subject, trial and segment ids
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.linalg import expm
from scipy.ndimage import uniform_filter1d

from dsagc.errors import (
    ConfigError,
    DimensionMismatchError,
    InputError,
    MalformedHeaderError,
    ShapeError,
    TruncatedPayloadError,
)

MAGIC = b"DSAGCFT1"
FORMAT_VERSION = 1
VARIANCE_FLOOR = 1e-12
UNLABELED = -1

SEED_CHANNELS = (
    "FP1 FPZ FP2 AF3 AF4 F7 F5 F3 F1 FZ F2 F4 F6 F8 FT7 FC5 FC3 FC1 FCZ FC2 FC4 FC6 FT8 "
    "T7 C5 C3 C1 CZ C2 C4 C6 T8 TP7 CP5 CP3 CP1 CPZ CP2 CP4 CP6 TP8 P7 P5 P3 P1 PZ P2 P4 "
    "P6 P8 PO7 PO5 PO3 POZ PO4 PO6 PO8 CB1 O1 OZ O2 CB2"
).split()
DEFAULT_BANDS = ((1.0, 4.0), (4.0, 8.0), (8.0, 14.0), (14.0, 31.0), (31.0, 51.0))
DEFAULT_FS = 200.0


def default_channels(n: int) -> tuple[str, ...]:
    if n == len(SEED_CHANNELS):
        return tuple(SEED_CHANNELS)
    return tuple(f"CH{i:02d}" for i in range(n))


@dataclass(frozen=True)
class DatasetManifest:
    n_subjects: int
    n_trials: int
    channels: tuple[str, ...]
    bands: tuple[tuple[float, float], ...]
    fs: float = DEFAULT_FS
    n_classes: int = 3

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(str(c) for c in self.channels))
        object.__setattr__(self, "bands", tuple((float(lo), float(hi)) for lo, hi in self.bands))
        if not self.bands or not self.channels:
            raise ConfigError("manifest needs at least one channel and one band")
        if any(lo >= hi or lo < 0 for lo, hi in self.bands):
            raise ConfigError(f"invalid band edges {self.bands}")
        if self.fs <= 2 * max(hi for _, hi in self.bands):
            raise ConfigError(f"fs={self.fs} must exceed twice the highest band edge")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def n_bands(self) -> int:
        return len(self.bands)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["bands"] = [list(b) for b in self.bands]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        return cls(
            n_subjects=int(d["n_subjects"]),
            n_trials=int(d["n_trials"]),
            channels=tuple(d["channels"]),
            bands=tuple(tuple(b) for b in d["bands"]),
            fs=float(d["fs"]),
            n_classes=int(d["n_classes"]),
        )


@dataclass(frozen=True)
class FeatureRecord:
    subject: int
    trial: int
    segment: int
    de: np.ndarray
    label: int | None = None


def _frozen(a: np.ndarray, dtype) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=dtype).copy()
    a.setflags(write=False)
    return a


class Dataset:
    """Immutable columnar store of feature records."""

    def __init__(self, manifest: DatasetManifest, de, subject, trial, segment, label=None):
        de = np.asarray(de, dtype=np.float64)
        if de.ndim != 3:
            raise ShapeError(f"de must be (records, channels, bands), got {de.shape}")
        if de.shape[1:] != (manifest.n_channels, manifest.n_bands):
            raise DimensionMismatchError(
                f"de shape {de.shape[1:]} does not match manifest "
                f"({manifest.n_channels} channels, {manifest.n_bands} bands)"
            )
        if not np.isfinite(de).all():
            raise InputError("differential entropy values must be finite")
        R = de.shape[0]
        if label is None:
            label = np.full(R, UNLABELED)
        cols = [np.asarray(c) for c in (subject, trial, segment, label)]
        if any(c.shape != (R,) for c in cols):
            raise ShapeError("id and label columns must have one entry per record")
        lab = cols[3]
        if ((lab < UNLABELED) | (lab >= manifest.n_classes)).any():
            raise InputError(f"labels must lie in {{-1..{manifest.n_classes - 1}}}")
        self.manifest = manifest
        self.de = _frozen(de, np.float64)
        self.subject = _frozen(cols[0], np.int64)
        self.trial = _frozen(cols[1], np.int64)
        self.segment = _frozen(cols[2], np.int64)
        self.label = _frozen(lab, np.int64)

    def __len__(self) -> int:
        return self.de.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.manifest == other.manifest and all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("de", "subject", "trial", "segment", "label")
        )

    def __repr__(self) -> str:
        return (
            f"Dataset({len(self)} records, {len(self.subjects())} subjects, "
            f"{self.manifest.n_channels}x{self.manifest.n_bands} features)"
        )

    def records(self) -> Iterator[FeatureRecord]:
        for i in range(len(self)):
            lab = int(self.label[i])
            yield FeatureRecord(
                int(self.subject[i]), int(self.trial[i]), int(self.segment[i]),
                self.de[i], None if lab == UNLABELED else lab,
            )

    def subjects(self) -> list[int]:
        return sorted(np.unique(self.subject).tolist())

    @property
    def is_labeled(self) -> bool:
        return len(self) > 0 and bool((self.label != UNLABELED).all())

    def select(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(
            self.manifest, self.de[mask], self.subject[mask], self.trial[mask],
            self.segment[mask], self.label[mask],
        )

    def for_subjects(self, subjects: Sequence[int]) -> "Dataset":
        return self.select(np.isin(self.subject, list(subjects)))

    def without_labels(self) -> "Dataset":
        return Dataset(self.manifest, self.de, self.subject, self.trial, self.segment, None)

    @staticmethod
    def concat(parts: Sequence["Dataset"]) -> "Dataset":
        if not parts:
            raise ConfigError("cannot concatenate zero datasets")
        base = parts[0].manifest
        for p in parts[1:]:
            m = p.manifest
            if (m.channels, m.bands, m.fs, m.n_classes) != (base.channels, base.bands, base.fs,
                                                            base.n_classes):
                raise DimensionMismatchError("datasets have incompatible manifests")
        subj = np.concatenate([p.subject for p in parts])
        manifest = DatasetManifest(
            n_subjects=len(np.unique(subj)),
            n_trials=max(p.manifest.n_trials for p in parts),
            channels=base.channels, bands=base.bands, fs=base.fs, n_classes=base.n_classes,
        )
        return Dataset(
            manifest,
            np.concatenate([p.de for p in parts]),
            subj,
            np.concatenate([p.trial for p in parts]),
            np.concatenate([p.segment for p in parts]),
            np.concatenate([p.label for p in parts]),
        )


# ---------------------------------------------------------------- features


def band_variance(window: np.ndarray, fs: float, bands) -> np.ndarray:
    """Per-channel band-limited variance from the one-sided FFT periodogram.

    Bands are half-open ``[low, high)``. Summed over all bins the periodogram
    reproduces the window's (biased) variance exactly.
    """
    n = window.shape[-1]
    x = window - window.mean(axis=-1, keepdims=True)
    spec = np.abs(np.fft.rfft(x, axis=-1)) ** 2 / n**2
    spec[..., 1:] *= 2.0
    if n % 2 == 0:
        spec[..., -1] /= 2.0  # Nyquist bin appears once in the two-sided spectrum
    freqs = np.fft.rfftfreq(n, d=1.0 / fs)
    out = np.empty(window.shape[:-1] + (len(bands),))
    for i, (lo, hi) in enumerate(bands):
        sel = (freqs >= lo) & (freqs < hi)
        out[..., i] = spec[..., sel].sum(axis=-1)
    return out


def extract_de(raw_window, manifest: DatasetManifest) -> np.ndarray:
    """Differential entropy ``0.5 ln(2 pi e var_band)`` of a one-second window.

    ``raw_window`` has shape (n_channels, fs) samples.
    """
    w = np.asarray(raw_window, dtype=np.float64)
    n_samples = int(round(manifest.fs))
    if w.ndim != 2 or w.shape != (manifest.n_channels, n_samples):
        raise ShapeError(
            f"window must be ({manifest.n_channels}, {n_samples}) samples, got {w.shape}"
        )
    if not np.isfinite(w).all():
        raise InputError("raw window contains non-finite samples")
    var = np.maximum(band_variance(w, manifest.fs, manifest.bands), VARIANCE_FLOOR)
    return 0.5 * np.log(2.0 * np.pi * np.e * var)


@dataclass(frozen=True)
class SmoothingConfig:
    method: str = "kalman"  # or "moving_average"
    ratio: float = 10.0  # observation / process noise
    width: int = 5

    def __post_init__(self):
        if self.method not in ("kalman", "moving_average", "none"):
            raise ConfigError(f"unknown smoothing method {self.method!r}")
        if self.ratio <= 0 or self.width < 1:
            raise ConfigError("smoothing ratio must be > 0 and width >= 1")


def kalman_smooth(series: np.ndarray, ratio: float = 10.0) -> np.ndarray:
    """Rauch-Tung-Striebel smoother for a random walk observed in noise.

    Works along axis 0; process variance 1, observation variance ``ratio``,
    prior centred on the first observation with variance ``ratio``.
    """
    y = np.asarray(series, dtype=np.float64)
    T = y.shape[0]
    q, r = 1.0, float(ratio)
    m_f = np.empty_like(y)
    p_f = np.empty(T)
    m_pred, p_pred = y[0], r
    p_preds = np.empty(T)
    for t in range(T):
        if t > 0:
            m_pred, p_pred = m_f[t - 1], p_f[t - 1] + q
        p_preds[t] = p_pred
        gain = p_pred / (p_pred + r)
        m_f[t] = m_pred + gain * (y[t] - m_pred)
        p_f[t] = (1.0 - gain) * p_pred
    m_s = m_f.copy()
    for t in range(T - 2, -1, -1):
        c = p_f[t] / p_preds[t + 1]
        m_s[t] = m_f[t] + c * (m_s[t + 1] - m_f[t])
    return m_s


def lds_smooth(series, cfg: SmoothingConfig | None = None) -> np.ndarray:
    """Smooth DE values along segments (axis 0) independently per trailing index."""
    cfg = cfg or SmoothingConfig()
    y = np.asarray(series, dtype=np.float64)
    if y.size == 0:
        raise InputError("cannot smooth an empty series")
    if not np.isfinite(y).all():
        raise InputError("series contains non-finite values")
    if cfg.method == "none" or y.shape[0] == 1:
        return y.copy()
    if cfg.method == "kalman":
        return kalman_smooth(y, cfg.ratio)
    return uniform_filter1d(y, size=cfg.width, axis=0, mode="reflect")


def extract_trial(raw: np.ndarray, manifest: DatasetManifest,
                  smoothing: SmoothingConfig | None = None) -> np.ndarray:
    """Cut a (channels, samples) recording into 1 s windows -> smoothed (segments, N, C) DE."""
    n = int(round(manifest.fs))
    n_seg = raw.shape[1] // n
    if n_seg == 0:
        raise ShapeError(f"trial shorter than one {n}-sample window")
    de = np.stack([extract_de(raw[:, i * n:(i + 1) * n], manifest) for i in range(n_seg)])
    return lds_smooth(de, smoothing)


# ---------------------------------------------------------------- synthetic


CLASS_EFFECT = 0.5


@dataclass(frozen=True)
class SyntheticConfig:
    n_subjects: int = 15
    n_trials: int = 15
    segments_per_trial: int = 20
    n_channels: int = 62
    n_bands: int = 5
    n_classes: int = 3
    shift_strength: float = 0.5
    noise_sigma: float = 0.3

    def __post_init__(self):
        counts = (self.n_subjects, self.n_trials, self.segments_per_trial,
                  self.n_channels, self.n_bands)
        if min(counts) < 1:
            raise ConfigError("all synthetic counts must be >= 1")
        if self.n_classes < 2:
            raise ConfigError("n_classes must be >= 2")
        if self.shift_strength < 0 or self.noise_sigma < 0:
            raise ConfigError("shift_strength and noise_sigma must be >= 0")

    @property
    def n_records(self) -> int:
        return self.n_subjects * self.n_trials * self.segments_per_trial


def generate_synthetic(cfg: SyntheticConfig, seed: int) -> Dataset:
    """Cross-subject data with a private channel-mixing rotation and bias per subject.

    Trial ``t`` carries class ``t mod C``. A record is a shared baseline plus a
    class effect of scale ``CLASS_EFFECT``, distorted by the subject's
    rotation, offset by the subject's per-channel bias (scale
    ``shift_strength``) and perturbed by isotropic Gaussian noise.
    """
    rng = np.random.default_rng(seed)
    N, C = cfg.n_channels, cfg.n_bands
    baseline = rng.standard_normal((N, C))
    protos = baseline + CLASS_EFFECT * rng.standard_normal((cfg.n_classes, N, C))
    mixes, biases = [], []
    for _ in range(cfg.n_subjects):
        g = rng.standard_normal((N, N))
        skew = (g - g.T) / np.sqrt(2.0 * N)
        mixes.append(expm(cfg.shift_strength * skew) if cfg.shift_strength else np.eye(N))
        biases.append(cfg.shift_strength * rng.standard_normal(N))
    S, M, K = cfg.n_subjects, cfg.n_trials, cfg.segments_per_trial
    subject = np.repeat(np.arange(S), M * K)
    trial = np.tile(np.repeat(np.arange(M), K), S)
    segment = np.tile(np.arange(K), S * M)
    label = trial % cfg.n_classes
    noise = rng.standard_normal((S * M * K, N, C)) * cfg.noise_sigma
    de = np.empty((S * M * K, N, C))
    for s in range(S):
        sel = subject == s
        clean = np.einsum("ij,cjk->cik", mixes[s], protos) + biases[s][None, :, None]
        de[sel] = clean[label[sel]] + noise[sel]
    manifest = DatasetManifest(
        n_subjects=S, n_trials=M, channels=default_channels(N),
        bands=DEFAULT_BANDS[:C] if C <= 5 else tuple((i, i + 1.0) for i in range(C)),
        fs=DEFAULT_FS, n_classes=cfg.n_classes,
    )
    return Dataset(manifest, de, subject, trial, segment, label)


# ---------------------------------------------------------------- LOSO


@dataclass(frozen=True)
class DomainSplit:
    target_subject: int
    n_unlabeled: int
    S: Dataset
    U: Dataset
    T: Dataset = field(repr=False)

    def subjects(self) -> dict[str, list[int]]:
        return {"S": self.S.subjects(), "U": self.U.subjects(), "T": self.T.subjects()}

    def to_manifest(self) -> dict:
        return {"target_subject": self.target_subject, "N": self.n_unlabeled,
                **self.subjects(),
                "sizes": {"S": len(self.S), "U": len(self.U), "T": len(self.T)}}


def unlabeled_subjects(subjects: Sequence[int], target: int, n_unlabeled: int) -> list[int]:
    """The ``n_unlabeled`` subjects cyclically following ``target`` in id order."""
    order = sorted(subjects)
    pos = order.index(target)
    return [order[(pos + i) % len(order)] for i in range(1, n_unlabeled + 1)]


def partition_loso(dataset: Dataset, target_subject: int, n_unlabeled: int,
                   seed: int | None = None) -> DomainSplit:
    """Leave-one-subject-out split with ``n_unlabeled`` label-stripped source subjects.

    The selection rule is deterministic, so ``seed`` does not influence it;
    it is accepted for interface symmetry with the other protocol calls.
    """
    subjects = dataset.subjects()
    if target_subject not in subjects:
        raise ConfigError(f"target subject {target_subject} not in dataset")
    if not 0 <= n_unlabeled <= len(subjects) - 2:
        raise ConfigError(
            f"n_unlabeled must be in [0, {len(subjects) - 2}] for {len(subjects)} subjects"
        )
    u_subj = unlabeled_subjects(subjects, target_subject, n_unlabeled)
    s_subj = [s for s in subjects if s != target_subject and s not in u_subj]
    return DomainSplit(
        target_subject=target_subject,
        n_unlabeled=n_unlabeled,
        S=dataset.for_subjects(s_subj),
        U=dataset.for_subjects(u_subj).without_labels(),
        T=dataset.for_subjects([target_subject]),
    )


# ---------------------------------------------------------------- container


def save_features(dataset: Dataset, path) -> None:
    header = {
        "format": "dsagc-features",
        "version": FORMAT_VERSION,
        "manifest": dataset.manifest.to_dict(),
        "payload_shape": list(dataset.de.shape),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(dataset.de.astype("<f8").tobytes())
        fh.write(dataset.label.astype("<i2").tobytes())
        for col in (dataset.subject, dataset.trial, dataset.segment):
            fh.write(col.astype("<i4").tobytes())


def _read_container(raw: bytes, name: str) -> Dataset:
    if len(raw) < len(MAGIC) + 4 or raw[: len(MAGIC)] != MAGIC:
        raise MalformedHeaderError(f"{name}: not a feature container (bad magic)")
    (hlen,) = struct.unpack("<I", raw[len(MAGIC): len(MAGIC) + 4])
    start = len(MAGIC) + 4
    if start + hlen > len(raw):
        raise MalformedHeaderError(f"{name}: header length {hlen} exceeds file size")
    try:
        header = json.loads(raw[start: start + hlen].decode("utf-8"))
        if header.get("format") != "dsagc-features":
            raise ValueError("wrong format tag")
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported version {header.get('version')}")
        manifest = DatasetManifest.from_dict(header["manifest"])
        R, N, C = (int(v) for v in header["payload_shape"])
    except (ValueError, KeyError, TypeError, UnicodeDecodeError, ConfigError) as exc:
        raise MalformedHeaderError(f"{name}: malformed header ({exc})") from exc
    if (N, C) != (manifest.n_channels, manifest.n_bands):
        raise DimensionMismatchError(
            f"{name}: payload is {N} channels x {C} bands but manifest declares "
            f"{manifest.n_channels} x {manifest.n_bands}"
        )
    body = memoryview(raw)[start + hlen:]
    need = R * N * C * 8 + R * 2 + 3 * R * 4
    if len(body) < need:
        raise TruncatedPayloadError(f"{name}: payload has {len(body)} bytes, expected {need}")
    if len(body) > need:
        raise DimensionMismatchError(f"{name}: {len(body) - need} trailing bytes after payload")
    off = 0
    de = np.frombuffer(body, "<f8", R * N * C, off).reshape(R, N, C)
    off += R * N * C * 8
    label = np.frombuffer(body, "<i2", R, off)
    off += R * 2
    ids = []
    for _ in range(3):
        ids.append(np.frombuffer(body, "<i4", R, off))
        off += R * 4
    return Dataset(manifest, de, ids[0], ids[1], ids[2], label)


def load_features(path) -> Dataset:
    """Load one container file, or a directory holding one ``.feat`` file per subject."""
    path = Path(path)
    if path.is_dir():
        files = sorted(path.glob("*.feat"))
        if not files:
            raise FileNotFoundError(f"no .feat files in {path}")
        return Dataset.concat([_read_container(f.read_bytes(), f.name) for f in files])
    return _read_container(path.read_bytes(), path.name)


def save_feature_dir(dataset: Dataset, directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for s in dataset.subjects():
        part = dataset.for_subjects([s])
        part = Dataset(
            DatasetManifest(1, dataset.manifest.n_trials, dataset.manifest.channels,
                            dataset.manifest.bands, dataset.manifest.fs,
                            dataset.manifest.n_classes),
            part.de, part.subject, part.trial, part.segment, part.label,
        )
        p = directory / f"subject_{s:03d}.feat"
        save_features(part, p)
        out.append(p)
    return out


def load_seed_de(directory, feature_key: str = "de_LDS", session: int = 0,
                 label_file: str = "label.mat") -> Dataset:
    """Load SEED-style precomputed DE features (``ExtractedFeatures`` layout).

    Each subject file ``<subject>_<date>.mat`` holds ``{feature_key}{k}`` arrays
    of shape (62, segments, 5) for trials k = 1..M; ``label.mat`` holds the
    per-trial labels in {-1, 0, 1}, remapped to {0, 1, 2}. With several
    sessions per subject, ``session`` picks one by sorted date order.
    """
    from scipy.io import loadmat

    directory = Path(directory)
    labels = np.asarray(loadmat(directory / label_file)["label"]).ravel().astype(int)
    labels = labels - labels.min()
    by_subject: dict[int, list[Path]] = {}
    for f in sorted(directory.glob("*.mat")):
        if f.name == label_file:
            continue
        head = f.stem.split("_")[0]
        if head.isdigit():
            by_subject.setdefault(int(head), []).append(f)
    if not by_subject:
        raise FileNotFoundError(f"no SEED subject files in {directory}")
    de, subj, trial, seg, lab = [], [], [], [], []
    n_channels = None
    for sid, files in sorted(by_subject.items()):
        files = sorted(files, key=lambda p: p.stem.split("_", 1)[-1])
        mat = loadmat(files[min(session, len(files) - 1)])
        for k in range(1, len(labels) + 1):
            arr = np.asarray(mat[f"{feature_key}{k}"], dtype=np.float64)  # (N, T, C)
            arr = np.transpose(arr, (1, 0, 2))
            n_channels = arr.shape[1]
            de.append(arr)
            subj.append(np.full(len(arr), sid - 1))
            trial.append(np.full(len(arr), k - 1))
            seg.append(np.arange(len(arr)))
            lab.append(np.full(len(arr), labels[k - 1]))
    de_all = np.concatenate(de)
    manifest = DatasetManifest(
        n_subjects=len(by_subject), n_trials=len(labels),
        channels=default_channels(n_channels),
        bands=DEFAULT_BANDS[: de_all.shape[2]], fs=DEFAULT_FS,
        n_classes=int(labels.max()) + 1,
    )
    return Dataset(manifest, de_all, np.concatenate(subj), np.concatenate(trial),
                   np.concatenate(seg), np.concatenate(lab))
