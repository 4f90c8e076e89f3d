"""CSI recordings: synthesis, binary I/O, downsampling, fidelity metrics and windowing."""

from __future__ import annotations

import csv
import enum
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from csihar import synthetic
from csihar.errors import ContractError, FormatError
from csihar.fft import magnitude_spectrum

ACTIVITIES = synthetic.ACTIVITIES
UNLABELED = 255
MAGIC = b"CSI1"
_HEADER = struct.Struct("<4sIIIfB")


class DownsampleMode(str, enum.Enum):
    MEAN = "mean"
    MEDIAN = "median"
    MIN = "min"
    MAX = "max"


@dataclass
class CsiRecording:
    """Magnitude tensor [frames][subcarriers][antennas] sampled at ``sample_rate`` Hz."""

    magnitudes: np.ndarray
    sample_rate: float
    activity_label: str | None = None

    def __post_init__(self):
        m = np.asarray(self.magnitudes, dtype=np.float64)
        if m.ndim != 3 or 0 in m.shape:
            raise ContractError(f"magnitudes must be a non-empty 3-d array, got shape {m.shape}")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ContractError("magnitudes must be finite and non-negative")
        if not self.sample_rate > 0:
            raise ContractError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.activity_label is not None and self.activity_label not in ACTIVITIES:
            raise ContractError(f"unknown activity label {self.activity_label!r}")
        self.magnitudes = m

    @property
    def frames(self) -> int:
        return self.magnitudes.shape[0]

    @property
    def subcarriers(self) -> int:
        return self.magnitudes.shape[1]

    @property
    def antennas(self) -> int:
        return self.magnitudes.shape[2]


@dataclass
class PoseSequence:
    """Keypoints [frames][17][2] at ``frame_rate`` Hz."""

    keypoints: np.ndarray
    frame_rate: float = 30.0

    def __post_init__(self):
        kp = np.asarray(self.keypoints, dtype=np.float64)
        if kp.ndim != 3 or kp.shape[1:] != (17, 2):
            raise ContractError(f"keypoints must have shape [frames][17][2], got {kp.shape}")
        if not np.all(np.isfinite(kp)):
            raise ContractError("keypoints must be finite")
        self.keypoints = kp

    @property
    def frames(self) -> int:
        return self.keypoints.shape[0]


@dataclass
class FidelityReport:
    mse_mean: float
    mse_std: float
    mse_norm1_diff: float
    scope: str = "full"
    window_len: int | None = None
    per_window: list[tuple[float, float, float]] = field(default_factory=list)


@dataclass
class Window:
    data: np.ndarray  # [frames][subcarriers][antennas]
    label: str | None
    offset: int


def synth_recording(
    activity: str,
    duration_s: float = 80.0,
    sample_rate: float = 150.0,
    subcarriers: int = 64,
    antennas: int = 4,
    seed: int = 0,
    noise_std: float = 0.3,
    noise_corr: float = 0.95,
    pose_rate: float = 30.0,
) -> tuple[CsiRecording, PoseSequence]:
    """Synthetic CSI recording and the time-aligned pose sequence for one activity.

    Magnitudes are rounded to float32 so that the binary file format stores them
    exactly.
    """
    if activity not in ACTIVITIES:
        raise ContractError(f"unknown activity {activity!r}; expected one of {ACTIVITIES}")
    if not duration_s > 0 or subcarriers < 1 or antennas < 1 or not sample_rate > 0:
        raise ContractError("duration, sample rate and counts must be positive")
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate
    angles = synthetic.limb_angle_series(activity, t, seed)
    mags = synthetic.csi_response(angles, subcarriers, antennas, seed, noise_std, noise_corr)
    mags = mags.astype(np.float32).astype(np.float64)
    n_pose = int(round(duration_s * pose_rate))
    tp = np.arange(n_pose) / pose_rate
    kp = synthetic.pose_from_angles(synthetic.limb_angle_series(activity, tp, seed))
    return CsiRecording(mags, float(np.float32(sample_rate)), activity), PoseSequence(kp, pose_rate)


# -- binary format ---------------------------------------------------------------


def save_recording(rec: CsiRecording, path) -> None:
    """Write the little-endian CSI1 format (magnitudes as float32)."""
    code = UNLABELED if rec.activity_label is None else ACTIVITIES.index(rec.activity_label)
    header = _HEADER.pack(MAGIC, rec.frames, rec.subcarriers, rec.antennas, rec.sample_rate, code)
    payload = np.ascontiguousarray(rec.magnitudes, dtype="<f4").tobytes()
    Path(path).write_bytes(header + payload)


def load_recording(path) -> CsiRecording:
    raw = Path(path).read_bytes()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}", offset=0)
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header", offset=len(raw))
    _, frames, subc, ant, rate, code = _HEADER.unpack_from(raw)
    expected = frames * subc * ant * 4
    payload = raw[_HEADER.size :]
    if len(payload) != expected:
        raise FormatError(
            f"{path}: payload holds {len(payload)} bytes, header implies "
            f"{frames}x{subc}x{ant} float32 = {expected}",
            offset=_HEADER.size + min(len(payload), expected),
        )
    if code != UNLABELED and code >= len(ACTIVITIES):
        raise FormatError(f"{path}: unknown label code {code}", offset=_HEADER.size - 1)
    mags = np.frombuffer(payload, dtype="<f4").reshape(frames, subc, ant).astype(np.float64)
    label = None if code == UNLABELED else ACTIVITIES[code]
    return CsiRecording(mags, float(rate), label)


def save_pose_csv(pose: PoseSequence, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame"] + [f"kp{i}_{c}" for i in range(17) for c in "xy"])
        for i, frame in enumerate(pose.keypoints):
            w.writerow([i] + [repr(float(v)) for v in frame.ravel()])


def load_pose_csv(path, frame_rate: float = 30.0) -> PoseSequence:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    expected = ["frame"] + [f"kp{i}_{c}" for i in range(17) for c in "xy"]
    if not rows or rows[0] != expected:
        raise FormatError(f"{path}: pose CSV header does not match the 17-keypoint layout")
    data = np.array([[float(v) for v in r[1:]] for r in rows[1:]], dtype=np.float64)
    return PoseSequence(data.reshape(-1, 17, 2), frame_rate)


# -- downsampling ----------------------------------------------------------------


def downsample(rec: CsiRecording, factor: int, mode: DownsampleMode | str) -> CsiRecording:
    """Aggregate disjoint groups of ``factor`` frames; the remainder is dropped."""
    mode = DownsampleMode(mode)
    if factor < 1:
        raise ContractError(f"downsample factor must be >= 1, got {factor}")
    if rec.frames < factor:
        raise ContractError(f"recording has {rec.frames} frames, fewer than factor {factor}")
    if factor == 1:
        return CsiRecording(rec.magnitudes.copy(), rec.sample_rate, rec.activity_label)
    n = rec.frames // factor
    groups = rec.magnitudes[: n * factor].reshape(n, factor, rec.subcarriers, rec.antennas)
    reducer = {
        DownsampleMode.MEAN: np.mean,
        DownsampleMode.MEDIAN: np.median,
        DownsampleMode.MIN: np.min,
        DownsampleMode.MAX: np.max,
    }[mode]
    return CsiRecording(reducer(groups, axis=1), rec.sample_rate / factor, rec.activity_label)


def infer_factor(original: CsiRecording, downsampled: CsiRecording) -> int:
    if (original.subcarriers, original.antennas) != (downsampled.subcarriers, downsampled.antennas):
        raise ContractError(
            f"subcarrier/antenna mismatch: {original.magnitudes.shape[1:]} vs "
            f"{downsampled.magnitudes.shape[1:]}"
        )
    factor = int(round(original.sample_rate / downsampled.sample_rate))
    if factor < 1 or downsampled.frames != original.frames // factor:
        raise ContractError(
            f"downsampled frames {downsampled.frames} != floor({original.frames}/{factor})"
        )
    return factor


def _series_stats(m: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # m: [frames][subcarriers][antennas] -> per-series mean, std, norm1 of diffs
    return m.mean(axis=0), m.std(axis=0), np.abs(np.diff(m, axis=0)).sum(axis=0)


def _mse_triplet(a: np.ndarray, b: np.ndarray) -> tuple[float, float, float]:
    sa, sb = _series_stats(a), _series_stats(b)
    return tuple(float(np.mean((x - y) ** 2)) for x, y in zip(sa, sb))


def fidelity_metrics(
    original: CsiRecording, downsampled: CsiRecording, window_len: int | None = None
) -> FidelityReport:
    """MSE between per-(subcarrier, antenna) statistics of the two signals.

    With ``window_len`` (in original frames) the metrics are computed for each
    aligned window pair and the report's top-level values are their averages.
    """
    factor = infer_factor(original, downsampled)
    if window_len is None:
        return FidelityReport(*_mse_triplet(original.magnitudes, downsampled.magnitudes))
    if window_len % factor or window_len // factor < 2:
        raise ContractError(f"window_len {window_len} must be a multiple of factor {factor} (>= 2 groups)")
    dl = window_len // factor
    count = min(original.frames // window_len, downsampled.frames // dl)
    if count < 1:
        raise ContractError(f"window_len {window_len} exceeds the recording")
    per = [
        _mse_triplet(
            original.magnitudes[w * window_len : (w + 1) * window_len],
            downsampled.magnitudes[w * dl : (w + 1) * dl],
        )
        for w in range(count)
    ]
    avg = np.mean(np.array(per), axis=0)
    return FidelityReport(float(avg[0]), float(avg[1]), float(avg[2]), "windowed", window_len, per)


def spectrum_mse(
    original: CsiRecording, downsampled: CsiRecording
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-frequency squared difference of the subcarrier-mean magnitude spectra.

    Returns ``(freqs, sq_diff, orig_mag, down_mag)`` over the downsampled band
    [0, Nyquist].  The original spectrum is truncated to that band and linearly
    interpolated onto the downsampled frequency grid (the two zero-padded
    lengths generally give different bin spacings).
    """
    infer_factor(original, downsampled)
    if downsampled.frames < 2:
        raise ContractError("spectrum comparison needs at least 2 frames")
    so = original.magnitudes.mean(axis=(1, 2))
    sd = downsampled.magnitudes.mean(axis=(1, 2))
    fo, mo = magnitude_spectrum(so, original.sample_rate)
    fd, md = magnitude_spectrum(sd, downsampled.sample_rate)
    # DC maps to DC; interpolating across it would smear the level into low bins
    mo_on_fd = np.empty_like(md)
    mo_on_fd[0] = mo[0]
    mo_on_fd[1:] = np.interp(fd[1:], fo[1:], mo[1:])
    return fd, (mo_on_fd - md) ** 2, mo_on_fd, md


# -- windowing -------------------------------------------------------------------


def make_windows(rec: CsiRecording, window_frames: int, stride: int) -> list[Window]:
    if stride < 1 or window_frames < 1:
        raise ContractError("window length and stride must be >= 1")
    if window_frames > rec.frames:
        raise ContractError(f"window of {window_frames} frames exceeds recording of {rec.frames}")
    count = (rec.frames - window_frames) // stride + 1
    return [
        Window(rec.magnitudes[i * stride : i * stride + window_frames], rec.activity_label, i * stride)
        for i in range(count)
    ]
