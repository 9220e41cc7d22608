"""Audio ingestion and 30-second segmentation."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.io.wavfile

from .errors import DataError

CLASS_LABELS = ("tug", "passenger", "cargo", "tanker")
DEFAULT_SAMPLE_RATE = 32000

PCM16_SCALE = 32768.0


@dataclass
class AudioClip:
    """Labeled waveform with recording identity and temporal offset.

    ``samples`` is a 1D float array with amplitudes in [-1, 1];
    ``start_offset`` is the clip's position (seconds) inside its source
    recording.
    """

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    class_label: str = ""
    recording_id: str = ""
    start_offset: float = 0.0
    vessel_id: str = field(default="")

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)
        if self.sample_rate <= 0:
            raise DataError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def load_wav(path, class_label: str = "", recording_id: str = "") -> AudioClip:
    """Read a RIFF/WAVE file (PCM16 or float32; first channel of multichannel).

    PCM16 samples are scaled by 1/32768; float samples are clipped into
    [-1, 1].
    """
    path = os.fspath(path)
    try:
        rate, data = scipy.io.wavfile.read(path)
    except Exception as exc:
        raise DataError(f"{path}: unreadable WAV file ({exc})") from exc
    if data.ndim > 1:
        data = data[:, 0]
    if data.size == 0:
        raise DataError(f"{path}: zero-length audio")
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / PCM16_SCALE
    elif data.dtype in (np.float32, np.float64):
        samples = np.clip(data.astype(np.float32), -1.0, 1.0)
    else:
        raise DataError(
            f"{path}: unsupported sample encoding {data.dtype} "
            "(expected PCM 16-bit or 32-bit float)"
        )
    if not recording_id:
        recording_id = os.path.splitext(os.path.basename(path))[0]
    return AudioClip(
        samples=samples,
        sample_rate=int(rate),
        class_label=class_label,
        recording_id=recording_id,
    )


def save_wav(path, clip: AudioClip) -> None:
    """Write a clip as PCM16."""
    pcm = np.round(np.clip(clip.samples, -1.0, 1.0) * 32767.0).astype(np.int16)
    scipy.io.wavfile.write(os.fspath(path), clip.sample_rate, pcm)


def segment(clip: AudioClip, seg_seconds: float = 30.0, overlap_seconds: float = 15.0):
    """Cut a clip into fixed-length segments with the given overlap.

    Segment k starts at k * (seg_seconds - overlap_seconds); a trailing
    remainder shorter than one segment is dropped.  Each segment carries its
    absolute offset into the source recording.
    """
    if seg_seconds <= overlap_seconds:
        raise DataError(
            f"segment length {seg_seconds}s must exceed overlap {overlap_seconds}s"
        )
    sr = clip.sample_rate
    seg_n = int(round(seg_seconds * sr))
    hop_n = int(round((seg_seconds - overlap_seconds) * sr))
    n = len(clip.samples)
    if n < seg_n:
        raise DataError(
            f"{clip.recording_id}: clip of {n / sr:.1f}s is shorter than one "
            f"{seg_seconds}s segment"
        )
    out = []
    start = 0
    while start + seg_n <= n:
        out.append(
            replace(
                clip,
                samples=clip.samples[start : start + seg_n].copy(),
                start_offset=clip.start_offset + start / sr,
            )
        )
        start += hop_n
    return out


def segment_offsets(duration_s: float, seg_seconds: float = 30.0,
                    overlap_seconds: float = 15.0):
    """Offsets (seconds) produced by :func:`segment` without touching audio."""
    hop = seg_seconds - overlap_seconds
    out = []
    start = 0.0
    k = 0
    while start + seg_seconds <= duration_s + 1e-9:
        out.append(start)
        k += 1
        start = k * hop
    return out
