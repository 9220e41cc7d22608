"""Synthetic ship-radiated noise.

Each clip is the sum of three source components: a blade-rate harmonic comb
(shaft rate x blade count and multiples), discrete engine harmonics, and
Gaussian broadband noise with a dB/octave spectral tilt.  All tonal lines
share a slow linear rate slew (``rate_drift``) so line positions wander
monotonically over the clip, as a vessel's RPM settles or builds.  All three
components are attenuated along the clip's distance track by spherical
spreading (20*log10(r)) plus frequency-dependent absorption alpha(f)*r with
alpha(f) = 0.05*(f/1000)^2 dB/km, then ambient noise is added and the
waveform is peak-normalized.

Class profiles live in a flat key=value config (one section per class); the
shipped defaults give four separable-but-overlapping vessel classes.
"""

from __future__ import annotations

import configparser
import csv
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.fft

from .audio import CLASS_LABELS, DEFAULT_SAMPLE_RATE, AudioClip, save_wav
from .errors import DataError

ABSORPTION_DB_PER_KM_AT_1KHZ = 0.05
NOISE_FLOOR_OFF_DB = -200.0

# frequency below which the broadband tilt curve is held flat (dB/octave
# tilts blow up toward DC otherwise)
TILT_REF_HZ = 100.0
TILT_CLAMP_HZ = 10.0


@dataclass
class SynthProfile:
    """Source description for one synthetic vessel recording."""

    class_label: str
    shaft_rate: float
    n_blades: int
    engine_harmonics: list = field(default_factory=list)  # (freq_hz, rel_amp)
    broadband_tilt: float = -4.0  # dB/octave
    distance_track: list = field(default_factory=lambda: [(0.0, 200.0)])
    noise_floor: float = -50.0  # ambient, dB re full scale, not attenuated
    comb_amplitude: float = 1.0
    broadband_level: float = 0.25  # rms of the shaped broadband component
    n_comb_harmonics: int = 30
    comb_decay: float = 0.7  # harmonic h amplitude scales as h**-comb_decay
    rate_drift: float = 0.0  # fractional frequency slew over the full clip

    def validate(self):
        if self.shaft_rate <= 0:
            raise DataError(f"shaft_rate must be positive, got {self.shaft_rate}")
        if not -0.5 < self.rate_drift < 0.5:
            raise DataError(f"rate_drift must be in (-0.5, 0.5), got {self.rate_drift}")
        if not self.distance_track:
            raise DataError("distance_track is empty")
        times = [t for t, _ in self.distance_track]
        ranges = [r for _, r in self.distance_track]
        if any(t1 <= t0 for t0, t1 in zip(times, times[1:])):
            raise DataError(f"distance_track time stamps not increasing: {times}")
        if any(r <= 0 for r in ranges):
            raise DataError(f"distance_track ranges must be positive: {ranges}")


def absorption_db_per_km(freq_hz):
    """Seawater absorption model alpha(f) = 0.05*(f/1000)^2 dB/km."""
    return ABSORPTION_DB_PER_KM_AT_1KHZ * (np.asarray(freq_hz) / 1000.0) ** 2


def _propagation_gain(freq_hz, range_m):
    """Linear amplitude gain for spreading + absorption at given range(s)."""
    loss_db = 20.0 * np.log10(range_m) + absorption_db_per_km(freq_hz) * (range_m / 1000.0)
    return 10.0 ** (-loss_db / 20.0)


def _tonal_component(freqs, amps, phases, range_t, sr, n, drift=0.0, block=32768):
    """Sum of sinusoids with per-tone, time-varying propagation gain.

    A nonzero ``drift`` turns every tone into a slow linear chirp whose
    instantaneous frequency is f0*(1 + drift*t/T) over the clip length T,
    i.e. phase 2*pi*f0*(t + drift*t^2/(2T)).
    """
    out = np.zeros(n)
    freqs = np.asarray(freqs)[:, None]
    amps = np.asarray(amps)[:, None]
    phases = np.asarray(phases)[:, None]
    total_t = n / sr
    for start in range(0, n, block):
        stop = min(start + block, n)
        t = np.arange(start, stop) / sr
        t_eff = t + drift * t * t / (2.0 * total_t)
        gain = _propagation_gain(freqs, range_t[None, start:stop])
        out[start:stop] = np.sum(
            amps * gain * np.sin(2.0 * np.pi * freqs * t_eff + phases), axis=0
        )
    return out


def _shaped_broadband(rng, n, sr, tilt_db_per_octave, rms):
    """Gaussian noise with a dB/octave tilt, scaled to the requested rms."""
    white = rng.standard_normal(n)
    spec = scipy.fft.rfft(white)
    f = scipy.fft.rfftfreq(n, 1.0 / sr)
    f_eff = np.maximum(f, TILT_CLAMP_HZ)
    shape = 10.0 ** (tilt_db_per_octave * np.log2(f_eff / TILT_REF_HZ) / 20.0)
    shape[0] = 0.0
    shaped = scipy.fft.irfft(spec * shape, n)
    cur = float(np.sqrt(np.mean(shaped**2)))
    if cur > 0:
        shaped *= rms / cur
    return shaped


def _attenuate_broadband(x, range_t, sr, block_seconds=1.0):
    """Apply time-varying spreading+absorption via Hann overlap-add blocks."""
    n = len(x)
    nblock = int(round(block_seconds * sr))
    nblock -= nblock % 2
    hop = nblock // 2
    window = np.hanning(nblock + 1)[:-1]  # periodic Hann: COLA at 50% overlap
    freqs = scipy.fft.rfftfreq(nblock, 1.0 / sr)
    padded = np.concatenate([np.zeros(hop), x, np.zeros(nblock)])
    range_padded = np.concatenate(
        [np.full(hop, range_t[0]), range_t, np.full(nblock, range_t[-1])]
    )
    out = np.zeros_like(padded)
    for start in range(0, len(padded) - nblock + 1, hop):
        r_mid = range_padded[start + hop]
        gain = _propagation_gain(freqs, r_mid)
        seg = scipy.fft.rfft(padded[start : start + nblock] * window)
        out[start : start + nblock] += scipy.fft.irfft(seg * gain, nblock)
    return out[hop : hop + n]


def synth_ship_noise(profile: SynthProfile, duration: float, seed: int,
                     sample_rate: int = DEFAULT_SAMPLE_RATE,
                     normalize: bool = True) -> AudioClip:
    """Render one deterministic clip from a source profile.

    ``seed`` fixes every random draw (tone phases, noise); identical
    (profile, duration, seed) produce bit-identical samples.
    """
    if duration < 30.0:
        raise DataError(f"duration must be >= 30 s, got {duration}")
    profile.validate()
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    t_all = np.arange(n) / sample_rate

    times = np.array([t for t, _ in profile.distance_track])
    ranges = np.array([r for _, r in profile.distance_track])
    range_t = np.interp(t_all, times, ranges)

    freqs, amps = [], []
    blade_rate = profile.shaft_rate * profile.n_blades
    # upward drift raises the final instantaneous frequency of every line
    nyq = 0.45 * sample_rate / (1.0 + max(0.0, profile.rate_drift))
    for h in range(1, profile.n_comb_harmonics + 1):
        f = h * blade_rate
        if f >= nyq:
            break
        freqs.append(f)
        amps.append(profile.comb_amplitude * h ** (-profile.comb_decay))
    for f, a in profile.engine_harmonics:
        if 0 < f < nyq:
            freqs.append(f)
            amps.append(a)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=len(freqs))

    x = np.zeros(n)
    if freqs:
        x += _tonal_component(freqs, amps, phases, range_t, sample_rate, n,
                              drift=profile.rate_drift)
    if profile.broadband_level > 0:
        bb = _shaped_broadband(rng, n, sample_rate, profile.broadband_tilt,
                               profile.broadband_level)
        x += _attenuate_broadband(bb, range_t, sample_rate)
    if profile.noise_floor > NOISE_FLOOR_OFF_DB:
        x += 10.0 ** (profile.noise_floor / 20.0) * rng.standard_normal(n)

    if normalize:
        peak = np.max(np.abs(x))
        if peak > 0:
            x = x / peak
    return AudioClip(
        samples=x.astype(np.float32),
        sample_rate=sample_rate,
        class_label=profile.class_label,
    )


# ---------------------------------------------------------------------------
# Default class profiles and per-recording variation
# ---------------------------------------------------------------------------

# Base parameters per class.  Shaft rates and engine lines step downward from
# the small fast tug to the large slow tanker, but the steps are small
# relative to the per-vessel jitter below: the classes are defined by shifted
# distributions with heavy pairwise overlap, not by disjoint cue bands.
DEFAULT_CLASS_PARAMS = {
    "tug": dict(shaft_rate=3.6, n_blades=3, engine_rpm_hz=78.0,
                n_engine_harmonics=5, engine_amp=0.55, broadband_tilt=-3.5,
                broadband_level=0.30, comb_amplitude=1.0, noise_floor=-39.0),
    "passenger": dict(shaft_rate=2.4, n_blades=4, engine_rpm_hz=62.0,
                      n_engine_harmonics=5, engine_amp=0.45, broadband_tilt=-4.5,
                      broadband_level=0.26, comb_amplitude=1.0, noise_floor=-40.0),
    "cargo": dict(shaft_rate=2.1, n_blades=4, engine_rpm_hz=50.0,
                  n_engine_harmonics=5, engine_amp=0.40, broadband_tilt=-5.5,
                  broadband_level=0.24, comb_amplitude=1.0, noise_floor=-41.0),
    "tanker": dict(shaft_rate=1.44, n_blades=5, engine_rpm_hz=40.0,
                   n_engine_harmonics=5, engine_amp=0.40, broadband_tilt=-6.5,
                   broadband_level=0.22, comb_amplitude=1.0, noise_floor=-42.0),
}

# Per-recording jitter applied to the class base values; each synthetic
# recording stands in for a distinct vessel.  The bands are wide enough that
# even the extreme classes overlap on every single cue, so class identity on
# an unseen vessel is only weakly decodable from average cues, while each
# vessel's exact line positions, tilt and floor form a stable signature —
# recognising a vessel already heard during training is far easier than
# classifying a new one.
JITTER = dict(
    shaft_rate=(0.55, 1.80),         # multiplicative
    engine_rpm=(0.50, 2.00),         # multiplicative
    engine_amp=(0.40, 1.80),         # multiplicative
    broadband_level=(0.50, 1.60),    # multiplicative
    tilt_offset=(-2.8, 2.8),         # additive, dB/octave
    noise_floor_offset=(-6.0, 6.0),  # additive, dB
    rate_drift=(0.03, 0.07),         # |fractional slew| over the clip
    engine_harmonics_delta=1,        # +- lines around the class base count
)

# Range tracks: each vessel transits monotonically between a near and a far
# point; direction is random per recording.
TRACK_NEAR_M = (200.0, 500.0)
TRACK_FAR_FACTOR = (2.0, 3.5)


def make_recording_profile(class_label: str, duration: float,
                           rng: np.random.Generator,
                           class_params: dict | None = None) -> SynthProfile:
    """Draw one vessel's profile: class base parameters plus jitter."""
    params = (class_params or DEFAULT_CLASS_PARAMS)[class_label]
    shaft = params["shaft_rate"] * rng.uniform(*JITTER["shaft_rate"])
    rpm = params["engine_rpm_hz"] * rng.uniform(*JITTER["engine_rpm"])
    amp = params["engine_amp"] * rng.uniform(*JITTER["engine_amp"])
    delta = JITTER["engine_harmonics_delta"]
    n_harm = max(1, params["n_engine_harmonics"] + int(rng.integers(-delta, delta + 1)))
    harmonics = [
        (rpm * k, amp * k ** -0.5 * rng.uniform(0.8, 1.2))
        for k in range(1, n_harm + 1)
    ]
    drift = rng.uniform(*JITTER["rate_drift"]) * (1.0 if rng.random() < 0.5 else -1.0)
    near = rng.uniform(*TRACK_NEAR_M)
    far = near * rng.uniform(*TRACK_FAR_FACTOR)
    if rng.random() < 0.5:
        near, far = far, near
    track = [(0.0, near), (float(duration), far)]
    return SynthProfile(
        class_label=class_label,
        shaft_rate=shaft,
        n_blades=params["n_blades"],
        engine_harmonics=harmonics,
        broadband_tilt=params["broadband_tilt"] + rng.uniform(*JITTER["tilt_offset"]),
        distance_track=track,
        noise_floor=params["noise_floor"] + rng.uniform(*JITTER["noise_floor_offset"]),
        comb_amplitude=params["comb_amplitude"],
        broadband_level=params["broadband_level"] * rng.uniform(*JITTER["broadband_level"]),
        rate_drift=drift,
    )


# ---------------------------------------------------------------------------
# Profile config file (one section per class, flat key=value)
# ---------------------------------------------------------------------------

PROFILE_KEYS = ("shaft_rate", "n_blades", "engine_rpm_hz", "n_engine_harmonics",
                "engine_amp", "broadband_tilt", "broadband_level",
                "comb_amplitude", "noise_floor")


def write_profile_config(path, class_params: dict | None = None) -> None:
    cp = configparser.ConfigParser()
    for label, params in (class_params or DEFAULT_CLASS_PARAMS).items():
        cp[label] = {k: repr(params[k]) for k in PROFILE_KEYS}
    with open(path, "w") as fh:
        fh.write("# Synthetic vessel class profiles.\n")
        fh.write("# shaft_rate [Hz], n_blades, engine_rpm_hz [Hz] with\n")
        fh.write("# n_engine_harmonics lines at engine_amp, broadband_tilt\n")
        fh.write("# [dB/octave], broadband_level [rms], comb_amplitude,\n")
        fh.write("# noise_floor [dB re full scale].\n")
        cp.write(fh)


def load_profile_config(path) -> dict:
    cp = configparser.ConfigParser()
    read = cp.read(os.fspath(path))
    if not read:
        raise DataError(f"{path}: profile config not found")
    out = {}
    for label in cp.sections():
        try:
            sec = cp[label]
            out[label] = dict(
                shaft_rate=sec.getfloat("shaft_rate"),
                n_blades=sec.getint("n_blades"),
                engine_rpm_hz=sec.getfloat("engine_rpm_hz"),
                n_engine_harmonics=sec.getint("n_engine_harmonics"),
                engine_amp=sec.getfloat("engine_amp"),
                broadband_tilt=sec.getfloat("broadband_tilt"),
                broadband_level=sec.getfloat("broadband_level"),
                comb_amplitude=sec.getfloat("comb_amplitude"),
                noise_floor=sec.getfloat("noise_floor"),
            )
        except (ValueError, TypeError) as exc:
            raise DataError(f"{path}: bad profile section [{label}]: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# Corpus generation + manifest
# ---------------------------------------------------------------------------

MANIFEST_FIELDS = ("recording_id", "path", "class_label", "vessel_id", "duration_s")


def generate_corpus(out_dir, per_class: int, duration: float, seed: int,
                    classes=CLASS_LABELS, class_params: dict | None = None,
                    sample_rate: int = DEFAULT_SAMPLE_RATE):
    """Write one WAV per synthetic recording plus a manifest CSV.

    Returns the manifest rows.  Deterministic: every recording's profile and
    noise derive from (seed, class, index).
    """
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for ci, label in enumerate(classes):
        for k in range(per_class):
            rec_seed = seed * 1_000_003 + ci * 1009 + k
            rng = np.random.default_rng(rec_seed)
            profile = make_recording_profile(label, duration, rng, class_params)
            clip_seed = int(rng.integers(0, 2**31))
            clip = synth_ship_noise(profile, duration, clip_seed, sample_rate)
            rec_id = f"{label}_{k:03d}"
            clip.recording_id = rec_id
            wav_path = os.path.join(out_dir, f"{rec_id}.wav")
            save_wav(wav_path, clip)
            rows.append(dict(
                recording_id=rec_id,
                path=wav_path,
                class_label=label,
                vessel_id=f"{label}_v{k:03d}",
                duration_s=f"{clip.duration:g}",
            ))
    manifest = os.path.join(out_dir, "manifest.csv")
    write_manifest(manifest, rows)
    return rows


def write_manifest(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def read_manifest(path):
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DataError(f"{path}: manifest not found")
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(MANIFEST_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: manifest missing columns {sorted(missing)}")
        rows = list(reader)
    if not rows:
        raise DataError(f"{path}: manifest has no rows")
    for row in rows:
        try:
            row["duration_s"] = float(row["duration_s"])
        except ValueError as exc:
            raise DataError(
                f"{path}: bad duration_s for {row.get('recording_id')}"
            ) from exc
    return rows
