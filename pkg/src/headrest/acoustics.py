"""Free-field acoustics: propagation paths, noise, and level metrics.

Sources and microphones are points in the stage frame.  A propagation path
is a causal FIR filter combining the travel delay d/c (fractional, realised
as a windowed sinc) with spherical spreading 1/d.  No reflections and no
scattering — the plant varies with head pose only through path lengths.

Levels are dB re full scale; absolute SPL calibration is out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import fftconvolve, welch

SAMPLE_RATE = 8000
SPEED_OF_SOUND = 343.0

#: Analysis band of the broadband noise experiments, Hz.
NOISE_BAND = (80.0, 2000.0)

#: Half-width of the windowed-sinc fractional-delay kernel (33 taps total).
_KERNEL_HALF = 16

#: Shortest modelled distance; bounds the 1/d gain.
_D_MIN = 0.001

_DB_FLOOR = -120.0


class CoincidentPoints(ValueError):
    """Source and receiver are closer than the 1 mm model limit."""


class SampleRateMismatch(ValueError):
    """Signal and path sample rates differ."""


class BandOutOfRange(ValueError):
    """Requested band is not inside (0, Nyquist)."""


class ZeroPower(ValueError):
    """A level ratio was requested against zero in-band power."""


class SignalTooShort(ValueError):
    """Signal shorter than one analysis window."""


@dataclass(frozen=True)
class AcousticScene:
    """Source/sensor layout plus the sampling and medium constants."""

    primary_source: np.ndarray
    secondary_sources: list
    reference_mic: np.ndarray
    sample_rate: int = SAMPLE_RATE
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        pts = [self.primary_source, self.reference_mic, *self.secondary_sources]
        if not all(np.all(np.isfinite(p)) for p in pts):
            raise ValueError("scene positions must be finite")
        if self.sample_rate <= 0 or self.speed_of_sound <= 0:
            raise ValueError("sample_rate and speed_of_sound must be positive")


def default_scene() -> AcousticScene:
    """Headrest arrangement: noise source 1.5 m in front of the listener,
    reference microphone near it, one secondary loudspeaker beside each ear.
    """
    return AcousticScene(
        primary_source=np.array([0.0, -1.5, 0.0]),
        secondary_sources=[np.array([0.3, 0.0, 0.0]), np.array([-0.3, 0.0, 0.0])],
        reference_mic=np.array([0.0, -1.4, 0.0]),
    )


@dataclass(frozen=True)
class FirPath:
    """A finite impulse response at a fixed sample rate."""

    taps: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=float)
        if taps.ndim != 1 or taps.size < 1 or not np.all(np.isfinite(taps)):
            raise ValueError("taps must be a non-empty finite 1-D sequence")
        object.__setattr__(self, "taps", taps)

    def __len__(self) -> int:
        return self.taps.size


@dataclass(frozen=True)
class Spectrum:
    frequencies: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.frequencies, dtype=float)
        lv = np.asarray(self.levels, dtype=float)
        if f.shape != lv.shape or f.ndim != 1:
            raise ValueError("frequencies and levels must be equal-length 1-D")
        if np.any(np.diff(f) <= 0):
            raise ValueError("frequencies must be strictly ascending")
        object.__setattr__(self, "frequencies", f)
        object.__setattr__(self, "levels", lv)


def impulse_response(src: np.ndarray, rcv: np.ndarray, scene: AcousticScene) -> FirPath:
    """Free-field path from ``src`` to ``rcv``: delay d/c, gain 1/d.

    The fractional delay is realised with a 33-tap Hann-windowed sinc
    centred on the exact delay; taps before t=0 are dropped to keep the
    path causal.
    """
    d = float(np.linalg.norm(np.asarray(rcv, float) - np.asarray(src, float)))
    if d < _D_MIN:
        raise CoincidentPoints(f"|src - rcv| = {d * 1000:.3f} mm < 1 mm")
    delay = d / scene.speed_of_sound * scene.sample_rate
    gain = 1.0 / max(d, _D_MIN)
    length = int(np.floor(delay)) + _KERNEL_HALF + 1
    n = np.arange(length)
    x = n - delay
    window = np.where(
        np.abs(x) <= _KERNEL_HALF, 0.5 * (1.0 + np.cos(np.pi * x / _KERNEL_HALF)), 0.0
    )
    taps = gain * np.sinc(x) * window
    return FirPath(taps=taps, sample_rate=scene.sample_rate)


def propagate(signal: np.ndarray, path: FirPath, sample_rate: int | None = None) -> np.ndarray:
    """Convolve a signal with a path; output truncated to the input length."""
    if sample_rate is not None and sample_rate != path.sample_rate:
        raise SampleRateMismatch(f"{sample_rate} Hz signal through {path.sample_rate} Hz path")
    signal = np.asarray(signal, dtype=float)
    return fftconvolve(signal, path.taps)[: signal.size]


def band_noise(
    lo: float,
    hi: float,
    duration: float,
    seed: int,
    sample_rate: int = SAMPLE_RATE,
) -> np.ndarray:
    """Unit-RMS Gaussian noise band-limited to [lo, hi] Hz.

    Band limiting is a brick wall in the DFT domain, so out-of-band leakage
    is at numerical floor.  Deterministic for a given seed.
    """
    if not (0.0 < lo < hi < sample_rate / 2):
        raise BandOutOfRange(f"band ({lo}, {hi}) outside (0, {sample_rate / 2})")
    n = round(duration * sample_rate)
    rng = np.random.default_rng(seed)
    white = rng.standard_normal(n)
    spectrum = np.fft.rfft(white)
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    spectrum[(freqs < lo) | (freqs > hi)] = 0.0
    shaped = np.fft.irfft(spectrum, n)
    rms = np.sqrt(np.mean(shaped**2))
    if rms == 0.0:
        raise BandOutOfRange("band contains no DFT bins at this duration")
    return shaped / rms


def a_weight_gain(f) -> np.ndarray | float:
    """A-weighting in dB at frequency ``f`` (Hz), 0 dB at 1 kHz.

    Standard pole/zero magnitude formula with corner frequencies 20.6,
    107.7, 737.9 and 12194 Hz.
    """
    f = np.asarray(f, dtype=float)
    if np.any(f <= 0):
        raise ValueError("frequency must be positive")
    f2 = f**2

    def response(ff2):
        num = 12194.0**2 * ff2**2
        den = (
            (ff2 + 20.6**2)
            * np.sqrt((ff2 + 107.7**2) * (ff2 + 737.9**2))
            * (ff2 + 12194.0**2)
        )
        return num / den

    gain = 20.0 * np.log10(response(f2) / response(np.array(1000.0**2)))
    return float(gain) if gain.ndim == 0 else gain


def _band_power_a(signal: np.ndarray, band, sample_rate: int) -> float:
    """A-weighted power of ``signal`` inside ``band`` via averaged periodograms."""
    nperseg = min(1024, signal.size)
    freqs, psd = welch(signal, fs=sample_rate, window="hann", nperseg=nperseg)
    lo, hi = band
    sel = (freqs >= lo) & (freqs <= hi) & (freqs > 0)
    if not np.any(sel):
        return 0.0
    weight = 10.0 ** (a_weight_gain(freqs[sel]) / 10.0)
    df = freqs[1] - freqs[0]
    return float(np.sum(psd[sel] * weight) * df)


def noise_reduction_dba(
    before: np.ndarray,
    after: np.ndarray,
    band=NOISE_BAND,
    sample_rate: int = SAMPLE_RATE,
) -> float:
    """A-weighted in-band level drop from ``before`` to ``after``, in dBA.

    Positive values mean ``after`` is quieter.
    """
    before = np.asarray(before, dtype=float)
    after = np.asarray(after, dtype=float)
    if before.size != after.size:
        raise ValueError("before/after must have equal lengths")
    p_before = _band_power_a(before, band, sample_rate)
    p_after = _band_power_a(after, band, sample_rate)
    if p_before <= 0.0 or p_after <= 0.0:
        raise ZeroPower("zero in-band power")
    return 10.0 * np.log10(p_before / p_after)


def spl_spectrum(
    signal: np.ndarray, resolution: float = 8.0, sample_rate: int = SAMPLE_RATE
) -> Spectrum:
    """Averaged-periodogram level spectrum at roughly the given bin width.

    Hann window, 50% overlap; zero-power bins floored at -120 dB.
    """
    signal = np.asarray(signal, dtype=float)
    nperseg = round(sample_rate / resolution)
    if signal.size < nperseg:
        raise SignalTooShort(f"{signal.size} samples < one {nperseg}-sample window")
    freqs, power = welch(
        signal, fs=sample_rate, window="hann", nperseg=nperseg, scaling="spectrum"
    )
    with np.errstate(divide="ignore"):
        levels = 10.0 * np.log10(power)
    return Spectrum(frequencies=freqs, levels=np.maximum(levels, _DB_FLOOR))


def quiet_zone_probe(
    band,
    seed: int,
    probe_offset=np.array([0.0, 0.0, 0.05]),
    scene: AcousticScene | None = None,
    duration: float = 4.0,
    ear: np.ndarray | None = None,
) -> float:
    """NR at a probe offset from the ear while a tone-perfect controller
    cancels exactly at the ear.

    Builds the ideal in-band controller -P(f)/S(f) by frequency sampling,
    drives one secondary with it, and measures the A-weighted reduction at
    ``ear + probe_offset``.  The returned NR shrinks as the band moves up
    in frequency — the quiet zone narrows with wavelength.
    """
    scene = scene if scene is not None else default_scene()
    ear = ear if ear is not None else np.array([0.075, 0.0, 0.0])
    probe = ear + np.asarray(probe_offset, float)
    spk = scene.secondary_sources[0]

    n_fir = 512
    freqs = np.fft.rfftfreq(n_fir, d=1.0 / scene.sample_rate)

    def transfer(src, rcv):
        d = float(np.linalg.norm(rcv - src))
        return np.exp(-2j * np.pi * freqs * d / scene.speed_of_sound) / d

    p_ear = transfer(scene.primary_source, ear)
    s_ear = transfer(spk, ear)
    w = -p_ear / s_ear
    # modulate by a half-shifted window so the impulse response is causal
    shift = np.exp(-2j * np.pi * freqs * (n_fir // 2) / scene.sample_rate)
    w_taps = np.fft.irfft(w * shift, n_fir)
    controller = FirPath(taps=w_taps, sample_rate=scene.sample_rate)

    v = band_noise(band[0], band[1], duration, seed, scene.sample_rate)
    p_probe = impulse_response(scene.primary_source, probe, scene)
    s_probe = impulse_response(spk, probe, scene)
    before = propagate(v, p_probe)
    y = propagate(propagate(v, controller), s_probe)
    # undo the causality shift and drop the filter warm-up from both sides
    lag = n_fir // 2
    before_t = before[n_fir : before.size - lag]
    after_t = before_t + y[n_fir + lag :]
    return noise_reduction_dba(before_t, after_t, band, scene.sample_rate)
