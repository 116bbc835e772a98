"""Feedforward active noise control around a fixed headrest.

Two stages, mirroring how the bank of control filters is used:

* **Training** — with the head parked at a grid node, adapt a multichannel
  filtered-x LMS controller against the plant at that node until the error
  power settles, then freeze the weights (:func:`train_fxlms`,
  :func:`train_bank`).
* **Control** — play the frozen filter of whichever node is nearest the
  current head-center estimate; no adaptation happens here
  (:func:`control_stage`, :func:`select_and_switch`,
  :class:`BlockController`).

Plants are free-field paths from :mod:`headrest.acoustics`; one reference
signal (the noise picked up near its source), two secondary loudspeakers,
and one error microphone per ear.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from .acoustics import (
    NOISE_BAND,
    AcousticScene,
    FirPath,
    SampleRateMismatch,
    band_noise,
    impulse_response,
    propagate,
)
from .scene import GridSpec, HeadGeometry, HeadPose, derive_seed, true_keypoints


class Diverged(RuntimeError):
    """Training residual grew by more than 20 dB over its best window."""


class EmptyBank(ValueError):
    """Filter selection was asked against a bank with no entries."""


class IllConditioned(ValueError):
    """Secondary path is effectively zero somewhere in the analysis band."""


@dataclass(frozen=True)
class FxlmsConfig:
    """Knobs of the filtered-x LMS trainer.

    ``step_size`` is normalized by the filtered-reference power, so the
    same value works across plant gains.  The secondary-path model used
    for filtering the reference is an exact copy of the true path unless
    the error knobs are turned.
    """

    step_size: float = 0.005
    filter_taps: int = 256
    secondary_model_taps: int = 128
    block_size: int = 64
    leak: float = 0.0
    max_iterations: int = 240_000  # 30 s at 8 kHz
    convergence_window: int = 4000
    convergence_epsilon: float = 1e-4
    band: tuple = NOISE_BAND
    model_gain_error_db: float = 0.0
    model_delay_error_samples: int = 0

    def __post_init__(self):
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.filter_taps < 1 or self.secondary_model_taps < 1:
            raise ValueError("tap counts must be at least 1")
        if not (0 <= self.leak < 1):
            raise ValueError("leak must lie in [0, 1)")
        if self.convergence_window > self.max_iterations:
            raise ValueError("convergence_window cannot exceed max_iterations")
        if self.block_size < 1:
            raise ValueError("block_size must be at least 1")


@dataclass(frozen=True)
class ControlFilter:
    """Frozen controller weights, one tap row per secondary source.

    Taps are stored as float32 so that a filter read back from a bank file
    is bitwise identical to the one that was trained.
    """

    taps: np.ndarray  # shape (n_sources, filter_taps), float32
    sample_rate: int
    trained_at: tuple | None = None
    residual_power_db: float = 0.0
    converged: bool = True
    trace: dict | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float32)
        if taps.ndim != 2 or not np.all(np.isfinite(taps)):
            raise ValueError("taps must be a finite 2-D array (sources x taps)")
        object.__setattr__(self, "taps", taps)

    @property
    def n_sources(self) -> int:
        return self.taps.shape[0]

    @property
    def n_taps(self) -> int:
        return self.taps.shape[1]


@dataclass(frozen=True)
class PlantSet:
    """All propagation paths the controller interacts with.

    ``secondary_paths[m][e]`` runs from source m to error sensor e.  The
    layout generalizes to any source/sensor counts; the headrest uses
    2 sources x 2 ears.
    """

    primary_paths: tuple  # FirPath per error sensor
    secondary_paths: tuple  # FirPath matrix [source][error]
    reference_path: FirPath

    def __post_init__(self):
        prim = tuple(self.primary_paths)
        sec = tuple(tuple(row) for row in self.secondary_paths)
        if len(prim) < 1 or len(sec) < 1:
            raise ValueError("need at least one primary and one secondary path")
        if any(len(row) != len(prim) for row in sec):
            raise ValueError("secondary-path matrix must cover every error sensor")
        rates = {p.sample_rate for p in prim} | {self.reference_path.sample_rate}
        rates |= {p.sample_rate for row in sec for p in row}
        if len(rates) != 1:
            raise SampleRateMismatch(f"mixed path sample rates {sorted(rates)}")
        object.__setattr__(self, "primary_paths", prim)
        object.__setattr__(self, "secondary_paths", sec)

    @property
    def n_errors(self) -> int:
        return len(self.primary_paths)

    @property
    def n_sources(self) -> int:
        return len(self.secondary_paths)

    @property
    def sample_rate(self) -> int:
        return self.reference_path.sample_rate


@dataclass
class FilterBank:
    """Pre-trained control filters indexed by grid node."""

    grid: GridSpec
    entries: dict  # (i, j, k) -> ControlFilter
    metadata: dict

    def __post_init__(self):
        shapes = set()
        for key, filt in self.entries.items():
            if filt.trained_at != tuple(key):
                raise ValueError(f"entry {key} was trained at {filt.trained_at}")
            shapes.add((filt.taps.shape, filt.sample_rate))
        if len(shapes) > 1:
            raise ValueError("bank entries disagree on tap shape or sample rate")


def scene_digest(scene: AcousticScene) -> str:
    """Short stable digest of the scene layout, stored in bank metadata."""
    desc = {
        "primary": [float(v) for v in scene.primary_source],
        "secondary": [[float(v) for v in s] for s in scene.secondary_sources],
        "reference": [float(v) for v in scene.reference_mic],
        "fs": scene.sample_rate,
        "c": scene.speed_of_sound,
    }
    blob = json.dumps(desc, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def derive_plant(scene: AcousticScene, ear_positions) -> PlantSet:
    """Build every source-to-sensor path with error sensors at the ears."""
    ears = [np.asarray(e, dtype=float) for e in ear_positions]
    primary = tuple(impulse_response(scene.primary_source, ear, scene) for ear in ears)
    secondary = tuple(
        tuple(impulse_response(src, ear, scene) for ear in ears)
        for src in scene.secondary_sources
    )
    reference = impulse_response(scene.primary_source, scene.reference_mic, scene)
    return PlantSet(
        primary_paths=primary, secondary_paths=secondary, reference_path=reference
    )


def _model_paths(plant: PlantSet, cfg: FxlmsConfig):
    """Secondary-path estimates: exact copies, optionally perturbed."""
    gain = 10.0 ** (cfg.model_gain_error_db / 20.0)
    models = []
    for row in plant.secondary_paths:
        out = []
        for path in row:
            taps = path.taps[: cfg.secondary_model_taps] * gain
            if cfg.model_delay_error_samples:
                taps = np.roll(
                    np.pad(taps, (0, abs(cfg.model_delay_error_samples))),
                    cfg.model_delay_error_samples,
                )
            out.append(taps)
        models.append(out)
    return models


def _windowed_db(e2_sums, start, stop):
    return 10.0 * np.log10(max(np.sum(e2_sums[start:stop]), 1e-300))


def train_fxlms(
    plant: PlantSet,
    noise_seed: int,
    cfg: FxlmsConfig | None = None,
    excitation: np.ndarray | None = None,
    collect_trace: bool = False,
) -> ControlFilter:
    """Adapt a multichannel filtered-x LMS controller against ``plant``.

    The excitation is band noise from ``noise_seed`` (or the supplied
    signal), heard through the reference path; the error is the sum of the
    primary disturbance and the controller output through the *true*
    secondary paths.  Weights update once per block from the accumulated
    gradient.  Training stops early once the relative weight change over
    the convergence window drops below ``convergence_epsilon``; if the
    windowed residual ever climbs 20 dB above its best, :class:`Diverged`
    is raised.  Hitting ``max_iterations`` just clears the ``converged``
    flag — the filter is still returned.
    """
    cfg = cfg if cfg is not None else FxlmsConfig()
    fs = plant.sample_rate
    if excitation is not None:
        v = np.asarray(excitation, dtype=float)
    else:
        v = band_noise(cfg.band[0], cfg.band[1], cfg.max_iterations / fs, noise_seed, fs)
    n = min(v.size, cfg.max_iterations)
    v = v[:n]

    x = propagate(v, plant.reference_path)
    d = np.stack([propagate(v, p) for p in plant.primary_paths])  # (E, n)
    models = _model_paths(plant, cfg)
    n_src, n_err = plant.n_sources, plant.n_errors
    t = cfg.filter_taps
    b = cfg.block_size

    # filtered reference x'[m][e], and its sliding windows for the gradient
    xf = np.stack(
        [[np.convolve(x, models[m][e])[:n] for e in range(n_err)] for m in range(n_src)]
    )  # (M, E, n)
    norm = cfg.step_size / (t * np.mean(xf**2) + 1e-12)

    # windows[m, e, i, :] = x'[m, e, i : i + t] reversed is not needed if we
    # keep weights in time-reversed (newest-first) order throughout.
    pad = np.concatenate([np.zeros((n_src, n_err, t - 1)), xf], axis=2)
    x_pad = np.concatenate([np.zeros(t - 1), x])

    w = np.zeros((n_src, t))  # newest-first layout: y = w @ x[t..t-T+1]
    sec_state = [
        [np.zeros(len(plant.secondary_paths[m][e]) - 1) for e in range(n_err)]
        for m in range(n_src)
    ]

    win = cfg.convergence_window
    e2_blocks: list = []
    d2_blocks: list = []
    best_win_db = np.inf
    w_checkpoint = w.copy()
    converged = False
    trace_rows = []

    n_blocks = n // b
    for blk in range(n_blocks):
        t0 = blk * b
        # controller output for this block under the current (fixed) weights
        xwin = np.lib.stride_tricks.sliding_window_view(
            x_pad[t0 : t0 + b + t - 1], t
        )[:, ::-1]  # (b, t) newest-first
        y = xwin @ w.T  # (b, M)

        e = d[:, t0 : t0 + b].T.copy()  # (b, E)
        for m in range(n_src):
            for ee in range(n_err):
                out, sec_state[m][ee] = lfilter(
                    plant.secondary_paths[m][ee].taps, [1.0], y[:, m], zi=sec_state[m][ee]
                )
                e[:, ee] += out

        # block-accumulated gradient: g[m, k] = sum_e sum_t x'[m,e,t-k] e[e,t]
        grad = np.zeros_like(w)
        for m in range(n_src):
            for ee in range(n_err):
                fwin = np.lib.stride_tricks.sliding_window_view(
                    pad[m, ee, t0 : t0 + b + t - 1], t
                )[:, ::-1]
                grad[m] += fwin.T @ e[:, ee]
        w = (1.0 - cfg.leak) * w - norm * grad

        with np.errstate(over="ignore"):
            block_power = float(np.sum(e**2))
        if not np.isfinite(block_power):
            raise Diverged("error power overflowed")
        e2_blocks.append(block_power)
        d2_blocks.append(float(np.sum(d[:, t0 : t0 + b] ** 2)))

        done = (blk + 1) * b
        if done % win < b and done >= win:
            lo = len(e2_blocks) - win // b
            win_db = _windowed_db(e2_blocks, lo, len(e2_blocks)) - _windowed_db(
                d2_blocks, lo, len(d2_blocks)
            )
            if win_db > best_win_db + 20.0:
                raise Diverged(
                    f"windowed residual rose {win_db - best_win_db:.1f} dB above its best"
                )
            best_win_db = min(best_win_db, win_db)
            delta = np.linalg.norm(w - w_checkpoint) / (np.linalg.norm(w) + 1e-30)
            if collect_trace:
                trace_rows.append(
                    {"sample": done, "residual_db": win_db, "weight_delta": float(delta)}
                )
            w_checkpoint = w.copy()
            if delta < cfg.convergence_epsilon:
                converged = True
                break

    blocks_per_win = max(1, win // b)
    e_tail = np.sum(e2_blocks[-blocks_per_win:])
    d_tail = np.sum(d2_blocks[-blocks_per_win:])
    residual_db = 10.0 * np.log10(max(e_tail, 1e-300) / max(d_tail, 1e-300))

    return ControlFilter(
        taps=w.astype(np.float32),
        sample_rate=fs,
        trained_at=None,
        residual_power_db=float(residual_db),
        converged=converged or n_blocks == 0,
        trace={"windows": trace_rows} if collect_trace else None,
    )


def wiener_oracle(plant: PlantSet, band=NOISE_BAND, n_fft: int = 1024):
    """Frequency-domain optimum controller for ``plant``.

    Solves, per in-band frequency, the least-squares drive W(f) minimizing
    the summed error power ``sum_e |P_e + sum_m S_me W_m R|^2``; with one
    source and one error sensor this is the closed form -P/(S R).
    Returns ``(frequencies, W)`` with W of shape (n_sources, n_bins).
    """
    fs = plant.sample_rate
    freqs = np.fft.rfftfreq(n_fft, d=1.0 / fs)
    in_band = (freqs >= band[0]) & (freqs <= band[1])

    p = np.stack([np.fft.rfft(path.taps, n_fft) for path in plant.primary_paths])
    r = np.fft.rfft(plant.reference_path.taps, n_fft)
    s = np.empty((plant.n_errors, plant.n_sources, freqs.size), dtype=complex)
    for m in range(plant.n_sources):
        for e in range(plant.n_errors):
            s[e, m] = np.fft.rfft(plant.secondary_paths[m][e].taps, n_fft)

    smin = np.abs(s).min(axis=(0, 1))
    if np.any(smin[in_band] < 1e-6):
        raise IllConditioned("secondary response magnitude below 1e-6 in band")

    w = np.zeros((plant.n_sources, freqs.size), dtype=complex)
    for idx in np.nonzero(in_band)[0]:
        sm = s[:, :, idx]
        gram = sm.conj().T @ sm
        gram += 1e-12 * np.trace(gram).real / max(plant.n_sources, 1) * np.eye(plant.n_sources)
        w[:, idx] = np.linalg.solve(gram, -sm.conj().T @ p[:, idx]) / r[idx]
    return freqs, w


def train_bank(
    scene: AcousticScene,
    grid: GridSpec,
    geometry: HeadGeometry,
    cfg: FxlmsConfig | None = None,
    base_seed: int = 0,
    yaw: float = 0.0,
) -> FilterBank:
    """Train and store one control filter per grid node.

    The head is placed exactly at each node (training uses true ear
    positions — the physical head is there), a plant is derived, and
    :func:`train_fxlms` runs with a per-node seed.  A training divergence
    aborts the whole bank, naming the node.
    """
    cfg = cfg if cfg is not None else FxlmsConfig()
    entries = {}
    for node in grid.indices():
        pose = HeadPose(center=grid.node(*node), yaw=yaw)
        kp = true_keypoints(geometry, pose)
        plant = derive_plant(scene, (kp.left_ear, kp.right_ear))
        seed = derive_seed(base_seed, grid.linear_index(*node))
        try:
            filt = train_fxlms(plant, seed, cfg)
        except Diverged as exc:
            raise Diverged(f"node {node}: {exc}") from exc
        entries[node] = replace(filt, trained_at=node)
    metadata = {
        "step_size": cfg.step_size,
        "filter_taps": cfg.filter_taps,
        "secondary_model_taps": cfg.secondary_model_taps,
        "block_size": cfg.block_size,
        "leak": cfg.leak,
        "max_iterations": cfg.max_iterations,
        "convergence_window": cfg.convergence_window,
        "convergence_epsilon": cfg.convergence_epsilon,
        "band": list(cfg.band),
        "base_seed": base_seed,
        "yaw": yaw,
        "scene_digest": scene_digest(scene),
        "noise_generator": "numpy-default-rng-pcg64",
        "residual_power_db": {
            str(list(k)): entries[k].residual_power_db for k in entries
        },
        "converged": {str(list(k)): entries[k].converged for k in entries},
    }
    return FilterBank(grid=grid, entries=entries, metadata=metadata)


def nearest_grid(point, grid: GridSpec) -> tuple:
    """Grid node closest to ``point``; ties go to the lower linear index.

    Points outside the grid clamp to the nearest node.
    """
    point = np.asarray(point, dtype=float)
    nodes = grid.node_positions()
    dist = np.linalg.norm(nodes - point, axis=1)
    linear = int(np.argmin(dist))  # argmin returns the first (lowest) index
    return list(grid.indices())[linear]


def control_stage(
    plant_truth: PlantSet,
    control: ControlFilter,
    noise_seed: int,
    duration: float = 4.0,
    band=NOISE_BAND,
):
    """Run the fixed filter against the true plant; no adaptation.

    The plant here may differ from the one the filter was trained on —
    that mismatch is exactly what head movement causes.  Returns
    ``(before, after)`` ear signals, each of shape (n_errors, samples).
    """
    fs = plant_truth.sample_rate
    if control.sample_rate != fs:
        raise SampleRateMismatch(
            f"{control.sample_rate} Hz filter against {fs} Hz plant"
        )
    if control.n_sources != plant_truth.n_sources:
        raise ValueError("filter/source count mismatch")
    v = band_noise(band[0], band[1], duration, noise_seed, fs)
    x = propagate(v, plant_truth.reference_path)
    before = np.stack([propagate(v, p) for p in plant_truth.primary_paths])
    after = before.copy()
    for m in range(control.n_sources):
        y = np.convolve(x, control.taps[m].astype(float))[: x.size]
        for e in range(plant_truth.n_errors):
            after[e] += propagate(y, plant_truth.secondary_paths[m][e])
    return before, after


def select_and_switch(bank: FilterBank, ears) -> ControlFilter:
    """Filter of the node nearest the head center implied by ``ears``.

    ``ears`` is anything with ``left``/``right`` point attributes; the
    head center estimate is their midpoint.
    """
    if not bank.entries:
        raise EmptyBank("bank has no entries")
    mid = (np.asarray(ears.left, float) + np.asarray(ears.right, float)) / 2.0
    node = nearest_grid(mid, bank.grid)
    return bank.entries[node]


class BlockController:
    """Fixed-filter playback with atomic filter swaps at block boundaries.

    One audio thread calls :meth:`process_block`; any other thread may call
    :meth:`install` at any time.  The latest installed filter wins and is
    picked up at the start of the next block — a block is never processed
    with a mixture of two filters.
    """

    def __init__(self, plant: PlantSet, control: ControlFilter, block_size: int = 64):
        if control.sample_rate != plant.sample_rate:
            raise SampleRateMismatch("filter/plant sample rates differ")
        self._plant = plant
        self._block = block_size
        self._current = control
        self._pending: ControlFilter | None = None
        self._lock = threading.Lock()
        self._x_hist = np.zeros(control.n_taps - 1 + block_size)
        self._sec_state = [
            [np.zeros(len(plant.secondary_paths[m][e]) - 1) for e in range(plant.n_errors)]
            for m in range(plant.n_sources)
        ]
        self.blocks_processed = 0
        self.switch_events: list = []
        self.last_drive: np.ndarray | None = None

    @property
    def active_filter(self) -> ControlFilter:
        return self._current

    def install(self, control: ControlFilter) -> None:
        """Request a filter swap; takes effect at the next block boundary."""
        with self._lock:
            self._pending = control

    def process_block(self, x_block: np.ndarray, d_block: np.ndarray) -> np.ndarray:
        """Advance one block: returns error signals of shape (n_errors, B)."""
        b = self._block
        if x_block.size != b or d_block.shape != (self._plant.n_errors, b):
            raise ValueError("block size mismatch")
        with self._lock:
            if self._pending is not None:
                if self._pending is not self._current and not np.array_equal(
                    self._pending.taps, self._current.taps
                ):
                    self.switch_events.append(
                        (self.blocks_processed, self._pending.trained_at)
                    )
                    self._current = self._pending
                self._pending = None
            w = self._current.taps.astype(float)

        t = w.shape[1]
        self._x_hist = np.concatenate([self._x_hist[-(t - 1) :] if t > 1 else np.zeros(0), x_block])
        xwin = np.lib.stride_tricks.sliding_window_view(self._x_hist, t)[:, ::-1]
        y = xwin @ w.T  # (b, M)
        self.last_drive = y.T.copy()

        e = d_block.copy()
        for m in range(self._plant.n_sources):
            for ee in range(self._plant.n_errors):
                out, self._sec_state[m][ee] = lfilter(
                    self._plant.secondary_paths[m][ee].taps,
                    [1.0],
                    y[:, m],
                    zi=self._sec_state[m][ee],
                )
                e[ee] += out
        self.blocks_processed += 1
        return e
