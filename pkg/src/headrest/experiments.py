"""Experiment drivers: accuracy tables, noise-reduction maps, spectra.

Each driver runs the complete measurement chain — synthetic camera frames
through ear inference, then (for control experiments) the wire protocol
into filter selection — and returns plain row objects.  All randomness
derives from one base seed, so any run is reproducible regardless of
execution order, and the CSV writers embed the resolved configuration so
an output file is its own recipe.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .acoustics import band_noise, noise_reduction_dba, propagate, spl_spectrum
from .anc import (
    ControlFilter,
    FilterBank,
    PlantSet,
    derive_plant,
    select_and_switch,
    train_fxlms,
)
from .config import Config
from .geometry import Side, infer_true_ears
from .provider import SyntheticProvider
from .scene import (
    HeadPose,
    camera_to_world,
    canonical_head,
    derive_seed,
    observe,
    true_keypoints,
)
from .wire import EarPositionMessage, TrustedSide, channel

# Seed-derivation tags keeping every random stream in a run distinct.
_TAG_TRANSLATE = 1
_TAG_ROTATE = 2
_TAG_NR_OBS = 3
_TAG_NR_NOISE = 4
_TAG_ROT_TRAIN = 5
_TAG_ROT_NR_OBS = 6
_TAG_ROT_NR_NOISE = 7
_TAG_SPECTRA = 8


class Condition(Enum):
    """The three measurement conditions of the control experiments."""

    IDEAL = "Ideal"
    EP_OFF = "EpOff"
    EP_ON = "EpOn"


@dataclass(frozen=True)
class MdeRow:
    """Signed mean deviation along one axis at one grid offset."""

    axis: str
    offset_mm: float
    mde_left_mm: float
    mde_right_mm: float


@dataclass(frozen=True)
class RotationErrorRow:
    """3-D positioning error of each ear at one yaw angle."""

    theta_deg: float
    e_left_mm: float
    e_right_mm: float


@dataclass(frozen=True)
class NrCell:
    """Binaural noise reduction at one grid node under one condition."""

    node: tuple
    condition: Condition
    nr_left_dba: float
    nr_right_dba: float


@dataclass(frozen=True)
class RotationNrCell:
    """Binaural noise reduction at one yaw angle under one condition."""

    theta_deg: float
    condition: Condition
    nr_left_dba: float
    nr_right_dba: float


@dataclass(frozen=True)
class SpectrumRow:
    """Level spectra of one ear signal before and under the three conditions."""

    freq_hz: float
    before_db: float
    ideal_db: float
    epoff_db: float
    epon_db: float


# ---------------------------------------------------------------------------
# The measurement chain shared by the control experiments


def message_from_frame(frame, camera_distance: float) -> EarPositionMessage:
    """Infer both ears from one keypoint frame and pack a protocol message.

    Keypoints arrive in the camera frame; the message carries stage-frame
    coordinates.
    """
    est = infer_true_ears(frame.keypoints)
    side = TrustedSide.LEFT if est.decision.trusted_side is Side.LEFT else TrustedSide.RIGHT
    return EarPositionMessage(
        timestamp_us=frame.timestamp_us,
        left=camera_to_world(est.left, camera_distance),
        right=camera_to_world(est.right, camera_distance),
        trusted_side=side,
        confidence=float(np.min(frame.keypoints.confidence)),
    )


def ep_position_message(
    pose: HeadPose, cfg: Config, obs_seed: int, geometry=None
) -> EarPositionMessage:
    """One pass of the full positioning chain for a single head pose.

    Camera frame synthesis → confidence gating → ear inference →
    stage-frame conversion, packed as a protocol message.
    """
    geometry = geometry if geometry is not None else canonical_head()
    provider = SyntheticProvider(
        [pose],
        geometry=geometry,
        camera=cfg.camera(),
        observation=cfg.observation_model(obs_seed),
        confidence_gate=cfg.confidence_gate,
        camera_distance=cfg.camera_distance,
    )
    frame = provider.next_frame()
    if frame is None:
        raise RuntimeError("synthetic frame was gated out")
    return message_from_frame(frame, cfg.camera_distance)


def _select_via_wire(bank: FilterBank, msg: EarPositionMessage) -> ControlFilter:
    """Deliver ``msg`` through an encoded channel, then pick the filter."""
    pub, sub = channel()
    pub.publish(msg)
    delivered = sub.poll()
    if delivered is None:
        raise RuntimeError("message lost on the in-process channel")
    return select_and_switch(bank, delivered)


def estimated_yaw_deg(msg: EarPositionMessage) -> float:
    """Yaw implied by the ear axis: 0° when the left ear sits at +x."""
    axis = np.asarray(msg.left) - np.asarray(msg.right)
    return float(np.degrees(np.arctan2(-axis[1], axis[0])))


def _binaural_nr(
    plant: PlantSet,
    filters: dict,
    noise_seed: int,
    duration: float,
    band,
) -> dict:
    """Per-condition (nr_left, nr_right) sharing one noise realization.

    The uncontrolled ear signals are computed once; each condition only
    adds its own loudspeaker contribution.  Conditions holding the same
    filter object produce identical signals by construction.
    """
    fs = plant.sample_rate
    v = band_noise(band[0], band[1], duration, noise_seed, fs)
    x = propagate(v, plant.reference_path)
    before = np.stack([propagate(v, p) for p in plant.primary_paths])

    cache: dict[int, tuple] = {}
    out = {}
    for cond, filt in filters.items():
        key = id(filt)
        if key not in cache:
            after = before.copy()
            for m in range(filt.n_sources):
                y = np.convolve(x, filt.taps[m])[: x.size]
                for e in range(plant.n_errors):
                    after[e] += propagate(y, plant.secondary_paths[m][e])
            cache[key] = tuple(
                noise_reduction_dba(before[e], after[e], band, fs)
                for e in range(plant.n_errors)
            )
        out[cond] = cache[key]
    return out


# ---------------------------------------------------------------------------
# Positioning accuracy


def run_translation_accuracy(cfg: Config, seed: int = 0) -> list:
    """Signed per-axis deviation of both ears over the translation grid.

    Each node is measured ``cfg.repetitions`` times with fresh observation
    noise; errors are pooled per axis offset, preserving sign.
    """
    geom = canonical_head()
    grid = cfg.accuracy_grid()
    cam = cfg.camera()
    reps = cfg.repetitions
    shape = (grid.nx, grid.ny, grid.nz, 3)
    sums = {"left": np.zeros(shape), "right": np.zeros(shape)}

    for node in grid.indices():
        pose = HeadPose(center=grid.node(*node))
        kp_true = true_keypoints(geom, pose)
        lin = grid.linear_index(*node)
        for rep in range(reps):
            obs = cfg.observation_model(derive_seed(seed, _TAG_TRANSLATE, lin, rep))
            est = infer_true_ears(observe(geom, pose, cam, obs, cfg.camera_distance))
            sums["left"][node] += camera_to_world(est.left, cfg.camera_distance) - kp_true.left_ear
            sums["right"][node] += (
                camera_to_world(est.right, cfg.camera_distance) - kp_true.right_ear
            )

    mean = {ear: s / reps for ear, s in sums.items()}
    rows = []
    for axis_name, axis, count in (("X", 0, grid.nx), ("Y", 1, grid.ny), ("Z", 2, grid.nz)):
        for idx in range(count):
            picker = [slice(None)] * 3
            picker[axis] = idx
            offset = grid.origin[axis] + grid.spacing * (idx - (count - 1) / 2.0)
            rows.append(
                MdeRow(
                    axis=axis_name,
                    offset_mm=offset * 1000.0,
                    mde_left_mm=float(np.mean(mean["left"][tuple(picker) + (axis,)])) * 1000.0,
                    mde_right_mm=float(np.mean(mean["right"][tuple(picker) + (axis,)])) * 1000.0,
                )
            )
    return rows


def run_rotation_accuracy(cfg: Config, seed: int = 0) -> list:
    """3-D ear positioning error at the initial position across yaw angles."""
    geom = canonical_head()
    cam = cfg.camera()
    reps = cfg.repetitions
    center = cfg.accuracy_grid().origin
    rows = []
    for angle_idx, theta in enumerate(cfg.accuracy_angles_deg):
        pose = HeadPose(center=center, yaw=float(np.deg2rad(theta)))
        kp_true = true_keypoints(geom, pose)
        e_left = 0.0
        e_right = 0.0
        for rep in range(reps):
            obs = cfg.observation_model(derive_seed(seed, _TAG_ROTATE, angle_idx, rep))
            est = infer_true_ears(observe(geom, pose, cam, obs, cfg.camera_distance))
            e_left += float(
                np.linalg.norm(camera_to_world(est.left, cfg.camera_distance) - kp_true.left_ear)
            )
            e_right += float(
                np.linalg.norm(
                    camera_to_world(est.right, cfg.camera_distance) - kp_true.right_ear
                )
            )
        rows.append(
            RotationErrorRow(
                theta_deg=float(theta),
                e_left_mm=e_left / reps * 1000.0,
                e_right_mm=e_right / reps * 1000.0,
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Control experiments


def run_anc_translation(cfg: Config, bank: FilterBank, seed: int = 0) -> list:
    """Binaural NR at every bank node under Ideal, EP-off and EP-on.

    Ideal uses the filter trained at the head's true node; EP-off stays on
    the initial node's filter; EP-on selects through the full positioning
    and protocol chain.  Acoustic noise seeds are shared across nodes and
    conditions so differences are attributable to the filters alone.
    """
    geom = canonical_head()
    scene = cfg.acoustic_scene()
    grid = bank.grid
    initial = tuple(cfg.initial_node)
    if initial not in bank.entries:
        raise ValueError(f"initial node {initial} missing from bank")
    ep_off_filter = bank.entries[initial]
    duration = cfg.control_duration
    band = cfg.band

    rows = []
    for node in grid.indices():
        pose = HeadPose(center=grid.node(*node))
        kp = true_keypoints(geom, pose)
        plant = derive_plant(scene, (kp.left_ear, kp.right_ear))
        lin = grid.linear_index(*node)
        acc = {cond: [] for cond in Condition}
        for s in range(cfg.nr_seeds):
            msg = ep_position_message(
                pose, cfg, derive_seed(seed, _TAG_NR_OBS, lin, s), geom
            )
            filters = {
                Condition.IDEAL: bank.entries[node],
                Condition.EP_OFF: ep_off_filter,
                Condition.EP_ON: _select_via_wire(bank, msg),
            }
            nr = _binaural_nr(
                plant, filters, derive_seed(seed, _TAG_NR_NOISE, s), duration, band
            )
            for cond in Condition:
                acc[cond].append(nr[cond])
        for cond in Condition:
            pair = np.mean(acc[cond], axis=0)
            rows.append(NrCell(node, cond, float(pair[0]), float(pair[1])))
    return rows


def train_rotation_filters(cfg: Config, seed: int = 0) -> dict:
    """One converged filter per evaluation yaw angle, head at the rotation node."""
    geom = canonical_head()
    scene = cfg.acoustic_scene()
    center = cfg.anc_grid().node(*cfg.rotation_node)
    fx = cfg.fxlms()
    filters = {}
    for idx, theta in enumerate(cfg.anc_angles_deg):
        pose = HeadPose(center=center, yaw=float(np.deg2rad(theta)))
        kp = true_keypoints(geom, pose)
        plant = derive_plant(scene, (kp.left_ear, kp.right_ear))
        filters[float(theta)] = train_fxlms(
            plant, derive_seed(seed, _TAG_ROT_TRAIN, idx), fx
        )
    return filters


def run_anc_rotation(
    cfg: Config, seed: int = 0, filters: dict | None = None
) -> list:
    """Binaural NR across yaw angles at the rotation node, three conditions.

    EP-on picks the angle filter nearest the yaw implied by the estimated
    ear axis; EP-off keeps the first (frontal) angle's filter.
    """
    if filters is None:
        filters = train_rotation_filters(cfg, seed)
    angles = [float(t) for t in cfg.anc_angles_deg]
    missing = [t for t in angles if t not in filters]
    if missing:
        raise ValueError(f"no trained filter for angles {missing}")
    geom = canonical_head()
    scene = cfg.acoustic_scene()
    center = cfg.anc_grid().node(*cfg.rotation_node)
    duration = cfg.control_duration
    band = cfg.band

    rows = []
    for idx, theta in enumerate(angles):
        pose = HeadPose(center=center, yaw=float(np.deg2rad(theta)))
        kp = true_keypoints(geom, pose)
        plant = derive_plant(scene, (kp.left_ear, kp.right_ear))
        acc = {cond: [] for cond in Condition}
        for s in range(cfg.nr_seeds):
            msg = ep_position_message(
                pose, cfg, derive_seed(seed, _TAG_ROT_NR_OBS, idx, s), geom
            )
            theta_est = estimated_yaw_deg(msg)
            selected = min(angles, key=lambda a: abs(a - theta_est))
            cond_filters = {
                Condition.IDEAL: filters[theta],
                Condition.EP_OFF: filters[angles[0]],
                Condition.EP_ON: filters[selected],
            }
            nr = _binaural_nr(
                plant, cond_filters, derive_seed(seed, _TAG_ROT_NR_NOISE, s), duration, band
            )
            for cond in Condition:
                acc[cond].append(nr[cond])
        for cond in Condition:
            pair = np.mean(acc[cond], axis=0)
            rows.append(RotationNrCell(theta, cond, float(pair[0]), float(pair[1])))
    return rows


def run_spectra(
    cfg: Config, bank: FilterBank, seed: int = 0, node: tuple | None = None
) -> dict:
    """In-band level spectra at both ears for one displaced node.

    Returns ``{"left": [SpectrumRow...], "right": [...]}`` covering the
    uncontrolled signal and all three conditions on a shared noise draw.
    """
    grid = bank.grid
    node = tuple(node) if node is not None else tuple(cfg.spectra_node)
    if node not in bank.entries:
        raise ValueError(f"node {node} outside the trained grid")
    geom = canonical_head()
    scene = cfg.acoustic_scene()
    pose = HeadPose(center=grid.node(*node))
    kp = true_keypoints(geom, pose)
    plant = derive_plant(scene, (kp.left_ear, kp.right_ear))

    msg = ep_position_message(pose, cfg, derive_seed(seed, _TAG_SPECTRA, 1), geom)
    filters = {
        Condition.IDEAL: bank.entries[node],
        Condition.EP_OFF: bank.entries[tuple(cfg.initial_node)],
        Condition.EP_ON: _select_via_wire(bank, msg),
    }

    fs = plant.sample_rate
    band = cfg.band
    v = band_noise(band[0], band[1], cfg.control_duration, derive_seed(seed, _TAG_SPECTRA), fs)
    x = propagate(v, plant.reference_path)
    before = np.stack([propagate(v, p) for p in plant.primary_paths])
    signals = {"before": before}
    for cond, filt in filters.items():
        after = before.copy()
        for m in range(filt.n_sources):
            y = np.convolve(x, filt.taps[m])[: x.size]
            for e in range(plant.n_errors):
                after[e] += propagate(y, plant.secondary_paths[m][e])
        signals[cond] = after

    out = {}
    for ear_idx, ear in enumerate(("left", "right")):
        spectra = {
            name: spl_spectrum(sig[ear_idx], sample_rate=fs)
            for name, sig in signals.items()
        }
        freqs = spectra["before"].frequencies
        sel = (freqs >= band[0]) & (freqs <= band[1])
        out[ear] = [
            SpectrumRow(
                freq_hz=float(freqs[i]),
                before_db=float(spectra["before"].levels[i]),
                ideal_db=float(spectra[Condition.IDEAL].levels[i]),
                epoff_db=float(spectra[Condition.EP_OFF].levels[i]),
                epon_db=float(spectra[Condition.EP_ON].levels[i]),
            )
            for i in np.flatnonzero(sel)
        ]
    return out


# ---------------------------------------------------------------------------
# Output files


def _format_value(value) -> str:
    if isinstance(value, Condition):
        return value.value
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return " ".join(str(v) for v in value)
    return str(value)


def write_rows(path, rows, cfg: Config, run: dict) -> None:
    """Write one experiment table as CSV with the resolved config embedded.

    The header is the configuration (plus a [run] metadata block) with
    each line '#'-prefixed; stripping the prefix yields a loadable file.
    Identical inputs produce byte-identical output.
    """
    if not rows:
        raise ValueError("no rows to write")
    names = [f.name for f in dataclasses.fields(rows[0])]
    lines = []
    for line in cfg.render(run=run).splitlines():
        lines.append(f"# {line}" if line else "#")
    lines.append(",".join(names))
    for row in rows:
        lines.append(",".join(_format_value(getattr(row, n)) for n in names))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
