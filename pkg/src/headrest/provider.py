"""Timestamped keypoint frame streams.

A provider hands out :class:`KeypointFrame` objects one at a time, whatever
their origin: generated from the synthetic scene, replayed from a recorded
JSON Lines file, or read live from a byte stream produced by an external
tracker front-end.  All three share the same gating behaviour: frames whose
weakest keypoint confidence falls below the gate are silently skipped and
counted.

Stream format (one frame per line, UTF-8, LF terminated)::

    {"t_us": 31250, "subject": 0, "kp": [[x, y, z, conf], ... 5 entries]}

Keypoint order is nose, left ear, right ear, left eye, right eye.
Coordinates are camera-frame meters.
"""

from __future__ import annotations

import io
import json
import math
import os
import selectors
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from .geometry import CameraModel, KeypointSet3D
from .scene import (
    DEFAULT_CAMERA,
    DEFAULT_CAMERA_DISTANCE,
    HeadGeometry,
    HeadPose,
    ObservationModel,
    canonical_head,
    derive_seed,
    observe,
)

#: Interval between frames at the nominal 32 frames-per-second camera rate.
FRAME_INTERVAL_US = 31250

#: Default minimum per-keypoint confidence for a frame to be delivered.
CONFIDENCE_GATE = 0.3

_KEYPOINT_COUNT = 5


class MalformedFrame(ValueError):
    """A stream line could not be decoded into a valid frame."""

    def __init__(self, line_number: int, reason: str):
        super().__init__(f"line {line_number}: {reason}")
        self.line_number = line_number
        self.reason = reason


class StreamStalled(RuntimeError):
    """A live source produced no complete line within the timeout."""


class NoSubject(ValueError):
    """Subject selection was asked to choose from an empty group."""


@dataclass(frozen=True)
class KeypointFrame:
    """One observation instant for one tracked subject."""

    timestamp_us: int
    subject_id: int
    keypoints: KeypointSet3D

    def mean_depth(self) -> float:
        """Mean keypoint depth, used by the nearest-subject policy."""
        return float(np.mean(self.keypoints.points()[:, 2]))


def serialize_frame(frame: KeypointFrame) -> str:
    """Encode a frame as a single JSON line (no trailing newline).

    Floats are written with ``repr`` precision so that parsing the line
    back yields bit-identical coordinates.
    """
    pts = frame.keypoints.points()
    conf = frame.keypoints.confidence
    kp = [
        [float(pts[i, 0]), float(pts[i, 1]), float(pts[i, 2]), float(conf[i])]
        for i in range(_KEYPOINT_COUNT)
    ]
    return json.dumps(
        {"t_us": int(frame.timestamp_us), "subject": int(frame.subject_id), "kp": kp},
        separators=(",", ":"),
    )


def parse_frame(line: str, line_number: int = 0) -> KeypointFrame:
    """Decode one stream line, raising :class:`MalformedFrame` on any defect."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise MalformedFrame(line_number, f"invalid JSON ({exc.msg})") from exc
    if not isinstance(obj, dict):
        raise MalformedFrame(line_number, "frame is not a JSON object")
    try:
        t_us = obj["t_us"]
        subject = obj["subject"]
        kp = obj["kp"]
    except KeyError as exc:
        raise MalformedFrame(line_number, f"missing field {exc.args[0]!r}") from exc
    if not isinstance(t_us, int) or isinstance(t_us, bool) or t_us < 0:
        raise MalformedFrame(line_number, "t_us must be a non-negative integer")
    if not isinstance(subject, int) or isinstance(subject, bool) or subject < 0:
        raise MalformedFrame(line_number, "subject must be a non-negative integer")
    if not isinstance(kp, list) or len(kp) != _KEYPOINT_COUNT:
        raise MalformedFrame(line_number, f"kp must list {_KEYPOINT_COUNT} keypoints")
    rows = []
    for entry in kp:
        if not isinstance(entry, list) or len(entry) != 4:
            raise MalformedFrame(line_number, "each keypoint must be [x, y, z, conf]")
        if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in entry):
            raise MalformedFrame(line_number, "keypoint values must be finite numbers")
        rows.append([float(v) for v in entry])
    arr = np.array(rows)
    keypoints = KeypointSet3D(
        nose=arr[0, :3],
        left_ear=arr[1, :3],
        right_ear=arr[2, :3],
        left_eye=arr[3, :3],
        right_eye=arr[4, :3],
        confidence=arr[:, 3].copy(),
    )
    return KeypointFrame(timestamp_us=t_us, subject_id=subject, keypoints=keypoints)


def write_stream(frames: Iterable[KeypointFrame], path: str | os.PathLike) -> int:
    """Write frames to a JSON Lines file; returns the number written."""
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for frame in frames:
            fh.write(serialize_frame(frame) + "\n")
            n += 1
    return n


class _GatedProvider:
    """Shared skip-and-count gating plus the iterator protocol."""

    def __init__(self, confidence_gate: float = CONFIDENCE_GATE):
        self.confidence_gate = confidence_gate
        self.skipped = 0
        self._last_t: dict[int, int] = {}

    def _produce(self) -> KeypointFrame | None:  # pragma: no cover - abstract
        raise NotImplementedError

    def _check_order(self, frame: KeypointFrame, line_number: int) -> None:
        prev = self._last_t.get(frame.subject_id)
        if prev is not None and frame.timestamp_us <= prev:
            raise MalformedFrame(
                line_number,
                f"timestamp {frame.timestamp_us} not after {prev} "
                f"for subject {frame.subject_id}",
            )
        self._last_t[frame.subject_id] = frame.timestamp_us

    def next_frame(self) -> KeypointFrame | None:
        """The next frame passing the confidence gate, or None at end."""
        while True:
            frame = self._produce()
            if frame is None:
                return None
            if float(np.min(frame.keypoints.confidence)) < self.confidence_gate:
                self.skipped += 1
                continue
            return frame

    def __iter__(self) -> Iterator[KeypointFrame]:
        return self

    def __next__(self) -> KeypointFrame:
        frame = self.next_frame()
        if frame is None:
            raise StopIteration
        return frame


class SyntheticProvider(_GatedProvider):
    """Frames rendered from the synthetic head scene, one per pose.

    Each frame gets its own observation seed derived from (base seed, frame
    index), so the stream is reproducible regardless of how far it is read.
    """

    def __init__(
        self,
        poses: Sequence[HeadPose],
        *,
        geometry: HeadGeometry | None = None,
        camera: CameraModel = DEFAULT_CAMERA,
        observation: ObservationModel | None = None,
        frame_interval_us: int = FRAME_INTERVAL_US,
        subject_id: int = 0,
        confidence_gate: float = CONFIDENCE_GATE,
        camera_distance: float = DEFAULT_CAMERA_DISTANCE,
    ):
        super().__init__(confidence_gate)
        self._poses = list(poses)
        self._geometry = geometry if geometry is not None else canonical_head()
        self._camera = camera
        self._observation = observation if observation is not None else ObservationModel()
        self._interval = frame_interval_us
        self._subject = subject_id
        self._camera_distance = camera_distance
        self._index = 0

    def _produce(self) -> KeypointFrame | None:
        if self._index >= len(self._poses):
            return None
        i = self._index
        self._index += 1
        obs = self._observation.with_seed(derive_seed(self._observation.seed, i))
        kp = observe(
            self._geometry, self._poses[i], self._camera, obs, self._camera_distance
        )
        frame = KeypointFrame(
            timestamp_us=i * self._interval, subject_id=self._subject, keypoints=kp
        )
        self._check_order(frame, i)
        return frame


class ReplayProvider(_GatedProvider):
    """Frames parsed from a recorded JSON Lines file or line iterable."""

    def __init__(
        self,
        source: str | os.PathLike | io.TextIOBase | Iterable[str],
        *,
        confidence_gate: float = CONFIDENCE_GATE,
    ):
        super().__init__(confidence_gate)
        if isinstance(source, (str, os.PathLike)):
            with open(source, "r", encoding="utf-8") as fh:
                self._lines: Iterator[str] = iter(fh.read().splitlines())
        else:
            self._lines = iter(source)
        self._line_number = 0

    def _produce(self) -> KeypointFrame | None:
        for line in self._lines:
            self._line_number += 1
            if not line.strip():
                continue
            frame = parse_frame(line, self._line_number)
            self._check_order(frame, self._line_number)
            return frame
        return None


class LiveProvider(_GatedProvider):
    """Frames read line-by-line from a byte stream as they arrive.

    The stream should be a socket or an *unbuffered* binary file-like
    object (``open(fd, "rb", buffering=0)``, ``Popen(..., bufsize=0)``);
    readiness is checked on the underlying file descriptor, so a
    Python-level read buffer would defeat the stall detection.  If
    ``timeout`` is set and no complete line arrives within that many
    seconds, :class:`StreamStalled` is raised; the provider stays usable
    should the source come back.
    """

    def __init__(
        self,
        stream,
        *,
        timeout: float | None = None,
        confidence_gate: float = CONFIDENCE_GATE,
    ):
        super().__init__(confidence_gate)
        self._stream = stream
        self._timeout = timeout
        self._buffer = bytearray()
        self._eof = False
        self._line_number = 0

    def _read_chunk(self) -> bytes:
        if self._timeout is not None:
            sel = selectors.DefaultSelector()
            try:
                sel.register(self._stream, selectors.EVENT_READ)
                if not sel.select(self._timeout):
                    raise StreamStalled(
                        f"no data within {self._timeout:.3f} s"
                    )
            finally:
                sel.close()
        if hasattr(self._stream, "recv"):
            return self._stream.recv(4096)
        return self._stream.read(4096)

    def _next_line(self) -> str | None:
        while True:
            nl = self._buffer.find(b"\n")
            if nl >= 0:
                raw = bytes(self._buffer[:nl])
                del self._buffer[: nl + 1]
                return raw.decode("utf-8")
            if self._eof:
                return None
            chunk = self._read_chunk()
            if not chunk:
                self._eof = True
            else:
                self._buffer.extend(chunk)

    def _produce(self) -> KeypointFrame | None:
        while True:
            line = self._next_line()
            if line is None:
                return None
            self._line_number += 1
            if not line.strip():
                continue
            frame = parse_frame(line, self._line_number)
            self._check_order(frame, self._line_number)
            return frame


SubjectPolicy = Callable[[Sequence[KeypointFrame]], KeypointFrame]


def _nearest(frames: Sequence[KeypointFrame]) -> KeypointFrame:
    return min(frames, key=KeypointFrame.mean_depth)


_POLICIES: dict[str, SubjectPolicy] = {"nearest": _nearest}


def select_subject(
    frames: Sequence[KeypointFrame], policy: str | SubjectPolicy = "nearest"
) -> KeypointFrame:
    """Pick one subject's frame from a same-instant group.

    The default ``"nearest"`` policy keeps the subject with the smallest
    mean keypoint depth (the head closest to the camera).
    """
    if len(frames) == 0:
        raise NoSubject("no subjects in frame group")
    chooser = _POLICIES[policy] if isinstance(policy, str) else policy
    return chooser(frames)


def instants(provider: _GatedProvider) -> Iterator[list[KeypointFrame]]:
    """Group a provider's frames by identical timestamp.

    Yields lists of frames sharing one ``timestamp_us`` (one entry per
    subject), preserving stream order within each group.
    """
    group: list[KeypointFrame] = []
    for frame in provider:
        if group and frame.timestamp_us != group[0].timestamp_us:
            yield group
            group = []
        group.append(frame)
    if group:
        yield group
