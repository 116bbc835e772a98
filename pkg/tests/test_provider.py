import json
import socket
import threading
import time

import numpy as np
import pytest

from headrest.geometry import KeypointSet3D
from headrest.provider import (
    CONFIDENCE_GATE,
    FRAME_INTERVAL_US,
    KeypointFrame,
    LiveProvider,
    MalformedFrame,
    NoSubject,
    ReplayProvider,
    StreamStalled,
    SyntheticProvider,
    instants,
    parse_frame,
    select_subject,
    serialize_frame,
    write_stream,
)
from headrest.scene import GridSpec, HeadPose, ObservationModel, grid_sweep


def _frame(t_us=0, subject=0, depth=1.0, conf=1.0):
    pts = np.array(
        [
            [0.0, 0.0, depth],
            [0.08, 0.0, depth],
            [-0.08, 0.0, depth],
            [0.03, -0.04, depth],
            [-0.03, -0.04, depth],
        ]
    )
    kp = KeypointSet3D(
        pts[0], pts[1], pts[2], pts[3], pts[4], confidence=np.full(5, conf)
    )
    return KeypointFrame(timestamp_us=t_us, subject_id=subject, keypoints=kp)


class TestSerialization:
    def test_line_layout(self):
        line = serialize_frame(_frame(t_us=31250, subject=2))
        obj = json.loads(line)
        assert obj["t_us"] == 31250
        assert obj["subject"] == 2
        assert len(obj["kp"]) == 5
        assert all(len(entry) == 4 for entry in obj["kp"])

    def test_round_trip_is_bit_exact(self):
        rng = np.random.default_rng(21)
        for t in range(20):
            pts = rng.normal(size=(5, 3)) * 0.1 + [0, 0, 1]
            conf = rng.uniform(0, 1, 5)
            kp = KeypointSet3D(*pts, confidence=conf)
            frame = KeypointFrame(timestamp_us=t * 31250, subject_id=0, keypoints=kp)
            back = parse_frame(serialize_frame(frame))
            assert np.array_equal(back.keypoints.points(), pts)
            assert np.array_equal(back.keypoints.confidence, conf)
            assert back.timestamp_us == frame.timestamp_us

    @pytest.mark.parametrize(
        "line,fragment",
        [
            ("{not json", "invalid JSON"),
            ("[1,2,3]", "not a JSON object"),
            ('{"subject":0,"kp":[]}', "t_us"),
            ('{"t_us":0,"kp":[]}', "subject"),
            ('{"t_us":-5,"subject":0,"kp":[]}', "non-negative"),
            ('{"t_us":true,"subject":0,"kp":[]}', "non-negative"),
            ('{"t_us":0,"subject":0,"kp":[[1,2,3,1]]}', "5 keypoints"),
            (
                '{"t_us":0,"subject":0,"kp":[[1,2,3],[1,2,3,1],[1,2,3,1],[1,2,3,1],[1,2,3,1]]}',
                "[x, y, z, conf]",
            ),
            (
                '{"t_us":0,"subject":0,"kp":[[1,2,NaN,1],[1,2,3,1],[1,2,3,1],[1,2,3,1],[1,2,3,1]]}',
                "finite",
            ),
        ],
    )
    def test_defective_lines_rejected(self, line, fragment):
        with pytest.raises(MalformedFrame) as exc:
            parse_frame(line, line_number=7)
        assert exc.value.line_number == 7
        assert fragment in str(exc.value)


class TestSyntheticProvider:
    def test_three_pose_sweep_timestamps(self):
        poses = [HeadPose(center=np.array([0.01 * i, 0, 0])) for i in range(3)]
        frames = list(SyntheticProvider(poses, observation=ObservationModel(seed=1)))
        assert len(frames) == 3
        assert [f.timestamp_us for f in frames] == [0, FRAME_INTERVAL_US, 2 * FRAME_INTERVAL_US]

    def test_camera_rate_interval(self):
        # 32 frames per second -> successive stamps differ by 31250 us
        assert FRAME_INTERVAL_US == round(1e6 / 32)

    def test_stream_is_reproducible(self):
        grid = GridSpec(origin=np.zeros(3), spacing=0.025, nx=2, ny=2, nz=1)
        poses = grid_sweep(grid, yaw=0.0)
        a = [f.keypoints.points() for f in SyntheticProvider(poses, observation=ObservationModel(seed=5))]
        b = [f.keypoints.points() for f in SyntheticProvider(poses, observation=ObservationModel(seed=5))]
        for x, y in zip(a, b):
            assert np.array_equal(x, y)

    def test_frames_differ_across_poses(self):
        poses = [HeadPose(center=np.zeros(3))] * 2
        frames = list(SyntheticProvider(poses, observation=ObservationModel(seed=5)))
        # same pose, different per-frame seeds -> different noise draws
        assert not np.array_equal(frames[0].keypoints.points(), frames[1].keypoints.points())


class TestReplayProvider:
    def test_round_trip_through_file(self, tmp_path):
        poses = grid_sweep(GridSpec(origin=np.zeros(3), spacing=0.025, nx=3, ny=1, nz=1), 0.0)
        original = list(SyntheticProvider(poses, observation=ObservationModel(seed=9)))
        path = tmp_path / "stream.jsonl"
        assert write_stream(original, path) == 3
        replayed = list(ReplayProvider(path))
        assert len(replayed) == len(original)
        for a, b in zip(original, replayed):
            assert a.timestamp_us == b.timestamp_us
            assert a.subject_id == b.subject_id
            assert np.array_equal(a.keypoints.points(), b.keypoints.points())

    def test_corrupt_line_reported_with_its_number(self, tmp_path):
        frames = [_frame(t_us=i * 31250) for i in range(10)]
        lines = [serialize_frame(f) for f in frames]
        lines[6] = lines[6][:20] + "#" + lines[6][21:]
        path = tmp_path / "bad.jsonl"
        path.write_text("\n".join(lines) + "\n")
        provider = ReplayProvider(path)
        got = [provider.next_frame() for _ in range(6)]
        assert all(g is not None for g in got)
        with pytest.raises(MalformedFrame) as exc:
            provider.next_frame()
        assert exc.value.line_number == 7

    def test_low_confidence_frames_skipped_and_counted(self):
        lines = [
            serialize_frame(_frame(t_us=0, conf=0.9)),
            serialize_frame(_frame(t_us=31250, conf=0.1)),
            serialize_frame(_frame(t_us=62500, conf=0.31)),
            serialize_frame(_frame(t_us=93750, conf=0.29)),
        ]
        provider = ReplayProvider(lines)
        out = list(provider)
        assert [f.timestamp_us for f in out] == [0, 62500]
        assert provider.skipped == 2
        assert CONFIDENCE_GATE == 0.3

    def test_gating_keeps_timestamps_increasing(self):
        rng = np.random.default_rng(3)
        lines = [
            serialize_frame(_frame(t_us=i * 31250, conf=float(rng.uniform(0, 1))))
            for i in range(50)
        ]
        out = list(ReplayProvider(lines))
        stamps = [f.timestamp_us for f in out]
        assert stamps == sorted(stamps)
        assert len(set(stamps)) == len(stamps)

    def test_non_increasing_timestamp_rejected(self):
        lines = [
            serialize_frame(_frame(t_us=31250)),
            serialize_frame(_frame(t_us=31250)),
        ]
        provider = ReplayProvider(lines)
        provider.next_frame()
        with pytest.raises(MalformedFrame) as exc:
            provider.next_frame()
        assert "not after" in str(exc.value)

    def test_interleaved_subjects_may_share_timestamps(self):
        lines = []
        for i in range(3):
            lines.append(serialize_frame(_frame(t_us=i * 31250, subject=0, depth=0.8)))
            lines.append(serialize_frame(_frame(t_us=i * 31250, subject=1, depth=1.5)))
        groups = list(instants(ReplayProvider(lines)))
        assert len(groups) == 3
        assert all(len(g) == 2 for g in groups)


class TestSelectSubject:
    def test_single_subject_passes_through(self):
        f = _frame(depth=1.2)
        assert select_subject([f]) is f

    def test_nearest_of_two(self):
        near = _frame(subject=4, depth=0.8)
        far = _frame(subject=9, depth=1.5)
        assert select_subject([far, near]).subject_id == 4

    def test_empty_group_raises(self):
        with pytest.raises(NoSubject):
            select_subject([])

    def test_custom_policy(self):
        a, b = _frame(subject=0, depth=0.5), _frame(subject=1, depth=2.0)
        chosen = select_subject([a, b], policy=lambda fs: fs[-1])
        assert chosen is b


class TestLiveProvider:
    def _pair(self):
        return socket.socketpair()

    def test_reads_frames_as_they_arrive(self):
        tx, rx = self._pair()
        provider = LiveProvider(rx, timeout=2.0)
        payload = b"".join(
            serialize_frame(_frame(t_us=i * 31250)).encode() + b"\n" for i in range(3)
        )
        tx.sendall(payload)
        frames = [provider.next_frame() for _ in range(3)]
        assert [f.timestamp_us for f in frames] == [0, 31250, 62500]
        tx.close()
        assert provider.next_frame() is None
        rx.close()

    def test_partial_line_then_completion(self):
        tx, rx = self._pair()
        provider = LiveProvider(rx, timeout=2.0)
        line = serialize_frame(_frame(t_us=0)).encode() + b"\n"
        tx.sendall(line[:10])

        def finish():
            time.sleep(0.05)
            tx.sendall(line[10:])

        t = threading.Thread(target=finish)
        t.start()
        frame = provider.next_frame()
        t.join()
        assert frame is not None and frame.timestamp_us == 0
        tx.close()
        rx.close()

    def test_stall_raises_then_recovers(self):
        tx, rx = self._pair()
        provider = LiveProvider(rx, timeout=0.05)
        with pytest.raises(StreamStalled):
            provider.next_frame()
        tx.sendall(serialize_frame(_frame(t_us=0)).encode() + b"\n")
        frame = provider.next_frame()
        assert frame is not None and frame.timestamp_us == 0
        tx.close()
        rx.close()
