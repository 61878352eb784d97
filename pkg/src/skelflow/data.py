"""Pose tracks, sliding-window segments, and the synthetic benchmark.

The on-disk interchange format is line-delimited JSON, one tracked person per
line: {"video", "person", "start_frame", "width", "height", "frames"} where
frames is a list of per-frame keypoint lists [[x, y, confidence] * V]. An
optional "labels" field carries per-frame 0/1 anomaly ground truth for
evaluation sets.

Coordinates are normalized to [-1, 1] via x' = 2x/width - 1 (same for y);
confidence is dropped unless explicitly retained. Segments are all length-T
windows of a normalized track at a fixed stride, stored channel-first
(C, T, V).

The synthetic generators produce a walking figure on the standard 18-joint
skeleton plus three anomaly families: a vertical collapse (fall), a velocity
burst (run), and a frozen pose with instantaneous teleports.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .graph import DEFAULT_JOINT_COUNT
from .rng import Rng

__all__ = [
    "TrackFormatError",
    "PoseTrack",
    "NormalizedTrack",
    "PoseSegment",
    "SegmentDataset",
    "SynthParams",
    "load_tracks",
    "write_tracks",
    "normalize_keypoints",
    "make_windows",
    "build_dataset",
    "synth_normal",
    "synth_anomalous",
    "add_noise",
    "contaminate",
    "ANOMALY_KINDS",
]

ANOMALY_KINDS = ("fall", "run", "teleport")


class TrackFormatError(ValueError):
    """Malformed track file; the message carries path and line number."""


@dataclass
class PoseTrack:
    video: str
    person: int
    start_frame: int
    width: float
    height: float
    keypoints: np.ndarray            # (F, V, 3): pixel x, y, confidence
    labels: np.ndarray | None = None  # (F,) 0/1, evaluation only

    @property
    def frame_count(self) -> int:
        return self.keypoints.shape[0]

    @property
    def joint_count(self) -> int:
        return self.keypoints.shape[1]


@dataclass
class NormalizedTrack:
    video: str
    person: int
    start_frame: int
    coords: np.ndarray               # (F, V, C) in [-1, 1] (C=2, or 3 with confidence)
    labels: np.ndarray | None = None


@dataclass
class PoseSegment:
    x: np.ndarray                    # (C, T, V)
    video: str
    person: int
    start_frame: int                 # first covered frame

    @property
    def window(self) -> int:
        return self.x.shape[1]


@dataclass
class SegmentDataset:
    segments: list[PoseSegment]
    frame_labels: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.segments)

    def stacked(self, indices=None) -> np.ndarray:
        segs = self.segments if indices is None else [self.segments[i] for i in indices]
        return np.stack([s.x for s in segs], axis=0)


# -- track file IO -------------------------------------------------------------


_REQUIRED = ("video", "person", "start_frame", "width", "height", "frames")


def load_tracks(path: str, joint_count: int | None = None) -> list[PoseTrack]:
    """Parse a line-delimited JSON track file, rejecting bad lines by number."""
    tracks: list[PoseTrack] = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as err:
                raise TrackFormatError(f"{where}: invalid json ({err.msg})") from None
            if not isinstance(rec, dict):
                raise TrackFormatError(f"{where}: record is not an object")
            for key in _REQUIRED:
                if key not in rec:
                    raise TrackFormatError(f"{where}: missing field {key!r}")
            width, height = float(rec["width"]), float(rec["height"])
            if width <= 0 or height <= 0:
                raise TrackFormatError(f"{where}: nonpositive image size")
            frames = rec["frames"]
            if not isinstance(frames, list) or not frames:
                raise TrackFormatError(f"{where}: frames must be a nonempty list")
            try:
                kp = np.asarray(frames, dtype=np.float64)
            except ValueError:
                raise TrackFormatError(f"{where}: ragged frames array") from None
            if kp.ndim != 3 or kp.shape[2] != 3:
                raise TrackFormatError(
                    f"{where}: frames must be (F, V, 3), got {kp.shape}")
            if joint_count is not None and kp.shape[1] != joint_count:
                raise TrackFormatError(
                    f"{where}: expected {joint_count} joints, got {kp.shape[1]}")
            if not np.isfinite(kp).all():
                raise TrackFormatError(f"{where}: non-finite keypoint values")
            conf = kp[:, :, 2]
            if (conf < 0).any() or (conf > 1).any():
                raise TrackFormatError(f"{where}: confidence outside [0, 1]")
            labels = None
            if rec.get("labels") is not None:
                labels = np.asarray(rec["labels"], dtype=np.int64)
                if labels.shape != (kp.shape[0],):
                    raise TrackFormatError(f"{where}: labels length != frame count")
                if not np.isin(labels, (0, 1)).all():
                    raise TrackFormatError(f"{where}: labels must be 0/1")
            tracks.append(PoseTrack(
                video=str(rec["video"]), person=int(rec["person"]),
                start_frame=int(rec["start_frame"]), width=width, height=height,
                keypoints=kp, labels=labels))
    return tracks


def write_tracks(path: str, tracks: list[PoseTrack]) -> None:
    with open(path, "w") as fh:
        for t in tracks:
            rec = {
                "video": t.video, "person": t.person,
                "start_frame": t.start_frame,
                "width": t.width, "height": t.height,
                "frames": t.keypoints.tolist(),
            }
            if t.labels is not None:
                rec["labels"] = [int(v) for v in t.labels]
            fh.write(json.dumps(rec))
            fh.write("\n")


# -- normalization and windowing --------------------------------------------------


def normalize_keypoints(track: PoseTrack, keep_confidence: bool = False) -> NormalizedTrack:
    """Map pixel coordinates to [-1, 1]; drop (or retain) the confidence channel."""
    if track.width <= 0 or track.height <= 0:
        raise ValueError("track has nonpositive image size")
    xy = np.empty_like(track.keypoints[:, :, :2])
    xy[:, :, 0] = 2.0 * (track.keypoints[:, :, 0] / track.width) - 1.0
    xy[:, :, 1] = 2.0 * (track.keypoints[:, :, 1] / track.height) - 1.0
    coords = np.concatenate([xy, track.keypoints[:, :, 2:3]], axis=2) \
        if keep_confidence else xy
    return NormalizedTrack(track.video, track.person, track.start_frame,
                           coords, track.labels)


def make_windows(track: NormalizedTrack, window: int, stride: int = 1) -> list[PoseSegment]:
    """All length-`window` contiguous views at the given stride, channel-first."""
    if window < 1 or stride < 1:
        raise ValueError("window and stride must be positive")
    f = track.coords.shape[0]
    out = []
    for start in range(0, f - window + 1, stride):
        block = track.coords[start:start + window]          # (T, V, C)
        out.append(PoseSegment(
            x=np.ascontiguousarray(block.transpose(2, 0, 1)),
            video=track.video, person=track.person,
            start_frame=track.start_frame + start))
    return out


def build_dataset(tracks: list[PoseTrack], window: int, stride: int = 1,
                  keep_confidence: bool = False) -> SegmentDataset:
    """Normalize, window, and collect frame labels per video.

    A frame is anomalous if any person is anomalous on it; frames no track
    labels default to 0.
    """
    segments: list[PoseSegment] = []
    lengths: dict[str, int] = {}
    for t in tracks:
        end = t.start_frame + t.frame_count
        lengths[t.video] = max(lengths.get(t.video, 0), end)
    labels = {video: np.zeros(n, dtype=np.int64) for video, n in lengths.items()}
    for t in tracks:
        nt = normalize_keypoints(t, keep_confidence)
        segments.extend(make_windows(nt, window, stride))
        if t.labels is not None:
            sl = labels[t.video][t.start_frame:t.start_frame + t.frame_count]
            np.maximum(sl, t.labels, out=sl)
    return SegmentDataset(segments=segments, frame_labels=labels)


# -- synthetic benchmark ------------------------------------------------------------


@dataclass(frozen=True)
class SynthParams:
    """Geometry and kinematics of the synthetic walker benchmark (pixels)."""

    image_width: float = 640.0
    image_height: float = 480.0
    body_scale_lo: float = 90.0      # half body height in px
    body_scale_hi: float = 130.0
    walk_speed_lo: float = 0.4       # horizontal drift, px/frame
    walk_speed_hi: float = 1.8
    walk_margin_frac: float = 0.25   # walkers patrol the central band
    gait_freq_lo: float = 0.15       # rad/frame
    gait_freq_hi: float = 0.35
    swing_px: float = 6.0            # limb swing amplitude
    bob_px: float = 1.5              # vertical body bob (at twice gait freq)
    jitter_px: float = 0.8           # uniform per-joint, per-frame jitter
    fall_drop_px: float = 150.0      # hip drop during a fall
    fall_frames: int = 8
    run_speed_lo: float = 8.0
    run_speed_hi: float = 14.0
    run_lean: float = 0.22           # forward lean of the torso, body units
    run_margin_frac: float = 0.06    # runners cross nearly the whole frame
    teleport_jump_px: float = 170.0
    teleport_period: int = 5

    def frame_step_bound(self) -> float:
        """Upper bound on per-frame joint displacement for NORMAL tracks (px)."""
        swing_step = self.swing_px * self.gait_freq_hi
        bob_step = self.bob_px * 2.0 * self.gait_freq_hi
        return self.walk_speed_hi + swing_step + bob_step + 2.0 * self.jitter_px + 0.5


# standing template, in units of body scale: x right, y down, hips at 0
_STAND = np.array([
    (0.00, -0.95),    # nose
    (0.00, -0.60),    # neck
    (-0.20, -0.60), (-0.30, -0.25), (-0.35, 0.05),   # right arm
    (0.20, -0.60), (0.30, -0.25), (0.35, 0.05),      # left arm
    (-0.13, 0.00), (-0.14, 0.50), (-0.15, 1.00),     # right leg
    (0.13, 0.00), (0.14, 0.50), (0.15, 1.00),        # left leg
    (-0.06, -1.00), (0.06, -1.00),                   # eyes
    (-0.12, -0.95), (0.12, -0.95),                   # ears
])

# collapsed template: body horizontal near the ground line
_LYING = np.array([
    (-0.90, 0.02),
    (-0.60, 0.03),
    (-0.60, -0.12), (-0.30, -0.15), (-0.05, -0.13),
    (-0.60, 0.15), (-0.30, 0.18), (-0.05, 0.16),
    (0.00, 0.02), (0.45, -0.06), (0.90, -0.08),
    (0.02, 0.08), (0.45, 0.10), (0.90, 0.12),
    (-0.97, -0.03), (-0.97, 0.07),
    (-0.92, -0.08), (-0.92, 0.12),
])

# swing assignment: (joint, x_amplitude_factor, phase)
_SWINGERS = (
    (9, 0.6, 0.0), (10, 1.0, 0.0),        # right leg in phase
    (12, 0.6, np.pi), (13, 1.0, np.pi),   # left leg anti-phase
    (3, 0.4, np.pi), (4, 0.7, np.pi),     # right arm opposes right leg
    (6, 0.4, 0.0), (7, 0.7, 0.0),
)


def _track_rng(rng: Rng, prefix: str, index: int) -> Rng:
    return rng.derive(prefix, index)


def _walk_root(rng: Rng, n: int, params: SynthParams, speed: float,
               margin_frac: float | None = None) -> np.ndarray:
    """Horizontal root path with reflection at the margins; returns (n,) x."""
    if margin_frac is None:
        margin_frac = params.walk_margin_frac
    margin = margin_frac * params.image_width
    x = float(rng.uniform(margin, params.image_width - margin))
    direction = 1.0 if rng.uniform(0.0, 1.0) >= 0.5 else -1.0
    out = np.empty(n)
    for i in range(n):
        out[i] = x
        x += direction * speed
        if x < margin or x > params.image_width - margin:
            direction = -direction
            x += 2 * direction * speed
    return out


def _assemble(root_x, root_y, scale, swing, freq, phase0, jitter, n, rng: Rng,
              jitter_y: bool = True) -> np.ndarray:
    """Stack template + gait swings + jitter into (n, 18, 2) pixel coords."""
    pts = np.tile(_STAND, (n, 1, 1)) * scale
    t = np.arange(n)
    for joint, amp, ph in _SWINGERS:
        pts[:, joint, 0] += swing * amp * np.sin(freq * t + phase0 + ph)
    pts[:, :, 0] += root_x[:, None]
    pts[:, :, 1] += root_y[:, None]
    jit = rng.uniform(-jitter, jitter, (n, 18, 2))
    if not jitter_y:
        jit[:, :, 1] = 0.0
    return pts + jit


def _confidences(rng: Rng, n: int) -> np.ndarray:
    return rng.uniform(0.7, 1.0, (n, 18, 1))


def _bounded_root_y(rng: Rng, params: SynthParams, scale: float) -> float:
    lo = 0.50 * params.image_height
    hi = params.image_height - scale - 10.0  # keep ankles inside the frame
    return float(rng.uniform(lo, min(hi, 0.62 * params.image_height)))


def synth_normal(rng: Rng, n_tracks: int, n_frames: int,
                 params: SynthParams = SynthParams(),
                 video_prefix: str = "normal") -> list[PoseTrack]:
    """Walking figures; consecutive-frame displacement stays under
    params.frame_step_bound()."""
    tracks = []
    for i in range(n_tracks):
        r = _track_rng(rng, video_prefix, i)
        scale = float(r.uniform(params.body_scale_lo, params.body_scale_hi))
        speed = float(r.uniform(params.walk_speed_lo, params.walk_speed_hi))
        freq = float(r.uniform(params.gait_freq_lo, params.gait_freq_hi))
        phase = float(r.uniform(0.0, 2 * np.pi))
        root_x = _walk_root(r.derive("root"), n_frames, params, speed)
        base_y = _bounded_root_y(r.derive("rooty"), params, scale)
        root_y = base_y + params.bob_px * np.sin(2 * freq * np.arange(n_frames) + phase)
        pts = _assemble(root_x, root_y, scale, params.swing_px, freq, phase,
                        params.jitter_px, n_frames, r.derive("jitter"))
        kp = np.concatenate([pts, _confidences(r.derive("conf"), n_frames)], axis=2)
        tracks.append(PoseTrack(
            video=f"{video_prefix}-{i:04d}", person=0, start_frame=0,
            width=params.image_width, height=params.image_height,
            keypoints=kp, labels=np.zeros(n_frames, dtype=np.int64)))
    return tracks


def _fall_track(r: Rng, n: int, params: SynthParams, scale: float) -> np.ndarray:
    """Vertical collapse: hip y strictly increases every fall frame, body
    interpolates from standing to lying, then rests."""
    nf = min(params.fall_frames, n - 1) if n > 1 else 1
    profile = np.sin(np.pi * (np.arange(nf) + 0.5) / nf) ** 2
    drops = params.fall_drop_px * profile / profile.sum()   # all > 0: strict
    root_x = np.full(n, float(r.uniform(0.35, 0.65)) * params.image_width)
    base_y = _bounded_root_y(r.derive("rooty"), params, scale)
    cum = np.concatenate([[0.0], np.cumsum(drops)])
    root_y = base_y + cum[np.minimum(np.arange(n), nf)]
    blend = np.minimum(np.arange(n) / nf, 1.0)
    # the lying template's hip offsets are >= the standing ones, so hip y is
    # strictly increasing through every fall frame, not just the root path
    pts = np.empty((n, 18, 2))
    for i in range(n):
        tpl = (1.0 - blend[i]) * _STAND + blend[i] * _LYING
        pts[i] = tpl * scale
        pts[i, :, 0] += root_x[i]
        pts[i, :, 1] += root_y[i]
    # freefall: no vertical jitter, so the hip drop stays strictly monotone
    jit = r.derive("jitter").uniform(-params.jitter_px, params.jitter_px, (n, 18, 2))
    jit[:, :, 1] = 0.0
    return pts + jit


def _run_track(r: Rng, n: int, params: SynthParams, scale: float) -> np.ndarray:
    """Velocity burst with running form: fast root, forward lean, crouched
    stride, pumping arms, exaggerated bounce."""
    speed = float(r.uniform(params.run_speed_lo, params.run_speed_hi))
    freq = 1.6 * float(r.uniform(params.gait_freq_lo, params.gait_freq_hi))
    phase = float(r.uniform(0.0, 2 * np.pi))
    root_x = _walk_root(r.derive("root"), n, params, speed,
                        margin_frac=params.run_margin_frac)
    if n > 1:
        dirs = np.sign(np.diff(root_x))
        dirs = np.append(dirs, dirs[-1])
    else:
        dirs = np.ones(n)
    base_y = _bounded_root_y(r.derive("rooty"), params, scale)
    t = np.arange(n)
    root_y = base_y + 4.0 * params.bob_px * np.sin(2 * freq * t + phase)
    pts = np.tile(_STAND, (n, 1, 1))
    upper = (0, 1, 2, 3, 4, 5, 6, 7, 14, 15, 16, 17)
    for j in upper:
        pts[:, j, 0] += params.run_lean * dirs
    pts *= scale
    for joint, amp, ph in _SWINGERS:
        stride = 2.5 if joint in (9, 10, 12, 13) else 2.0
        pts[:, joint, 0] += stride * params.swing_px * amp * np.sin(
            freq * t + phase + ph)
    pts[:, :, 0] += root_x[:, None]
    pts[:, :, 1] += root_y[:, None]
    jit = r.derive("jitter").uniform(-params.jitter_px, params.jitter_px, (n, 18, 2))
    return pts + jit


def _teleport_track(r: Rng, n: int, params: SynthParams, scale: float) -> np.ndarray:
    """Frozen pose that instantaneously relocates every few frames."""
    margin = 0.2 * params.image_width
    x = float(r.uniform(margin, params.image_width - margin))
    root_x = np.empty(n)
    for i in range(n):
        if i > 0 and i % params.teleport_period == 0:
            jump = params.teleport_jump_px
            if x + jump > params.image_width - margin:
                jump = -jump
            elif x - jump > margin and r.uniform(0.0, 1.0) < 0.5:
                jump = -jump
            x += jump
        root_x[i] = x
    base_y = _bounded_root_y(r.derive("rooty"), params, scale)
    root_y = np.full(n, base_y)
    return _assemble(root_x, root_y, scale, 0.0, 0.0, 0.0,
                     0.2 * params.jitter_px, n, r.derive("jitter"))


def synth_anomalous(rng: Rng, n_tracks: int, n_frames: int,
                    params: SynthParams = SynthParams(),
                    kinds: tuple[str, ...] = ANOMALY_KINDS,
                    video_prefix: str = "anomalous") -> list[PoseTrack]:
    """Anomalous figures, cycling through the requested kinds; every frame is
    labeled 1."""
    for k in kinds:
        if k not in ANOMALY_KINDS:
            raise ValueError(f"unknown anomaly kind {k!r}")
    makers = {"fall": _fall_track, "run": _run_track, "teleport": _teleport_track}
    tracks = []
    for i in range(n_tracks):
        kind = kinds[i % len(kinds)]
        r = _track_rng(rng, f"{video_prefix}-{kind}", i)
        scale = float(r.uniform(params.body_scale_lo, params.body_scale_hi))
        pts = makers[kind](r.derive("pts"), n_frames, params, scale)
        kp = np.concatenate([pts, _confidences(r.derive("conf"), n_frames)], axis=2)
        tracks.append(PoseTrack(
            video=f"{video_prefix}-{kind}-{i:04d}", person=0, start_frame=0,
            width=params.image_width, height=params.image_height,
            keypoints=kp, labels=np.ones(n_frames, dtype=np.int64)))
    return tracks


# -- perturbation experiments ----------------------------------------------------


def add_noise(dataset: SegmentDataset, scale: float, rng: Rng) -> SegmentDataset:
    """Gaussian noise scale * u on every segment coordinate (normalized units).

    scale = 0 returns the segments untouched — bit-exact, no draws consumed.
    """
    if scale < 0:
        raise ValueError("noise scale must be >= 0")
    if scale == 0:
        segs = [replace(s, x=s.x.copy()) for s in dataset.segments]
        return SegmentDataset(segs, dict(dataset.frame_labels))
    segs = []
    for s in dataset.segments:
        u = rng.standard_normal(s.x.shape)
        segs.append(replace(s, x=s.x + scale * u))
    return SegmentDataset(segs, dict(dataset.frame_labels))


def contaminate(dataset: SegmentDataset, pool: SegmentDataset, fraction: float,
                rng: Rng) -> tuple[SegmentDataset, dict]:
    """Replace floor(fraction * N) random training segments with segments drawn
    (without replacement) from an anomalous pool. Returns the new dataset and a
    manifest of what went where."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must lie in [0, 1]")
    count = int(np.floor(fraction * len(dataset)))
    if count > len(pool):
        raise ValueError(f"pool has {len(pool)} segments, need {count}")
    segs = list(dataset.segments)
    manifest = {"fraction": fraction, "replaced": count, "swaps": []}
    if count:
        targets = np.sort(rng.choice_without_replacement(len(segs), count))
        sources = rng.choice_without_replacement(len(pool), count)
        for ti, si in zip(targets, sources):
            segs[int(ti)] = pool.segments[int(si)]
            manifest["swaps"].append({"train_index": int(ti), "pool_index": int(si)})
    return SegmentDataset(segs, dict(dataset.frame_labels)), manifest
