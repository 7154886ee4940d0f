"""Synthetic videos with exact moving/static ground truth.

Scenes are textured-noise backgrounds with textured sprites following
deterministic trajectories; an optional camera pan translates background and
sprites jointly in image space.  Ground truth contains only sprites whose
scene-relative speed reaches the motion threshold, so a static distractor is
background by construction.  Everything is a pure function of the scene spec
(including its seeds).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np

from .data import (
    CAR,
    ClassLabel,
    FrameRecord,
    HEAVY_VEHICLE,
    MovingObjectInstance,
    VideoSequence,
)
from .geometry import BoundingBox

MOTION_THRESHOLD = 0.5  # px/frame of scene-relative speed for gt inclusion


@dataclass(frozen=True)
class Trajectory:
    """Sprite motion in scene coordinates.

    kinds: ``static``; ``linear`` with (vx, vy) px/frame; ``stop_and_go``
    which alternates ``move_frames`` of linear motion with ``stop_frames``
    at rest.
    """

    kind: str = "static"
    vx: float = 0.0
    vy: float = 0.0
    move_frames: int = 8
    stop_frames: int = 8

    def __post_init__(self):
        if self.kind not in ("static", "linear", "stop_and_go"):
            raise ValueError(f"unknown trajectory kind {self.kind!r}")
        if self.kind == "stop_and_go" and (self.move_frames < 1 or self.stop_frames < 1):
            raise ValueError("stop_and_go needs positive move/stop phases")

    def _moving_at(self, t: int) -> bool:
        if self.kind == "static":
            return False
        if self.kind == "linear":
            return True
        return t % (self.move_frames + self.stop_frames) < self.move_frames

    def displacement(self, t: int) -> tuple[float, float]:
        """Scene displacement accumulated over frames 0..t."""
        if self.kind == "static":
            return (0.0, 0.0)
        if self.kind == "linear":
            return (self.vx * t, self.vy * t)
        steps = sum(1 for s in range(t) if self._moving_at(s))
        return (self.vx * steps, self.vy * steps)

    def velocity(self, t: int, n_frames: int) -> tuple[float, float]:
        """Instantaneous scene velocity at frame t (backward at the last frame)."""
        if t >= n_frames - 1:
            t = max(0, n_frames - 2)
        x0, y0 = self.displacement(t)
        x1, y1 = self.displacement(t + 1)
        return (x1 - x0, y1 - y0)


@dataclass(frozen=True)
class SpriteSpec:
    shape: str  # "square" or "disk"
    size: int
    label: ClassLabel
    x0: float
    y0: float
    trajectory: Trajectory = field(default_factory=Trajectory)

    def __post_init__(self):
        if self.shape not in ("square", "disk"):
            raise ValueError(f"unknown sprite shape {self.shape!r}")
        if self.size < 4:
            raise ValueError("sprites below 4 px are not renderable with texture")


@dataclass(frozen=True)
class SynthSceneSpec:
    canvas: tuple[int, int] = (256, 256)  # (H, W)
    sprites: tuple[SpriteSpec, ...] = ()
    camera_pan: tuple[float, float] | None = None  # image-space px/frame
    n_frames: int = 30
    seed: int = 0
    background_seed: int = 0
    motion_threshold: float = MOTION_THRESHOLD

    def __post_init__(self):
        if self.n_frames < 2:
            raise ValueError("need at least 2 frames")
        object.__setattr__(self, "sprites", tuple(self.sprites))


@dataclass(frozen=True)
class SpriteState:
    sprite_index: int
    box: BoundingBox
    moving: bool
    label: ClassLabel


@dataclass
class SynthVideo:
    """Rendered sequence plus per-frame states of every sprite.

    ``sequence.annotations`` holds the movers-only ground truth; the full
    sprite states (including statics) support distractor-focused tests.
    """

    sequence: VideoSequence
    spec: SynthSceneSpec
    sprite_states: list[list[SpriteState]]


def _image_position(spec: SynthSceneSpec, sprite: SpriteSpec, t: int) -> tuple[int, int]:
    dx, dy = sprite.trajectory.displacement(t)
    x = sprite.x0 + dx
    y = sprite.y0 + dy
    if spec.camera_pan is not None:
        x += spec.camera_pan[0] * t
        y += spec.camera_pan[1] * t
    return (int(round(x)), int(round(y)))


def validate_scene(spec: SynthSceneSpec) -> None:
    """Reject trajectories that ever leave the canvas (>= 1 px inside)."""
    h, w = spec.canvas
    for i, sprite in enumerate(spec.sprites):
        for t in range(spec.n_frames):
            x, y = _image_position(spec, sprite, t)
            if x < 1 or y < 1 or x + sprite.size > w - 1 or y + sprite.size > h - 1:
                raise ValueError(
                    f"sprite {i} leaves the canvas at frame {t}: position ({x}, {y})"
                )


def make_textured_background(h: int, w: int, seed: int, blur_sigma: float = 1.6) -> np.ndarray:
    """Filtered-noise RGB texture with enough structure for dense flow."""
    rng = np.random.default_rng(seed)
    noise = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    smooth = cv2.GaussianBlur(noise, (0, 0), blur_sigma)
    # Stretch to a mid-range band so sprites can be brighter or darker.
    f = smooth.astype(np.float32)
    f = (f - f.min()) / max(1e-6, float(f.max() - f.min()))
    return (40 + f * 150).astype(np.uint8)


_CLASS_TINTS = {CAR.id: (200, 60, 60), HEAVY_VEHICLE.id: (60, 200, 120)}


def _sprite_patch(sprite: SpriteSpec, scene_seed: int) -> np.ndarray:
    """Textured patch with a class-dependent tint.

    The texture is keyed by (class, size), not by sprite identity: two
    same-class same-size sprites render identically, so appearance alone
    cannot separate a mover from a static distractor -- only motion can.
    """
    s = sprite.size
    rng = np.random.default_rng((scene_seed, sprite.label.id, s))
    noise = rng.integers(0, 256, size=(s, s, 3), dtype=np.uint8)
    tex = cv2.GaussianBlur(noise, (0, 0), 0.9).astype(np.float32) / 255.0
    tint = np.array(_CLASS_TINTS[sprite.label.id], dtype=np.float32)
    patch = tint * (0.4 + 0.6 * tex)
    return np.clip(patch, 0, 255).astype(np.uint8)


def _disk_mask(size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2.0
    return (xx - c) ** 2 + (yy - c) ** 2 <= (size / 2.0) ** 2


def generate_video(spec: SynthSceneSpec, fps: float = 30.0, name: str = "synth") -> SynthVideo:
    """Render the scene. Deterministic: identical specs give identical videos."""
    validate_scene(spec)
    h, w = spec.canvas
    pan = spec.camera_pan or (0.0, 0.0)
    pad_x = int(math.ceil(abs(pan[0]) * spec.n_frames)) + 8
    pad_y = int(math.ceil(abs(pan[1]) * spec.n_frames)) + 8
    big = make_textured_background(h + 2 * pad_y, w + 2 * pad_x, spec.background_seed)

    patches = [_sprite_patch(s, spec.seed) for s in spec.sprites]
    masks = [_disk_mask(s.size) if s.shape == "disk" else None for s in spec.sprites]

    frames = []
    annotations = []
    sprite_states: list[list[SpriteState]] = []
    for t in range(spec.n_frames):
        # Content displaces by +pan per frame, so the crop window moves by -pan.
        ox = pad_x - int(round(pan[0] * t))
        oy = pad_y - int(round(pan[1] * t))
        canvas = big[oy : oy + h, ox : ox + w].copy()
        states = []
        for i, sprite in enumerate(spec.sprites):
            x, y = _image_position(spec, sprite, t)
            s = sprite.size
            region = canvas[y : y + s, x : x + s]
            if masks[i] is None:
                region[:] = patches[i]
            else:
                region[masks[i]] = patches[i][masks[i]]
            vx, vy = sprite.trajectory.velocity(t, spec.n_frames)
            moving = math.hypot(vx, vy) >= spec.motion_threshold
            box = BoundingBox(float(x), float(y), float(x + s), float(y + s))
            states.append(SpriteState(i, box, moving, sprite.label))
            if moving:
                annotations.append(
                    MovingObjectInstance(box=box, label=sprite.label, frame_index=t)
                )
        sprite_states.append(states)
        frames.append(FrameRecord(pixels=canvas, index=t, timestamp=t / fps))

    sequence = VideoSequence(frames=frames, fps=fps, annotations=annotations, name=name)
    return SynthVideo(sequence=sequence, spec=spec, sprite_states=sprite_states)


# ---------------------------------------------------------------------------
# Standard suites
# ---------------------------------------------------------------------------


def _linear(vx, vy) -> Trajectory:
    return Trajectory(kind="linear", vx=vx, vy=vy)


def standard_suites() -> dict[str, SynthSceneSpec]:
    """Fixed, versioned scenario menu (S1..S5), all seeds pinned.

    S1 single mover; S2 mover + adjacent static distractor; S3 dense (20
    movers); S4 camera pan over movers and statics; S5 multi-scale sprites.
    S1 + S2 total 50 frames, sized for desk-scale overfit runs.
    """
    suites: dict[str, SynthSceneSpec] = {}

    suites["S1"] = SynthSceneSpec(
        canvas=(256, 256),
        sprites=(SpriteSpec("square", 32, CAR, 20, 60, _linear(2, 1)),),
        n_frames=30,
        seed=101,
        background_seed=11,
    )

    # Distractor sits just past the end of the mover's path, same row.
    suites["S2"] = SynthSceneSpec(
        canvas=(256, 256),
        sprites=(
            SpriteSpec("square", 32, CAR, 20, 80, _linear(2, 0)),
            SpriteSpec("square", 32, CAR, 104, 80, Trajectory("static")),
        ),
        n_frames=20,
        seed=102,
        background_seed=12,
    )

    rng = np.random.default_rng(103)
    sprites = []
    n_frames = 20
    cols = [20, 64, 108, 152, 196]
    rows = [24, 80, 136, 192]
    for r, y in enumerate(rows):
        for c, x in enumerate(cols):
            jx = int(rng.integers(-4, 5))
            jy = int(rng.integers(-4, 5))
            vx = float(rng.choice([-2, -1, 1, 2]))
            vy = float(rng.choice([-1, 1]))
            # Keep the whole path inside the canvas.
            if x + jx + vx * (n_frames - 1) < 2 or x + jx + 14 + vx * (n_frames - 1) > 253:
                vx = -vx
            if y + jy + vy * (n_frames - 1) < 2 or y + jy + 14 + vy * (n_frames - 1) > 253:
                vy = -vy
            label = HEAVY_VEHICLE if (r + c) % 4 == 3 else CAR
            sprites.append(SpriteSpec("square", 14, label, x + jx, y + jy, _linear(vx, vy)))
    suites["S3"] = SynthSceneSpec(
        canvas=(256, 256),
        sprites=tuple(sprites),
        n_frames=n_frames,
        seed=103,
        background_seed=13,
    )

    suites["S4"] = SynthSceneSpec(
        canvas=(256, 256),
        sprites=(
            SpriteSpec("square", 28, CAR, 16, 40, _linear(2, 0)),
            SpriteSpec("disk", 28, HEAVY_VEHICLE, 60, 150, _linear(0, 2)),
            SpriteSpec("square", 28, CAR, 150, 60, Trajectory("static")),
            SpriteSpec("disk", 28, CAR, 180, 180, Trajectory("static")),
        ),
        camera_pan=(1.0, 0.0),
        n_frames=24,
        seed=104,
        background_seed=14,
    )

    suites["S5"] = SynthSceneSpec(
        canvas=(256, 256),
        sprites=(
            SpriteSpec("square", 8, CAR, 30, 30, _linear(2, 1)),
            SpriteSpec("square", 80, HEAVY_VEHICLE, 150, 120, _linear(-2, 0)),
            SpriteSpec("square", 8, CAR, 200, 40, Trajectory("static")),
        ),
        n_frames=24,
        seed=105,
        background_seed=15,
    )

    for spec in suites.values():
        validate_scene(spec)
    return suites
