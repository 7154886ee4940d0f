"""Canonical data model: frames, labels, sequences, annotation I/O and stats.

Dataset layout on disk::

    <root>/<video_name>/frames/000000.png, 000001.png, ...
    <root>/<video_name>/labels/000000.txt, 000001.txt, ...

Annotation files hold one object per line.  Two text formats are supported:

* corner (native): ``<x1> <y1> <x2> <y2> <class_id>`` in pixels
* normalized-center: ``<class_id> <cx> <cy> <w> <h>``, all in [0, 1]
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .errors import AnnotationError
from .geometry import BoundingBox

log = logging.getLogger(__name__)

DEFAULT_FRAME_SIZE = (608, 608)  # (H, W)
DEFAULT_FPS = 30.0

ANNOTATION_FORMATS = ("corner", "normalized-center")


@dataclass(frozen=True)
class ClassLabel:
    """One of the two vehicle categories. The id<->name mapping is fixed."""

    id: int
    name: str


CAR = ClassLabel(0, "car")
HEAVY_VEHICLE = ClassLabel(1, "heavy_vehicle")
CLASSES: tuple[ClassLabel, ...] = (CAR, HEAVY_VEHICLE)
NUM_CLASSES = len(CLASSES)

_BY_ID = {c.id: c for c in CLASSES}
_BY_NAME = {c.name: c for c in CLASSES}


def label_from_id(class_id: int) -> ClassLabel:
    try:
        return _BY_ID[int(class_id)]
    except (KeyError, ValueError):
        raise AnnotationError(f"unknown class id {class_id!r}") from None


def label_from_name(name: str) -> ClassLabel:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise AnnotationError(f"unknown class name {name!r}") from None


@dataclass(frozen=True)
class MovingObjectInstance:
    """One labeled moving object in one frame."""

    box: BoundingBox
    label: ClassLabel
    frame_index: int = 0

    def __post_init__(self):
        if self.frame_index < 0:
            raise ValueError(f"frame_index must be >= 0, got {self.frame_index}")


@dataclass(frozen=True)
class FrameRecord:
    """A single video frame: H*W*3 uint8 pixels plus its index and timestamp."""

    pixels: np.ndarray
    index: int
    timestamp: float = 0.0

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 3:
            raise ValueError(f"expected H*W*3 pixels, got shape {px.shape}")
        if px.shape[0] <= 0 or px.shape[1] <= 0:
            raise ValueError(f"frame has empty spatial extent: {px.shape}")

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def size(self) -> tuple[int, int]:
        """(H, W)."""
        return (self.height, self.width)


@dataclass
class VideoSequence:
    """An ordered frame list with its moving-object annotations."""

    frames: list[FrameRecord]
    fps: float = DEFAULT_FPS
    annotations: list[MovingObjectInstance] = field(default_factory=list)
    name: str = ""

    def __post_init__(self):
        for i, fr in enumerate(self.frames):
            if fr.index != i:
                raise ValueError(
                    f"frame indices must be contiguous from 0; frame {i} has index {fr.index}"
                )
        n = len(self.frames)
        for inst in self.annotations:
            if inst.frame_index >= n:
                raise ValueError(
                    f"annotation frame_index {inst.frame_index} outside sequence of length {n}"
                )

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def frame_size(self) -> tuple[int, int]:
        return self.frames[0].size

    def annotations_for_frame(self, index: int) -> list[MovingObjectInstance]:
        return [a for a in self.annotations if a.frame_index == index]


@dataclass(frozen=True)
class SequenceInfo:
    """Annotation-only view of a sequence, enough for dataset statistics."""

    name: str
    n_frames: int
    frame_size: tuple[int, int]
    annotations: list[MovingObjectInstance]


@dataclass(frozen=True)
class StatsTriple:
    mean: float
    min: float
    max: float

    def __post_init__(self):
        if not (self.min <= self.mean <= self.max):
            raise ValueError(f"expected min <= mean <= max, got {self}")


@dataclass(frozen=True)
class DatasetStats:
    n_videos: int
    n_frames: int
    n_instances: int
    per_class_counts: dict[str, int]
    bb_height_stats: StatsTriple
    bb_width_stats: StatsTriple
    seq_length_stats: StatsTriple

    def __post_init__(self):
        if self.n_instances != sum(self.per_class_counts.values()):
            raise ValueError("n_instances must equal the sum of per-class counts")


# ---------------------------------------------------------------------------
# Annotation file I/O
# ---------------------------------------------------------------------------


def _parse_fields(raw: str, path, line_no: int) -> list[float]:
    parts = raw.split()
    if len(parts) != 5:
        raise AnnotationError(
            f"expected 5 whitespace-separated fields, got {len(parts)}", path, line_no
        )
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise AnnotationError(f"non-numeric field: {exc}", path, line_no) from None


def parse_annotation_line(
    raw: str,
    fmt: str = "corner",
    frame_size: tuple[int, int] | None = None,
    frame_index: int = 0,
    path=None,
    line_no: int = 0,
) -> MovingObjectInstance:
    """Parse one annotation line into a MovingObjectInstance.

    ``frame_size`` (H, W) is required for the normalized-center format, where
    coordinates are fractions of the frame and must be mapped back to pixels.
    """
    vals = _parse_fields(raw, path, line_no)
    if fmt == "corner":
        x1, y1, x2, y2, cid = vals
    elif fmt == "normalized-center":
        if frame_size is None:
            raise AnnotationError(
                "frame_size is required to import normalized-center annotations",
                path,
                line_no,
            )
        cid, cx, cy, w, h = vals
        fh, fw = frame_size
        x1 = (cx - w / 2.0) * fw
        x2 = (cx + w / 2.0) * fw
        y1 = (cy - h / 2.0) * fh
        y2 = (cy + h / 2.0) * fh
    else:
        raise AnnotationError(f"unknown annotation format {fmt!r}", path, line_no)

    if not float(cid).is_integer():
        raise AnnotationError(f"class id must be an integer, got {cid}", path, line_no)
    try:
        label = label_from_id(int(cid))
        box = BoundingBox(x1, y1, x2, y2)
    except (AnnotationError, ValueError) as exc:
        raise AnnotationError(str(exc), path, line_no) from None
    return MovingObjectInstance(box=box, label=label, frame_index=frame_index)


def parse_annotation_file(
    path,
    fmt: str = "corner",
    frame_size: tuple[int, int] | None = None,
    frame_index: int = 0,
) -> list[MovingObjectInstance]:
    """Parse one per-frame annotation file. Empty lines are skipped."""
    path = Path(path)
    out = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            out.append(
                parse_annotation_line(
                    raw, fmt, frame_size, frame_index, path=path, line_no=line_no
                )
            )
    return out


def format_annotation_line(
    inst: MovingObjectInstance,
    fmt: str = "corner",
    frame_size: tuple[int, int] | None = None,
) -> str:
    b = inst.box
    if fmt == "corner":
        return f"{b.x1:.6g} {b.y1:.6g} {b.x2:.6g} {b.y2:.6g} {inst.label.id}"
    if fmt == "normalized-center":
        if frame_size is None:
            raise AnnotationError("frame_size is required to export normalized-center")
        fh, fw = frame_size
        cx = (b.x1 + b.x2) / 2.0 / fw
        cy = (b.y1 + b.y2) / 2.0 / fh
        w = b.width / fw
        h = b.height / fh
        return f"{inst.label.id} {cx:.6g} {cy:.6g} {w:.6g} {h:.6g}"
    raise AnnotationError(f"unknown annotation format {fmt!r}")


def export_annotation_file(
    instances,
    path,
    fmt: str = "corner",
    frame_size: tuple[int, int] | None = None,
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [format_annotation_line(i, fmt, frame_size) for i in instances]
    path.write_text("".join(l + "\n" for l in lines), encoding="utf-8")


def _frame_index_from_stem(path: Path):
    stem = path.stem
    if not stem.isdigit():
        raise AnnotationError(f"cannot derive a frame index from filename {path.name!r}", path)
    return int(stem)


def load_annotation_dir(
    labels_dir,
    fmt: str = "corner",
    frame_size: tuple[int, int] | None = None,
) -> list[MovingObjectInstance]:
    """Load every ``<frame>.txt`` under a labels directory, keyed by stem."""
    labels_dir = Path(labels_dir)
    out = []
    for path in sorted(labels_dir.glob("*.txt")):
        idx = _frame_index_from_stem(path)
        out.extend(parse_annotation_file(path, fmt, frame_size, frame_index=idx))
    return out


# ---------------------------------------------------------------------------
# Frame / sequence I/O
# ---------------------------------------------------------------------------


def read_frame_image(path) -> np.ndarray:
    """Read an image file as H*W*3 RGB uint8."""
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise AnnotationError(f"cannot read image {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def write_frame_image(path, pixels: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    ok = cv2.imwrite(str(path), cv2.cvtColor(pixels, cv2.COLOR_RGB2BGR))
    if not ok:
        raise IOError(f"failed to write image {path}")


def load_sequence(
    video_dir,
    fmt: str = "corner",
    fps: float = DEFAULT_FPS,
) -> VideoSequence:
    """Load ``<video_dir>/frames`` + ``<video_dir>/labels`` into a sequence."""
    video_dir = Path(video_dir)
    frames_dir = video_dir / "frames"
    labels_dir = video_dir / "labels"
    frame_paths = sorted(frames_dir.glob("*.png")) + sorted(frames_dir.glob("*.jpg"))
    if not frame_paths:
        raise AnnotationError(f"no frames found under {frames_dir}")
    frames = []
    for i, p in enumerate(sorted(frame_paths, key=_frame_index_from_stem)):
        idx = _frame_index_from_stem(p)
        if idx != i:
            raise AnnotationError(f"frame files are not contiguous from 0 at {p.name}", p)
        frames.append(FrameRecord(pixels=read_frame_image(p), index=i, timestamp=i / fps))
    frame_size = frames[0].size
    annotations = []
    if labels_dir.is_dir():
        annotations = load_annotation_dir(labels_dir, fmt, frame_size)
    return VideoSequence(frames=frames, fps=fps, annotations=annotations, name=video_dir.name)


def scan_dataset(root, fmt: str = "corner") -> list[SequenceInfo]:
    """Light scan of a dataset root: annotations + frame counts, no pixel data.

    Frame size is taken from the first frame of each video (the loader keeps
    per-video size constant).
    """
    root = Path(root)
    infos = []
    for video_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        frames_dir = video_dir / "frames"
        if not frames_dir.is_dir():
            continue
        frame_paths = sorted(frames_dir.glob("*.png")) + sorted(frames_dir.glob("*.jpg"))
        if not frame_paths:
            continue
        first = read_frame_image(frame_paths[0])
        frame_size = (first.shape[0], first.shape[1])
        annotations = []
        labels_dir = video_dir / "labels"
        if labels_dir.is_dir():
            annotations = load_annotation_dir(labels_dir, fmt, frame_size)
        infos.append(
            SequenceInfo(
                name=video_dir.name,
                n_frames=len(frame_paths),
                frame_size=frame_size,
                annotations=annotations,
            )
        )
    if not infos:
        raise AnnotationError(f"no video directories found under {root}")
    return infos


def write_sequence(seq: VideoSequence, root, name: str | None = None) -> Path:
    """Write a sequence to the on-disk dataset layout. Returns the video dir."""
    root = Path(root)
    video_dir = root / (name or seq.name or "video")
    for fr in seq.frames:
        write_frame_image(video_dir / "frames" / f"{fr.index:06d}.png", fr.pixels)
    by_frame: dict[int, list[MovingObjectInstance]] = {}
    for inst in seq.annotations:
        by_frame.setdefault(inst.frame_index, []).append(inst)
    for fr in seq.frames:
        export_annotation_file(
            by_frame.get(fr.index, ()),
            video_dir / "labels" / f"{fr.index:06d}.txt",
            fmt="corner",
        )
    return video_dir


# ---------------------------------------------------------------------------
# Resizing and statistics
# ---------------------------------------------------------------------------


def resize_with_boxes(
    frame: FrameRecord,
    annotations: list[MovingObjectInstance],
    target: tuple[int, int],
) -> tuple[FrameRecord, list[MovingObjectInstance]]:
    """Resize a frame to ``target`` (H, W), scaling boxes per axis.

    Boxes whose extent collapses below 1 px at the target scale carry no
    trainable signal and are dropped (a warning reports the count).
    """
    th, tw = target
    if th <= 0 or tw <= 0:
        raise ValueError(f"target dims must be positive, got {target}")
    h, w = frame.size
    if (h, w) == (th, tw):
        return frame, list(annotations)
    pixels = cv2.resize(frame.pixels, (tw, th), interpolation=cv2.INTER_LINEAR)
    out_frame = FrameRecord(pixels=pixels, index=frame.index, timestamp=frame.timestamp)
    sx = tw / w
    sy = th / h
    kept = []
    dropped = 0
    for inst in annotations:
        box = inst.box.scaled(sx, sy)
        if box.width < 1.0 or box.height < 1.0:
            dropped += 1
            continue
        kept.append(MovingObjectInstance(box=box, label=inst.label, frame_index=inst.frame_index))
    if dropped:
        log.warning("resize to %dx%d dropped %d sub-pixel boxes", th, tw, dropped)
    return out_frame, kept


def _triple(values) -> StatsTriple:
    arr = np.asarray(values, dtype=np.float64)
    return StatsTriple(float(arr.mean()), float(arr.min()), float(arr.max()))


def compute_dataset_stats(
    sequences,
    normalize_to: tuple[int, int] | None = DEFAULT_FRAME_SIZE,
) -> DatasetStats:
    """Aggregate statistics over sequences (VideoSequence or SequenceInfo).

    Box extents are measured after scaling each sequence's coordinates to
    ``normalize_to`` (H, W); pass None to measure in native coordinates.
    """
    sequences = list(sequences)
    if not sequences:
        raise ValueError("cannot compute statistics over an empty dataset")
    heights, widths = [], []
    per_class = {c.name: 0 for c in CLASSES}
    n_frames = 0
    seq_lengths = []
    for seq in sequences:
        n_frames += seq.n_frames
        seq_lengths.append(seq.n_frames)
        fh, fw = seq.frame_size
        if normalize_to is not None:
            sy = normalize_to[0] / fh
            sx = normalize_to[1] / fw
        else:
            sx = sy = 1.0
        for inst in seq.annotations:
            per_class[inst.label.name] += 1
            heights.append(inst.box.height * sy)
            widths.append(inst.box.width * sx)
    if not heights:
        raise ValueError("dataset contains no annotated instances")
    return DatasetStats(
        n_videos=len(sequences),
        n_frames=n_frames,
        n_instances=len(heights),
        per_class_counts=per_class,
        bb_height_stats=_triple(heights),
        bb_width_stats=_triple(widths),
        seq_length_stats=_triple(seq_lengths),
    )


def stats_report_text(stats: DatasetStats) -> str:
    """Human-readable key: value report."""
    lines = [
        f"n_videos: {stats.n_videos}",
        f"n_frames: {stats.n_frames}",
        f"n_instances: {stats.n_instances}",
    ]
    for name, count in sorted(stats.per_class_counts.items()):
        lines.append(f"count_{name}: {count}")
    for field_name, triple in (
        ("bb_height", stats.bb_height_stats),
        ("bb_width", stats.bb_width_stats),
        ("seq_length", stats.seq_length_stats),
    ):
        lines.append(
            f"{field_name}: mean={triple.mean:.3f} min={triple.min:g} max={triple.max:g}"
        )
    return "\n".join(lines) + "\n"


def stats_report_csv(stats: DatasetStats) -> str:
    """Machine-readable tabular report."""
    rows = [
        ("metric", "value"),
        ("n_videos", stats.n_videos),
        ("n_frames", stats.n_frames),
        ("n_instances", stats.n_instances),
    ]
    for name, count in sorted(stats.per_class_counts.items()):
        rows.append((f"count_{name}", count))
    for field_name, triple in (
        ("bb_height", stats.bb_height_stats),
        ("bb_width", stats.bb_width_stats),
        ("seq_length", stats.seq_length_stats),
    ):
        rows.append((f"{field_name}_mean", f"{triple.mean:.6g}"))
        rows.append((f"{field_name}_min", f"{triple.min:g}"))
        rows.append((f"{field_name}_max", f"{triple.max:g}"))
    return "\n".join(f"{k},{v}" for k, v in rows) + "\n"
