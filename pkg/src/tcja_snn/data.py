"""Event streams, frame integration, augmentation, and synthetic data.

Streams hold (t, x, y, p) records with microsecond timestamps and 0/1
polarity. Integration slices a stream of N events into T groups of
floor(N/T) events (the last group absorbs the remainder) and counts
events per (polarity, x, y) cell, yielding a (T, 2, H, W) stack of
non-negative counts. Geometric augmentations move counts by forward
nearest-neighbor scatter with zero fill, so total event mass never
increases; pixels pushed past the border are dropped.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

EVENT_MAGIC = b"TCJAEVT0"
_HEADER = struct.Struct("<HHI")  # width, height, count (after the 8-byte magic)
_RECORD = struct.Struct("<IHHB")  # t (us), x, y, p


class DataError(ValueError):
    """Raised for unreadable, malformed, or out-of-contract data."""


@dataclass
class EventStream:
    """Time-ordered events plus the sensor resolution they live on."""

    t: np.ndarray  # microseconds, non-decreasing
    x: np.ndarray
    y: np.ndarray
    p: np.ndarray  # polarity in {0, 1}
    width: int
    height: int

    def __len__(self) -> int:
        return len(self.t)

    def validate(self) -> None:
        n = len(self.t)
        if not (len(self.x) == len(self.y) == len(self.p) == n):
            raise DataError("event field lengths differ")
        if n and np.any(np.diff(self.t) < 0):
            raise DataError("timestamps must be non-decreasing")
        for name, arr, bound in (("x", self.x, self.width), ("y", self.y, self.height)):
            bad = np.nonzero((arr < 0) | (arr >= bound))[0]
            if bad.size:
                raise DataError(
                    f"{name}={arr[bad[0]]} out of range [0, {bound}) at record {bad[0]}"
                )
        bad = np.nonzero((self.p != 0) & (self.p != 1))[0]
        if bad.size:
            raise DataError(f"polarity {self.p[bad[0]]} not in {{0,1}} at record {bad[0]}")


@dataclass
class FrameSample:
    """Integrated frames (T, C, H, W) and a probability-vector label."""

    frames: np.ndarray
    label: np.ndarray | None = None

    @property
    def class_index(self) -> int:
        if self.label is None:
            raise DataError("sample has no label")
        return int(np.argmax(self.label))


def one_hot(num_classes: int, index: int) -> np.ndarray:
    vec = np.zeros(num_classes)
    vec[index] = 1.0
    return vec


# -- readers and writers -------------------------------------------------------


def read_events(
    path: str | Path,
    fmt: str | None = None,
    width: int | None = None,
    height: int | None = None,
) -> EventStream:
    """Load a CSV ("t,x,y,p" lines) or binary event file.

    Binary files carry their resolution in the header; CSV files take it
    from the arguments, falling back to the tight bounding box.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"event file not found: {path}")
    fmt = fmt or ("csv" if path.suffix == ".csv" else "bin")
    if fmt == "csv":
        return _read_csv(path, width, height)
    if fmt == "bin":
        return _read_bin(path)
    raise DataError(f"unknown event format {fmt!r}")


def _read_csv(path: Path, width: int | None, height: int | None) -> EventStream:
    rows = []
    with open(path, newline="") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise DataError(f"{path}: malformed line {lineno}: {line!r}")
            try:
                rows.append(tuple(int(v) for v in parts))
            except ValueError:
                raise DataError(f"{path}: malformed line {lineno}: {line!r}") from None
    if rows:
        arr = np.asarray(rows, dtype=np.int64)
        t, x, y, p = arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3]
    else:
        t = x = y = p = np.zeros(0, dtype=np.int64)
    stream = EventStream(
        t=t,
        x=x,
        y=y,
        p=p,
        width=width if width is not None else (int(x.max()) + 1 if len(x) else 1),
        height=height if height is not None else (int(y.max()) + 1 if len(y) else 1),
    )
    stream.validate()
    return stream


def _read_bin(path: Path) -> EventStream:
    blob = path.read_bytes()
    if len(blob) < 8 + _HEADER.size:
        raise DataError(f"{path}: truncated header at byte {len(blob)}")
    if blob[:8] != EVENT_MAGIC:
        raise DataError(f"{path}: bad magic {blob[:8]!r} at byte 0")
    width, height, count = _HEADER.unpack_from(blob, 8)
    offset = 8 + _HEADER.size
    expected = offset + count * _RECORD.size
    if len(blob) != expected:
        raise DataError(
            f"{path}: expected {expected} bytes for {count} records, got {len(blob)}"
            f" (payload starts at byte {offset})"
        )
    raw = np.frombuffer(blob, dtype=np.uint8, count=count * _RECORD.size, offset=offset)
    rec = raw.reshape(count, _RECORD.size) if count else raw.reshape(0, _RECORD.size)
    t = rec[:, 0:4].copy().view("<u4").reshape(count).astype(np.int64)
    x = rec[:, 4:6].copy().view("<u2").reshape(count).astype(np.int64)
    y = rec[:, 6:8].copy().view("<u2").reshape(count).astype(np.int64)
    p = rec[:, 8].astype(np.int64)
    stream = EventStream(t=t, x=x, y=y, p=p, width=width, height=height)
    stream.validate()
    return stream


def write_events(path: str | Path, stream: EventStream, fmt: str | None = None) -> None:
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix == ".csv" else "bin")
    stream.validate()
    if fmt == "csv":
        with open(path, "w", newline="") as fh:
            for t, x, y, p in zip(stream.t, stream.x, stream.y, stream.p):
                fh.write(f"{t},{x},{y},{p}\n")
    elif fmt == "bin":
        parts = [EVENT_MAGIC, _HEADER.pack(stream.width, stream.height, len(stream))]
        for t, x, y, p in zip(stream.t, stream.x, stream.y, stream.p):
            parts.append(_RECORD.pack(int(t), int(x), int(y), int(p)))
        path.write_bytes(b"".join(parts))
    else:
        raise DataError(f"unknown event format {fmt!r}")


# -- frame integration -----------------------------------------------------------


def slice_bounds(n_events: int, t_steps: int) -> list[tuple[int, int]]:
    """Index ranges of the T event groups: floor(N/T) each, remainder in the last."""
    if t_steps < 1:
        raise DataError(f"need at least one time step, got {t_steps}")
    if n_events < t_steps:
        raise DataError(f"{n_events} events cannot fill {t_steps} time steps")
    base = n_events // t_steps
    bounds = []
    for j in range(t_steps):
        lo = base * j
        hi = base * (j + 1) if j < t_steps - 1 else n_events
        bounds.append((lo, hi))
    return bounds


def integrate_frames(
    stream: EventStream, t_steps: int, label: np.ndarray | None = None
) -> FrameSample:
    """Count events per (polarity, x, y) cell within each time slice."""
    bounds = slice_bounds(len(stream), t_steps)
    frames = np.zeros((t_steps, 2, stream.height, stream.width), dtype=np.int64)
    for j, (lo, hi) in enumerate(bounds):
        np.add.at(frames[j], (stream.p[lo:hi], stream.y[lo:hi], stream.x[lo:hi]), 1)
    return FrameSample(frames=frames.astype(np.float64), label=label)


def replicate_static(image: np.ndarray, t_steps: int) -> np.ndarray:
    """Repeat a static (C, H, W) image T times for constant-current encoding."""
    return np.broadcast_to(image, (t_steps, *image.shape)).copy()


# -- augmentation -----------------------------------------------------------------


@dataclass(frozen=True)
class AugmentPolicy:
    flip_prob: float = 0.5
    mixup: bool = True
    mixup_alpha: float = 0.5
    roll_max: int = 5
    rotate_deg: float = 15.0
    cutout_max: int = 8
    shear_deg: float = 8.0


def _scatter_transform(frames: np.ndarray, map_xy) -> np.ndarray:
    """Move each pixel's count to its transformed location (nearest, zero fill)."""
    _, _, height, width = frames.shape
    ys, xs = np.mgrid[0:height, 0:width]
    nx, ny = map_xy(xs.astype(np.float64), ys.astype(np.float64))
    nx = np.rint(nx).astype(np.int64)
    ny = np.rint(ny).astype(np.int64)
    keep = (nx >= 0) & (nx < width) & (ny >= 0) & (ny < height)
    out = np.zeros_like(frames)
    src_y, src_x = ys[keep], xs[keep]
    np.add.at(
        out,
        (slice(None), slice(None), ny[keep], nx[keep]),
        frames[:, :, src_y, src_x],
    )
    return out


def hflip(frames: np.ndarray) -> np.ndarray:
    return frames[..., ::-1].copy()


def roll(frames: np.ndarray, dy: int, dx: int) -> np.ndarray:
    """Shift with zero fill (no wraparound)."""
    return _scatter_transform(frames, lambda x, y: (x + dx, y + dy))


def rotate(frames: np.ndarray, degrees: float) -> np.ndarray:
    rad = math.radians(degrees)
    c, s = math.cos(rad), math.sin(rad)
    cy = (frames.shape[2] - 1) / 2.0
    cx = (frames.shape[3] - 1) / 2.0

    def map_xy(x, y):
        xr, yr = x - cx, y - cy
        return (c * xr - s * yr + cx, s * xr + c * yr + cy)

    return _scatter_transform(frames, map_xy)


def shear(frames: np.ndarray, degrees: float) -> np.ndarray:
    k = math.tan(math.radians(degrees))
    cy = (frames.shape[2] - 1) / 2.0
    return _scatter_transform(frames, lambda x, y: (x + k * (y - cy), y))


def cutout(frames: np.ndarray, side: int, cy: int, cx: int) -> np.ndarray:
    out = frames.copy()
    h, w = frames.shape[2], frames.shape[3]
    y0, y1 = max(0, cy - side // 2), min(h, cy - side // 2 + side)
    x0, x1 = max(0, cx - side // 2), min(w, cx - side // 2 + side)
    out[:, :, y0:y1, x0:x1] = 0
    return out


def mixup(
    sample: FrameSample, partner: FrameSample, lam: float
) -> FrameSample:
    frames = lam * sample.frames + (1.0 - lam) * partner.frames
    if sample.label is None or partner.label is None:
        raise DataError("mixup needs labeled samples")
    label = lam * sample.label + (1.0 - lam) * partner.label
    return FrameSample(frames=frames, label=label)


def augment(
    sample: FrameSample,
    rng: np.random.Generator,
    policy: AugmentPolicy | None = None,
    partner: FrameSample | None = None,
) -> FrameSample:
    """Training-time pipeline: maybe flip, maybe mixup, then one geometry op."""
    policy = policy or AugmentPolicy()
    out = FrameSample(frames=sample.frames, label=sample.label)
    if rng.random() < policy.flip_prob:
        out = FrameSample(frames=hflip(out.frames), label=out.label)
    if policy.mixup and partner is not None:
        lam = float(rng.beta(policy.mixup_alpha, policy.mixup_alpha))
        out = mixup(out, partner, lam)
    choice = rng.integers(0, 4)
    if choice == 0:
        dy = int(rng.integers(-policy.roll_max, policy.roll_max + 1))
        dx = int(rng.integers(-policy.roll_max, policy.roll_max + 1))
        frames = roll(out.frames, dy, dx)
    elif choice == 1:
        frames = rotate(out.frames, float(rng.uniform(-policy.rotate_deg, policy.rotate_deg)))
    elif choice == 2:
        side = int(rng.integers(1, policy.cutout_max + 1))
        cy = int(rng.integers(0, out.frames.shape[2]))
        cx = int(rng.integers(0, out.frames.shape[3]))
        frames = cutout(out.frames, side, cy, cx)
    else:
        frames = shear(out.frames, float(rng.uniform(-policy.shear_deg, policy.shear_deg)))
    return FrameSample(frames=frames, label=out.label)


# -- splitting --------------------------------------------------------------------


def split_train_test(
    samples: list, labels: list[int], seed: int
) -> tuple[list, list]:
    """Deterministic stratified 9:1 split; every class needs >= 10 samples."""
    if len(samples) != len(labels):
        raise DataError("samples and labels differ in length")
    rng = np.random.default_rng(seed)
    by_class: dict[int, list[int]] = {}
    for i, lab in enumerate(labels):
        by_class.setdefault(int(lab), []).append(i)
    train_idx: list[int] = []
    test_idx: list[int] = []
    for lab in sorted(by_class):
        members = by_class[lab]
        if len(members) < 10:
            raise DataError(f"class {lab} has only {len(members)} samples (< 10)")
        order = rng.permutation(len(members))
        n_test = len(members) // 10
        for rank, pos in enumerate(order):
            (test_idx if rank < n_test else train_idx).append(members[pos])
    train_idx.sort()
    test_idx.sort()
    return [samples[i] for i in train_idx], [samples[i] for i in test_idx]


# -- synthetic moving-bar dataset ---------------------------------------------------


_DIRECTIONS = (
    (1, 0),  # east
    (-1, 0),  # west
    (0, 1),  # south
    (0, -1),  # north
    (1, 1),  # southeast
    (-1, -1),  # northwest
    (1, -1),  # northeast
    (-1, 1),  # southwest
)


def gen_synthetic(
    kind: str = "moving-bar",
    classes: int = 4,
    height: int = 16,
    width: int = 16,
    t_steps: int = 8,
    n: int = 100,
    seed: int = 0,
    noise_per_tick: int = 1,
    events_per_cell: int = 3,
) -> list[tuple[EventStream, int]]:
    """Labeled event streams of a bright bar sweeping in one of `classes` directions.

    Each bar cell emits `events_per_cell` events per tick, mimicking the
    burst a sensor produces per brightness change; this keeps integrated
    count frames strong enough to drive spiking layers.
    """
    if kind != "moving-bar":
        raise DataError(f"unknown synthetic kind {kind!r}")
    if classes not in (2, 4, 8):
        raise DataError(f"classes must be 2, 4, or 8, got {classes}")
    rng = np.random.default_rng(seed)
    ticks = t_steps * max(1, round(max(height, width) / t_steps))
    dataset = []
    for i in range(n):
        label = i % classes
        dataset.append(
            (
                _moving_bar_stream(
                    label, height, width, ticks, rng, noise_per_tick, events_per_cell
                ),
                label,
            )
        )
    return dataset


def _moving_bar_stream(
    direction: int,
    height: int,
    width: int,
    ticks: int,
    rng: np.random.Generator,
    noise_per_tick: int,
    events_per_cell: int = 3,
) -> EventStream:
    dx, dy = _DIRECTIONS[direction]
    span = max(height, width) - 1
    bar_len = int(rng.integers(round(0.7 * span), span + 1))
    jitter = int(rng.integers(-1, 2))
    # Bar lies perpendicular to the motion; offsets sweep along its length.
    ox, oy = (-dy, dx) if (dx and dy) else ((0, 1) if dx else (1, 0))
    cx0 = (width - 1) / 2.0 - dx * span / 2.0
    cy0 = (height - 1) / 2.0 - dy * span / 2.0
    ts, xs, ys, ps = [], [], [], []
    prev_cells: set[tuple[int, int]] = set()
    for tick in range(ticks):
        prog = tick / (ticks - 1) if ticks > 1 else 0.0
        cx = cx0 + dx * span * prog + jitter
        cy = cy0 + dy * span * prog + jitter
        cells = set()
        for s in range(-(bar_len // 2), bar_len - bar_len // 2):
            px = int(round(cx + ox * s))
            py = int(round(cy + oy * s))
            if 0 <= px < width and 0 <= py < height:
                cells.add((px, py))
        base = tick * 1000
        seq = 0
        for px, py in sorted(cells):  # ON where the bar is now
            for _ in range(events_per_cell):
                ts.append(base + seq)
                xs.append(px)
                ys.append(py)
                ps.append(1)
                seq += 1
        for px, py in sorted(prev_cells - cells):  # OFF where it just left
            for _ in range(events_per_cell):
                ts.append(base + seq)
                xs.append(px)
                ys.append(py)
                ps.append(0)
                seq += 1
        for _ in range(noise_per_tick):
            ts.append(base + seq)
            xs.append(int(rng.integers(0, width)))
            ys.append(int(rng.integers(0, height)))
            ps.append(int(rng.integers(0, 2)))
            seq += 1
        prev_cells = cells
    stream = EventStream(
        t=np.asarray(ts, dtype=np.int64),
        x=np.asarray(xs, dtype=np.int64),
        y=np.asarray(ys, dtype=np.int64),
        p=np.asarray(ps, dtype=np.int64),
        width=width,
        height=height,
    )
    stream.validate()
    return stream


# -- dataset directories -------------------------------------------------------------


def write_dataset(
    out_dir: str | Path, dataset: list[tuple[EventStream, int]], fmt: str = "bin"
) -> Path:
    """One event file per sample plus a "path,label" manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = "csv" if fmt == "csv" else "bin"
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        writer = csv.writer(fh)
        for i, (stream, label) in enumerate(dataset):
            name = f"sample_{i:05d}.{ext}"
            write_events(out_dir / name, stream, fmt=fmt)
            writer.writerow([name, label])
    return manifest


def load_dataset(
    root: str | Path,
    width: int | None = None,
    height: int | None = None,
) -> list[tuple[EventStream, int]]:
    """Read a manifest directory back into labeled streams."""
    root = Path(root)
    manifest = root / "manifest.csv"
    if not manifest.exists():
        raise DataError(f"manifest not found: {manifest}")
    dataset = []
    with open(manifest, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{manifest}: malformed line {lineno}: {row!r}")
            path, label = row[0], row[1]
            stream = read_events(root / path, width=width, height=height)
            dataset.append((stream, int(label)))
    return dataset


def frames_dataset(
    dataset: list[tuple[EventStream, int]], t_steps: int, num_classes: int
) -> list[FrameSample]:
    """Integrate every stream and attach one-hot labels."""
    return [
        integrate_frames(stream, t_steps, label=one_hot(num_classes, label))
        for stream, label in dataset
    ]
