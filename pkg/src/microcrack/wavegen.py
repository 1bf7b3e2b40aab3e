"""Synthetic cracked-plate wave fields.

Two scalar wave equations (x and y displacement, speed ratio 1 : 0.55) are
integrated with a leapfrog scheme on a cell-centred grid with reflecting
edges. Cracks lower the coupling of every face that touches a crack cell to
``tau(width) = exp(-width / 2 µm)``. A Ricker pulse is injected at the middle
of the left edge, and 81 sensors on a 9 x 9 lattice record both components.

Arrays are indexed ``[row (y), column (x)]``; sensor ``9 * r + k`` sits in
lattice row ``r``, column ``k``, the same order the model folds back into
its 9 x 9 grid.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

DATA_MAGIC = b"MCWV"
DATA_VERSION = 1
STEPS = 2000
SENSOR_SIDE = 9
MASK_SIDE = 36
W0_UM = 2.0
SOURCE_AMPLITUDE = 1000.0


class CFLError(ValueError):
    pass


@dataclass(frozen=True)
class PlateSpec:
    nx: int = 144
    ny: int = 144
    speed: float = 0.4
    speed_ratio_y: float = 0.55
    damping: float = 0.0
    steps: int = STEPS
    source_freq: float = 0.035  # cycles per step

    def __post_init__(self):
        limit = 1.0 / math.sqrt(2.0)
        for c in (self.speed, self.speed * self.speed_ratio_y):
            if not 0.0 < c <= limit:
                raise CFLError(f"wave speed {c} cells/step violates the 2D CFL bound {limit:.4f}")
        if self.damping < 0:
            raise ValueError("damping must be non-negative")
        if self.nx != self.ny:
            raise ValueError("plate must be square")
        if self.nx % MASK_SIDE:
            raise ValueError(f"plate {self.nx}x{self.ny} is not a multiple of the {MASK_SIDE}x{MASK_SIDE} mask")

    @property
    def speeds(self):
        return (self.speed, self.speed * self.speed_ratio_y)


def transmission(width_um):
    return math.exp(-width_um / W0_UM)


@dataclass(frozen=True)
class CrackSpec:
    """A straight crack in plate coordinates (cells, continuous)."""

    x0: float
    y0: float
    x1: float
    y1: float
    width_um: float
    tau: float | None = None  # overrides transmission(width_um) when set

    def __post_init__(self):
        if self.width_um <= 0:
            raise ValueError("crack width must be positive")

    @property
    def transmission(self):
        return transmission(self.width_um) if self.tau is None else self.tau

    @property
    def endpoints(self):
        return (self.x0, self.y0, self.x1, self.y1)


@dataclass
class WaveSample:
    input: np.ndarray  # (2, steps, 81) float32
    mask: np.ndarray  # (36, 36) uint8
    cracks: list = field(default_factory=list)
    seed: int = 0

    @property
    def min_width(self):
        return min(c.width_um for c in self.cracks) if self.cracks else float("inf")


# --------------------------------------------------------------- geometry

def _segment_cells(crack, side, cell):
    """Cells of a ``side x side`` grid (cell size ``cell``) crossed by the segment.

    Cells are half-open ``[x, x + cell) x [y, y + cell)``; a cell counts when
    the midpoint of the segment's clipped piece falls inside it.
    """
    x0, y0, x1, y1 = crack.endpoints
    dx, dy = x1 - x0, y1 - y0
    lo_c = max(int(math.floor(min(x0, x1) / cell)) - 1, 0)
    hi_c = min(int(math.floor(max(x0, x1) / cell)) + 1, side - 1)
    lo_r = max(int(math.floor(min(y0, y1) / cell)) - 1, 0)
    hi_r = min(int(math.floor(max(y0, y1) / cell)) + 1, side - 1)
    cells = []
    for r in range(lo_r, hi_r + 1):
        for c in range(lo_c, hi_c + 1):
            bx0, by0 = c * cell, r * cell
            bx1, by1 = bx0 + cell, by0 + cell
            t0, t1 = 0.0, 1.0
            ok = True
            for p, q in ((-dx, x0 - bx0), (dx, bx1 - x0), (-dy, y0 - by0), (dy, by1 - y0)):
                if p == 0.0:
                    if q < 0.0:
                        ok = False
                        break
                    continue
                t = q / p
                if p < 0.0:
                    t0 = max(t0, t)
                else:
                    t1 = min(t1, t)
            if not ok or t0 > t1:
                continue
            tm = 0.5 * (t0 + t1)
            mx, my = x0 + tm * dx, y0 + tm * dy
            if bx0 <= mx < bx1 and by0 <= my < by1:
                cells.append((r, c))
    return cells


def rasterize_mask(cracks, plate=PlateSpec(), side=MASK_SIDE):
    mask = np.zeros((side, side), dtype=np.uint8)
    cell = plate.nx / side
    for crack in cracks:
        for r, c in _segment_cells(crack, side, cell):
            mask[r, c] = 1
    return mask


def crack_field(cracks, plate=PlateSpec()):
    """Per-cell transmission: 1 in intact material, ``tau`` (the lowest one) in crack cells."""
    tau = np.ones((plate.ny, plate.nx))
    for crack in cracks:
        for r, c in _segment_cells(crack, plate.nx, 1.0):
            tau[r, c] = min(tau[r, c], crack.transmission)
    return tau


def face_coefficients(tau):
    kx = np.minimum(tau[:, 1:], tau[:, :-1])
    ky = np.minimum(tau[1:, :], tau[:-1, :])
    return kx, ky


def sensor_cells(plate=PlateSpec(), side=SENSOR_SIDE):
    """(row, col) of each sensor cell, sensor ``side * r + k`` first by row."""
    if plate.nx < side or plate.ny < side:
        raise ValueError(f"{side}x{side} sensor grid does not fit a {plate.nx}x{plate.ny} plate")
    sy, sx = plate.ny // side, plate.nx // side
    rows = np.repeat(np.arange(side) * sy + sy // 2, side)
    cols = np.tile(np.arange(side) * sx + sx // 2, side)
    return rows, cols


def sensor_positions(plate=PlateSpec(), side=SENSOR_SIDE):
    """Continuous (y, x) coordinates of the sensor cell centres."""
    rows, cols = sensor_cells(plate, side)
    return np.stack([rows + 0.5, cols + 0.5], axis=1)


def sample_sensors(fields, plate=PlateSpec()):
    """Pick the sensor cells out of fields shaped ``(..., ny, nx)``; returns ``(..., 81)``."""
    fields = np.asarray(fields)
    if fields.shape[-2:] != (plate.ny, plate.nx):
        raise ValueError(f"fields {fields.shape} do not match plate {plate.ny}x{plate.nx}")
    rows, cols = sensor_cells(plate)
    return fields[..., rows, cols]


# ------------------------------------------------------------- simulation

def ricker(plate=PlateSpec(), amplitude=SOURCE_AMPLITUDE):
    """Ricker pulse, truncated to zero after ``2 * t0`` steps."""
    f = plate.source_freq
    t0 = 1.5 / f
    t = np.arange(plate.steps, dtype=np.float64)
    a = (math.pi * f * (t - t0)) ** 2
    w = amplitude * (1.0 - 2.0 * a) * np.exp(-a)
    w[t > 2.0 * t0] = 0.0
    return w


def source_switch_off(plate=PlateSpec()):
    return int(math.floor(2.0 * 1.5 / plate.source_freq)) + 1


def source_rows(plate=PlateSpec()):
    mid = plate.ny // 2
    return np.array([mid - 1, mid] if plate.ny % 2 == 0 else [mid], dtype=np.int64)


@dataclass
class Simulation:
    traces: np.ndarray  # (2, steps, n_probes)
    energy: np.ndarray  # (2, steps), discrete energy after each step
    final: np.ndarray  # (2, ny, nx)


def simulate(plate=PlateSpec(), cracks=(), source=None, probes=None):
    """Run both displacement components; record ``probes`` (rows, cols), default the sensors."""
    src = ricker(plate) if source is None else np.asarray(source, dtype=np.float64)
    if src.shape != (plate.steps,):
        raise ValueError(f"source must have {plate.steps} samples, got {src.shape}")
    kx, ky = face_coefficients(crack_field(cracks, plate))
    rows, cols = sensor_cells(plate) if probes is None else probes
    rows = np.ascontiguousarray(rows, dtype=np.int64)
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    traces, energy, final = [], [], []
    for c in plate.speeds:
        tr, en, u = kernels.leapfrog(kx, ky, c * c, plate.damping, source_rows(plate), 0, src, rows, cols)
        traces.append(tr)
        energy.append(en)
        final.append(u)
    return Simulation(np.stack(traces), np.stack(energy), np.stack(final))


# ------------------------------------------------------------- sampling

CRACK_LENGTH = (80.0, 160.0)
WIDTH_RANGE_UM = (0.4, 12.8)


def random_cracks(rng, plate=PlateSpec(), n_range=(1, 3), length=CRACK_LENGTH, widths=WIDTH_RANGE_UM):
    """1-3 straight cracks with uniform centre, angle, length and width, kept inside the plate."""
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    margin = 2.0
    cracks = []
    for _ in range(n):
        cx = rng.uniform(margin, plate.nx - margin)
        cy = rng.uniform(margin, plate.ny - margin)
        theta = rng.uniform(0.0, math.pi)
        half = 0.5 * rng.uniform(*length)
        w = rng.uniform(*widths)
        x0, x1 = cx - half * math.cos(theta), cx + half * math.cos(theta)
        y0, y1 = cy - half * math.sin(theta), cy + half * math.sin(theta)
        pts = [float(np.float32(min(max(v, margin), hi - margin)))
               for v, hi in ((x0, plate.nx), (y0, plate.ny), (x1, plate.nx), (y1, plate.ny))]
        cracks.append(CrackSpec(*pts, width_um=float(np.float32(w))))
    return cracks


def sample_cracks(seed, index, plate=PlateSpec()):
    """Crack geometry of sample ``index`` in the dataset seeded by ``seed``."""
    return random_cracks(np.random.default_rng([seed, index]), plate)


def make_sample(seed, index, plate=PlateSpec()):
    """Raw (unnormalized, float64) sample number ``index`` of the dataset seeded by ``seed``."""
    cracks = sample_cracks(seed, index, plate)
    sim = simulate(plate, cracks)
    return sim.traces, rasterize_mask(cracks, plate), cracks


# -------------------------------------------------------------- file I/O

def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.name + ".json")


def generate_dataset(n, seed, out_path, plate=PlateSpec()):
    """Simulate ``n`` samples, standardize each component over the set, write file + JSON sidecar."""
    if n < 1:
        raise ValueError("dataset needs at least one sample")
    raw = []
    for i in range(n):
        raw.append(make_sample(seed, i, plate))
    stack = np.stack([r[0] for r in raw])  # (n, 2, steps, 81)
    mean = stack.mean(axis=(0, 2, 3))
    std = stack.std(axis=(0, 2, 3))
    std = np.where(std > 0, std, 1.0)
    samples = []
    for i, (traces, mask, cracks) in enumerate(raw):
        x = ((traces - mean[:, None, None]) / std[:, None, None]).astype(np.float32)
        samples.append(WaveSample(x, mask, cracks, seed=i))
    meta = {
        "version": DATA_VERSION,
        "seed": seed,
        "count": n,
        "steps": plate.steps,
        "plate": {"nx": plate.nx, "ny": plate.ny, "speed": plate.speed,
                  "speed_ratio_y": plate.speed_ratio_y, "damping": plate.damping},
        "normalization": {"mean": mean.tolist(), "std": std.tolist()},
        "samples": [{"index": i, "cracks": [{"width_um": c.width_um, "endpoints": list(c.endpoints)}
                                            for c in s.cracks]} for i, s in enumerate(samples)],
    }
    write_dataset(samples, out_path, meta)
    return samples


def write_dataset(samples, path, meta=None):
    path = Path(path)
    chunks = [DATA_MAGIC, struct.pack("<II", DATA_VERSION, len(samples))]
    for s in samples:
        x = np.asarray(s.input)
        if x.shape != (2, STEPS, SENSOR_SIDE ** 2):
            raise ValueError(f"sample input has shape {x.shape}, expected (2, {STEPS}, {SENSOR_SIDE ** 2})")
        chunks.append(np.ascontiguousarray(x, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(s.mask, dtype=np.uint8).tobytes())
        chunks.append(struct.pack("<H", len(s.cracks)))
        for c in s.cracks:
            chunks.append(struct.pack("<5f", c.width_um, *c.endpoints))
    try:
        path.write_bytes(b"".join(chunks))
        if meta is not None:
            sidecar_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    except OSError as e:
        raise OSError(f"cannot write dataset {path}: {e}") from e


def read_dataset(path):
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise OSError(f"cannot read dataset {path}: {e}") from e
    if not blob.startswith(DATA_MAGIC):
        raise ValueError(f"{path}: not a wave dataset (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != DATA_VERSION:
        raise ValueError(f"{path}: unsupported dataset version {version}")
    pos = 12
    n_in = 2 * STEPS * SENSOR_SIDE ** 2
    samples = []
    for i in range(count):
        x = np.frombuffer(blob, dtype="<f4", count=n_in, offset=pos).reshape(2, STEPS, SENSOR_SIDE ** 2)
        pos += 4 * n_in
        mask = np.frombuffer(blob, dtype=np.uint8, count=MASK_SIDE ** 2, offset=pos).reshape(MASK_SIDE, MASK_SIDE)
        pos += MASK_SIDE ** 2
        (nc,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        cracks = []
        for _ in range(nc):
            w, *pts = struct.unpack_from("<5f", blob, pos)
            pos += 20
            cracks.append(CrackSpec(*pts, width_um=w))
        samples.append(WaveSample(x.astype(np.float32), mask.copy(), cracks, seed=i))
    if pos != len(blob):
        raise ValueError(f"{path}: {len(blob) - pos} trailing bytes after {count} samples")
    return samples


def load_arrays(path):
    """Inputs (N, 2, steps, 81), flattened masks (N, 1296) and narrowest crack width per sample."""
    samples = read_dataset(path)
    x = np.stack([s.input for s in samples])
    y = np.stack([s.mask.reshape(-1) for s in samples]).astype(np.float64)
    w = np.array([s.min_width for s in samples])
    return x, y, w
