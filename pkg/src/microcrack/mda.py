"""Feature-manifold visualization in the style of Manifold Discovery and Analysis.

Pseudo-labels come from the network outputs: the sample farthest from all
others becomes the anchor, and distances to the anchor are binned with the
Freedman-Diaconis rule. Layer features are embedded in 2D by classical MDS
on kNN-graph geodesic distances (an Isomap-style projection).
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

from . import kernels


@dataclass
class PseudoLabels:
    anchor: int
    anchor_distance: np.ndarray
    bins: np.ndarray
    edges: np.ndarray
    degenerate: bool = False

    @property
    def k(self):
        return len(self.edges) - 1


@dataclass
class EmbeddingPoint:
    sample_id: int
    x: float
    y: float
    bin: int
    layer_id: int
    anchor_distance: float


def pairwise_distances(points):
    """Exact Euclidean distances (row differences, no Gram-matrix shortcut)."""
    p = np.asarray(points, dtype=np.float64)
    p = p.reshape(len(p), -1)
    d = np.empty((len(p), len(p)))
    for i in range(len(p)):
        diff = p - p[i]
        d[i] = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    np.fill_diagonal(d, 0.0)
    return d


def output_distances(predictions):
    predictions = np.asarray(predictions)
    if predictions.ndim != 2 or len(predictions) < 3:
        raise ValueError(f"need an (N >= 3, D) prediction matrix, got shape {predictions.shape}")
    return pairwise_distances(predictions)


def fd_bin_count(values):
    """Freedman-Diaconis bin count; ``ceil(sqrt(N))`` when the IQR vanishes."""
    v = np.asarray(values, dtype=np.float64)
    span = v.max() - v.min()
    if span == 0:
        return 1
    q75, q25 = np.percentile(v, [75, 25])
    iqr = q75 - q25
    if iqr == 0:
        return int(math.ceil(math.sqrt(len(v))))
    width = 2.0 * iqr * len(v) ** (-1.0 / 3.0)
    return max(1, int(math.ceil(span / width)))


def make_pseudo_labels(distances):
    d = np.asarray(distances, dtype=np.float64)
    if d.ndim != 2 or d.shape[0] != d.shape[1] or len(d) < 1:
        raise ValueError(f"distance matrix must be square, got {d.shape}")
    anchor = int(np.argmax(d.sum(axis=1)))
    a = d[anchor].copy()
    lo, hi = a.min(), a.max()
    if hi == lo:
        warnings.warn("all outputs coincide; pseudo-labels collapse to a single bin", RuntimeWarning)
        return PseudoLabels(anchor, a, np.zeros(len(a), dtype=np.int64), np.array([lo, hi]), degenerate=True)
    k = fd_bin_count(a)
    edges = np.linspace(lo, hi, k + 1)
    bins = np.clip(np.searchsorted(edges, a, side="right") - 1, 0, k - 1)
    return PseudoLabels(anchor, a, bins.astype(np.int64), edges)


def _knn_graph(d, k):
    n = len(d)
    g = np.full((n, n), np.inf)
    np.fill_diagonal(g, 0.0)
    for i in range(n):
        order = np.argsort(d[i], kind="stable")
        nbrs = [j for j in order if j != i][:k]
        g[i, nbrs] = d[i, nbrs]
        g[nbrs, i] = d[i, nbrs]
    return g


def _components(g):
    n = len(g)
    label = -np.ones(n, dtype=np.int64)
    c = 0
    for s in range(n):
        if label[s] >= 0:
            continue
        stack = [s]
        label[s] = c
        while stack:
            i = stack.pop()
            for j in np.nonzero(np.isfinite(g[i]) & (label < 0))[0]:
                label[j] = c
                stack.append(j)
        c += 1
    return label


def geodesic_distances(features, n_neighbors=10):
    d = pairwise_distances(features)
    g = _knn_graph(d, n_neighbors)
    label = _components(g)
    while label.max() > 0:
        # bridge the closest pair of points lying in different components
        cross = np.where(label[:, None] != label[None, :], d, np.inf)
        i, j = np.unravel_index(np.argmin(cross), cross.shape)
        g[i, j] = g[j, i] = d[i, j]
        label = _components(g)
    return kernels.floyd_warshall(g)


def classical_mds(dist, dims=2):
    n = len(dist)
    j = np.eye(n) - 1.0 / n
    b = -0.5 * j @ (dist ** 2) @ j
    vals, vecs = np.linalg.eigh(b)
    top = np.argsort(vals)[::-1][:dims]
    coords = vecs[:, top] * np.sqrt(np.maximum(vals[top], 0.0))
    for a in range(dims):
        if coords[np.argmax(np.abs(coords[:, a])), a] < 0:
            coords[:, a] = -coords[:, a]
    return coords


def geodesic_embed(features, n_neighbors=10):
    f = np.asarray(features, dtype=np.float64)
    f = f.reshape(len(f), -1)
    n = len(f)
    if n < 3:
        raise ValueError(f"need at least 3 points to embed, got {n}")
    n_neighbors = min(n_neighbors, n - 1)
    if n_neighbors < 2:
        raise ValueError("n_neighbors must be at least 2")
    if np.all(f == f[0]):
        raise ValueError("all feature vectors are identical")
    return classical_mds(geodesic_distances(f, n_neighbors))


def residual_variance(embedded, reference):
    """``1 - r^2`` between two sets of pairwise distances."""
    iu = np.triu_indices(len(embedded), 1)
    r = np.corrcoef(pairwise_distances(embedded)[iu], np.asarray(reference)[iu])[0, 1]
    return 1.0 - r * r


def embedding_quality(coords, anchor_distance):
    """Spearman correlation of embedded pair distances with anchor-distance differences."""
    iu = np.triu_indices(len(coords), 1)
    a = np.asarray(anchor_distance, dtype=np.float64)
    emb = pairwise_distances(coords)[iu]
    ref = np.abs(a[:, None] - a[None, :])[iu]
    return float(stats.spearmanr(emb, ref).statistic)


# ------------------------------------------------------------------ run

def _ramp(t):
    """Red (t = 0) to blue (t = 1)."""
    r = int(round(255 * (1 - t)))
    b = int(round(255 * t))
    return f"#{r:02x}30{b:02x}"


def write_svg(points, path, size=480, pad=24):
    xs = np.array([p.x for p in points])
    ys = np.array([p.y for p in points])
    kmax = max(max(p.bin for p in points), 1)
    sx = (size - 2 * pad) / max(np.ptp(xs), 1e-12)
    sy = (size - 2 * pad) / max(np.ptp(ys), 1e-12)
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
           f'<rect width="{size}" height="{size}" fill="white"/>']
    for p in points:
        cx = pad + (p.x - xs.min()) * sx
        cy = size - pad - (p.y - ys.min()) * sy
        out.append(f'<circle cx="{cx:.2f}" cy="{cy:.2f}" r="4" fill="{_ramp(p.bin / kmax)}"/>')
    out.append("</svg>")
    Path(path).write_text("\n".join(out) + "\n")


def mda_run(model, inputs, layer_id, out_path, n_neighbors=10, svg=True, batch_size=16):
    """Embed layer ``layer_id`` features, colour by output pseudo-labels, write CSV (+ SVG)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    if len(inputs) < 3:
        raise ValueError("MDA needs at least 3 samples")
    preds, feats = [], []
    for s in range(0, len(inputs), batch_size):
        out, taps = model.forward_with_taps(inputs[s:s + batch_size], [layer_id])
        preds.append(out)
        feats.append(taps[layer_id])
    preds, feats = np.concatenate(preds), np.concatenate(feats)
    labels = make_pseudo_labels(output_distances(preds))
    coords = geodesic_embed(feats, n_neighbors)
    points = [EmbeddingPoint(i, float(coords[i, 0]), float(coords[i, 1]), int(labels.bins[i]), layer_id,
                             float(labels.anchor_distance[i])) for i in range(len(inputs))]
    out_path = Path(out_path)
    try:
        with out_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample_id", "x", "y", "bin", "anchor_distance"])
            for p in points:
                w.writerow([p.sample_id, repr(p.x), repr(p.y), p.bin, repr(p.anchor_distance)])
        if svg:
            write_svg(points, out_path.with_suffix(".svg"))
    except OSError as e:
        raise OSError(f"cannot write MDA output {out_path}: {e}") from e
    return points, labels
