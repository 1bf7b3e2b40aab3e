"""Training, evaluation, the activation x loss grid, and Table-1 style reports."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses as LS
from . import optim
from . import tensor as T
from .layers import ACTIVATIONS
from .model import ModelConfig, build, load_checkpoint, save_checkpoint
from .wavegen import load_arrays

GRID_ACTIVATIONS = ("gelu", "relu", "elu", "selu")
GRID_LOSSES = ("focal", "dice", "wdl", "cwdl")
ACT_LABELS = {"gelu": "GeLU", "relu": "ReLU", "elu": "ELU", "selu": "SeLU"}
COLUMNS = tuple(f">{int(t)} µm" for t in LS.WIDTH_THRESHOLDS)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 50
    batch_size: int = 8
    seed: int = 0
    activation: str = "gelu"
    loss: str = "cwdl"
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    w_background: float = 0.05
    w_crack: float = 0.95
    cwdl_alpha: float = 0.5
    smooth: float = 1.0
    temporal_len: int = 2000
    se_reduction: int = 4
    norm_groups: int = 4
    val_fraction: float = 0.2
    threshold: float = 0.5
    data: str = ""
    checkpoint: str = ""
    eval_every: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")
        if self.activation.lower() not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        self.activation = self.activation.lower()
        self.loss_config  # validates the loss fields

    @property
    def loss_config(self):
        return LS.LossConfig(self.loss, self.focal_alpha, self.focal_gamma,
                             (self.w_background, self.w_crack), self.cwdl_alpha, self.smooth)

    @property
    def model_config(self):
        return ModelConfig(activation=self.activation, se_reduction=self.se_reduction,
                           norm_groups=self.norm_groups, temporal_len=self.temporal_len, seed=self.seed)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


def parse_config_text(text):
    """``key = value`` lines, ``#`` starts a comment."""
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {n}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def _coerce(fields, raw, where):
    types = {f.name: f.type for f in fields}
    kw = {}
    for key, value in raw.items():
        if key not in types:
            raise ValueError(f"{where}: unknown key {key!r}")
        typ = types[key]
        kw[key] = int(value) if typ == "int" else float(value) if typ == "float" else value
    return kw


def load_train_config(path=None, **overrides):
    raw = {}
    if path:
        try:
            raw = parse_config_text(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise OSError(f"cannot read config {path}: {e}") from e
    kw = _coerce(dataclasses.fields(TrainConfig), raw, path or "config")
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**kw)


def load_model_config(path=None):
    """Model config from a key=value file; TrainConfig keys are accepted too."""
    if not path:
        return ModelConfig()
    try:
        raw = parse_config_text(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise OSError(f"cannot read config {path}: {e}") from e
    train_keys = {f.name for f in dataclasses.fields(TrainConfig)}
    model_fields = [f for f in dataclasses.fields(ModelConfig) if f.type in ("int", "float", "str")]
    model_keys = {f.name for f in model_fields}
    unknown = set(raw) - train_keys - model_keys
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    return ModelConfig(**_coerce(model_fields, {k: v for k, v in raw.items() if k in model_keys}, path))


# ------------------------------------------------------------------ data

def fit_temporal(x, temporal_len):
    """Block-average the time axis of (N, 2, steps, S) down to ``temporal_len``."""
    steps = x.shape[2]
    if steps == temporal_len:
        return np.asarray(x, dtype=np.float64)
    if steps % temporal_len:
        raise ValueError(f"cannot reduce {steps} time steps to {temporal_len}")
    f = steps // temporal_len
    return np.asarray(x, dtype=np.float64).reshape(x.shape[0], x.shape[1], temporal_len, f, x.shape[3]).mean(axis=3)


def load_data(path, temporal_len):
    x, y, w = load_arrays(path)
    return fit_temporal(x, temporal_len), y, w


def split_indices(n, val_fraction, seed):
    perm = np.random.default_rng([seed, 7]).permutation(n)
    n_val = int(round(val_fraction * n))
    if n_val >= n:
        n_val = n - 1
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])


# ------------------------------------------------------------ results

@dataclass
class ExperimentResult:
    activation: str
    loss: str
    bucketed: list = field(default_factory=lambda: [None] * len(LS.WIDTH_THRESHOLDS))
    dsc: float | None = None
    accuracy: float | None = None
    final_train_loss: float | None = None
    loss_curve: list = field(default_factory=list)
    wall_time: float = 0.0
    parameter_count: int = 0
    split: str = ""
    n_eval: int = 0
    train_indices: list = field(default_factory=list)
    eval_indices: list = field(default_factory=list)
    status: str = "ok"

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True)


def evaluate_arrays(model, x, y, w, threshold=0.5):
    """DSC and accuracy over all pixels, plus bucketed detection rates."""
    pred = model.predict(x)
    counts = LS.confusion(pred, y, threshold)
    return {
        "dsc": LS.dsc(counts),
        "accuracy": LS.accuracy(counts),
        "bucketed": LS.bucketed_accuracy(pred, y, w, threshold=threshold),
        "counts": counts,
        "pred": pred,
    }


def evaluate(checkpoint, data, threshold=0.5):
    """Evaluate a saved model on every sample of a dataset file."""
    model = checkpoint if not isinstance(checkpoint, (str, Path)) else load_checkpoint(checkpoint)
    cfg = model.config
    x, y, w = load_data(data, cfg.temporal_len) if isinstance(data, (str, Path)) else data
    if x.shape[1:] != (cfg.input_channels, cfg.temporal_len, cfg.sensors) or y.shape[1] != cfg.output_len:
        raise T.ShapeError(f"dataset {x.shape[1:]} / {y.shape[1]} does not match model config")
    m = evaluate_arrays(model, x, y, w, threshold)
    return ExperimentResult(cfg.activation, "", m["bucketed"], m["dsc"], m["accuracy"],
                            parameter_count=model.parameter_count(), split="all", n_eval=len(x),
                            eval_indices=list(range(len(x))))


# ------------------------------------------------------------ training

def train(cfg, data=None, log=None):
    """Train one model; returns ``(model, ExperimentResult)``.

    ``data`` may carry pre-loaded ``(x, y, min_widths)`` arrays, otherwise
    ``cfg.data`` is read. Single-threaded and fully determined by ``cfg.seed``.
    """
    start = time.perf_counter()
    if data is None:
        if not cfg.data:
            raise ValueError("no dataset given")
        data = load_data(cfg.data, cfg.temporal_len)
    x, y, w = data
    x = fit_temporal(x, cfg.temporal_len)
    tr, ev = split_indices(len(x), cfg.val_fraction, cfg.seed)
    model = build(cfg.model_config)
    params = model.parameters()
    state = optim.AdamState(lr=cfg.lr)
    loss_fn = LS.make_loss(cfg.loss_config)
    rng = np.random.default_rng([cfg.seed, 11])
    curve = []
    for epoch in range(cfg.epochs):
        order = tr[rng.permutation(len(tr))]
        total, seen = 0.0, 0
        for b, s in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[s:s + cfg.batch_size]
            loss = loss_fn(model.forward(x[idx], train=True), y[idx])
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss {value} at epoch {epoch}, batch {b}; config: {cfg}")
            loss.backward()
            optim.adam_step(params, state)
            optim.zero_grad(params)
            total += value * len(idx)
            seen += len(idx)
        curve.append(total / seen)
        if log:
            log(f"epoch {epoch + 1}/{cfg.epochs} loss {curve[-1]:.6f}")
        if cfg.checkpoint and cfg.eval_every and (epoch + 1) % cfg.eval_every == 0:
            save_checkpoint(model, cfg.checkpoint)
    if cfg.checkpoint:
        save_checkpoint(model, cfg.checkpoint)
    eval_idx, split = (ev, "validation") if len(ev) else (tr, "train")
    m = evaluate_arrays(model, x[eval_idx], y[eval_idx], w[eval_idx], cfg.threshold)
    result = ExperimentResult(
        cfg.activation, cfg.loss, m["bucketed"], m["dsc"], m["accuracy"], curve[-1], curve,
        time.perf_counter() - start, model.parameter_count(), split, len(eval_idx),
        tr.tolist(), eval_idx.tolist())
    return model, result


def grid(cfg, out_dir, data=None, activations=GRID_ACTIVATIONS, loss_kinds=GRID_LOSSES, log=None):
    """Train every activation x loss cell; failed cells are recorded and the grid carries on."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if data is None:
        data = load_data(cfg.data, cfg.temporal_len)
    results = []
    for act in activations:
        for loss in loss_kinds:
            cell = cfg.replace(activation=act, loss=loss, checkpoint=str(out_dir / f"{act}_{loss}.ckpt"))
            try:
                _, res = train(cell, data)
            except Exception as e:  # noqa: BLE001 - a failed cell must not stop the grid
                res = ExperimentResult(act, loss, status=f"failed: {type(e).__name__}: {e}")
            results.append(res)
            (out_dir / f"{act}_{loss}.json").write_text(res.to_json() + "\n")
            if log:
                log(f"{act:5s} {loss:5s} {res.status} dsc={res.dsc}")
    text, table = render_report(results), render_csv(results)
    (out_dir / "report.txt").write_text(text, encoding="utf-8")
    (out_dir / "report.csv").write_text(table, encoding="utf-8")
    return results


# ------------------------------------------------------------- reports

def _fmt(v):
    return "n/a" if v is None else f"{v:.4f}"


def render_report(results):
    """Aligned text table: one row per (activation, loss), best value per column starred."""
    cols = list(COLUMNS) + ["DSC"]
    values = [(r.bucketed + [r.dsc]) if r.status == "ok" else [None] * len(cols) for r in results]
    best = []
    for j in range(len(cols)):
        seen = [v[j] for v in values if v[j] is not None]
        best.append(max(seen) if seen else None)
    splits = sorted({f"{r.split} ({r.n_eval} samples)" for r in results if r.status == "ok"})
    head = ["Activation", "Loss"] + cols
    rows = []
    for r, vals in zip(results, values):
        cells = [ACT_LABELS.get(r.activation, r.activation), LS.LOSS_LABELS.get(r.loss, r.loss)]
        if r.status != "ok":
            cells += ["failed"] * len(cols)
        else:
            cells += [_fmt(v) + ("*" if v is not None and v == best[j] else "") for j, v in enumerate(vals)]
        rows.append(cells)
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h) for i, h in enumerate(head)]
    lines = [f"Accuracy by minimum crack width; evaluated on {', '.join(splits) or 'n/a'}; * marks the column best",
             "  ".join(h.ljust(widths[i]) for i, h in enumerate(head))]
    lines.append("  ".join("-" * wdt for wdt in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(row)).rstrip())
    return "\n".join(lines) + "\n"


def render_csv(results):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["activation", "loss"] + [c.replace(" µm", "um") for c in COLUMNS] + ["dsc", "accuracy", "split", "status"])
    for r in results:
        vals = r.bucketed + [r.dsc, r.accuracy]
        w.writerow([r.activation, r.loss] + ["" if v is None else repr(v) for v in vals] + [r.split, r.status])
    return buf.getvalue()
