"""Training loop, configuration file, metrics CSV and model checkpoints."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import time
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from ..data import Dataset, batches, subsample
from ..layout import LayerSpec, build_layer_layout, export_layout, import_layout
from ..tensorops import load_checkpoint, save_checkpoint
from .archs import build_model
from .model import DivergenceError, Model, forward_backward, softmax_cross_entropy
from .optim import SGD, lr_at
from .penalties import OrthoPenalty

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class LayoutMismatchError(ValueError):
    pass


@dataclass
class TrainConfig:
    dataset: str = "mnist"
    arch: str = "mnist_cnn4"
    conv: str = "ssc"
    g: int = 2
    p: int = 2
    parity_policy: str = "block_halves"
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 5
    batch_size: int = 64
    seed: int = 0
    data_fraction: float = 1.0
    penalty: str = "none"
    lam: float = 0.0
    width: int = 0
    schedule: str = "cosine"
    augment: bool = False
    precision: str = "float32"
    eval_train: bool = False

    def __post_init__(self):
        if self.penalty not in ("none", "so", "dso"):
            raise ConfigError(f"penalty must be none, so or dso, got {self.penalty!r}")
        if self.lam < 0:
            raise ConfigError("lambda must be >= 0")
        if self.precision not in ("float32", "float64"):
            raise ConfigError(f"precision must be float32 or float64, got {self.precision!r}")
        if not 0 < self.data_fraction <= 1:
            raise ConfigError("data_fraction must lie in (0, 1]")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError("epochs must be >= 0 and batch_size >= 1")

    # "lambda" is the documented key name
    _aliases = {"lambda": "lam"}

    @classmethod
    def from_mapping(cls, d: dict) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for k, v in d.items():
            k = cls._aliases.get(k, k)
            if k not in types:
                raise ConfigError(f"unknown config key {k!r}")
            kw[k] = _cast(k, v, types[k])
        return cls(**kw)

    def to_mapping(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    def penalty_obj(self) -> OrthoPenalty:
        return OrthoPenalty(self.penalty, self.lam)


def _cast(key, v, typ):
    if not isinstance(v, str):
        return v
    try:
        if typ in ("int", int):
            return int(v)
        if typ in ("float", float):
            return float(v)
        if typ in ("bool", bool):
            if v.lower() in ("1", "true", "yes", "on"):
                return True
            if v.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(v)
    except ValueError:
        raise ConfigError(f"bad value {v!r} for {key}") from None
    return v


def parse_config_text(text: str) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def load_config(path=None, overrides: dict | None = None) -> TrainConfig:
    """Defaults, then the file, then ``overrides`` (highest precedence)."""
    d = parse_config_text(Path(path).read_text()) if path else {}
    d.update(overrides or {})
    return TrainConfig.from_mapping(d)


def config_text(cfg: TrainConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in cfg.to_mapping().items())


@dataclass
class MetricsRecord:
    epoch: int
    split: str
    loss: float
    accuracy: float
    wall_time_s: float


METRIC_FIELDS = [f.name for f in fields(MetricsRecord)]


def metrics_csv(records) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=METRIC_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow(dataclasses.asdict(r))
    return buf.getvalue()


@dataclass
class TrainResult:
    model: Model
    records: list = field(default_factory=list)
    checkpoint: Path | None = None

    def last(self, split: str) -> MetricsRecord:
        return [r for r in self.records if r.split == split][-1]


def evaluate(model: Model, ds: Dataset, batch_size: int = 500, dtype=np.float32):
    """Mean loss and accuracy in inference mode."""
    tot_loss = tot_acc = 0.0
    for x, y in batches(ds, batch_size, shuffle=False, dtype=dtype):
        logits = model.forward(x, train=False)
        loss, _ = softmax_cross_entropy(logits, y)
        tot_loss += loss * len(y)
        tot_acc += float(np.sum(logits.argmax(axis=1) == y))
    n = max(len(ds), 1)
    return tot_loss / n, tot_acc / n


def model_for(cfg: TrainConfig, ds: Dataset) -> Model:
    C, H, _ = ds.shape
    return build_model(cfg.arch, cfg.conv, cfg.g, cfg.p, cfg.parity_policy, C,
                       ds.num_classes, H, cfg.width or None, cfg.seed, cfg.precision)


def train(cfg: TrainConfig, train_ds: Dataset, test_ds: Dataset | None = None,
          out_dir=None, model: Model | None = None, on_epoch=None) -> TrainResult:
    """Train ``model`` (built from ``cfg`` when omitted) and record metrics.

    With ``out_dir`` set, ``metrics.csv`` and ``model.ckpt`` are written
    there. A non-finite loss aborts the run after writing a ``diverged`` row.
    """
    dtype = np.dtype(cfg.precision).type
    ds = subsample(train_ds, cfg.data_fraction, cfg.seed)
    model = model or model_for(cfg, ds)
    opt = SGD(model.params(), cfg.lr, cfg.momentum, cfg.weight_decay)
    penalty = cfg.penalty_obj()
    steps = -(-len(ds) // cfg.batch_size)
    result = TrainResult(model)
    t0 = time.perf_counter()
    out = Path(out_dir) if out_dir else None

    def flush():
        if out is not None:
            (out / "metrics.csv").write_text(metrics_csv(result.records))

    for epoch in range(cfg.epochs):
        tot_loss = tot_acc = 0.0
        for step, (x, y) in enumerate(batches(ds, cfg.batch_size, cfg.seed, epoch,
                                              augment=cfg.augment, dtype=dtype)):
            opt.lr = lr_at(cfg.lr, cfg.schedule, epoch, cfg.epochs, step, steps)
            try:
                loss, acc = forward_backward(model, x, y, penalty)
            except DivergenceError as e:
                result.records.append(MetricsRecord(epoch + 1, "diverged", float("nan"),
                                                    float("nan"), time.perf_counter() - t0))
                flush()
                log.error("training diverged at epoch %d step %d: %s", epoch + 1, step, e)
                raise
            opt.step()
            tot_loss += loss * len(y)
            tot_acc += acc * len(y)
        el = time.perf_counter() - t0
        result.records.append(MetricsRecord(epoch + 1, "train", tot_loss / len(ds),
                                            tot_acc / len(ds), el))
        if cfg.eval_train:
            l, a = evaluate(model, ds, dtype=dtype)
            result.records.append(MetricsRecord(epoch + 1, "train_eval", l, a,
                                                time.perf_counter() - t0))
        if test_ds is not None:
            l, a = evaluate(model, test_ds, dtype=dtype)
            result.records.append(MetricsRecord(epoch + 1, "test", l, a,
                                                time.perf_counter() - t0))
        log.info("epoch %d: %s", epoch + 1,
                 ", ".join(f"{r.split} loss {r.loss:.4f} acc {r.accuracy:.4f}"
                           for r in result.records if r.epoch == epoch + 1))
        if on_epoch is not None:
            on_epoch(epoch + 1, result)
        flush()
    if out is not None:
        result.checkpoint = out / "model.ckpt"
        save_model(result.checkpoint, model, cfg, train_ds, epoch=cfg.epochs)
    return result


# --------------------------------------------------------------------------
# checkpoints


def save_model(path, model: Model, cfg: TrainConfig | None = None, ds: Dataset | None = None,
               epoch: int = 0) -> None:
    arrays = {name: p.value for name, p in model.named_params().items()}
    arrays.update({f"buffer:{k}": v for k, v in model.buffers().items()})
    meta = {"model": model.meta, "epoch": epoch,
            "config": cfg.to_mapping() if cfg else None,
            "layouts": {c.name: json.loads(export_layout(c.layout)) for c in model.ssc_layers()}}
    if ds is not None:
        meta["data"] = {"name": ds.name, "checksum": ds.checksum,
                        "mean": ds.mean.tolist(), "std": ds.std.tolist()}
    save_checkpoint(path, arrays, meta)


def _model_kwargs(m: dict) -> dict:
    keys = ("arch", "conv", "g", "p", "parity_policy", "in_channels", "num_classes",
            "image_size", "width", "seed", "dtype")
    return {k: m[k] for k in keys}


def load_model(path) -> tuple[Model, dict]:
    """Rebuild a model from a checkpoint; layouts are re-derived and compared."""
    arrays, meta = load_checkpoint(path)
    model = build_model(**_model_kwargs(meta["model"]))
    for name, doc in meta.get("layouts", {}).items():
        layout = import_layout(doc)
        if layout.spec != LayerSpec.from_dict(meta["model"]["ssc_specs"][name]):
            raise LayoutMismatchError(f"{name}: stored layout disagrees with its spec")
    _assign(model, arrays, skip=())
    return model, meta


def _assign(model: Model, arrays: dict, skip=()):
    for name, p in model.named_params().items():
        if name.split(".")[0] in skip:
            continue
        a = arrays[name]
        if a.shape != p.value.shape:
            raise LayoutMismatchError(f"{name}: checkpoint shape {a.shape} != model {p.value.shape}")
        p.value[...] = a
    for name, buf in model.buffers().items():
        if name.split(".")[0] in skip:
            continue
        buf[...] = arrays[f"buffer:{name}"]


def check_layout_compat(meta: dict, cfg: TrainConfig) -> None:
    """Raise when ``cfg`` would build different layers than the checkpoint."""
    m = meta["model"]
    for key in ("arch", "conv", "g", "p", "parity_policy"):
        if str(m[key]) != str(getattr(cfg, key)):
            raise LayoutMismatchError(
                f"layout mismatch: checkpoint has {key}={m[key]}, config asks {key}={getattr(cfg, key)}")
    if (m["width"] or 0) != (cfg.width or 0):
        raise LayoutMismatchError(
            f"layout mismatch: checkpoint width {m['width']}, config width {cfg.width}")


def transfer(ckpt_path, cfg: TrainConfig, train_ds: Dataset, test_ds: Dataset | None = None,
             out_dir=None, head: str = "fc") -> TrainResult:
    """Fine-tune a checkpoint on a new dataset with a freshly initialised head.

    The SSC layouts are rebuilt from the specs alone; nothing about the new
    dataset is consulted to derive them.
    """
    arrays, meta = load_checkpoint(ckpt_path)
    check_layout_compat(meta, cfg)
    model = model_for(cfg, train_ds)
    for name, spec in model.meta["ssc_specs"].items():
        if meta["model"]["ssc_specs"].get(name) != spec:
            raise LayoutMismatchError(f"layout mismatch in {name}")
        stored = import_layout(meta["layouts"][name])
        if stored != build_layer_layout(LayerSpec.from_dict(spec)):
            raise LayoutMismatchError(f"stored layout of {name} differs")
    _assign(model, arrays, skip=(head,))
    return train(cfg, train_ds, test_ds, out_dir, model=model)
