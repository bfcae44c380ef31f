"""Loss, optimizer, training/evaluation loops, and checkpoint persistence.

The loss is the per-step mean squared error between output spikes and
the target vector, averaged over time steps. Predictions take the class
with the highest mean firing rate, first index winning ties. Training is
fully deterministic under a fixed seed: one RNG stream drives parameter
init, shuffling, dropout, and augmentation in a fixed draw order.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import FrameSample
from .network import Network, build_network, parse_arch, render
from .neuron import LifConfig
from .attention import TcjaConfig
from .tensor import ShapeError, Tensor

CHECKPOINT_MAGIC = b"TCJACKPT"
CHECKPOINT_VERSION = 1

_DTYPE_CODES = {"<f4": 0, "<f8": 1, "|u1": 2, "<i8": 3}
_CODE_DTYPES = {v: np.dtype(k) for k, v in _DTYPE_CODES.items()}


class NumericsError(RuntimeError):
    """Raised when a loss goes non-finite; carries the offending batch index."""


class CheckpointError(ValueError):
    """Raised for unreadable or mismatched checkpoint files."""


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    precision: str = "f32"
    surrogate: str = "atan"
    detach_reset: bool = True
    optimizer: str = "adam"
    augment: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"learning rate must be positive, got {self.lr}")
        if self.precision not in ("f32", "f64"):
            raise ValueError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {self.optimizer!r}")

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float32 if self.precision == "f32" else np.float64)


def smse_loss(outputs: Tensor, target: np.ndarray) -> Tensor:
    """Mean of (spike - target)^2 over classes, averaged over time steps."""
    if outputs.ndim != 2:
        raise ShapeError(f"expected (T, C) outputs, got {outputs.shape}")
    target = np.asarray(target, dtype=outputs.dtype)
    if target.shape != (outputs.shape[1],):
        raise ShapeError(
            f"target shape {target.shape} does not match outputs {outputs.shape}"
        )
    diff = outputs - Tensor(target[None, :])
    return (diff * diff).mean()


def predict_label(outputs: Tensor | np.ndarray) -> int:
    """Class with the highest mean firing rate; lowest index wins ties."""
    data = outputs.data if isinstance(outputs, Tensor) else np.asarray(outputs)
    return int(np.argmax(data.mean(axis=0)))


# -- optimizers -------------------------------------------------------------------


@dataclass
class OptimizerState:
    kind: str = "adam"
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


def optimizer_step(
    params: list[tuple[str, Tensor]], state: OptimizerState, cfg: TrainConfig
) -> None:
    """Apply one update in place; every trainable tensor must hold a gradient."""
    for name, p in params:
        if p.grad is None:
            raise ValueError(f"missing gradient for {name!r}: graph is broken")
    state.step += 1
    for name, p in params:
        g = p.grad
        if cfg.optimizer == "sgd":
            p.data -= cfg.lr * g
            continue
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * g * g
        m_hat = m / (1 - ADAM_BETA1**state.step)
        v_hat = v / (1 - ADAM_BETA2**state.step)
        p.data -= cfg.lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


# -- evaluation -------------------------------------------------------------------


@dataclass
class EvalResult:
    accuracy: float
    per_class: dict[int, float]
    firing_rates: dict[str, float]
    predictions: list[tuple[int, int, int, np.ndarray]]  # (index, true, predicted, rates)


def evaluate(net: Network, samples: list[FrameSample]) -> EvalResult:
    """Accuracy, per-class accuracy, and mean firing rate per spiking layer."""
    correct = 0
    per_class_total: dict[int, int] = {}
    per_class_hit: dict[int, int] = {}
    rate_sums: dict[str, float] = {}
    predictions = []
    for idx, sample in enumerate(samples):
        stats: dict = {}
        x = Tensor(sample.frames.astype(net.dtype))
        out = net.forward(x, training=False, stats=stats)
        pred = predict_label(out)
        true = sample.class_index
        rates = out.data.mean(axis=0)
        predictions.append((idx, true, pred, rates))
        per_class_total[true] = per_class_total.get(true, 0) + 1
        if pred == true:
            correct += 1
            per_class_hit[true] = per_class_hit.get(true, 0) + 1
        for name, rate in stats.get("firing_rates", {}).items():
            rate_sums[name] = rate_sums.get(name, 0.0) + rate
    n = len(samples)
    return EvalResult(
        accuracy=correct / n if n else 0.0,
        per_class={
            lab: per_class_hit.get(lab, 0) / tot for lab, tot in sorted(per_class_total.items())
        },
        firing_rates={name: s / n for name, s in rate_sums.items()} if n else {},
        predictions=predictions,
    )


# -- checkpoints -------------------------------------------------------------------


@dataclass
class Checkpoint:
    """Ordered named arrays plus the arch string; byte-stable round trip."""

    arch: str
    records: list[tuple[str, np.ndarray]]
    version: int = CHECKPOINT_VERSION

    def to_bytes(self) -> bytes:
        parts = [CHECKPOINT_MAGIC, struct.pack("<H", self.version)]
        arch_b = self.arch.encode()
        parts.append(struct.pack("<I", len(arch_b)))
        parts.append(arch_b)
        parts.append(struct.pack("<I", len(self.records)))
        for name, arr in self.records:
            name_b = name.encode()
            dtype_code = _DTYPE_CODES[arr.dtype.newbyteorder("<").str.lstrip("=")]
            parts.append(struct.pack("<H", len(name_b)))
            parts.append(name_b)
            parts.append(struct.pack("<BB", dtype_code, arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:8] != CHECKPOINT_MAGIC:
            raise CheckpointError(f"bad checkpoint magic {blob[:8]!r}")
        off = 8
        (version,) = struct.unpack_from("<H", blob, off)
        off += 2
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        (arch_len,) = struct.unpack_from("<I", blob, off)
        off += 4
        arch = blob[off : off + arch_len].decode()
        off += arch_len
        (n_records,) = struct.unpack_from("<I", blob, off)
        off += 4
        records = []
        try:
            for _ in range(n_records):
                (name_len,) = struct.unpack_from("<H", blob, off)
                off += 2
                name = blob[off : off + name_len].decode()
                off += name_len
                code, rank = struct.unpack_from("<BB", blob, off)
                off += 2
                shape = struct.unpack_from(f"<{rank}I", blob, off)
                off += 4 * rank
                dtype = _CODE_DTYPES[code]
                count = int(np.prod(shape)) if rank else 1
                nbytes = count * dtype.itemsize
                arr = np.frombuffer(blob, dtype=dtype, count=count, offset=off).reshape(shape)
                off += nbytes
                records.append((name, arr.copy()))
        except (struct.error, KeyError, ValueError) as err:
            raise CheckpointError(f"truncated or corrupt checkpoint: {err}") from err
        if off != len(blob):
            raise CheckpointError(f"{len(blob) - off} trailing bytes in checkpoint")
        return cls(arch=arch, records=records, version=version)


def _json_blob(obj) -> np.ndarray:
    return np.frombuffer(json.dumps(obj, sort_keys=True).encode(), dtype=np.uint8).copy()


def _meta_dict(net: Network, cfg: TrainConfig) -> dict:
    return {
        "input_dims": list(net.arch.input_dims),
        "time_steps": net.arch.time_steps,
        "num_classes": net.num_classes,
        "precision": cfg.precision,
        "lif": {
            "tau": net.lif_cfg.tau,
            "v_reset": net.lif_cfg.v_reset,
            "v_threshold": net.lif_cfg.v_threshold,
            "surrogate": net.lif_cfg.surrogate,
            "alpha": net.lif_cfg.alpha,
            "gamma": net.lif_cfg.gamma,
            "detach_reset": net.lif_cfg.detach_reset,
            "strict_eq2": net.lif_cfg.strict_eq2,
        },
        "tcja": {
            "k_t": net.tcja_cfg.k_t,
            "k_c": net.tcja_cfg.k_c,
            "fusion": net.tcja_cfg.fusion,
        },
    }


def make_checkpoint(
    net: Network,
    cfg: TrainConfig,
    opt_state: OptimizerState,
    rng: np.random.Generator,
    epoch: int,
) -> Checkpoint:
    records: list[tuple[str, np.ndarray]] = []
    for name, p in net.parameters():
        records.append((f"param.{name}", p.data))
    for name in sorted(opt_state.m):
        records.append((f"adam.m.{name}", opt_state.m[name]))
    for name in sorted(opt_state.v):
        records.append((f"adam.v.{name}", opt_state.v[name]))
    records.append(("opt.step", np.asarray([opt_state.step], dtype=np.int64)))
    records.append(("meta.epoch", np.asarray([epoch], dtype=np.int64)))
    records.append(("meta.rng", _json_blob(rng.bit_generator.state)))
    records.append(("meta.config", _json_blob(_meta_dict(net, cfg))))
    return Checkpoint(arch=render(net.arch), records=records)


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    Path(path).write_bytes(ckpt.to_bytes())


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return Checkpoint.from_bytes(path.read_bytes())


def restore_network(ckpt: Checkpoint) -> tuple[Network, TrainConfig, OptimizerState, dict, int]:
    """Rebuild the network, optimizer, and RNG state stored in a checkpoint."""
    named = dict(ckpt.records)
    if "meta.config" not in named:
        raise CheckpointError("checkpoint is missing its configuration record")
    meta = json.loads(named["meta.config"].tobytes().decode())
    lif_cfg = LifConfig(**meta["lif"])
    tcja_cfg = TcjaConfig(**meta["tcja"])
    cfg = TrainConfig(precision=meta["precision"], surrogate=lif_cfg.surrogate,
                      detach_reset=lif_cfg.detach_reset)
    arch = parse_arch(
        ckpt.arch,
        input_dims=tuple(meta["input_dims"]),
        time_steps=meta["time_steps"],
    )
    net = build_network(
        arch,
        num_classes=meta["num_classes"],
        lif_cfg=lif_cfg,
        tcja_cfg=tcja_cfg,
        rng=np.random.default_rng(0),
        dtype=cfg.dtype,
    )
    opt_state = OptimizerState(step=int(named["opt.step"][0]))
    for name, p in net.parameters():
        key = f"param.{name}"
        if key not in named:
            raise CheckpointError(f"checkpoint lacks tensor {key!r} for this arch")
        if named[key].shape != p.shape:
            raise CheckpointError(
                f"tensor {key!r} shape {named[key].shape} does not match {p.shape}"
            )
        p.data = named[key].astype(cfg.dtype)
        m_key, v_key = f"adam.m.{name}", f"adam.v.{name}"
        if m_key in named:
            opt_state.m[name] = named[m_key].astype(cfg.dtype).copy()
        if v_key in named:
            opt_state.v[name] = named[v_key].astype(cfg.dtype).copy()
    rng_state = json.loads(named["meta.rng"].tobytes().decode())
    epoch = int(named["meta.epoch"][0])
    return net, cfg, opt_state, rng_state, epoch


# -- training loop ------------------------------------------------------------------


@dataclass
class TrainResult:
    history: list[dict]
    best_accuracy: float
    best_checkpoint: Checkpoint | None
    final_checkpoint: Checkpoint


def train(
    net: Network,
    train_samples: list[FrameSample],
    test_samples: list[FrameSample],
    cfg: TrainConfig,
    rng: np.random.Generator,
    out_dir: str | Path | None = None,
    augment_fn=None,
    log=None,
) -> TrainResult:
    """Run the full loop; optionally persist metrics and checkpoints to `out_dir`.

    Metrics rows hold epoch, train loss, and test accuracy; wall-clock
    seconds go to a separate timing file so the metrics file is
    byte-identical across reruns of the same config and seed.
    """
    if not train_samples:
        raise ValueError("training set is empty")
    opt_state = OptimizerState(kind=cfg.optimizer)
    history: list[dict] = []
    best_acc = -1.0
    best_ckpt: Checkpoint | None = None
    dtype = cfg.dtype

    out_dir = Path(out_dir) if out_dir is not None else None
    metrics_rows = ["epoch,train_loss,test_acc"]
    timing_rows = ["epoch,wall_seconds"]

    for epoch in range(cfg.epochs):
        tic = time.perf_counter()
        order = rng.permutation(len(train_samples))
        loss_sum = 0.0
        for batch_idx, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = order[start : start + cfg.batch_size]
            net.zero_grads()
            batch_loss = 0.0
            for sample_pos in batch:
                sample = train_samples[int(sample_pos)]
                if cfg.augment and augment_fn is not None:
                    partner = train_samples[int(rng.integers(0, len(train_samples)))]
                    sample = augment_fn(sample, rng, partner)
                x = Tensor(sample.frames.astype(dtype))
                out = net.forward(x, training=True, rng=rng)
                loss = smse_loss(out, sample.label)
                value = loss.item()
                if not np.isfinite(value):
                    raise NumericsError(
                        f"non-finite loss in epoch {epoch}, batch {batch_idx}"
                    )
                batch_loss += value
                loss.backward()
            for _, p in net.parameters():
                if p.grad is not None:
                    p.grad /= len(batch)
            optimizer_step(net.parameters(), opt_state, cfg)
            loss_sum += batch_loss
        train_loss = loss_sum / len(order)
        result = evaluate(net, test_samples)
        wall = time.perf_counter() - tic
        row = {"epoch": epoch, "train_loss": train_loss, "test_acc": result.accuracy}
        history.append(row)
        metrics_rows.append(f"{epoch},{train_loss:.10g},{result.accuracy:.10g}")
        timing_rows.append(f"{epoch},{wall:.3f}")
        if log is not None:
            log(
                f"epoch {epoch}: train_loss={train_loss:.4f}"
                f" test_acc={result.accuracy:.4f} ({wall:.1f}s)"
            )
        if result.accuracy > best_acc:
            best_acc = result.accuracy
            best_ckpt = make_checkpoint(net, cfg, opt_state, rng, epoch)

    final_ckpt = make_checkpoint(net, cfg, opt_state, rng, cfg.epochs)
    if best_ckpt is None:
        best_acc = 0.0
        best_ckpt = final_ckpt

    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "metrics.csv").write_text("\n".join(metrics_rows) + "\n")
        (out_dir / "timing.csv").write_text("\n".join(timing_rows) + "\n")
        save_checkpoint(out_dir / "best.ckpt", best_ckpt)
        save_checkpoint(out_dir / "last.ckpt", final_ckpt)
    return TrainResult(
        history=history,
        best_accuracy=max(best_acc, 0.0),
        best_checkpoint=best_ckpt,
        final_checkpoint=final_ckpt,
    )
