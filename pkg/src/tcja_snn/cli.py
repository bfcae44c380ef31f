"""Command-line interface: train, eval, inspect-attention, bench, gen-synthetic.

Runs are configured by a JSON file plus ``--dotted.key value`` overrides;
unknown keys are rejected and the fully resolved config is echoed into
the output directory so any run can be reproduced from its artifacts.

Exit codes: 0 success, 1 config error, 2 data error, 3 numeric abort,
4 checkpoint mismatch, 5 network has no attention blocks.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import data as data_mod
from .attention import TcjaConfig, ccf, cla, param_count, tla
from .network import ArchParseError, TcjaLayer, build_network, parse_arch
from .neuron import LifConfig
from .tensor import Tensor
from .training import (
    CheckpointError,
    NumericsError,
    TrainConfig,
    evaluate,
    load_checkpoint,
    restore_network,
    train,
)


class ConfigError(ValueError):
    """Raised for unknown keys, bad values, or unreadable config files."""


DEFAULT_CONFIG: dict = {
    "arch": "16C3-LIF-MP2-TCJA-16C3-LIF-MP2-64FC-LIF-Voting",
    "time_steps": 8,
    "num_classes": 4,
    "out_dir": "runs/default",
    "data": {
        "dir": None,
        "width": None,
        "height": None,
        "synthetic": {
            "kind": "moving-bar",
            "classes": 4,
            "height": 16,
            "width": 16,
            "n_train": 400,
            "n_test": 100,
            "seed": 7,
            "noise_per_tick": 1,
        },
    },
    "train": {
        "lr": 1e-3,
        "batch_size": 16,
        "epochs": 10,
        "seed": 0,
        "precision": "f32",
        "surrogate": "atan",
        "detach_reset": True,
        "optimizer": "adam",
        "augment": False,
    },
    "lif": {
        "tau": 2.0,
        "v_reset": 0.0,
        "v_threshold": 1.0,
        "alpha": 2.0,
        "gamma": 1.0,
        "strict_eq2": True,
    },
    "tcja": {"k_t": 4, "k_c": 4, "fusion": "multiply"},
}


def _merge_strict(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge_strict(base[key], value, where)
        else:
            out[key] = value
    return out


def _parse_literal(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _apply_overrides(config: dict, pairs: list[str]) -> dict:
    if len(pairs) % 2:
        raise ConfigError(f"dangling override flag {pairs[-1]!r} (flags take a value)")
    for flag, raw in zip(pairs[::2], pairs[1::2]):
        if not flag.startswith("--"):
            raise ConfigError(f"expected --key, got {flag!r}")
        keys = flag[2:].split(".")
        node = config
        for key in keys[:-1]:
            if key not in node or not isinstance(node[key], dict):
                raise ConfigError(f"unknown config key {flag[2:]!r}")
            node = node[key]
        if keys[-1] not in node:
            raise ConfigError(f"unknown config key {flag[2:]!r}")
        node[keys[-1]] = _parse_literal(raw)
    return config


def load_config(config_path: str | None, overrides: list[str]) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise ConfigError(f"invalid JSON in {path}: {err}") from err
        if not isinstance(loaded, dict):
            raise ConfigError(f"config root must be an object, got {type(loaded).__name__}")
        config = _merge_strict(config, loaded)
    return _apply_overrides(config, overrides)


def _echo_config(config: dict, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n")


def _load_samples(config: dict) -> tuple[list[data_mod.FrameSample], list[data_mod.FrameSample]]:
    """Build train/test frame sets from a dataset directory or the generator."""
    t_steps = config["time_steps"]
    num_classes = config["num_classes"]
    data_cfg = config["data"]
    if data_cfg["dir"] is not None:
        root = Path(data_cfg["dir"])
        streams = data_mod.load_dataset(
            root, width=data_cfg["width"], height=data_cfg["height"]
        )
        labels = [label for _, label in streams]
        train_streams, test_streams = data_mod.split_train_test(
            streams, labels, seed=config["train"]["seed"]
        )
        return (
            data_mod.frames_dataset(train_streams, t_steps, num_classes),
            data_mod.frames_dataset(test_streams, t_steps, num_classes),
        )
    syn = data_cfg["synthetic"]
    if syn["classes"] != num_classes:
        raise ConfigError(
            f"num_classes={num_classes} does not match synthetic classes={syn['classes']}"
        )
    common = dict(
        kind=syn["kind"],
        classes=syn["classes"],
        height=syn["height"],
        width=syn["width"],
        t_steps=t_steps,
        noise_per_tick=syn["noise_per_tick"],
    )
    train_streams = data_mod.gen_synthetic(n=syn["n_train"], seed=syn["seed"], **common)
    test_streams = data_mod.gen_synthetic(n=syn["n_test"], seed=syn["seed"] + 1, **common)
    return (
        data_mod.frames_dataset(train_streams, t_steps, num_classes),
        data_mod.frames_dataset(test_streams, t_steps, num_classes),
    )


def _build_from_config(config: dict, dims: tuple[int, int, int], rng: np.random.Generator):
    train_cfg = TrainConfig(**config["train"])
    lif_cfg = LifConfig(
        surrogate=train_cfg.surrogate,
        detach_reset=train_cfg.detach_reset,
        **config["lif"],
    )
    tcja_cfg = TcjaConfig(**config["tcja"])
    arch = parse_arch(config["arch"], input_dims=dims, time_steps=config["time_steps"])
    net = build_network(
        arch,
        num_classes=config["num_classes"],
        lif_cfg=lif_cfg,
        tcja_cfg=tcja_cfg,
        rng=rng,
        dtype=train_cfg.dtype,
    )
    return net, train_cfg


def cmd_train(args, overrides: list[str]) -> int:
    config = load_config(args.config, overrides)
    out_dir = Path(config["out_dir"])
    rng = np.random.default_rng(config["train"]["seed"])
    train_samples, test_samples = _load_samples(config)
    dims = tuple(train_samples[0].frames.shape[1:])
    net, train_cfg = _build_from_config(config, dims, rng)
    _echo_config(config, out_dir)
    augment_fn = None
    if train_cfg.augment:
        policy = data_mod.AugmentPolicy()
        augment_fn = lambda s, r, partner: data_mod.augment(s, r, policy, partner)
    result = train(
        net,
        train_samples,
        test_samples,
        train_cfg,
        rng,
        out_dir=out_dir,
        augment_fn=augment_fn,
        log=print,
    )
    print(f"best test accuracy: {result.best_accuracy:.4f}")
    print(f"artifacts written to {out_dir}")
    return 0


def cmd_eval(args, overrides: list[str]) -> int:
    config = load_config(args.config, overrides)
    ckpt = load_checkpoint(args.checkpoint)
    net, _, _, _, _ = restore_network(ckpt)
    meta = json.loads(dict(ckpt.records)["meta.config"].tobytes().decode())
    if net.arch.time_steps != config["time_steps"]:
        raise CheckpointError(
            f"checkpoint trained with T={net.arch.time_steps},"
            f" config asks for T={config['time_steps']}"
        )
    if meta["num_classes"] != config["num_classes"]:
        raise CheckpointError(
            f"checkpoint has {meta['num_classes']} classes,"
            f" config asks for {config['num_classes']}"
        )
    _, test_samples = _load_samples(config)
    data_dims = list(test_samples[0].frames.shape[1:]) if test_samples else None
    if data_dims is not None and data_dims != meta["input_dims"]:
        raise CheckpointError(
            f"checkpoint expects input dims {meta['input_dims']}, dataset has {data_dims}"
        )
    result = evaluate(net, test_samples)
    print(f"accuracy: {result.accuracy:.4f}")
    print("class  accuracy")
    for lab, acc in result.per_class.items():
        print(f"{lab:>5}  {acc:.4f}")
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    pred_path = out_dir / "predictions.csv"
    with open(pred_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["sample_id", "true", "predicted"]
            + [f"rate_{i}" for i in range(net.num_classes)]
        )
        for idx, true, pred, rates in result.predictions:
            writer.writerow([idx, true, pred] + [f"{r:.10g}" for r in rates])
    print(f"predictions written to {pred_path}")
    return 0


def write_pgm(path: Path, matrix: np.ndarray, absolute: bool = False) -> None:
    """8-bit binary PGM; absolute mode maps [0,1] directly to [0,255]."""
    if absolute:
        scaled = np.clip(matrix, 0.0, 1.0)
    else:
        lo, hi = float(matrix.min()), float(matrix.max())
        scaled = (matrix - lo) / (hi - lo) if hi > lo else np.zeros_like(matrix)
    pixels = np.rint(scaled * 255).astype(np.uint8)
    header = f"P5\n{matrix.shape[1]} {matrix.shape[0]}\n255\n".encode()
    path.write_bytes(header + pixels.tobytes())


def _write_matrix_csv(path: Path, matrix: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for row in matrix:
            writer.writerow([f"{v:.17g}" for v in row])


def cmd_inspect_attention(args, overrides: list[str]) -> int:
    config = load_config(args.config, overrides)
    ckpt = load_checkpoint(args.checkpoint)
    net, _, _, _, _ = restore_network(ckpt)
    if not any(isinstance(layer, TcjaLayer) for layer in net.layers):
        print("error: this network has no attention blocks to inspect", file=sys.stderr)
        return 5
    _, test_samples = _load_samples(config)
    if not 0 <= args.sample < len(test_samples):
        raise data_mod.DataError(
            f"sample index {args.sample} out of range [0, {len(test_samples)})"
        )
    sample = test_samples[args.sample]
    stats: dict = {}
    net.forward(Tensor(sample.frames.astype(net.dtype)), training=False, stats=stats)
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, maps in enumerate(stats.get("attention_maps", [])):
        for tag, tensor in (("tla", maps.t_map), ("cla", maps.c_map), ("ccf", maps.f_map)):
            matrix = tensor.data
            _write_matrix_csv(out_dir / f"block{i}_{tag}.csv", matrix)
            write_pgm(out_dir / f"block{i}_{tag}.pgm", matrix, absolute=(tag == "ccf"))
    n_blocks = len(stats.get("attention_maps", []))
    print(f"wrote score maps for {n_blocks} attention block(s) to {out_dir}")
    return 0


def cmd_bench(args, overrides: list[str]) -> int:
    c_values = [int(v) for v in args.c.split(",")]
    t_values = [int(v) for v in args.t.split(",")]
    k_values = [int(v) for v in args.k.split(",")]
    rng = np.random.default_rng(args.seed)
    rows = [("c", "t", "k", "op", "nanos", "params")]
    for c in c_values:
        for t in t_values:
            for k in k_values:
                if k >= t or k >= c:
                    continue
                z = Tensor(rng.standard_normal((c, t)))
                w = Tensor(rng.standard_normal((c, c, k)))
                e = Tensor(rng.standard_normal((t, t, k)))
                tla_n, cla_n, _ = param_count(c, t, k, k)
                t_map = tla(z, w)
                c_map = cla(z, e)
                for op_name, fn, params in (
                    ("tla", lambda: tla(z, w), tla_n),
                    ("cla", lambda: cla(z, e), cla_n),
                    ("ccf", lambda: ccf(t_map, c_map), 0),
                ):
                    best = min(_time_ns(fn) for _ in range(3))
                    rows.append((c, t, k, op_name, best, params))
    lines = [",".join(str(v) for v in row) for row in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        print(f"wrote {len(rows) - 1} timing rows to {out}")
    else:
        print(text, end="")
    return 0


def _time_ns(fn) -> int:
    tic = time.perf_counter_ns()
    fn()
    return time.perf_counter_ns() - tic


def cmd_gen_synthetic(args, overrides: list[str]) -> int:
    dataset = data_mod.gen_synthetic(
        kind=args.kind,
        classes=args.classes,
        height=args.height,
        width=args.width,
        t_steps=args.t_steps,
        n=args.n,
        seed=args.seed,
        noise_per_tick=args.noise,
    )
    manifest = data_mod.write_dataset(args.out, dataset, fmt=args.format)
    print(f"wrote {len(dataset)} samples, manifest at {manifest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tcja-snn",
        description="Spiking network training engine with temporal-channel joint attention",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a network")
    p_train.add_argument("--config", help="JSON run config")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", help="JSON run config (data section)")
    p_eval.add_argument("--out", help="directory for predictions.csv")

    p_insp = sub.add_parser("inspect-attention", help="dump attention score maps")
    p_insp.add_argument("--checkpoint", required=True)
    p_insp.add_argument("--config", help="JSON run config (data section)")
    p_insp.add_argument("--sample", type=int, default=0)
    p_insp.add_argument("--out", help="output directory")

    p_bench = sub.add_parser("bench", help="time attention ops over a size grid")
    p_bench.add_argument("--c", default="16,32,64")
    p_bench.add_argument("--t", default="8,16")
    p_bench.add_argument("--k", default="1,2,4")
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("--out", help="CSV path (default: stdout)")

    p_gen = sub.add_parser("gen-synthetic", help="write a synthetic event dataset")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--kind", default="moving-bar")
    p_gen.add_argument("--classes", type=int, default=4)
    p_gen.add_argument("--height", type=int, default=16)
    p_gen.add_argument("--width", type=int, default=16)
    p_gen.add_argument("--t-steps", type=int, default=8, dest="t_steps")
    p_gen.add_argument("--n", type=int, default=100)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--noise", type=int, default=1)
    p_gen.add_argument("--format", default="bin", choices=["bin", "csv"])
    return parser


_COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "inspect-attention": cmd_inspect_attention,
    "bench": cmd_bench,
    "gen-synthetic": cmd_gen_synthetic,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        return _COMMANDS[args.command](args, extras)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except NumericsError as err:
        print(f"numeric abort: {err}", file=sys.stderr)
        return 3
    except CheckpointError as err:
        print(f"checkpoint error: {err}", file=sys.stderr)
        return 4
    except (data_mod.DataError, FileNotFoundError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return 2
    except (ArchParseError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
