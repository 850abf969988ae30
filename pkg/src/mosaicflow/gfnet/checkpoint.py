"""Checkpoint format: ``model.json`` manifest plus ``weights.bin``.

``weights.bin`` holds little-endian floats of the model precision, layer by
layer, each layer being its weight matrix (out x in, row-major) followed by its
bias vector. The manifest records the architecture and a SHA-256 of the blob.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from ..errors import FormatError
from .model import MlpModel

FORMAT_VERSION = 1
_HEADER_KEYS = ("arch", "exact_bc", "layer_sizes", "activation", "precision", "n_bc", "genome_edge_length")


def _header(model: MlpModel) -> dict:
    return {
        "arch": model.arch,
        "exact_bc": model.exact_bc,
        "layer_sizes": list(model.layer_sizes),
        "activation": model.activation,
        "precision": model.precision,
        "n_bc": model.n_bc,
        "genome_edge_length": model.edge_length,
    }


def _digest(header: dict) -> str:
    return hashlib.sha256(json.dumps({k: header[k] for k in _HEADER_KEYS}, sort_keys=True).encode()).hexdigest()


def checkpoint_save(model: MlpModel, path) -> None:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    dt = "<f4" if model.precision == "f32" else "<f8"
    blob = b"".join(p.astype(dt).tobytes() for p in model.params())
    manifest = {"format_version": FORMAT_VERSION, **_header(model)}
    manifest["header_sha256"] = _digest(manifest)
    manifest["weights_sha256"] = hashlib.sha256(blob).hexdigest()
    manifest["fingerprint"] = model.fingerprint
    (out / "weights.bin").write_bytes(blob)
    (out / "model.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def checkpoint_load(path) -> MlpModel:
    path = Path(path)
    try:
        manifest = json.loads((path / "model.json").read_text())
        blob = (path / "weights.bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read checkpoint at {path}: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"checkpoint format version {manifest.get('format_version')} != {FORMAT_VERSION}")
    missing = [k for k in _HEADER_KEYS if k not in manifest]
    if missing:
        raise FormatError(f"checkpoint manifest lacks {missing}")
    if manifest.get("header_sha256") != _digest(manifest):
        raise FormatError("manifest header does not match its digest (arch or layer fields were modified)")
    sizes = [int(s) for s in manifest["layer_sizes"]]
    dt = "<f4" if manifest["precision"] == "f32" else "<f8"
    itemsize = np.dtype(dt).itemsize
    count = sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))
    if len(blob) != count * itemsize:
        raise FormatError(f"weights.bin holds {len(blob)} bytes, expected {count * itemsize}")
    if hashlib.sha256(blob).hexdigest() != manifest.get("weights_sha256"):
        raise FormatError("weights.bin digest mismatch")
    flat = np.frombuffer(blob, dtype=dt)
    ws, bs, pos = [], [], 0
    for i, o in zip(sizes[:-1], sizes[1:]):
        ws.append(flat[pos : pos + o * i].reshape(o, i).copy())
        pos += o * i
        bs.append(flat[pos : pos + o].copy())
        pos += o
    try:
        return MlpModel(
            manifest["arch"],
            tuple(sizes),
            tuple(ws),
            tuple(bs),
            bool(manifest["exact_bc"]),
            int(manifest["n_bc"]),
            float(manifest["genome_edge_length"]),
            manifest["precision"],
            manifest["activation"],
            manifest.get("fingerprint", {}),
        )
    except ValueError as exc:
        raise FormatError(f"checkpoint describes an invalid model: {exc}") from exc


def save_train_state(state, path) -> None:
    """Write a resumable :class:`~mosaicflow.gfnet.train.TrainState` to ``path``."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for name in ("params", "adam_m", "adam_v", "best_params"):
        for k, a in enumerate(getattr(state, name)):
            arrays[f"{name}_{k}"] = a
    np.savez(out / "state.npz", **arrays)
    meta = {
        "format_version": FORMAT_VERSION,
        "epoch": state.epoch,
        "adam_t": state.adam_t,
        "n_params": len(state.params),
        "scheduler": state.scheduler,
        "best_val": state.best_val,
        "best_epoch": state.best_epoch,
        "history": state.history,
    }
    (out / "state.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")


def load_train_state(path):
    from .train import TrainState

    path = Path(path)
    try:
        meta = json.loads((path / "state.json").read_text())
        with np.load(path / "state.npz") as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read training state at {path}: {exc}") from exc
    if meta.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"training state format version {meta.get('format_version')} != {FORMAT_VERSION}")
    n = meta["n_params"]
    try:
        lists = {name: [arrays[f"{name}_{k}"] for k in range(n)] for name in ("params", "adam_m", "adam_v", "best_params")}
    except KeyError as exc:
        raise FormatError(f"training state lacks array {exc}") from exc
    return TrainState(
        meta["epoch"],
        lists["params"],
        lists["adam_m"],
        lists["adam_v"],
        meta["adam_t"],
        meta["scheduler"],
        lists["best_params"],
        meta["best_val"],
        meta["best_epoch"],
        meta["history"],
    )
