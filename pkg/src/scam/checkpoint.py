"""Single-file checkpoint container with deterministic bytes.

Layout (all integers little-endian):

    bytes 0..7    magic b"SCAMCKPT"
    bytes 8..11   format version (uint32), currently 1
    bytes 12..19  manifest length L (uint64)
    bytes 20..20+L  manifest, canonical JSON (sorted keys, no whitespace)
    remainder     blob section: raw tensor bytes, C-order, little-endian

The manifest holds the step counter, the model/train config snapshots, and
one entry per blob: name, dtype code, shape, offset into the blob section,
and byte count. Blobs are laid out in sorted name order, so saving the same
state twice produces identical bytes, and save -> load -> save round-trips
bit-exactly.

Blob names: model.{encoder,generator,discriminator}.<state_dict key>,
loss.perceptual.<key>, optim.{eg,d}.<param index>.<field>, rng.sampler.
Optimizer hyperparameters are not stored; they are rebuilt from the train
config snapshot.
"""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np
import torch

from .config import ModelConfig, TrainConfig
from .errors import CheckpointError, ConfigError

MAGIC = b"SCAMCKPT"
FORMAT_VERSION = 1

_DTYPE_CODES = {
    torch.float16: "f2", torch.float32: "f4", torch.float64: "f8",
    torch.int16: "i2", torch.int32: "i4", torch.int64: "i8",
    torch.uint8: "u1", torch.bool: "b1",
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}


def _tensor_bytes(tensor: torch.Tensor) -> bytes:
    arr = tensor.detach().cpu().contiguous().numpy()
    return arr.tobytes(order="C")


def _collect_blobs(state) -> dict:
    blobs = {}
    for prefix, module in (("model.encoder", state.encoder),
                           ("model.generator", state.generator),
                           ("model.discriminator", state.discriminator),
                           ("loss.perceptual", state.perceptual)):
        for key, tensor in module.state_dict().items():
            blobs[f"{prefix}.{key}"] = tensor
    for prefix, opt in (("optim.eg", state.opt_eg), ("optim.d", state.opt_d)):
        for idx, entry in opt.state_dict()["state"].items():
            for field, value in entry.items():
                if not isinstance(value, torch.Tensor):
                    value = torch.tensor(value)
                blobs[f"{prefix}.{idx}.{field}"] = value
    blobs["rng.sampler"] = state.rng.get_state()
    return blobs


def save_checkpoint(state, path: str):
    blobs = _collect_blobs(state)
    entries = []
    payload = bytearray()
    for name in sorted(blobs):
        tensor = blobs[name]
        if tensor.dtype not in _DTYPE_CODES:
            raise CheckpointError(f"unsupported dtype {tensor.dtype} for blob {name}")
        raw = _tensor_bytes(tensor)
        entries.append({
            "name": name,
            "dtype": _DTYPE_CODES[tensor.dtype],
            "shape": list(tensor.shape),
            "offset": len(payload),
            "nbytes": len(raw),
        })
        payload.extend(raw)
    manifest = {
        "format_version": FORMAT_VERSION,
        "step": state.step,
        "model_config": dataclasses.asdict(state.model_config),
        "train_config": dataclasses.asdict(state.train_config),
        "blobs": entries,
    }
    encoded = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    tmp = path + ".tmp"
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(FORMAT_VERSION).tobytes())
        fh.write(np.uint64(len(encoded)).tobytes())
        fh.write(encoded)
        fh.write(bytes(payload))
    os.replace(tmp, path)


def read_manifest(path: str):
    try:
        with open(path, "rb") as fh:
            head = fh.read(20)
            if len(head) < 20 or head[:8] != MAGIC:
                raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
            version = int(np.frombuffer(head[8:12], dtype=np.uint32)[0])
            if version != FORMAT_VERSION:
                raise CheckpointError(f"{path}: unsupported format version {version}")
            length = int(np.frombuffer(head[12:20], dtype=np.uint64)[0])
            manifest = json.loads(fh.read(length).decode("utf-8"))
            payload = fh.read()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from None
    except (ValueError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest: {exc}") from None
    return manifest, payload


def _decode_blob(entry: dict, payload: bytes) -> torch.Tensor:
    code = entry["dtype"]
    if code not in _CODE_DTYPES:
        raise CheckpointError(f"unknown dtype code {code!r}")
    raw = payload[entry["offset"]:entry["offset"] + entry["nbytes"]]
    if len(raw) != entry["nbytes"]:
        raise CheckpointError(f"blob {entry['name']} truncated")
    np_dtype = np.dtype(code.replace("b1", "bool")).newbyteorder("<")
    arr = np.frombuffer(raw, dtype=np_dtype).copy()
    tensor = torch.from_numpy(arr).to(_CODE_DTYPES[code])
    return tensor.reshape(entry["shape"])


def _config_from_dict(cls, data: dict):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            raise CheckpointError(f"config snapshot missing field {f.name!r}")
        value = data[f.name]
        if isinstance(value, list):
            value = tuple(value)
        kwargs[f.name] = value
    return cls(**kwargs)


def load_checkpoint(path: str, expect_model_config: ModelConfig | None = None):
    """Rebuild a TrainState from a checkpoint file.

    If expect_model_config is given it must match the stored snapshot
    field-for-field, otherwise a ConfigError lists the offending keys.
    """
    from .training import init_state  # local import to avoid a cycle

    manifest, payload = read_manifest(path)
    model_cfg = _config_from_dict(ModelConfig, manifest["model_config"])
    train_cfg = _config_from_dict(TrainConfig, manifest["train_config"])
    if expect_model_config is not None:
        stored = dataclasses.asdict(model_cfg)
        expected = dataclasses.asdict(expect_model_config)
        bad = [k for k in expected if _norm(expected[k]) != _norm(stored[k])]
        if bad:
            raise ConfigError(f"checkpoint config mismatch on keys: {sorted(bad)}")

    state = init_state(model_cfg, train_cfg)
    blobs = {e["name"]: _decode_blob(e, payload) for e in manifest["blobs"]}

    for prefix, module in (("model.encoder", state.encoder),
                           ("model.generator", state.generator),
                           ("model.discriminator", state.discriminator),
                           ("loss.perceptual", state.perceptual)):
        sd = {}
        plen = len(prefix) + 1
        for name, tensor in blobs.items():
            if name.startswith(prefix + "."):
                sd[name[plen:]] = tensor
        module.load_state_dict(sd, strict=True)

    for prefix, opt in (("optim.eg", state.opt_eg), ("optim.d", state.opt_d)):
        opt_state: dict = {}
        plen = len(prefix) + 1
        for name, tensor in blobs.items():
            if not name.startswith(prefix + "."):
                continue
            idx_str, field = name[plen:].split(".", 1)
            opt_state.setdefault(int(idx_str), {})[field] = tensor
        if opt_state:
            fresh = opt.state_dict()
            opt.load_state_dict({"state": opt_state,
                                 "param_groups": fresh["param_groups"]})

    state.rng.set_state(blobs["rng.sampler"].to(torch.uint8))
    state.step = int(manifest["step"])
    return state


def _norm(value):
    return list(value) if isinstance(value, (list, tuple)) else value
