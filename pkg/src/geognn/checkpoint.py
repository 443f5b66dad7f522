"""Versioned binary checkpoint container.

Layout (all integers little-endian):

    bytes 0..3    magic b"GEM1"
    bytes 4..7    uint32 format version (currently 1)
    bytes 8..15   uint64 length of the JSON header
    header        UTF-8 JSON: model config, feature-layout manifest,
                  tensor directory (name, dtype, shape, offset, nbytes),
                  optimizer moment directory and step, free-form extra
    payload       raw tensor bytes at the directory offsets

Writes are atomic: the file is assembled under a temporary name in the
target directory and moved into place with os.replace.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .features import FeatureConfig
from .model import ModelConfig, ParamStore

MAGIC = b"GEM1"
FORMAT_VERSION = 1

_DTYPES = {"float32": "<f4", "float64": "<f8"}


def save_checkpoint(
    path: str | os.PathLike,
    store: ParamStore,
    model_config: ModelConfig,
    feature_config: FeatureConfig,
    include_moments: bool = True,
    extra: dict | None = None,
) -> None:
    tensors = []
    blobs = []
    offset = 0

    def push(name: str, array: np.ndarray, kind: str):
        nonlocal offset
        dtype_name = str(array.dtype)
        if dtype_name not in _DTYPES:
            raise ConfigError(f"unsupported tensor dtype {dtype_name}")
        raw = np.ascontiguousarray(array.astype(_DTYPES[dtype_name])).tobytes()
        tensors.append(
            {
                "name": name,
                "kind": kind,
                "dtype": dtype_name,
                "shape": list(array.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)

    for name, tensor in store.items():
        push(name, tensor.data, "param")
    if include_moments:
        for name, (m, v) in store.moments.items():
            push(name, m, "adam_m")
            push(name, v, "adam_v")

    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model_config.to_dict(),
        "feature_manifest": feature_config.manifest(),
        "tensors": tensors,
        "adam_step": store.step if include_moments else 0,
        "extra": extra or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(FORMAT_VERSION.to_bytes(4, "little"))
            fh.write(len(header_bytes).to_bytes(8, "little"))
            fh.write(header_bytes)
            for raw in blobs:
                fh.write(raw)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def load_checkpoint(path: str | os.PathLike) -> tuple[ParamStore, ModelConfig, dict, dict]:
    """Returns (store, model_config, feature_manifest, extra)."""
    raw = Path(path).read_bytes()
    if raw[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic)")
    version = int.from_bytes(raw[4:8], "little")
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    header_len = int.from_bytes(raw[8:16], "little")
    header = json.loads(raw[16 : 16 + header_len].decode("utf-8"))
    payload = raw[16 + header_len :]

    model_config = ModelConfig.from_dict(header["model_config"])
    store = ParamStore(dtype=model_config.dtype)
    store.step = int(header.get("adam_step", 0))
    moments_m: dict[str, np.ndarray] = {}
    moments_v: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        arr = np.frombuffer(payload[start : start + nbytes], dtype=_DTYPES[entry["dtype"]])
        arr = arr.reshape(entry["shape"]).astype(entry["dtype"])
        if entry["kind"] == "param":
            from .tensor import Tensor

            store._params[entry["name"]] = Tensor(arr.copy(), requires_grad=True)
        elif entry["kind"] == "adam_m":
            moments_m[entry["name"]] = arr.copy()
        elif entry["kind"] == "adam_v":
            moments_v[entry["name"]] = arr.copy()
    for name in moments_m:
        if name in moments_v:
            store.moments[name] = (moments_m[name], moments_v[name])
    return store, model_config, header["feature_manifest"], header.get("extra", {})


def manifest_diff(expected: dict, found: dict) -> list[str]:
    """Human-readable differences between two feature-layout manifests."""
    problems = []
    keys = sorted(set(expected) | set(found))
    for key in keys:
        if expected.get(key) != found.get(key):
            problems.append(f"{key}: expected {expected.get(key)!r}, checkpoint has {found.get(key)!r}")
    return problems


def check_manifest(feature_config: FeatureConfig, manifest: dict, source: str) -> None:
    problems = manifest_diff(feature_config.manifest(), manifest)
    if problems:
        detail = "; ".join(problems[:5])
        raise ConfigError(f"{source}: feature layout does not match this build: {detail}")
