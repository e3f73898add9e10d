"""Checkpoint archive: one zip holding parameters, BN statistic banks and metadata.

Layout inside the archive:
    meta.json                      scalars: epoch, iteration, run config, norm stats
    arch.json                      the ArchSpec, so models rebuild without presets
    params/<name>.npy              one array per named parameter
    opt/<name>.npy                 SGD momentum buffers (absent before any step)
    stats/<key>/<layer>.mean.npy   calibrated BN statistics per configuration key
    stats/<key>/<layer>.var.npy

Writes are atomic (temp file + rename); keys use the canonical configuration
string, layer names the module paths inside the model.
"""

from __future__ import annotations

import io
import json
import os
import tempfile
import zipfile

import numpy as np
import torch

from .costmodel import ArchSpec
from .errors import ConfigError
from .slimnet import CalibBN


def _npy_bytes(arr: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.save(buf, arr)
    return buf.getvalue()


def _read_npy(zf: zipfile.ZipFile, name: str) -> np.ndarray:
    with zf.open(name) as f:
        return np.load(io.BytesIO(f.read()))


def save_checkpoint(path, model, arch: ArchSpec, meta: dict, optimizer=None):
    """Write the archive atomically; meta must be JSON-serialisable."""
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".zip.tmp")
    try:
        with os.fdopen(fd, "wb") as fh, zipfile.ZipFile(fh, "w", zipfile.ZIP_STORED) as zf:
            zf.writestr("meta.json", json.dumps(meta, indent=2))
            zf.writestr("arch.json", arch.to_json())
            for name, p in model.named_parameters():
                zf.writestr(f"params/{name}.npy", _npy_bytes(p.detach().numpy()))
            if optimizer is not None:
                params = {id(p): name for name, p in model.named_parameters()}
                for group in optimizer.param_groups:
                    for p in group["params"]:
                        buf = optimizer.state.get(p, {}).get("momentum_buffer")
                        if buf is not None:
                            zf.writestr(f"opt/{params[id(p)]}.npy", _npy_bytes(buf.numpy()))
            for mod_name, m in model.named_modules():
                if isinstance(m, CalibBN):
                    for key, (mean, var) in m.stat_bank.items():
                        zf.writestr(f"stats/{key}/{mod_name}.mean.npy", _npy_bytes(mean.numpy()))
                        zf.writestr(f"stats/{key}/{mod_name}.var.npy", _npy_bytes(var.numpy()))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path, model=None, optimizer=None) -> dict:
    """Read meta; if a model (and optionally optimizer) is given, restore into it."""
    with zipfile.ZipFile(path) as zf:
        names = set(zf.namelist())
        meta = json.loads(zf.read("meta.json"))
        if model is None:
            return meta
        with torch.no_grad():
            for name, p in model.named_parameters():
                member = f"params/{name}.npy"
                if member not in names:
                    raise ConfigError(f"checkpoint lacks parameter {name}")
                p.copy_(torch.from_numpy(_read_npy(zf, member)))
        for mod_name, m in model.named_modules():
            if isinstance(m, CalibBN):
                m.stat_bank.clear()
        for member in sorted(names):
            if member.startswith("stats/") and member.endswith(".mean.npy"):
                _, key, rest = member.split("/", 2)
                mod_name = rest[: -len(".mean.npy")]
                mod = dict(model.named_modules()).get(mod_name)
                if not isinstance(mod, CalibBN):
                    raise ConfigError(f"checkpoint statistics for unknown layer {mod_name}")
                mean = torch.from_numpy(_read_npy(zf, member))
                var = torch.from_numpy(_read_npy(zf, f"stats/{key}/{mod_name}.var.npy"))
                mod.stat_bank[key] = (mean, var)
        if optimizer is not None:
            by_name = dict(model.named_parameters())
            for member in names:
                if member.startswith("opt/"):
                    name = member[len("opt/"): -len(".npy")]
                    p = by_name.get(name)
                    if p is None:
                        raise ConfigError(f"momentum buffer for unknown parameter {name}")
                    optimizer.state[p]["momentum_buffer"] = torch.from_numpy(_read_npy(zf, member))
    return meta


def load_arch(path) -> ArchSpec:
    with zipfile.ZipFile(path) as zf:
        return ArchSpec.from_json(zf.read("arch.json").decode())


def build_from_checkpoint(path):
    """(model, meta) reconstructed purely from the archive."""
    from .slimnet import build_model

    arch = load_arch(path)
    model = build_model(arch)
    meta = load_checkpoint(path, model=model)
    return model, meta


def param_checksum(model) -> str:
    """Order-stable digest of all parameters; calibration must not change it."""
    import hashlib

    h = hashlib.sha256()
    for name, p in sorted(model.named_parameters()):
        h.update(name.encode())
        h.update(p.detach().numpy().tobytes())
    return h.hexdigest()
