"""Artifact persistence: images, model checkpoints, configs, manifests.

Images travel as PFM (32-bit float, lossless) or PNG (8/16-bit grayscale
mapped to [0, 1], for inspection). Model checkpoints are single binary
files: magic "PNRK", a format version, a model-kind tag, enough
architecture metadata to rebuild the model without external context, the
parameters as little-endian float32 in declared order, and a trailing
CRC32. Experiment configs are TOML with unknown keys rejected.
"""

import hashlib
import json
import struct
import zlib

import numpy as np
from PIL import Image

try:
    import tomllib as toml_reader
except ImportError:
    import tomli as toml_reader

from .flow import ConditionalPatchFlow, FlowConfig, PatchFlow
from .priors import PatchGMM

__all__ = [
    "read_pfm",
    "write_pfm",
    "read_png",
    "write_png",
    "read_image",
    "write_image",
    "save_checkpoint",
    "load_checkpoint",
    "CheckpointError",
    "BadMagicError",
    "VersionError",
    "CorruptError",
    "load_config",
    "config_hash",
    "write_manifest",
]

CHECKPOINT_VERSION = 1
_KIND_FLOW, _KIND_CFLOW, _KIND_GMM = 1, 2, 3


class CheckpointError(Exception):
    """Base class for unreadable checkpoints."""


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class CorruptError(CheckpointError):
    pass


# ---------------------------------------------------------------------------
# images

def write_pfm(image, path):
    """Grayscale PFM: negative scale marks little-endian, rows bottom-up."""
    image = np.asarray(image, dtype=np.float32)
    if image.ndim != 2:
        raise ValueError("expected a 2-d grayscale image")
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(np.flipud(image).astype("<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM file")
        dims = f.readline().split()
        if len(dims) != 2:
            raise ValueError(f"{path}: corrupt PFM header")
        w, h = int(dims[0]), int(dims[1])
        scale = float(f.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(w * h * 4), dtype=dtype)
    if data.size != w * h:
        raise ValueError(f"{path}: truncated PFM payload")
    return np.flipud(data.reshape(h, w)).astype(np.float32)


def write_png(image, path, bits=8):
    """Quantize [0, 1] to 8- or 16-bit grayscale PNG."""
    image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    if bits == 8:
        arr = np.round(image * 255).astype(np.uint8)
        Image.fromarray(arr, mode="L").save(path)
    elif bits == 16:
        arr = np.round(image * 65535).astype(np.uint16)
        Image.fromarray(arr).save(path)
    else:
        raise ValueError("bits must be 8 or 16")


def read_png(path):
    with Image.open(path) as im:
        if im.mode == "L":
            return np.asarray(im, dtype=np.float64) / 255.0
        if im.mode in ("I;16", "I"):
            return np.asarray(im, dtype=np.float64) / 65535.0
        return np.asarray(im.convert("L"), dtype=np.float64) / 255.0


def read_image(path):
    path = str(path)
    if path.endswith(".pfm"):
        return read_pfm(path)
    if path.endswith(".png"):
        return read_png(path)
    raise ValueError(f"unsupported image format: {path}")


def write_image(image, path):
    path = str(path)
    if path.endswith(".pfm"):
        write_pfm(image, path)
    elif path.endswith(".png"):
        write_png(image, path)
    else:
        raise ValueError(f"unsupported image format: {path}")


# ---------------------------------------------------------------------------
# checkpoints

def _flow_payload(flow):
    parts = [np.asarray(v, dtype="<f4").tobytes()
             for _, v in flow.params().items()]
    return b"".join(parts)


def save_checkpoint(model, path):
    """Serialize a flow, conditional flow, or GMM to a single file.

    Parameters are stored as little-endian float32; loading reproduces
    exactly the float32-rounded model, so save -> load -> save is
    byte-stable.
    """
    if isinstance(model, ConditionalPatchFlow):
        kind = _KIND_CFLOW
    elif isinstance(model, PatchFlow):
        kind = _KIND_FLOW
    elif isinstance(model, PatchGMM):
        kind = _KIND_GMM
    else:
        raise TypeError(f"cannot checkpoint a {type(model).__name__}")
    head = b"PNRK" + struct.pack("<HB", CHECKPOINT_VERSION, kind)
    if kind == _KIND_GMM:
        meta = struct.pack("<II", model.k, model.dim)
        payload = b"".join(np.asarray(a, dtype="<f4").tobytes()
                           for a in (model.weights, model.means, model.covs))
    else:
        c = model.config
        meta = struct.pack("<IIIdQI", c.patch_dim, c.n_blocks, c.hidden,
                           c.clamp, c.seed, c.cond_dim)
        payload = _flow_payload(model)
    blob = head + meta + payload
    blob += struct.pack("<I", zlib.crc32(blob))
    with open(path, "wb") as f:
        f.write(blob)


def load_checkpoint(path):
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 11 or blob[:4] != b"PNRK":
        raise BadMagicError(f"{path}: not a checkpoint file")
    version, kind = struct.unpack_from("<HB", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionError(
            f"{path}: version {version}, expected {CHECKPOINT_VERSION}")
    body, crc_stored = blob[:-4], struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(body) != crc_stored:
        raise CorruptError(f"{path}: CRC mismatch (truncated or damaged)")
    off = 7
    if kind == _KIND_GMM:
        k, dim = struct.unpack_from("<II", body, off)
        off += 8
        vals = np.frombuffer(body, dtype="<f4", offset=off).astype(np.float64)
        expected = k + k * dim + k * dim * dim
        if vals.size != expected:
            raise CorruptError(f"{path}: wrong GMM payload size")
        weights = vals[:k]
        means = vals[k:k + k * dim].reshape(k, dim)
        covs = vals[k + k * dim:].reshape(k, dim, dim)
        return PatchGMM(weights / weights.sum(), means, covs)
    if kind not in (_KIND_FLOW, _KIND_CFLOW):
        raise CorruptError(f"{path}: unknown model kind {kind}")
    patch_dim, n_blocks, hidden, clamp, seed, cond_dim = \
        struct.unpack_from("<IIIdQI", body, off)
    off += struct.calcsize("<IIIdQI")
    config = FlowConfig(patch_dim=patch_dim, n_blocks=n_blocks, hidden=hidden,
                        clamp=clamp, cond_dim=cond_dim, seed=seed)
    flow = (ConditionalPatchFlow if kind == _KIND_CFLOW else PatchFlow)(config)
    vals = np.frombuffer(body, dtype="<f4", offset=off).astype(np.float64)
    params = flow.params()
    pos = 0
    for name, arr in params.items():
        n = arr.size
        if pos + n > vals.size:
            raise CorruptError(f"{path}: wrong flow payload size")
        params[name] = vals[pos:pos + n].reshape(arr.shape)
        pos += n
    if pos != vals.size:
        raise CorruptError(f"{path}: wrong flow payload size")
    flow.set_params(params)
    return flow


# ---------------------------------------------------------------------------
# experiment configs and run manifests

_CONFIG_SCHEMA = {
    "task": str,
    "seed": int,
    "lam": (int, float),
    "iterations": int,
    "lr": (int, float),
    "n_subset": int,
    "init": str,
    "clamp_final": bool,
    "prior": str,
    "crop": int,
    "operator": {
        "kind": str,
        "kernel_size": int,
        "sigma": (int, float),
        "stride": int,
        "kernel_path": str,
        "shape": list,
        "domain": list,
        "n_bins": int,
        "n_angles": int,
        "drop": int,
    },
    "fidelity": {
        "kind": str,
        "sigma": (int, float),
        "n0": (int, float),
    },
    "paths": {
        "input": str,
        "observation": str,
        "output": str,
        "flow": str,
        "gmm": str,
        "condition": str,
    },
}


def _check_keys(data, schema, prefix=""):
    for key, value in data.items():
        if key not in schema:
            raise ValueError(f"unknown config key: {prefix}{key}")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ValueError(f"config key {prefix}{key} must be a table")
            _check_keys(value, expected, prefix=f"{prefix}{key}.")
        elif not isinstance(value, expected):
            raise ValueError(f"config key {prefix}{key} has the wrong type")


def load_config(path):
    """Parse and validate an experiment TOML; unknown keys are rejected."""
    with open(path, "rb") as f:
        data = toml_reader.load(f)
    _check_keys(data, _CONFIG_SCHEMA)
    return data


def config_hash(config):
    """Stable hash of a config dict (canonical JSON, sha256 prefix)."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def write_manifest(path, command, config, seed, inputs, outputs, metrics=None):
    """JSON run manifest: everything needed to re-execute the run."""
    manifest = {
        "command": command,
        "config": config,
        "config_hash": config_hash(config),
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
    }
    if metrics is not None:
        manifest["metrics"] = metrics
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
