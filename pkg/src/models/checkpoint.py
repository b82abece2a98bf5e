"""
Checkpoint file format for Lmser networks

Byte layout (all integers little-endian):

    offset  size  field
    0       8     magic b"LMSRCKPT"
    8       4     uint32 format version (currently 1)
    12      4     uint32 header length H in bytes
    16      H     UTF-8 JSON header:
                    {"config": <LmserConfig fields>, "seed": int, "iteration": int,
                     "parameters": [{"name": str, "shape": [int, ...]}, ...]}
    16+H    ...   raw little-endian float32 buffers, one per header entry, in
                  header order, each row-major with prod(shape) elements

The parameter order is the network's fixed update order: layers bottom to top,
within a layer W (or K), then W_down (or K_down) when untied, then b_up, b_down.
"""
import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from ..core.errors import ConfigurationError, FormatError
from .network import LmserConfig, LmserNetwork

logger = logging.getLogger(__name__)

MAGIC = b"LMSRCKPT"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")


def save_checkpoint(path: Union[str, Path], net: LmserNetwork, seed: int, iteration: int) -> Path:
    path = Path(path)
    params = net.parameters()
    header = {
        "config": net.config.to_dict(),
        "seed": int(seed),
        "iteration": int(iteration),
        "parameters": [{"name": name, "shape": list(p.shape)} for name, p in params.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for p in params.values():
            f.write(np.ascontiguousarray(p.numpy(), dtype="<f4").tobytes())
    logger.info(f"💾 Checkpoint (iteration {iteration}) saved to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[LmserNetwork, Dict[str, Any]]:
    """Read a checkpoint; returns the network and its header metadata"""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _PREFIX.size:
        raise FormatError(f"{path}: truncated checkpoint prefix ({len(raw)} bytes)")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format version {version}, expected {FORMAT_VERSION}")
    start = _PREFIX.size
    if len(raw) < start + header_len:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[start:start + header_len].decode("utf-8"))
        config = LmserConfig.from_dict(header["config"])
        entries = header["parameters"]
    except (ValueError, KeyError, TypeError, ConfigurationError) as e:
        raise FormatError(f"{path}: corrupt header: {e}") from e

    offset = start + header_len
    params: Dict[str, np.ndarray] = {}
    for entry in entries:
        shape = tuple(entry["shape"])
        nbytes = 4 * int(np.prod(shape))
        if offset + nbytes > len(raw):
            raise FormatError(f"{path}: truncated buffer for {entry['name']}")
        params[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=nbytes // 4, offset=offset) \
            .astype(np.float32).reshape(shape)
        offset += nbytes
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} trailing bytes")

    template = LmserNetwork.initialize(config, seed=header.get("seed", 0))
    expected = {name: p.shape for name, p in template.parameters().items()}
    if expected != {name: p.shape for name, p in params.items()}:
        raise FormatError(f"{path}: parameter set does not match its config")
    net = template.with_parameters(params)
    meta = {k: header[k] for k in ("seed", "iteration")}
    meta["config"] = config
    return net, meta
