"""Single-file binary network format with bit-exact round trips.

Layout: magic, little-endian uint32 header length, JSON header (format
version, kind, architecture), then all parameters as little-endian float64
in ``parameters_flat`` order.
"""

import json
import struct
from pathlib import Path

import numpy as np

from .kan import KanNetwork, MlpNetwork

__all__ = ["ModelFormatError", "save_network", "load_network", "FORMAT_VERSION"]

MAGIC = b"KCMNET\x00"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Raised for unreadable or inconsistent model files."""


def _header(net) -> dict:
    header = {
        "format_version": FORMAT_VERSION,
        "kind": net.kind,
        "dims": net.dims,
        "param_count": net.parameter_count(),
    }
    if net.kind == "kan":
        basis = net.basis
        for layer in net.layers:
            if layer.basis is not basis and layer.basis != basis:
                raise ModelFormatError("all layers must share one basis to serialize")
        header["order"] = basis.order
        header["num_intervals"] = basis.num_intervals
        header["input_range"] = [basis.lo, basis.hi]
    return header


def save_network(net, path):
    """Write a KanNetwork or MlpNetwork to ``path``."""
    header = _header(net)
    payload = np.ascontiguousarray(net.parameters_flat(), dtype="<f8").tobytes()
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def load_network(path):
    """Read a network written by :func:`save_network`; round trip is bit-exact."""
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    offset = len(MAGIC)
    if len(raw) < offset + 4:
        raise ModelFormatError(f"{path}: truncated header")
    (hlen,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    try:
        header = json.loads(raw[offset : offset + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"{path}: unreadable header ({exc})") from exc
    offset += hlen

    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: unsupported format version {version!r}")

    params = np.frombuffer(raw[offset:], dtype="<f8")
    if params.size != header.get("param_count"):
        raise ModelFormatError(
            f"{path}: expected {header.get('param_count')} parameters, found {params.size}"
        )

    kind = header.get("kind")
    if kind == "kan":
        lo, hi = header["input_range"]
        net = KanNetwork.create(
            header["dims"],
            order=header["order"],
            num_intervals=header["num_intervals"],
            input_range=(lo, hi),
            rng=np.random.default_rng(0),
            coeff_std=0.0,
        )
    elif kind == "mlp":
        net = MlpNetwork.create(header["dims"], rng=np.random.default_rng(0))
    else:
        raise ModelFormatError(f"{path}: unknown network kind {kind!r}")
    net.set_parameters_flat(params.astype(np.float64))
    return net
