"""Versioned checkpoint files: magic, JSON header, raw float32 tensors.

Layout: b"UDCKPT01" | u64 little-endian header length | UTF-8 JSON header |
tensor bytes (row-major float32 little-endian, in header order). The header
lists {name, shape, offset, nbytes} per tensor plus free-form metadata;
tensor names are "<section>/<parameter>".
"""
import json
import struct

import numpy as np
import torch

MAGIC = b"UDCKPT01"
VERSION = 1


def save_checkpoint(path, sections: dict, meta: dict = None):
    entries, blobs, offset = [], [], 0
    for section in sorted(sections):
        for name, tensor in sections[section].items():
            arr = np.ascontiguousarray(tensor.detach().cpu().numpy() if hasattr(tensor, "detach") else tensor,
                                       dtype="<f4")
            data = arr.tobytes()
            entries.append({"name": f"{section}/{name}", "shape": list(arr.shape), "offset": offset,
                            "nbytes": len(data)})
            blobs.append(data)
            offset += len(data)
    header = json.dumps({"version": VERSION, "meta": meta or {}, "tensors": entries}, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple:
    """-> ({section: {name: tensor}}, meta)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen])
    if header.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    base = 16 + hlen
    sections = {}
    for e in header["tensors"]:
        start = base + e["offset"]
        arr = np.frombuffer(raw[start:start + e["nbytes"]], dtype="<f4").reshape(e["shape"])
        section, name = e["name"].split("/", 1)
        sections.setdefault(section, {})[name] = torch.from_numpy(arr.astype(np.float32))
    return sections, header["meta"]


def controlnet_sections(net) -> dict:
    return {
        "locked": net.locked.state_dict(),
        "trainable": net.trainable.state_dict(),
        "zin": net.zin.state_dict(),
        "zout": net.zout.state_dict(),
    }


def save_controlnet(path, net, meta: dict = None):
    meta = dict(meta or {})
    meta["architecture"] = dict(net.locked.config)
    meta["control_channels"] = net.control_channels
    save_checkpoint(path, controlnet_sections(net), meta)


def load_controlnet(path):
    from .controlnet import ControlNet
    from .diffusion import Denoiser

    sections, meta = load_checkpoint(path)
    locked = Denoiser(**meta["architecture"])
    locked.load_state_dict(sections["locked"])
    net = ControlNet(locked, meta.get("control_channels", 3))
    net.trainable.load_state_dict(sections["trainable"])
    net.zin.load_state_dict(sections["zin"])
    net.zout.load_state_dict(sections["zout"])
    return net, meta
