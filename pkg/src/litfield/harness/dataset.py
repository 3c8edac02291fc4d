"""Dataset directory format shared by the offline and streamed paths.

A dataset directory contains:
  manifest.txt   plain-text key=value lines; `frame=<file>` lines list the
                 keyframe packet files in capture order
  init.bin       encoded SessionInit packet
  near_###.bin / far_###.bin   encoded keyframe packets (wire codec)
  gt.ppm         ground-truth environment map, binary PPM (P6)
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .. import protocol
from ..session import EnvironmentMap

MANIFEST_NAME = "manifest.txt"
INIT_NAME = "init.bin"
GROUND_TRUTH_NAME = "gt.ppm"


def write_ppm(path: str, rgb_u8: np.ndarray) -> None:
    rgb_u8 = np.ascontiguousarray(rgb_u8, dtype=np.uint8)
    h, w, _ = rgb_u8.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb_u8.tobytes())


def read_ppm(path: str) -> np.ndarray:
    with open(path, "rb") as f:
        data = f.read()
    # header: magic, width, height, maxval as whitespace-separated tokens
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P6" or tokens[3] != b"255":
        raise ValueError(f"{path}: not an 8-bit P6 PPM")
    w, h = int(tokens[1]), int(tokens[2])
    pos += 1  # single whitespace after maxval
    return np.frombuffer(data[pos:pos + 3 * w * h], dtype=np.uint8).reshape(h, w, 3)


def write_envmap(path: str, env: EnvironmentMap) -> None:
    write_ppm(path, env.to_uint8())


def read_envmap(path: str) -> EnvironmentMap:
    return EnvironmentMap.from_uint8(read_ppm(path))


@dataclass
class Dataset:
    directory: str
    meta: dict[str, str] = field(default_factory=dict)
    frame_files: list[str] = field(default_factory=list)

    def init_packet(self) -> protocol.SessionInit:
        with open(os.path.join(self.directory, INIT_NAME), "rb") as f:
            packet = protocol.decode_packet(f.read())
        if not isinstance(packet, protocol.SessionInit):
            raise ValueError("init.bin does not hold a SessionInit packet")
        return packet

    def frames(self):
        """Decoded keyframe packets in capture order."""
        for name in self.frame_files:
            with open(os.path.join(self.directory, name), "rb") as f:
                yield protocol.decode_packet(f.read())

    def ground_truth(self) -> EnvironmentMap:
        return read_envmap(os.path.join(self.directory, GROUND_TRUTH_NAME))


def write_dataset(directory: str, init: protocol.SessionInit,
                  frames: list[protocol.NearKeyframe | protocol.FarKeyframe],
                  ground_truth: EnvironmentMap,
                  meta: dict[str, str] | None = None) -> Dataset:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, INIT_NAME), "wb") as f:
        f.write(protocol.encode_packet(init))
    names = []
    counts = {"near": 0, "far": 0}
    for packet in frames:
        kind = "near" if isinstance(packet, protocol.NearKeyframe) else "far"
        name = f"{kind}_{counts[kind]:03d}.bin"
        counts[kind] += 1
        with open(os.path.join(directory, name), "wb") as f:
            f.write(protocol.encode_packet(packet))
        names.append(name)
    write_envmap(os.path.join(directory, GROUND_TRUTH_NAME), ground_truth)

    meta = dict(meta or {})
    with open(os.path.join(directory, MANIFEST_NAME), "w") as f:
        for key, value in meta.items():
            f.write(f"{key}={value}\n")
        f.write(f"ground_truth={GROUND_TRUTH_NAME}\n")
        for name in names:
            f.write(f"frame={name}\n")
    return Dataset(directory, meta, names)


def load_dataset(directory: str) -> Dataset:
    meta, names = {}, []
    with open(os.path.join(directory, MANIFEST_NAME)) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            if key == "frame":
                names.append(value)
            else:
                meta[key] = value
    return Dataset(directory, meta, names)
