"""Config text files and binary checkpoints.

Config files are INI-style with ``[env]``, ``[agent]``, ``[train]`` sections whose keys
mirror the dataclass field names. Checkpoints are laid out as::

    magic (8 bytes) | version u32 | spec length u32 | spec block (key=value lines, utf-8)
    | leaf count u32 | leaves ... | crc32 u32

with each leaf stored as ``name length u16 | name | ndim u8 | dims u32* | float32 LE data``.
All integers are little-endian. The CRC covers every preceding byte.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import io
import math
import struct
import zlib
from pathlib import Path

import numpy as np

from .agents import AgentSpec, QNetwork, build_network
from .env_model import EnvConfig
from .errors import CheckpointError, ConfigError
from .features import feature_size
from .numerics import ParamTree
from .training import TrainConfig

MAGIC = b"MUSCHED\x00"
VERSION = 1
SECTIONS = {"env": EnvConfig, "agent": AgentSpec, "train": TrainConfig}
REQUIRED = {"env": ("n_users", "n_subbands", "max_coscheduled"), "agent": ("variant",)}
# fields that fix the shape of the action space and input, hence of a trained network
STRUCTURAL_KEYS = ("n_users", "n_subbands", "max_coscheduled", "include_empty_action", "n_tx", "n_rx")


def _fields(cls) -> dict:
    return {f.name: f for f in dataclasses.fields(cls) if f.name != "mcs"}


def _parse_value(section: str, key: str, text: str, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered in ("1", "true", "yes", "on"):
                return True
            if lowered in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float) or default is None:
            return None if text.lower() == "none" else float(text)
        return text
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {text!r}") from None


def _format_value(value) -> str:
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return repr(value)
    return str(value)


def _build(section: str, cls, values: dict):
    fields = _fields(cls)
    kwargs = {}
    for key, text in values.items():
        if key not in fields:
            raise ConfigError(f"{section}.{key}: unknown key")
        default = fields[key].default
        kwargs[key] = _parse_value(section, key, text, default)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{section}.{exc}") from None


def parse_config(text: str, required: dict | None = None):
    """Parse config text into ``(EnvConfig, AgentSpec, TrainConfig)``.

    Missing sections fall back to defaults except for the keys listed in ``required``.
    """
    required = REQUIRED if required is None else required
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config: {exc}") from None
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"{section}: unknown section")
    out = []
    for section, cls in SECTIONS.items():
        values = dict(parser[section]) if parser.has_section(section) else {}
        for key in required.get(section, ()):
            if key not in values:
                raise ConfigError(f"{section}.{key}: missing required key")
        out.append(_build(section, cls, values))
    return tuple(out)


def load_config(path: str | Path, required: dict | None = None):
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    return parse_config(text, required)


def section_lines(section: str, obj) -> list[str]:
    return [f"{k} = {_format_value(getattr(obj, k))}" for k in _fields(type(obj))]


def config_text(env: EnvConfig, spec: AgentSpec, train: TrainConfig) -> str:
    parts = []
    for name, obj in (("env", env), ("agent", spec), ("train", train)):
        parts.append(f"[{name}]")
        parts.extend(section_lines(name, obj))
        parts.append("")
    return "\n".join(parts)


def env_digest(env: EnvConfig) -> str:
    """Digest of the structural env fields a trained network depends on."""
    text = ";".join(f"{k}={_format_value(getattr(env, k))}" for k in STRUCTURAL_KEYS)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _spec_block(net: QNetwork, env: EnvConfig) -> bytes:
    lines = [f"agent.{line.replace(' = ', '=')}" for line in section_lines("agent", net.spec)]
    lines += [f"env.{line.replace(' = ', '=')}" for line in section_lines("env", env)]
    lines += [
        f"env_digest={env_digest(env)}",
        f"n_subbands={net.n_subbands}",
        f"n_actions={net.n_actions}",
        f"feature_size={net.feature_size}",
    ]
    return ("\n".join(lines) + "\n").encode()


def save_checkpoint(path: str | Path, net: QNetwork, env: EnvConfig) -> None:
    buf = io.BytesIO()
    spec = _spec_block(net, env)
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(spec)))
    buf.write(spec)
    names = sorted(net.params.params)
    buf.write(struct.pack("<I", len(names)))
    for name in names:
        arr = np.ascontiguousarray(net.params.params[name], dtype="<f4")
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(arr.tobytes())
    body = buf.getvalue()
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


@dataclasses.dataclass
class Checkpoint:
    spec: AgentSpec
    env: EnvConfig
    env_digest: str
    n_subbands: int
    n_actions: int
    feature_size: int
    leaves: dict

    def network(self) -> QNetwork:
        tree = ParamTree()
        for name, arr in self.leaves.items():
            tree.add(name, arr.copy())
        return build_network(self.spec, self.n_subbands, self.n_actions, self.feature_size, params=tree)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint truncated")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    if len(data) < len(MAGIC) + 4 or data[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    r = _Reader(body)
    r.take(len(MAGIC))
    version, spec_len = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    block = {}
    for line in r.take(spec_len).decode().splitlines():
        key, _, value = line.partition("=")
        block[key] = value
    agent = {k[6:]: v for k, v in block.items() if k.startswith("agent.")}
    env = {k[4:]: v for k, v in block.items() if k.startswith("env.")}
    (n_leaves,) = r.unpack("<I")
    leaves = {}
    for _ in range(n_leaves):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode()
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        count = int(np.prod(shape)) if shape else 1
        leaves[name] = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(shape).astype(np.float32)
    if r.pos != len(body):
        raise CheckpointError(f"{path}: trailing bytes after leaves")
    ckpt = Checkpoint(
        spec=_build("agent", AgentSpec, agent),
        env=_build("env", EnvConfig, env),
        env_digest=block.get("env_digest", ""),
        n_subbands=int(block["n_subbands"]),
        n_actions=int(block["n_actions"]),
        feature_size=int(block["feature_size"]),
        leaves=leaves,
    )
    if env_digest(ckpt.env) != ckpt.env_digest:
        raise CheckpointError(f"{path}: env digest does not match the stored env block")
    return ckpt


def load_network(path: str | Path, env: EnvConfig | None = None) -> QNetwork:
    """Load a checkpoint; with ``env`` given, refuse one trained for a different structure."""
    ckpt = read_checkpoint(path)
    if env is not None:
        if env_digest(env) != ckpt.env_digest:
            raise ConfigError(f"checkpoint {path} was trained for a different env structure "
                              f"({', '.join(STRUCTURAL_KEYS)})")
        if feature_size(env.n_users) != ckpt.feature_size:
            raise ConfigError(f"checkpoint {path}: feature size mismatch")
    return ckpt.network()
