"""Cell-based architecture space.

A cell is a 4-node DAG.  Each of the 6 ordered edges ``i -> j`` (``i < j``)
carries one operation; node ``j`` sums the outputs of its incoming edges.
Architectures are identified by their canonical string encoding, e.g.
``|skip|linear|zero|linear_relu|skip|linear_tanh|x1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ParseError

# Documented op order; enumeration walks it lexically.
OPS = ("zero", "skip", "linear", "linear_relu", "linear_tanh")
PARAMETRIC_OPS = frozenset({"linear", "linear_relu", "linear_tanh"})
EDGES = ((0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3))
NUM_NODES = 4
SPACE_SIZE = len(OPS) ** len(EDGES)  # 15625 per cell count

_OP_INDEX = {op: i for i, op in enumerate(OPS)}


@dataclass(frozen=True)
class CellArch:
    edge_ops: tuple[str, ...]
    cells: int = 1

    def __post_init__(self):
        if len(self.edge_ops) != len(EDGES):
            raise ConfigError(f"expected {len(EDGES)} edge ops, got {len(self.edge_ops)}")
        for op in self.edge_ops:
            if op not in _OP_INDEX:
                raise ConfigError(f"unknown op {op!r}")
        if self.cells < 1:
            raise ConfigError("cells must be >= 1")

    @property
    def arch_id(self) -> str:
        return encode(self)

    def op(self, i: int, j: int) -> str:
        return self.edge_ops[EDGES.index((i, j))]

    @property
    def op_indices(self) -> tuple[int, ...]:
        return tuple(_OP_INDEX[op] for op in self.edge_ops)

    @classmethod
    def uniform(cls, op: str, cells: int = 1) -> CellArch:
        return cls((op,) * len(EDGES), cells)

    @classmethod
    def from_index(cls, index: int, cells: int = 1) -> CellArch:
        """Inverse of the lexical rank; edge (0->1) is the most significant digit."""
        if not 0 <= index < SPACE_SIZE:
            raise ConfigError(f"index {index} outside [0, {SPACE_SIZE})")
        digits = []
        for _ in EDGES:
            index, d = divmod(index, len(OPS))
            digits.append(d)
        return cls(tuple(OPS[d] for d in reversed(digits)), cells)

    @property
    def index(self) -> int:
        k = 0
        for d in self.op_indices:
            k = k * len(OPS) + d
        return k


def encode(arch: CellArch) -> str:
    return "|" + "|".join(arch.edge_ops) + f"|x{arch.cells}"


def decode(text: str) -> CellArch:
    """Parse a canonical encoding.  Errors report the byte offset of the fault."""
    raw = text.encode("utf-8")
    if not raw.startswith(b"|"):
        raise ParseError("encoding must start with '|'", 0)
    pos = 1
    ops = []
    for _ in EDGES:
        end = raw.find(b"|", pos)
        if end < 0:
            raise ParseError("missing '|' after op label", len(raw))
        label = raw[pos:end].decode("utf-8", errors="replace")
        if label not in _OP_INDEX:
            raise ParseError(f"unknown op label {label!r}", pos)
        ops.append(label)
        pos = end + 1
    tail = raw[pos:]
    if not tail.startswith(b"x"):
        raise ParseError("expected cell count 'x<C>'", pos)
    digits = tail[1:]
    if not digits or not digits.isdigit() or (len(digits) > 1 and digits.startswith(b"0")):
        raise ParseError("malformed cell count", pos + 1)
    cells = int(digits)
    if cells < 1:
        raise ParseError("cell count must be >= 1", pos + 1)
    return CellArch(tuple(ops), cells)


@dataclass(frozen=True)
class ArchPool:
    entries: tuple[CellArch, ...]
    seed: int | None = None
    provenance: str = "sampled"

    def __post_init__(self):
        ids = [a.arch_id for a in self.entries]
        if len(set(ids)) != len(ids):
            raise ConfigError("pool contains duplicate architecture IDs")
        if self.provenance not in ("sampled", "enumerated", "file"):
            raise ConfigError(f"unknown provenance {self.provenance!r}")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @property
    def ids(self) -> list[str]:
        return [a.arch_id for a in self.entries]


def sample_pool(size: int, seed: int, cells: int = 1) -> ArchPool:
    """Uniform i.i.d. draws over the cell space, deduplicated and refilled."""
    if size < 1:
        raise ConfigError("pool size must be >= 1")
    if size > SPACE_SIZE:
        raise ConfigError(f"requested {size} architectures but the space has {SPACE_SIZE}")
    rng = np.random.default_rng(seed)
    seen: dict[int, None] = {}
    while len(seen) < size:
        draws = rng.integers(0, len(OPS), size=(size - len(seen), len(EDGES)))
        for row in draws:
            k = 0
            for d in row:
                k = k * len(OPS) + int(d)
            seen.setdefault(k)
    entries = tuple(CellArch.from_index(k, cells) for k in list(seen)[:size])
    return ArchPool(entries, seed=seed, provenance="sampled")


def enumerate_space(limit: int | None = None, cells: int = 1) -> ArchPool:
    n = SPACE_SIZE if limit is None else min(limit, SPACE_SIZE)
    if n < 1:
        raise ConfigError("limit must be >= 1")
    return ArchPool(tuple(CellArch.from_index(k, cells) for k in range(n)), provenance="enumerated")


def load_pool(path) -> ArchPool:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, list) or not all(isinstance(s, str) for s in data):
        raise ConfigError("pool file must be a JSON array of encoding strings")
    return ArchPool(tuple(decode(s) for s in data), provenance="file")


def dump_pool(pool: ArchPool) -> str:
    return json.dumps(pool.ids, indent=1) + "\n"
