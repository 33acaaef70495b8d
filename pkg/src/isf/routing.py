"""Deterministic client-side key routing for the clustered deployment."""

from __future__ import annotations

from dataclasses import dataclass

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash; identical across languages and runs."""
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK
    return h


@dataclass(frozen=True)
class ShardMap:
    """Ordered shard addresses; order is canonical and shared by every client."""

    shards: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.shards) < 1:
            raise ValueError("shard map requires at least one address")

    @property
    def count(self) -> int:
        return len(self.shards)

    @classmethod
    def parse(cls, spec: str) -> "ShardMap":
        """Parse the ISF_SHARD_MAP format: comma-separated host:port list."""
        addrs = tuple(a.strip() for a in spec.split(",") if a.strip())
        return cls(addrs)

    def serialize(self) -> str:
        return ",".join(self.shards)


def shard_for_key(key: str, shard_map: ShardMap) -> int:
    """fnv1a64(key) mod shard count."""
    return fnv1a64(key.encode("utf-8")) % shard_map.count
