"""The nine-region electrode partition used by both hierarchical models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

# DEAP 32-channel montage order.
DEAP_CHANNELS = (
    "Fp1", "AF3", "F3", "F7", "FC5", "FC1", "C3", "T7", "CP5", "CP1", "P3", "P7",
    "PO3", "O1", "Oz", "Pz", "Fp2", "AF4", "Fz", "F4", "F8", "FC6", "FC2", "Cz",
    "C4", "T8", "CP6", "CP2", "P4", "P8", "PO4", "O2",
)

DEFAULT_REGIONS = (
    ("prefrontal", ("Fp1", "AF3", "Fp2", "AF4")),
    ("frontal", ("F7", "F3", "Fz", "F4", "F8")),
    ("left_temporal", ("FC5", "T7", "CP5")),
    ("central", ("FC1", "C3", "Cz", "C4", "FC2")),
    ("right_temporal", ("FC6", "T8", "CP6")),
    ("left_parietal", ("P7", "P3", "CP1")),
    ("right_parietal", ("CP2", "P4", "P8")),
    ("midline_parietal", ("Pz", "PO3", "PO4")),
    ("occipital", ("O1", "Oz", "O2")),
)

N_CHANNELS = 32
N_REGIONS = 9
REGION_SIZES = (3, 4, 5)


@dataclass(frozen=True)
class RegionMap:
    regions: tuple[tuple[int, ...], ...]
    names: tuple[str, ...] = ()

    def __post_init__(self):
        regions = tuple(tuple(int(c) for c in r) for r in self.regions)
        object.__setattr__(self, "regions", regions)
        if not self.names:
            object.__setattr__(self, "names", tuple(f"region{i}" for i in range(len(regions))))
        if len(regions) != N_REGIONS:
            raise ValueError(f"region map needs {N_REGIONS} regions, got {len(regions)}")
        if len(self.names) != len(regions):
            raise ValueError("one name per region required")
        bad = [len(r) for r in regions if len(r) not in REGION_SIZES]
        if bad:
            raise ValueError(f"region sizes must be in {REGION_SIZES}, got {bad}")
        flat = sorted(c for r in regions for c in r)
        if flat != list(range(N_CHANNELS)):
            raise ValueError(f"regions must partition channels 0..{N_CHANNELS - 1} exactly once")

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(r) for r in self.regions)

    @classmethod
    def from_names(cls, regions: Sequence[tuple[str, Sequence[str]]],
                   channel_names: Sequence[str] = DEAP_CHANNELS) -> "RegionMap":
        index = {name: i for i, name in enumerate(channel_names)}
        try:
            idx = tuple(tuple(index[ch] for ch in chans) for _, chans in regions)
        except KeyError as exc:
            raise ValueError(f"unknown channel {exc.args[0]!r} in region map") from None
        return cls(idx, tuple(name for name, _ in regions))

    def to_json(self) -> list:
        return [{"name": n, "channels": list(r)} for n, r in zip(self.names, self.regions)]

    @classmethod
    def from_json(cls, items: list) -> "RegionMap":
        return cls(tuple(tuple(it["channels"]) for it in items), tuple(it["name"] for it in items))


def default_region_map() -> RegionMap:
    return RegionMap.from_names(DEFAULT_REGIONS)
