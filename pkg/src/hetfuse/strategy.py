"""Fusion strategies: which observations feed the forward generator."""

from __future__ import annotations

import enum


class FusionStrategy(enum.Enum):
    HSS = "hss"    # LR MS + SAR
    ST = "st"      # LR MS + earlier HR MS
    HSST = "hsst"  # LR MS + SAR + earlier HR MS

    @classmethod
    def parse(cls, value) -> FusionStrategy:
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown strategy {value!r}; expected one of hss, st, hsst") from None

    @property
    def members(self) -> tuple[str, ...]:
        """Observation members in channel order."""
        return {"hss": ("x_hat", "y"), "st": ("x_hat", "z"), "hsst": ("x_hat", "y", "z")}[self.value]

    @property
    def uses_sar(self) -> bool:
        return "y" in self.members

    @property
    def uses_temporal(self) -> bool:
        return "z" in self.members

    def in_channels(self, bands: int, sar_bands: int) -> int:
        return bands + sar_bands * self.uses_sar + bands * self.uses_temporal

    def backward_out_channels(self, bands: int, sar_bands: int) -> int:
        return sar_bands * self.uses_sar + bands * self.uses_temporal
