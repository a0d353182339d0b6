"""Free-space line-of-sight link from aerial platform to ground station.

The achievable rate here is bandwidth times the Shannon spectral efficiency
log2(1 + SNR), with the SNR built from a reference channel gain at 1 m and
the squared 3-D separation. All dB/dBm conversions live in this module so
there is exactly one place to get them wrong.

Unit conventions, documented prominently because they are the usual source
of silent link-budget errors:

* payload sizes are exact bit counts;
* the published latency tables this module reproduces label payload columns
  "kB", but their printed latencies are consistent only with those values
  read as thousands of bits;
* those printed latencies are additionally consistent with the link rate
  evaluated at whole-kb/s granularity (spectral efficiency rounded to three
  decimals). ``latency_table`` therefore quantizes the rate to 1 kb/s by
  default; pass ``rate_quantization_bps=None`` for the exact rate.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path


def db_to_linear(value_db: float) -> float:
    """Power ratio from decibels."""
    return 10.0 ** (value_db / 10.0)


def dbm_to_watts(value_dbm: float) -> float:
    return 10.0 ** ((value_dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class LinkParams:
    """Physical-layer constants of the aerial-to-ground link."""

    transmit_power_w: float = 0.1
    reference_gain_db: float = -60.0  # channel gain at 1 m
    bandwidth_hz: float = 1e6
    noise_density_dbm_hz: float = -174.0
    station_elevation_m: float = 20.0
    uav_elevation_m: float = 100.0
    station_xy_m: tuple[float, float] = (-2500.0, 0.0)
    uav_xy_m: tuple[float, float] = (0.0, 1000.0)

    def __post_init__(self) -> None:
        if self.transmit_power_w <= 0:
            raise ValueError("transmit power must be positive")
        if self.bandwidth_hz <= 0:
            raise ValueError("bandwidth must be positive")
        if self.squared_distance_m2() <= 0:
            raise ValueError("link distance must be nonzero")

    def squared_distance_m2(self) -> float:
        dx = self.station_xy_m[0] - self.uav_xy_m[0]
        dy = self.station_xy_m[1] - self.uav_xy_m[1]
        dz = self.station_elevation_m - self.uav_elevation_m
        return dz * dz + dx * dx + dy * dy

    def at_elevation(self, uav_elevation_m: float) -> "LinkParams":
        return replace(self, uav_elevation_m=uav_elevation_m)


@dataclass(frozen=True)
class Payload:
    size_bits: int
    description: str = ""

    def __post_init__(self) -> None:
        if self.size_bits < 0:
            raise ValueError("payload size must be nonnegative")


def snr(params: LinkParams) -> float:
    """Received signal-to-noise ratio (dimensionless)."""
    gain = db_to_linear(params.reference_gain_db)
    noise_w = params.bandwidth_hz * dbm_to_watts(params.noise_density_dbm_hz)
    return params.transmit_power_w * gain / noise_w / params.squared_distance_m2()


def achievable_rate(params: LinkParams) -> float:
    """Link rate in bits/second: bandwidth times spectral efficiency."""
    return params.bandwidth_hz * math.log2(1.0 + snr(params))


def transmission_latency(payload: Payload | int, params: LinkParams) -> float:
    """Seconds needed to move the payload across the link."""
    bits = payload.size_bits if isinstance(payload, Payload) else int(payload)
    rate = achievable_rate(params)
    if rate <= 0:
        raise ValueError("achievable rate is zero; latency undefined")
    return bits / rate


DEFAULT_ELEVATIONS_M = (100.0, 150.0, 200.0, 250.0)


@dataclass(frozen=True)
class LatencyRow:
    description: str
    size_bits: int
    latency_s: tuple[float, ...]  # one per elevation


@dataclass(frozen=True)
class LatencyTable:
    elevations_m: tuple[float, ...]
    rows: tuple[LatencyRow, ...]

    def latency_ms(self) -> list[list[float]]:
        return [[1e3 * v for v in row.latency_s] for row in self.rows]


def latency_table(
    payloads: list[Payload],
    params: LinkParams,
    elevations_m: tuple[float, ...] = DEFAULT_ELEVATIONS_M,
    rate_quantization_bps: float | None = 1000.0,
) -> LatencyTable:
    """Latency matrix: one row per payload, one column per platform elevation.

    ``rate_quantization_bps`` defaults to 1 kb/s, matching the granularity
    behind the published tables (see the module docstring); ``None`` uses the
    exact rate.
    """
    if not payloads:
        raise ValueError("no payloads")
    if not elevations_m:
        raise ValueError("no elevations")
    rates = []
    for elev in elevations_m:
        rate = achievable_rate(params.at_elevation(elev))
        if rate_quantization_bps:
            rate = round(rate / rate_quantization_bps) * rate_quantization_bps
        if rate <= 0:
            raise ValueError(f"achievable rate is zero at elevation {elev}")
        rates.append(rate)
    rows = tuple(
        LatencyRow(p.description, p.size_bits, tuple(p.size_bits / r for r in rates))
        for p in payloads
    )
    return LatencyTable(tuple(elevations_m), rows)


def write_latency_csv(table: LatencyTable, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["method", "size_bits"]
            + [f"latency_ms_elev_{int(e)}m" for e in table.elevations_m]
        )
        for row in table.rows:
            writer.writerow(
                [row.description, row.size_bits]
                + [f"{1e3 * v:.3f}" for v in row.latency_s]
            )


# Payload sets whose printed latencies this module reproduces bit-for-bit.
FLOODNET_PAYLOADS = (
    Payload(14_441, "full image"),
    Payload(7_004, "ground truth mask"),
    Payload(2_119, "segmented mask"),
    Payload(1_945, "masked segmentation mask"),
)
RESCUENET_PAYLOADS = (
    Payload(177_780, "full image"),
    Payload(19_373, "ground truth mask"),
    Payload(27_559, "segmented mask"),
    Payload(13_728, "masked segmentation mask"),
)
