#!/usr/bin/env python3
"""Print the transmission-latency matrices for the published payload sets."""

import argparse

from semask.link import (
    FLOODNET_PAYLOADS,
    RESCUENET_PAYLOADS,
    LinkParams,
    latency_table,
)


def show(name, payloads, params, quantize):
    table = latency_table(list(payloads), params, rate_quantization_bps=quantize)
    print(f"\n{name} (elevations {[int(e) for e in table.elevations_m]} m)")
    for row in table.rows:
        cells = "  ".join(f"{1e3 * v:8.3f}" for v in row.latency_s)
        print(f"  {row.description:28s} {row.size_bits:8d} bits  {cells} ms")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--exact-rate", action="store_true",
                    help="use the exact achievable rate instead of kb/s granularity")
    args = ap.parse_args()
    params = LinkParams()
    quantize = None if args.exact_rate else 1000.0
    show("Flood-survey payloads", FLOODNET_PAYLOADS, params, quantize)
    show("Damage-survey payloads", RESCUENET_PAYLOADS, params, quantize)


if __name__ == "__main__":
    main()
