import math

import pytest
from hypothesis import given, strategies as st

from semask.link import (
    DEFAULT_ELEVATIONS_M,
    FLOODNET_PAYLOADS,
    RESCUENET_PAYLOADS,
    LinkParams,
    Payload,
    achievable_rate,
    db_to_linear,
    dbm_to_watts,
    latency_table,
    snr,
    transmission_latency,
)

PAPER = LinkParams()  # defaults are the published constants, elevation 100 m


def hand_snr(elevation: float) -> float:
    # independent recomputation with explicit conversions
    num = 0.1 * 10 ** (-60 / 10) / (1e6 * 10 ** ((-174 - 30) / 10))
    d2 = (20 - elevation) ** 2 + (-2500 - 0) ** 2 + (0 - 1000) ** 2
    return num / d2


def test_conversions():
    assert db_to_linear(0) == 1.0
    assert db_to_linear(-60) == pytest.approx(1e-6)
    assert dbm_to_watts(30) == pytest.approx(1.0)
    assert dbm_to_watts(-174) == pytest.approx(10 ** (-20.4))


def test_snr_matches_hand_recomputation():
    assert snr(PAPER) == pytest.approx(hand_snr(100), rel=1e-12)
    assert snr(PAPER) == pytest.approx(3.4616, abs=2e-4)


def test_snr_linear_in_transmit_power():
    doubled = LinkParams(transmit_power_w=0.2)
    assert snr(doubled) == pytest.approx(2 * snr(PAPER), rel=1e-12)


def test_snr_at_unit_distance():
    num = 0.1 * 1e-6 / (1e6 * 10 ** (-20.4))
    params = LinkParams(
        station_elevation_m=0.0, uav_elevation_m=0.0,
        station_xy_m=(1.0, 0.0), uav_xy_m=(0.0, 0.0),
    )
    assert snr(params) == pytest.approx(num, rel=1e-12)


def test_zero_distance_rejected():
    with pytest.raises(ValueError):
        LinkParams(station_elevation_m=20.0, uav_elevation_m=20.0,
                   station_xy_m=(5.0, 5.0), uav_xy_m=(5.0, 5.0))


def test_achievable_rate_paper_point():
    rate = achievable_rate(PAPER)
    assert rate == pytest.approx(1e6 * math.log2(1 + hand_snr(100)), rel=1e-12)
    assert rate == pytest.approx(2.1577e6, rel=1e-3)


def test_rate_vanishes_with_power():
    tiny = LinkParams(transmit_power_w=1e-30)
    assert achievable_rate(tiny) < 1e-3


def test_rate_equals_bandwidth_at_unit_snr():
    # position the platform so the squared distance equals the SNR numerator
    num = 0.1 * 1e-6 / (1e6 * 10 ** (-20.4))
    params = LinkParams(
        station_elevation_m=0.0, uav_elevation_m=0.0,
        station_xy_m=(math.sqrt(num), 0.0), uav_xy_m=(0.0, 0.0),
    )
    assert snr(params) == pytest.approx(1.0, rel=1e-12)
    assert achievable_rate(params) == pytest.approx(1e6, rel=1e-12)


def test_transmission_latency_values():
    assert transmission_latency(Payload(14_441), PAPER) * 1e3 == pytest.approx(6.692, abs=0.01)
    assert transmission_latency(Payload(0), PAPER) == 0.0
    assert transmission_latency(14_441, PAPER) == 14_441 / achievable_rate(PAPER)


# Latency cells as printed in the published comparison tables (milliseconds,
# elevations 100/150/200/250 m).
TABLE_FLOODNET = {
    14_441: (6.692, 6.698, 6.704, 6.717),
    7_004: (3.246, 3.249, 3.251, 3.258),
    2_119: (0.982, 0.983, 0.984, 0.986),
    1_945: (0.901, 0.902, 0.903, 0.905),
}
TABLE_RESCUENET = {
    177_780: (82.384, 82.460, 82.537, 82.690),
    19_373: (8.973, 8.986, 8.994, 9.011),
    27_559: (12.770, 12.782, 12.794, 12.818),
    13_728: (6.361, 6.367, 6.373, 6.385),
}


@pytest.mark.parametrize("payloads,table", [
    (FLOODNET_PAYLOADS, TABLE_FLOODNET),
    (RESCUENET_PAYLOADS, TABLE_RESCUENET),
])
def test_latency_table_reproduces_published_cells(payloads, table):
    result = latency_table(list(payloads), PAPER)
    assert result.elevations_m == DEFAULT_ELEVATIONS_M
    for row in result.rows:
        expected = table[row.size_bits]
        for got_s, want_ms in zip(row.latency_s, expected):
            assert got_s * 1e3 == pytest.approx(want_ms, abs=0.01)


def test_latency_table_single_cell_composition():
    table = latency_table([Payload(5000)], PAPER, elevations_m=(100.0,),
                          rate_quantization_bps=None)
    assert table.rows[0].latency_s == (transmission_latency(5000, PAPER),)


def test_latency_table_rejects_empty():
    with pytest.raises(ValueError):
        latency_table([], PAPER)
    with pytest.raises(ValueError):
        latency_table([Payload(1)], PAPER, elevations_m=())


@given(bits=st.integers(min_value=1, max_value=10**9),
       extra=st.integers(min_value=1, max_value=10**6))
def test_latency_monotone_in_payload(bits, extra):
    assert transmission_latency(bits + extra, PAPER) > transmission_latency(bits, PAPER)


@given(elev=st.floats(min_value=100, max_value=5000),
       higher=st.floats(min_value=1, max_value=5000))
def test_latency_monotone_in_distance(elev, higher):
    near = PAPER.at_elevation(elev)
    far = PAPER.at_elevation(elev + higher)
    assert far.squared_distance_m2() > near.squared_distance_m2()
    assert transmission_latency(10_000, far) > transmission_latency(10_000, near)


@given(power=st.floats(min_value=1e-3, max_value=10),
       factor=st.floats(min_value=1.01, max_value=100))
def test_rate_monotone_in_power_and_gain(power, factor):
    base = LinkParams(transmit_power_w=power)
    assert achievable_rate(LinkParams(transmit_power_w=power * factor)) > achievable_rate(base)
    assert achievable_rate(LinkParams(transmit_power_w=power, reference_gain_db=-50)) > \
        achievable_rate(LinkParams(transmit_power_w=power, reference_gain_db=-60))
