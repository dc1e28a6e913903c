import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from snic import entropy as E


def random_table(rng, channels=3, max_k=40):
    offsets, cdfs = [], []
    for _ in range(channels):
        k = int(rng.integers(1, max_k))
        pmf = rng.dirichlet(np.full(k + 1, 0.3))
        cdf = np.concatenate([[0], np.cumsum(E.quantize_pmf(pmf))])
        offsets.append(int(rng.integers(-20, 5)))
        cdfs.append(tuple(int(v) for v in cdf))
    return E.CdfTable(tuple(offsets), tuple(cdfs))


def random_symbols(rng, table, n):
    channels = rng.integers(0, table.num_channels, n)
    out = []
    for c in channels:
        lo, hi = table.support(int(c))
        if rng.random() < 0.05:
            out.append(int(rng.integers(-E.RAW_OFFSET, E.RAW_OFFSET)))  # escape path, usually
        else:
            out.append(int(rng.integers(lo, hi + 1)))
    return np.array(out), channels


def test_quantize_pmf_sums_and_floor():
    f = E.quantize_pmf(np.array([0.5, 0.5 - 1e-9, 1e-9]))
    assert f.sum() == E.TOTAL and f.min() >= 1


def test_quantize_pmf_hand_example():
    # spare = 2^16 - 4; floor(p * spare) + 1, remainder to the mode
    # spare = 2^16 - 4, so floor(0.25 * spare) + 1 = 16384 with nothing left over
    assert E.quantize_pmf(np.full(4, 0.25)).tolist() == [16384] * 4
    # [0.9, 0.1]: floor(0.9 * 65534) + 1 = 58981, floor(0.1 * 65534) + 1 = 6554, +1 to the mode
    assert E.quantize_pmf(np.array([0.9, 0.1])).tolist() == [58982, 6554]


def test_logistic_pmf_matches_cdf_difference():
    v = np.arange(-30, 31)
    mu, s = 0.37, 2.5
    cdf = lambda t: 1.0 / (1.0 + np.exp(-(t - mu) / s))
    np.testing.assert_allclose(E.logistic_pmf(v, mu, s), cdf(v + 0.5) - cdf(v - 0.5), rtol=1e-9, atol=1e-300)


def test_channel_cdf_tail_mass_bound():
    mu, s = -1.3, 0.8
    lo, cdf = E.channel_cdf(mu, s)
    k = len(cdf) - 2
    covered = E.logistic_pmf(np.arange(lo, lo + k), mu, s).sum()
    assert 1.0 - covered <= E.TAIL_MASS
    assert cdf[0] == 0 and cdf[-1] == E.TOTAL
    assert all(b > a for a, b in zip(cdf, cdf[1:]))


@pytest.mark.parametrize("scale", [0.0, -1.0, math.nan, 1e6])
def test_channel_cdf_rejects_degenerate(scale):
    with pytest.raises(ValueError):
        E.channel_cdf(0.0, scale)


def test_round_trip_randomized(rng):
    for _ in range(300):
        table = random_table(rng)
        n = int(rng.integers(0, 60))
        sym, ch = random_symbols(rng, table, n)
        data = E.encode_symbols(sym, ch, table)
        np.testing.assert_array_equal(E.decode_symbols(data, n, ch, table), sym)
        assert 8 * len(data) <= E.cross_entropy_bits(sym, ch, table) + 32


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-40, 40), max_size=80), st.integers(0, 2 ** 31 - 1))
def test_round_trip_property(values, seed):
    rng = np.random.default_rng(seed)
    table = random_table(rng, channels=2)
    ch = rng.integers(0, 2, len(values))
    data = E.encode_symbols(values, ch, table)
    assert E.decode_symbols(data, len(values), ch, table).tolist() == values
    assert 8 * len(data) <= E.cross_entropy_bits(values, ch, table) + 32


def test_empty_stream():
    table = random_table(np.random.default_rng(0))
    data = E.encode_symbols([], [], table)
    assert len(data) <= 4
    assert E.decode_symbols(data, 0, [], table).size == 0


def test_escape_extremes():
    table = random_table(np.random.default_rng(1), channels=1)
    v = [-E.RAW_OFFSET, E.RAW_OFFSET - 1, 0]
    data = E.encode_symbols(v, [0, 0, 0], table)
    assert E.decode_symbols(data, 3, [0, 0, 0], table).tolist() == v
    with pytest.raises(ValueError):
        E.encode_symbols([E.RAW_OFFSET], [0], table)


def test_truncation_never_silent(rng):
    # the coder alone flags most truncations; the rest decode to different symbols
    table = random_table(rng, channels=1, max_k=6)
    hits = 0
    for _ in range(50):
        sym, ch = random_symbols(rng, table, 200)
        data = E.encode_symbols(sym, ch, table)
        try:
            out = E.decode_symbols(data[:-1], len(sym), ch, table)
        except E.BitstreamError:
            hits += 1
        else:
            assert not np.array_equal(out, sym)
    assert hits >= 40


def test_extra_bytes_detected(rng):
    table = random_table(rng, channels=1)
    sym, ch = random_symbols(rng, table, 50)
    data = E.encode_symbols(sym, ch, table)
    with pytest.raises(E.BitstreamError):
        E.decode_symbols(data + b"\x00\x00", len(sym), ch, table)


def _header():
    return E.Header(bytes(range(32)), 30, 40, 3, 32, 48, 8, 2, 3)


def test_container_round_trip():
    blob = E.pack(_header(), b"abc")
    header, payload = E.unpack(blob)
    assert header == _header() and payload == b"abc"
    assert len(blob) == E.HEADER_SIZE + 3
    assert E.payload_bpp(blob) == 8 * 3 / (30 * 40)


def test_container_errors():
    blob = E.pack(_header(), b"abc")
    with pytest.raises(E.BitstreamError, match="magic"):
        E.unpack(b"XXXX" + blob[4:])
    with pytest.raises(E.BitstreamError, match="version"):
        E.unpack(blob[:4] + b"\x09\x00" + blob[6:])
    with pytest.raises(E.BitstreamError, match="length"):
        E.unpack(blob[:-1])
    with pytest.raises(E.BitstreamError):
        E.unpack(blob[:10])


def test_unit_logistic_table_symmetric():
    lo, cdf = E.channel_cdf(0.0, 1.0)
    freq = np.diff(cdf)[:-1]  # drop the escape
    k = len(freq)
    assert lo == -(k // 2)
    assert np.all(np.abs(freq - freq[::-1]) <= 1)
    assert E.channel_cdf(0.0, 1.0) == (lo, cdf)


def test_peaked_repeat_is_cheap():
    table = E.CdfTable((0,), (tuple(int(v) for v in np.concatenate([[0], np.cumsum(E.quantize_pmf(np.array([0.999, 0.0005, 0.0005])))])),))
    data = E.encode_symbols([0] * 1000, [0] * 1000, table)
    assert 8 * len(data) < 100
    assert 8 * len(data) <= E.cross_entropy_bits([0] * 1000, [0] * 1000, table) + 32


def test_build_cdf_is_deterministic_and_floored():
    class Prior:
        def entropy_params(self):
            return np.array([0.0, 1.7, -3.2]), np.array([1.0, 0.2, 6.0])

    a, b = E.build_cdf(Prior()), E.build_cdf(Prior())
    assert a == b
    for cdf in a.cdfs:
        assert min(np.diff(cdf)) >= 1
