import itertools

import numpy as np
import pytest

from flowcodec.entropy import gmm
from flowcodec.entropy.range_coder import (
    RangeCoderError,
    RangeDecoder,
    RangeEncoder,
    decode_symbols,
    encode_symbols,
)

# ---------------------------------------------------------------------------
# range coder
# ---------------------------------------------------------------------------


def test_empty_sequence_flush_only():
    payload = encode_symbols([], np.array([0, 1, 2], np.uint32))
    assert len(payload) == 4
    assert decode_symbols(payload, np.array([0, 1, 2], np.uint32), 0) == []


def test_uniform_binary_entropy_bound():
    cum = np.array([0, 32768, 65536], np.uint32)
    symbols = [i % 2 for i in range(800)]
    payload = encode_symbols(symbols, cum)
    assert abs(len(payload) - 100) <= 6
    assert decode_symbols(payload, cum, 800) == symbols


def test_exhaustive_three_symbol_sequences():
    # brute-force enumeration oracle: every sequence of length <= 8 round-trips
    cum = np.array([0, 10, 30, 65536], np.uint32)
    for n in range(0, 9):
        for seq in itertools.product(range(3), repeat=n):
            payload = encode_symbols(seq, cum)
            assert decode_symbols(payload, cum, n) == list(seq)


def test_random_tables_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n_sym = int(rng.integers(2, 40))
        freqs = rng.integers(1, 2000, size=n_sym)
        cum = np.concatenate([[0], np.cumsum(freqs)]).astype(np.uint32)
        length = int(rng.integers(0, 300))
        symbols = rng.integers(0, n_sym, size=length).tolist()
        payload = encode_symbols(symbols, cum)
        assert decode_symbols(payload, cum, length) == symbols


def test_skewed_distribution_compresses():
    cum = np.array([0, 65535, 65536], np.uint32)
    payload = encode_symbols([0] * 5000, cum)
    assert len(payload) < 20


def test_total_above_limit_rejected():
    enc = RangeEncoder()
    with pytest.raises(RangeCoderError):
        enc.encode(0, 1, 1 << 17)


def test_rate_estimate_consistency_with_actual_payload():
    # 10^4 symbols drawn from the model itself
    rng = np.random.default_rng(1)
    probs = np.array([0.5, 0.2, 0.15, 0.1, 0.05])
    freqs = np.round(probs * 65536).astype(np.int64)
    freqs[-1] = 65536 - freqs[:-1].sum()
    cum = np.concatenate([[0], np.cumsum(freqs)]).astype(np.uint32)
    symbols = rng.choice(5, size=10_000, p=probs).tolist()
    payload = encode_symbols(symbols, cum)
    estimate = gmm.estimate_rate(probs[symbols])
    actual_bits = 8 * len(payload)
    assert abs(estimate - actual_bits) / estimate < 0.01


# ---------------------------------------------------------------------------
# gmm probabilities
# ---------------------------------------------------------------------------


def test_wide_gaussian_density_value():
    # numeric CDF oracle at sigma=100
    p = gmm.gmm_interval_prob(0, [1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [100.0, 1.0, 1.0])
    assert p == pytest.approx(0.00398942, abs=1e-6)


def test_symmetry_around_zero_mean():
    w, mu, sd = [0.2, 0.5, 0.3], [0.0, 0.0, 0.0], [0.5, 1.0, 2.0]
    for s in range(0, 6):
        assert gmm.gmm_interval_prob(s, w, mu, sd) == pytest.approx(
            gmm.gmm_interval_prob(-s, w, mu, sd), rel=1e-12
        )


def test_interval_probs_telescope_to_one():
    s = np.arange(-1000, 1001)
    p = gmm.gmm_interval_prob(s, [1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
    assert abs(p.sum() - 1.0) < 1e-9


def test_estimate_rate_spot_values():
    assert gmm.estimate_rate([0.5]) == pytest.approx(1.0)
    assert gmm.estimate_rate([0.125]) == pytest.approx(3.0)
    # floor applies
    assert gmm.estimate_rate([1e-30]) == pytest.approx(15.0)


def test_build_cumulative_invariants():
    rng = np.random.default_rng(2)
    for _ in range(50):
        mu = rng.normal(0, 5, size=3)
        sd = rng.uniform(0.1, 10, size=3)
        w = rng.dirichlet(np.ones(3))
        probs = gmm.support_probs(w, mu, sd)
        cum = gmm.build_cumulative(probs)
        assert cum[0] == 0 and cum[-1] == gmm.TABLE_TOTAL
        assert (np.diff(cum) >= 1).all()


def test_escape_round_trip_boundaries_and_outliers():
    probs = gmm.support_probs([1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [3.0, 1.0, 1.0])
    cum = gmm.build_cumulative(probs)
    values = [0, 1, -5, 127, 128, -127, 200, -500, 128 + 0xFFFF]
    enc = RangeEncoder()
    for v in values:
        gmm.encode_value(enc, v, cum)
    payload = enc.finish()
    dec = RangeDecoder(payload)
    out = [gmm.decode_value(dec, cum) for _ in values]
    assert out == values


def test_escape_rejects_unencodable():
    probs = gmm.support_probs([1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [1.0, 1.0, 1.0])
    cum = gmm.build_cumulative(probs)
    enc = RangeEncoder()
    with pytest.raises(ValueError, match="codable"):
        gmm.encode_value(enc, 10**6, cum)


# ---------------------------------------------------------------------------
# factorized density
# ---------------------------------------------------------------------------


def test_factorized_likelihood_and_tables_agree():
    from flowcodec.entropy.factorized import FactorizedDensity
    from flowcodec.nn.tensor import Tensor

    d = FactorizedDensity(4)
    d.mean.data[:] = np.array([0.0, 1.0, -2.0, 0.5]).reshape(1, 4, 1, 1)
    values = np.zeros((1, 4, 1, 1), np.float32)
    lik = d.likelihood(Tensor(values)).data.reshape(-1)
    tables = d.channel_tables()
    for c in range(4):
        idx = 0 - gmm.SUPPORT_MIN
        table_p = (tables[c][idx + 1] - tables[c][idx]) / gmm.TABLE_TOTAL
        assert table_p == pytest.approx(lik[c], rel=5e-3, abs=1e-4)


def test_factorized_gradcheck():
    from flowcodec.entropy.factorized import FactorizedDensity
    from flowcodec.nn import functional as F
    from flowcodec.nn.tensor import Tensor

    from gradcheck import numeric_grad

    rng = np.random.default_rng(3)
    d = FactorizedDensity(2, dtype=np.float64)
    x = Tensor(rng.normal(size=(1, 2, 3, 3)), requires_grad=True)

    def loss(x_, mean, scale_raw):
        d.mean, d.scale_raw = mean, scale_raw
        p = F.clamp_min(d.likelihood(x_), gmm.P_MIN)
        bits = F.mul_scalar(F.log(p), -1.0 / np.log(2.0))
        return F.sum_all(bits)

    mean = Tensor(rng.normal(size=(1, 2, 1, 1)), requires_grad=True)
    scale_raw = Tensor(rng.normal(0.5, 0.2, size=(1, 2, 1, 1)), requires_grad=True)
    assert numeric_grad(loss, [x, mean, scale_raw], rng=rng) < 1e-4
