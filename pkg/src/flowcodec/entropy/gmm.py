"""Gaussian-mixture (K=3) symbol probabilities, rate estimates and tables.

Integer symbols are modelled by the probability mass a mixture of three
Gaussians assigns to the unit interval around each integer. The same
float64 evaluation feeds both the differentiable rate estimate used in
training and the 16-bit cumulative tables driving the range coder, so the
encoder and decoder always derive identical tables.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtr

K_COMPONENTS = 3
SIGMA_MIN = 1e-3
P_MIN = 2.0**-15

# coded symbol support; outliers escape through the boundary symbols
SUPPORT_MIN = -127
SUPPORT_MAX = 128
N_SYMBOLS = SUPPORT_MAX - SUPPORT_MIN + 1  # 256

TABLE_TOTAL = 1 << 16
_TABLE_SPREAD = TABLE_TOTAL - N_SYMBOLS

_RAW_TOTAL = 256
RAW_CUM = np.arange(_RAW_TOTAL + 1, dtype=np.uint32)


def gmm_interval_prob(symbol, weights, means, scales):
    """Mass on [symbol-0.5, symbol+0.5) under the mixture; broadcasts.

    ``weights``/``means``/``scales`` carry the component axis last.
    """
    s = np.asarray(symbol, dtype=np.float64)[..., None]
    w = np.asarray(weights, dtype=np.float64)
    mu = np.asarray(means, dtype=np.float64)
    sd = np.asarray(scales, dtype=np.float64)
    upper = ndtr((s + 0.5 - mu) / sd)
    lower = ndtr((s - 0.5 - mu) / sd)
    return np.sum(w * (upper - lower), axis=-1)


def estimate_rate(probs) -> float:
    """Bits needed at the model's own probabilities, floored at P_MIN."""
    p = np.maximum(np.asarray(probs, dtype=np.float64), P_MIN)
    return float(-np.log2(p).sum())


def support_probs(weights, means, scales) -> np.ndarray:
    """Interval mass for every symbol in the coded support; shape (..., 256)."""
    s = np.arange(SUPPORT_MIN, SUPPORT_MAX + 1, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)[..., None, :]
    mu = np.asarray(means, dtype=np.float64)[..., None, :]
    sd = np.asarray(scales, dtype=np.float64)[..., None, :]
    edges = s[:, None]
    upper = ndtr((edges + 0.5 - mu) / sd)
    lower = ndtr((edges - 0.5 - mu) / sd)
    return np.sum(w * (upper - lower), axis=-1)


def build_cumulative(probs: np.ndarray) -> np.ndarray:
    """16-bit cumulative table with a floor of one count per symbol.

    Built from float64 probabilities by flooring the scaled CDF and adding
    the symbol index; strictly increasing, cum[-1] == 2**16 exactly.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1:
        raise ValueError(f"build_cumulative expects a 1-D probability vector, got {p.shape}")
    total = p.sum()
    if not np.isfinite(total) or total <= 0:
        raise ValueError("probabilities must sum to a positive finite value")
    cdf = np.concatenate([[0.0], np.cumsum(p)]) / total
    cum = np.floor(cdf * _TABLE_SPREAD).astype(np.uint32) + np.arange(p.size + 1, dtype=np.uint32)
    cum[-1] = TABLE_TOTAL
    return cum


def clip_to_support(symbol: int) -> tuple[int, int | None]:
    """Map an integer to (coded symbol index, escape remainder or None).

    Boundary symbols always carry a remainder (possibly zero) so the
    decoder knows unconditionally to read it after a boundary index.
    """
    if symbol >= SUPPORT_MAX:
        remainder = symbol - SUPPORT_MAX
        if remainder > 0xFFFF:
            raise ValueError(f"symbol {symbol} outside the codable range")
        return N_SYMBOLS - 1, remainder
    if symbol <= SUPPORT_MIN:
        remainder = SUPPORT_MIN - symbol
        if remainder > 0xFFFF:
            raise ValueError(f"symbol {symbol} outside the codable range")
        return 0, remainder
    return symbol - SUPPORT_MIN, None


def symbol_from_index(index: int) -> int:
    return index + SUPPORT_MIN


def encode_value(encoder, value: int, cum: np.ndarray) -> None:
    """Range-encode one integer with boundary escape for outliers."""
    idx, remainder = clip_to_support(value)
    encoder.encode(int(cum[idx]), int(cum[idx + 1]), int(cum[-1]))
    if remainder is not None:
        for byte in remainder.to_bytes(2, "big"):
            encoder.encode(int(RAW_CUM[byte]), int(RAW_CUM[byte + 1]), _RAW_TOTAL)


def decode_value(decoder, cum: np.ndarray) -> int:
    idx = _decode_index(decoder, cum)
    value = symbol_from_index(idx)
    if idx in (0, N_SYMBOLS - 1):
        remainder = 0
        for _ in range(2):
            b = _decode_index(decoder, RAW_CUM)
            remainder = (remainder << 8) | b
        if remainder:
            value = value + remainder if idx == N_SYMBOLS - 1 else value - remainder
    return value


def _decode_index(decoder, cum: np.ndarray) -> int:
    target = decoder.decode_target(int(cum[-1]))
    idx = int(np.searchsorted(cum, target, side="right")) - 1
    decoder.advance(int(cum[idx]), int(cum[idx + 1]), int(cum[-1]))
    return idx
