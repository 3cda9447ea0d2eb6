"""Pure-NumPy codec kernels.

Fallback backend used when the compiled extension is unavailable. The two
backends must stay bit-identical: any arithmetic change here has to be
mirrored in ``_codec_cy.pyx``.
"""

from __future__ import annotations

import numpy as np

from stvl.errors import OutOfRangeError
from stvl.numcodec._tables import (
    MAX_ABS,
    MIN_ABS,
    POW10,
    POW10_OFFSET,
    ZERO_THRESHOLD,
)


def encode_bulk(values, clamp):
    """Quantize an array of reals to (mantissa, exponent, is_zero) arrays.

    Rounds to four significant decimal digits (ties to even), strips
    trailing zeros from the mantissa down to two digits, and maps
    magnitudes below the zero threshold to the zero token. With
    ``clamp=False`` an over-range magnitude raises ``OutOfRangeError``;
    with ``clamp=True`` it saturates at the largest token.
    """
    x = np.ascontiguousarray(values, dtype=np.float64)
    nan = np.isnan(x)
    if nan.any():
        raise ValueError(f"cannot encode NaN (first at index {int(nan.argmax())})")

    ax = np.abs(x)
    zero = ax < ZERO_THRESHOLD
    over = ax > MAX_ABS
    if over.any() and not clamp:
        i = int(over.argmax())
        raise OutOfRangeError(
            f"|{x[i]!r}| exceeds the representable maximum {MAX_ABS!r} (index {i})"
        )

    m = np.zeros(x.shape, dtype=np.int64)
    b = np.zeros(x.shape, dtype=np.int64)

    tiny = ~zero & (ax < MIN_ABS)  # nearest token is the smallest magnitude
    m[tiny] = 10
    b[tiny] = -4
    m[over] = 9999
    b[over] = 5

    reg = ~zero & ~tiny & ~over
    if reg.any():
        axr = ax[reg]
        e = np.floor(np.log10(axr)).astype(np.int64)
        mm = np.rint(axr * POW10[POW10_OFFSET + 3 - e]).astype(np.int64)
        low = mm < 1000  # floor(log10) overshot by one decade
        if low.any():
            e[low] -= 1
            mm[low] = np.rint(axr[low] * POW10[POW10_OFFSET + 3 - e[low]]).astype(np.int64)
        high = mm >= 10000  # rounding carried into the next decade
        e[high] += 1
        mm[high] = 1000
        for _ in range(2):  # 4-digit mantissa loses at most two trailing zeros
            s = (mm % 10 == 0) & (mm >= 100)
            mm[s] //= 10
        m[reg] = mm
        b[reg] = e

    m[x < 0.0] *= -1
    m[zero] = 0
    b[zero] = 0
    return m.astype(np.int32), b.astype(np.int32), zero


def decode_bulk(mantissas, exponents, is_zero):
    """Map (mantissa, exponent, is_zero) arrays back to float64 values.

    Computed as a single integer ratio ``m * 10**(b-k)`` with
    ``k = floor(log10 |m|)`` so decimal values that fit a double exactly
    (e.g. 114.0) come back exact, and alias mantissas (10/100/1000)
    decode to identical doubles.
    """
    m = np.asarray(mantissas, dtype=np.int64)
    b = np.asarray(exponents, dtype=np.int64)
    z = np.asarray(is_zero, dtype=bool)

    am = np.abs(m)
    k = np.where(am >= 1000, 3, np.where(am >= 100, 2, 1))
    d = b - k
    mf = m.astype(np.float64)

    out = np.empty(m.shape, dtype=np.float64)
    pos = d >= 0
    out[pos] = mf[pos] * POW10[POW10_OFFSET + d[pos]]
    neg = ~pos
    out[neg] = mf[neg] / POW10[POW10_OFFSET - d[neg]]
    out[z] = 0.0
    return out
