"""Shared numeric constants for the codec backends.

Both backends must use bit-identical powers of ten so their outputs agree
exactly; the table is built once here and imported by each.
"""

import numpy as np

MANTISSA_MIN = 10
MANTISSA_MAX = 9999
EXP_MIN = -4
EXP_MAX = 5

N_MANTISSAS = 2 * (MANTISSA_MAX - MANTISSA_MIN + 1)  # 19,980
N_EXPONENTS = EXP_MAX - EXP_MIN + 1                  # 10
VOCAB_SIZE = N_MANTISSAS * N_EXPONENTS + 1           # 199,801 incl. the zero token
ZERO_ID = VOCAB_SIZE - 1

ZERO_THRESHOLD = 5e-5   # magnitudes below this encode to the zero token
MIN_ABS = 1e-4          # smallest non-zero representable magnitude
MAX_ABS = 999900.0      # largest representable magnitude (9.999e5)

POW10_OFFSET = 8
POW10 = np.array([10.0 ** k for k in range(-POW10_OFFSET, POW10_OFFSET + 1)])
# POW10[POW10_OFFSET + k] == 10.0**k for k in [-8, 8]
