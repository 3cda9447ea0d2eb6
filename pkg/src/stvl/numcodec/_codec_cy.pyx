# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled codec kernels.

Scalar-loop versions of the bulk encode/decode used on hot paths. Must
stay numerically identical to ``_codec_np``: same power-of-ten table,
same operations in the same order.
"""

from libc.math cimport fabs, floor, log10, rint, isnan

import numpy as np

from stvl.errors import OutOfRangeError
from stvl.numcodec import _tables

cdef double ZERO_THRESHOLD = _tables.ZERO_THRESHOLD
cdef double MIN_ABS = _tables.MIN_ABS
cdef double MAX_ABS = _tables.MAX_ABS
cdef int OFF = _tables.POW10_OFFSET

cdef double[17] POW10
for _i in range(17):
    POW10[_i] = _tables.POW10[_i]


def encode_bulk(values, bint clamp):
    """See ``stvl.numcodec._codec_np.encode_bulk``."""
    cdef const double[::1] x = np.ascontiguousarray(values, dtype=np.float64).ravel()
    cdef Py_ssize_t n = x.shape[0]
    m_arr = np.zeros(n, dtype=np.int32)
    b_arr = np.zeros(n, dtype=np.int32)
    z_arr = np.zeros(n, dtype=np.uint8)
    cdef int[::1] m = m_arr
    cdef int[::1] b = b_arr
    cdef unsigned char[::1] z = z_arr
    cdef Py_ssize_t i
    cdef double v, ax
    cdef long long mm
    cdef int e

    for i in range(n):
        v = x[i]
        if isnan(v):
            raise ValueError(f"cannot encode NaN (first at index {i})")
        ax = fabs(v)
        if ax < ZERO_THRESHOLD:
            z[i] = 1
            continue
        if ax > MAX_ABS:
            if not clamp:
                raise OutOfRangeError(
                    f"|{v!r}| exceeds the representable maximum {MAX_ABS!r} (index {i})"
                )
            mm = 9999
            e = 5
        elif ax < MIN_ABS:
            mm = 10
            e = -4
        else:
            e = <int>floor(log10(ax))
            mm = <long long>rint(ax * POW10[OFF + 3 - e])
            if mm < 1000:
                e -= 1
                mm = <long long>rint(ax * POW10[OFF + 3 - e])
            elif mm >= 10000:
                e += 1
                mm = 1000
            while mm % 10 == 0 and mm >= 100:
                mm //= 10
        m[i] = <int>(-mm if v < 0.0 else mm)
        b[i] = e

    return m_arr, b_arr, z_arr.view(np.bool_)


def decode_bulk(mantissas, exponents, is_zero):
    """See ``stvl.numcodec._codec_np.decode_bulk``."""
    m_arr = np.ascontiguousarray(mantissas, dtype=np.int64).ravel()
    b_arr = np.ascontiguousarray(exponents, dtype=np.int64).ravel()
    z_arr = np.ascontiguousarray(is_zero, dtype=np.uint8).ravel()
    cdef const long long[::1] m = m_arr
    cdef const long long[::1] b = b_arr
    cdef const unsigned char[::1] z = z_arr
    cdef Py_ssize_t n = m.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    cdef long long am
    cdef int k, d

    for i in range(n):
        if z[i]:
            out[i] = 0.0
            continue
        am = -m[i] if m[i] < 0 else m[i]
        if am >= 1000:
            k = 3
        elif am >= 100:
            k = 2
        else:
            k = 1
        d = <int>b[i] - k
        if d >= 0:
            out[i] = (<double>m[i]) * POW10[OFF + d]
        else:
            out[i] = (<double>m[i]) / POW10[OFF - d]

    return out_arr
