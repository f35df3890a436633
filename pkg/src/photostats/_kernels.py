"""Compiled inner loops for power-sum accumulation.

Both kernels add into ``out`` (length 6) and return -1 on success, or the
index of the first non-finite sample. Samples are summed in fixed-size
blocks whose partial sums are folded into ``out``; this keeps rounding error
low and makes block-aligned chunking reproduce the serial result.
"""
import numba
import numpy as np

BLOCK = 4096


@numba.njit(cache=True, nogil=True)
def power_sums_kernel(x, shift, out):
    n = x.size
    for start in range(0, n, BLOCK):
        stop = min(start + BLOCK, n)
        t1 = t2 = t3 = t4 = t5 = t6 = 0.0
        for i in range(start, stop):
            v = x[i] - shift
            if not np.isfinite(v):
                return i
            v2 = v * v
            v4 = v2 * v2
            t1 += v
            t2 += v2
            t3 += v2 * v
            t4 += v4
            t5 += v4 * v
            t6 += v4 * v2
        out[0] += t1
        out[1] += t2
        out[2] += t3
        out[3] += t4
        out[4] += t5
        out[5] += t6
    return -1


@numba.njit(cache=True, nogil=True)
def power_sums_kernel_compensated(x, shift, out, comp):
    # Neumaier summation of block partials; ``comp`` carries the running
    # compensation terms between calls.
    n = x.size
    part = np.zeros(6)
    for start in range(0, n, BLOCK):
        stop = min(start + BLOCK, n)
        for k in range(6):
            part[k] = 0.0
        for i in range(start, stop):
            v = x[i] - shift
            if not np.isfinite(v):
                return i
            v2 = v * v
            v4 = v2 * v2
            part[0] += v
            part[1] += v2
            part[2] += v2 * v
            part[3] += v4
            part[4] += v4 * v
            part[5] += v4 * v2
        for k in range(6):
            s = out[k]
            t = s + part[k]
            if abs(s) >= abs(part[k]):
                comp[k] += (s - t) + part[k]
            else:
                comp[k] += (part[k] - t) + s
            out[k] = t
    return -1
