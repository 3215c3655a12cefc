# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled backend: bit-for-bit twin of attnlab._pure.

Every routine reproduces the numpy backend's exact IEEE operation sequence;
the build disables FP contraction so the C compiler cannot fuse multiplies
and adds into FMAs. See _pure.py for the semantics each function pins down.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, NAN, frexp, ldexp, rint, sqrt
from libc.stdint cimport int64_t, uint32_t, uint64_t
from libc.string cimport memcpy

cnp.import_array()

NAME = "native"


# ---------------------------------------------------------------------------
# bit helpers

cdef inline uint64_t d2u(double x) noexcept nogil:
    cdef uint64_t u
    memcpy(&u, &x, 8)
    return u


cdef inline double u2d(uint64_t u) noexcept nogil:
    cdef double x
    memcpy(&x, &u, 8)
    return x


# ---------------------------------------------------------------------------
# quantization

cdef inline double q_scalar(double x, int mbits, int64_t te, int64_t te_max) noexcept nogil:
    cdef uint64_t u = d2u(x)
    cdef uint64_t sign = u & 0x8000000000000000ULL
    cdef uint64_t a = u & 0x7FFFFFFFFFFFFFFFULL
    cdef int64_t ef = <int64_t>(a >> 52)
    cdef int s = 52 - mbits
    cdef uint64_t keep_lsb, mask
    cdef int k
    cdef double scaled, rounded

    if a >= 0x7FF0000000000000ULL or a == 0:
        return x
    if ef >= te:
        if s > 0:
            keep_lsb = (a >> s) & 1ULL
            a = a + keep_lsb + ((1ULL << (s - 1)) - 1ULL)
            a &= ~((1ULL << s) - 1ULL)
        if <int64_t>(a >> 52) > te_max:
            a = 0x7FF0000000000000ULL
        return u2d(sign | a)
    # subnormal range of the target: scale so the quantum becomes 1, round
    k = mbits - (<int>te - 1023)
    scaled = ldexp(x if x >= 0 else -x, k)
    rounded = ldexp(rint(scaled), -k)
    return u2d(sign | d2u(rounded))


def quantize_array(object x, int mbits, int64_t te, int64_t te_max):
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i, n = flat.shape[0]
    with nogil:
        for i in range(n):
            out[i] = q_scalar(flat[i], mbits, te, te_max)
    return out.reshape(np.shape(x))


# ---------------------------------------------------------------------------
# deterministic exp / log (same op sequence as _pure)

cdef double _EXP_P1 = 1.66666666666666019037e-01
cdef double _EXP_P2 = -2.77777777770155933842e-03
cdef double _EXP_P3 = 6.61375632143793436117e-05
cdef double _EXP_P4 = -1.65339022054652515390e-06
cdef double _EXP_P5 = 4.13813679705723846039e-08
cdef double _LN2_HI = 6.93147180369123816490e-01
cdef double _LN2_LO = 1.90821492927058770002e-10
cdef double _INV_LN2 = 1.44269504088896338700e+00
cdef double _EXP_OVF = 7.09782712893383973096e+02
cdef double _EXP_UDF = -7.45133219101941108420e+02


cdef double det_exp(double x) noexcept nogil:
    cdef uint64_t u = d2u(x)
    cdef int64_t hx = <int64_t>((u >> 32) & 0x7FFFFFFFULL)
    cdef bint xsb = (u >> 63) != 0
    cdef double hi = 0.0, lo = 0.0, t, c, y, xr
    cdef int64_t k = 0

    if x != x:
        return x
    if x > _EXP_OVF:
        return INFINITY
    if x < _EXP_UDF:
        return 0.0

    if hx > 0x3FD62E42:
        if hx < 0x3FF0A2B2:
            if xsb:
                hi = x + _LN2_HI
                lo = -_LN2_LO
                k = -1
            else:
                hi = x - _LN2_HI
                lo = _LN2_LO
                k = 1
        else:
            k = <int64_t>(_INV_LN2 * x + (-0.5 if xsb else 0.5))
            t = <double>k
            hi = x - t * _LN2_HI
            lo = t * _LN2_LO
        xr = hi - lo
    elif hx < 0x3E300000:
        return 1.0 + x
    else:
        k = 0
        xr = x

    t = xr * xr
    c = xr - t * (_EXP_P1 + t * (_EXP_P2 + t * (_EXP_P3 + t * (_EXP_P4 + t * _EXP_P5))))
    if k == 0:
        return 1.0 - ((xr * c) / (c - 2.0) - xr)
    y = 1.0 - ((lo - (xr * c) / (2.0 - c)) - hi)
    return ldexp(y, <int>k)


def exp_array(object x):
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i, n = flat.shape[0]
    with nogil:
        for i in range(n):
            out[i] = det_exp(flat[i])
    return out.reshape(np.shape(x))


cdef double _LG1 = 6.666666666666735130e-01
cdef double _LG2 = 3.999999999940941908e-01
cdef double _LG3 = 2.857142874366239149e-01
cdef double _LG4 = 2.222219843214978396e-01
cdef double _LG5 = 1.818357216161805012e-01
cdef double _LG6 = 1.531383769920937332e-01
cdef double _LG7 = 1.479819860511658591e-01


cdef double det_log(double x) noexcept nogil:
    cdef uint64_t u
    cdef int64_t hxw, hxm, k, i1, i2, j2
    cdef double xs, xn, f, s, z, w, t1, t2, r, hfsq, dk, rt

    if x != x or x < 0.0:
        return NAN
    if x == 0.0:
        return -INFINITY
    if x == INFINITY:
        return INFINITY

    k = 0
    xs = x
    if xs < 2.2250738585072014e-308:
        xs = xs * 1.8014398509481984e+16  # 2^54, exact
        k = -54
    u = d2u(xs)
    hxw = <int64_t>(u >> 32)
    k += (hxw >> 20) - 1023
    hxm = hxw & 0xFFFFF
    i1 = (hxm + 0x95F64) & 0x100000
    u = (<uint64_t>(hxm | (i1 ^ 0x3FF00000)) << 32) | (u & 0xFFFFFFFFULL)
    xn = u2d(u)
    k += i1 >> 20
    dk = <double>k

    f = xn - 1.0
    if ((hxm + 2) & 0xFFFFF) < 3:
        if f == 0.0:
            if k == 0:
                return 0.0
            return dk * _LN2_HI + dk * _LN2_LO
        rt = f * f * (0.5 - 0.33333333333333333 * f)
        if k == 0:
            return f - rt
        return dk * _LN2_HI - ((rt - dk * _LN2_LO) - f)

    s = f / (2.0 + f)
    z = s * s
    w = z * z
    t1 = w * (_LG2 + w * (_LG4 + w * _LG6))
    t2 = z * (_LG1 + w * (_LG3 + w * (_LG5 + w * _LG7)))
    r = t2 + t1
    hfsq = 0.5 * f * f
    i2 = hxm - 0x6147A
    j2 = 0x6B851 - hxm
    if (i2 | j2) > 0:
        if k == 0:
            return f - (hfsq - s * (hfsq + r))
        return dk * _LN2_HI - ((hfsq - (s * (hfsq + r) + dk * _LN2_LO)) - f)
    else:
        if k == 0:
            return f - s * (f - r)
        return dk * _LN2_HI - ((s * (f - r) - dk * _LN2_LO) - f)


def log_array(object x):
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(x, dtype=np.float64).reshape(-1)
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i, n = flat.shape[0]
    with nogil:
        for i in range(n):
            out[i] = det_log(flat[i])
    return out.reshape(np.shape(x))


# ---------------------------------------------------------------------------
# Philox4x32-10 + AS241

cdef inline void philox_block(uint64_t block, uint64_t stream, uint64_t seed,
                              uint32_t* o0, uint32_t* o1, uint32_t* o2, uint32_t* o3) noexcept nogil:
    cdef uint64_t c0 = block & 0xFFFFFFFFULL
    cdef uint64_t c1 = block >> 32
    cdef uint64_t c2 = stream & 0xFFFFFFFFULL
    cdef uint64_t c3 = stream >> 32
    cdef uint64_t k0 = seed & 0xFFFFFFFFULL
    cdef uint64_t k1 = (seed >> 32) & 0xFFFFFFFFULL
    cdef uint64_t p0, p1, n0, n1, n2, n3
    cdef int r
    for r in range(10):
        p0 = 0xD2511F53ULL * c0
        p1 = 0xCD9E8D57ULL * c2
        n0 = (p1 >> 32) ^ c1 ^ k0
        n1 = p1 & 0xFFFFFFFFULL
        n2 = (p0 >> 32) ^ c3 ^ k1
        n3 = p0 & 0xFFFFFFFFULL
        c0 = n0; c1 = n1; c2 = n2; c3 = n3
        k0 = (k0 + 0x9E3779B9ULL) & 0xFFFFFFFFULL
        k1 = (k1 + 0xBB67AE85ULL) & 0xFFFFFFFFULL
    o0[0] = <uint32_t>c0
    o1[0] = <uint32_t>c1
    o2[0] = <uint32_t>c2
    o3[0] = <uint32_t>c3


def uniform01(object seed, object stream, Py_ssize_t n):
    """n doubles in (0, 1): (2*v52 + 1) * 2^-53, v52 from Philox4x32-10."""
    if n < 0:
        raise ValueError("n must be >= 0")
    cdef uint64_t sd = <uint64_t>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef uint64_t st = <uint64_t>(int(stream) & 0xFFFFFFFFFFFFFFFF)
    cdef cnp.ndarray[double, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t blocks = (n + 1) // 2
    cdef Py_ssize_t i
    cdef uint32_t x0, x1, x2, x3
    cdef uint64_t va, vb
    with nogil:
        for i in range(blocks):
            philox_block(<uint64_t>i, st, sd, &x0, &x1, &x2, &x3)
            va = ((<uint64_t>x0) << 20) | ((<uint64_t>x1) >> 12)
            out[2 * i] = <double>((va << 1) | 1ULL) * 1.1102230246251565e-16
            if 2 * i + 1 < n:
                vb = ((<uint64_t>x2) << 20) | ((<uint64_t>x3) >> 12)
                out[2 * i + 1] = <double>((vb << 1) | 1ULL) * 1.1102230246251565e-16
    return out


cdef double _PA0 = 3.3871328727963666080e+00
cdef double _PA1 = 1.3314166789178437745e+02
cdef double _PA2 = 1.9715909503065514427e+03
cdef double _PA3 = 1.3731693765509461125e+04
cdef double _PA4 = 4.5921953931549871457e+04
cdef double _PA5 = 6.7265770927008700853e+04
cdef double _PA6 = 3.3430575583588128105e+04
cdef double _PA7 = 2.5090809287301226727e+03
cdef double _PB0 = 4.2313330701600911252e+01
cdef double _PB1 = 6.8718700749205790830e+02
cdef double _PB2 = 5.3941960214247511077e+03
cdef double _PB3 = 2.1213794301586595867e+04
cdef double _PB4 = 3.9307895800092710610e+04
cdef double _PB5 = 2.8729085735721942674e+04
cdef double _PB6 = 5.2264952788528545610e+03
cdef double _PC0 = 1.42343711074968357734e+00
cdef double _PC1 = 4.63033784615654529590e+00
cdef double _PC2 = 5.76949722146069140550e+00
cdef double _PC3 = 3.64784832476320460504e+00
cdef double _PC4 = 1.27045825245236838258e+00
cdef double _PC5 = 2.41780725177450611770e-01
cdef double _PC6 = 2.27238449892691845833e-02
cdef double _PC7 = 7.74545014278341407640e-04
cdef double _PD0 = 2.05319162663775882187e+00
cdef double _PD1 = 1.67638483018380384940e+00
cdef double _PD2 = 6.89767334985100004550e-01
cdef double _PD3 = 1.48103976427480074590e-01
cdef double _PD4 = 1.51986665636164571966e-02
cdef double _PD5 = 5.47593808499534494600e-04
cdef double _PD6 = 1.05075007164441684324e-09
cdef double _PE0 = 6.65790464350110377720e+00
cdef double _PE1 = 5.46378491116411436990e+00
cdef double _PE2 = 1.78482653991729133580e+00
cdef double _PE3 = 2.96560571828504891230e-01
cdef double _PE4 = 2.65321895265761230930e-02
cdef double _PE5 = 1.24266094738807843860e-03
cdef double _PE6 = 2.71155556874348757815e-05
cdef double _PE7 = 2.01033439929228813265e-07
cdef double _PF0 = 5.99832206555887937690e-01
cdef double _PF1 = 1.36929880922735805310e-01
cdef double _PF2 = 1.48753612908506148525e-02
cdef double _PF3 = 7.86869131145613259100e-04
cdef double _PF4 = 1.84631831751005468180e-05
cdef double _PF5 = 1.42151175831644588870e-07
cdef double _PF6 = 2.04426310338993978564e-15


cdef double ppnd16_scalar(double u) noexcept nogil:
    cdef double q = u - 0.5
    cdef double r, num, den, z
    if q <= 0.425 and q >= -0.425:
        r = 0.180625 - q * q
        num = _PA0 + r * (_PA1 + r * (_PA2 + r * (_PA3 + r * (_PA4 + r * (_PA5 + r * (_PA6 + r * _PA7))))))
        den = 1.0 + r * (_PB0 + r * (_PB1 + r * (_PB2 + r * (_PB3 + r * (_PB4 + r * (_PB5 + r * _PB6))))))
        return q * num / den
    if q < 0.0:
        r = u
    else:
        r = 1.0 - u
    r = sqrt(-det_log(r))
    if r <= 5.0:
        r = r - 1.6
        num = _PC0 + r * (_PC1 + r * (_PC2 + r * (_PC3 + r * (_PC4 + r * (_PC5 + r * (_PC6 + r * _PC7))))))
        den = 1.0 + r * (_PD0 + r * (_PD1 + r * (_PD2 + r * (_PD3 + r * (_PD4 + r * (_PD5 + r * _PD6))))))
    else:
        r = r - 5.0
        num = _PE0 + r * (_PE1 + r * (_PE2 + r * (_PE3 + r * (_PE4 + r * (_PE5 + r * (_PE6 + r * _PE7))))))
        den = 1.0 + r * (_PF0 + r * (_PF1 + r * (_PF2 + r * (_PF3 + r * (_PF4 + r * (_PF5 + r * _PF6))))))
    z = num / den
    if q < 0.0:
        return -z
    return z


def ppnd16(object u):
    cdef cnp.ndarray[double, ndim=1] flat = np.ascontiguousarray(u, dtype=np.float64).reshape(-1)
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(flat)
    cdef Py_ssize_t i, n = flat.shape[0]
    with nogil:
        for i in range(n):
            out[i] = ppnd16_scalar(flat[i])
    return out.reshape(np.shape(u))


def standard_normal(object seed, object stream, Py_ssize_t n):
    cdef cnp.ndarray[double, ndim=1] u = uniform01(seed, stream, n)
    cdef cnp.ndarray[double, ndim=1] out = np.empty_like(u)
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = ppnd16_scalar(u[i])
    return out


# ---------------------------------------------------------------------------
# reductions / kernels

cdef inline double max2(double m, double v) noexcept nogil:
    # NaN poisons; the first operand wins ties (matches _pure.rowmax).
    if m != m or v != v:
        return NAN
    if v > m:
        return v
    return m


def rowmax(object a):
    cdef cnp.ndarray[double, ndim=2] arr = np.ascontiguousarray(a, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] out = np.empty(arr.shape[0], dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double m
    with nogil:
        for i in range(arr.shape[0]):
            m = arr[i, 0]
            for j in range(1, arr.shape[1]):
                m = max2(m, arr[i, j])
            out[i] = m
    return out


def matmul_rounded(object a_obj, object b_obj, int mbits, int64_t te, int64_t te_max, bint carrier):
    cdef cnp.ndarray[double, ndim=2] a = np.ascontiguousarray(a_obj, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] b = np.ascontiguousarray(b_obj, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {np.shape(a_obj)} x {np.shape(b_obj)}")
    cdef Py_ssize_t n = a.shape[0], kdim = a.shape[1], m = b.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.zeros((n, m), dtype=np.float64)
    cdef Py_ssize_t i, j, k
    cdef double acc
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                if carrier:
                    for k in range(kdim):
                        acc = acc + a[i, k] * b[k, j]
                    acc = q_scalar(acc, mbits, te, te_max)
                else:
                    for k in range(kdim):
                        acc = q_scalar(acc + q_scalar(a[i, k] * b[k, j], mbits, te, te_max),
                                       mbits, te, te_max)
                out[i, j] = acc
    return out


def softmax_rows_rounded(object a_obj, int mbits, int64_t te, int64_t te_max, bint carrier):
    cdef cnp.ndarray[double, ndim=2] a = np.ascontiguousarray(a_obj, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0], m = a.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, m), dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double mx, acc, p
    with nogil:
        for i in range(n):
            mx = a[i, 0]
            for j in range(1, m):
                mx = max2(mx, a[i, j])
            acc = 0.0
            for j in range(m):
                p = q_scalar(det_exp(q_scalar(a[i, j] - mx, mbits, te, te_max)), mbits, te, te_max)
                out[i, j] = p
                if carrier:
                    acc = acc + p
                else:
                    acc = q_scalar(acc + p, mbits, te, te_max)
            if carrier:
                acc = q_scalar(acc, mbits, te, te_max)
            for j in range(m):
                out[i, j] = q_scalar(out[i, j] / acc, mbits, te, te_max)
    return out


def flash_forward(object q_obj, object k_obj, object v_obj, double scale,
                  Py_ssize_t br, Py_ssize_t bc,
                  int mbits, int64_t te, int64_t te_max, bint carrier,
                  object col_order=None, bint return_stats=False):
    cdef cnp.ndarray[double, ndim=2] q = np.ascontiguousarray(q_obj, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] k = np.ascontiguousarray(k_obj, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] v = np.ascontiguousarray(v_obj, dtype=np.float64)
    cdef Py_ssize_t n = q.shape[0], d = q.shape[1]
    cdef Py_ssize_t n_blocks = (n + bc - 1) // bc

    cdef cnp.ndarray[int64_t, ndim=1] order
    if col_order is None:
        order = np.arange(n_blocks, dtype=np.int64)
    else:
        order = np.ascontiguousarray(col_order, dtype=np.int64)

    cdef cnp.ndarray[double, ndim=2] out = np.empty((n, d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] m_all = np.empty(n, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] l_all = np.empty(n, dtype=np.float64)

    # per-block scratch
    cdef cnp.ndarray[double, ndim=2] s_buf = np.empty((br, bc), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] o_buf = np.empty((br, d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2] pv_buf = np.empty((br, d), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] mi = np.empty(br, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] li = np.empty(br, dtype=np.float64)

    cdef Py_ssize_t i0, i1, ib, jj, j0, j1, jb, r, c, kk
    cdef double acc, mt, mn, alpha, beta, al, bl, ln, c1, c2, x

    with nogil:
        i0 = 0
        while i0 < n:
            i1 = i0 + br
            if i1 > n:
                i1 = n
            ib = i1 - i0
            for r in range(ib):
                mi[r] = -INFINITY
                li[r] = 0.0
                for c in range(d):
                    o_buf[r, c] = 0.0
            for jj in range(n_blocks):
                j0 = order[jj] * bc
                j1 = j0 + bc
                if j1 > n:
                    j1 = n
                jb = j1 - j0
                # s = quantize(scale * (Q_i K_j^T))
                for r in range(ib):
                    for c in range(jb):
                        acc = 0.0
                        if carrier:
                            for kk in range(d):
                                acc = acc + q[i0 + r, kk] * k[j0 + c, kk]
                            acc = q_scalar(acc, mbits, te, te_max)
                        else:
                            for kk in range(d):
                                acc = q_scalar(
                                    acc + q_scalar(q[i0 + r, kk] * k[j0 + c, kk], mbits, te, te_max),
                                    mbits, te, te_max)
                        s_buf[r, c] = q_scalar(scale * acc, mbits, te, te_max)
                for r in range(ib):
                    # mt = rowmax(s); p = quantize(exp(quantize(s - mt)))
                    mt = s_buf[r, 0]
                    for c in range(1, jb):
                        mt = max2(mt, s_buf[r, c])
                    acc = 0.0
                    for c in range(jb):
                        x = q_scalar(det_exp(q_scalar(s_buf[r, c] - mt, mbits, te, te_max)),
                                     mbits, te, te_max)
                        s_buf[r, c] = x
                        if carrier:
                            acc = acc + x
                        else:
                            acc = q_scalar(acc + x, mbits, te, te_max)
                    if carrier:
                        acc = q_scalar(acc, mbits, te, te_max)
                    # running-stat update
                    mn = max2(mi[r], mt)
                    alpha = q_scalar(det_exp(q_scalar(mi[r] - mn, mbits, te, te_max)), mbits, te, te_max)
                    beta = q_scalar(det_exp(q_scalar(mt - mn, mbits, te, te_max)), mbits, te, te_max)
                    al = q_scalar(alpha * li[r], mbits, te, te_max)
                    bl = q_scalar(beta * acc, mbits, te, te_max)
                    ln = q_scalar(al + bl, mbits, te, te_max)
                    c1 = q_scalar(al / ln, mbits, te, te_max)
                    c2 = q_scalar(beta / ln, mbits, te, te_max)
                    # pv = p @ V_j, then o = quantize(c1*o) + quantize(c2*pv)
                    for c in range(d):
                        acc = 0.0
                        if carrier:
                            for kk in range(jb):
                                acc = acc + s_buf[r, kk] * v[j0 + kk, c]
                            acc = q_scalar(acc, mbits, te, te_max)
                        else:
                            for kk in range(jb):
                                acc = q_scalar(
                                    acc + q_scalar(s_buf[r, kk] * v[j0 + kk, c], mbits, te, te_max),
                                    mbits, te, te_max)
                        o_buf[r, c] = q_scalar(
                            q_scalar(c1 * o_buf[r, c], mbits, te, te_max)
                            + q_scalar(c2 * acc, mbits, te, te_max),
                            mbits, te, te_max)
                    mi[r] = mn
                    li[r] = ln
            for r in range(ib):
                for c in range(d):
                    out[i0 + r, c] = o_buf[r, c]
                m_all[i0 + r] = mi[r]
                l_all[i0 + r] = li[r]
            i0 = i0 + br
    if return_stats:
        return out, m_all, l_all
    return out
