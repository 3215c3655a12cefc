"""Pure numpy backend.

Reference implementation of the rounded-arithmetic kernels. The compiled
backend (attnlab._native) is a bit-for-bit twin; every function here defines
the semantics the twin must reproduce exactly:

- quantize: round-to-nearest-even into an (E, M) format, gradual underflow,
  +-inf on overflow, done with integer ops on the float64 bit pattern.
- exp/log: fdlibm-style argument reduction + polynomial, written as a fixed
  sequence of IEEE double ops so numpy and C produce identical bits (libm
  exp is not bit-stable across platforms, and numpy's SIMD exp differs from
  libm on some hosts).
- Philox4x32-10 counter-based RNG + AS241 inverse-normal transform: portable
  bit-identical random matrices regardless of platform or thread count.
- matmul / softmax / flash attention with strictly left-to-right
  accumulation and a rounding after every elementary operation (or carrier
  accumulation with a single final rounding when carrier=True).

Format arguments arrive pre-digested as (mbits, te, te_max) where te and
te_max are the format's min-normal / max-normal exponents on the float64
biased scale (see FloatFormat.params).
"""

from __future__ import annotations

import numpy as np

NAME = "python"

_SIGN = np.uint64(0x8000000000000000)
_ABS = np.uint64(0x7FFFFFFFFFFFFFFF)
_EXPINF = np.uint64(0x7FF0000000000000)


# ---------------------------------------------------------------------------
# quantization


def quantize_array(x, mbits: int, te: int, te_max: int) -> np.ndarray:
    """Round every element of x to the (mbits, te, te_max) format."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    u = x.reshape(-1).view(np.uint64)
    sign = u & _SIGN
    a = u & _ABS
    ef = a >> np.uint64(52)
    special = a >= _EXPINF  # inf / nan pass through
    zero = a == np.uint64(0)

    # Normal range of the target: truncate mantissa with round-half-even via
    # the classic add-and-mask; the carry ripples into the exponent field,
    # which is exactly what IEEE rounding across a binade boundary needs.
    s = 52 - mbits
    if s > 0:
        keep_lsb = (a >> np.uint64(s)) & np.uint64(1)
        round_add = np.uint64((1 << (s - 1)) - 1)
        mask = np.uint64(~((1 << s) - 1) & 0xFFFFFFFFFFFFFFFF)
        a_norm = (a + keep_lsb + round_add) & mask
    else:
        a_norm = a
    overflow = (a_norm >> np.uint64(52)) > np.uint64(te_max)
    a_norm = np.where(overflow, _EXPINF, a_norm)

    # Subnormal range of the target: the quantum 2^(e_min - mbits) spans
    # many float64 binades, so bit masking does not apply; scale so the
    # quantum becomes 1.0, round, scale back. Both ldexp calls are exact
    # except for irrelevantly tiny inputs that round to 0 anyway.
    k = mbits - (te - 1023)
    with np.errstate(over="ignore", invalid="ignore"):
        scaled = np.ldexp(np.abs(x.reshape(-1)), k)
        a_sub = np.ldexp(np.rint(scaled), -k).view(np.uint64)

    out = sign | np.where(ef >= np.uint64(te), a_norm, a_sub)
    out = np.where(special | zero, u, out)
    return out.view(np.float64).reshape(x.shape).copy()


# ---------------------------------------------------------------------------
# deterministic exp / log (fdlibm-style, fixed IEEE op sequence)

_EXP_P1 = 1.66666666666666019037e-01
_EXP_P2 = -2.77777777770155933842e-03
_EXP_P3 = 6.61375632143793436117e-05
_EXP_P4 = -1.65339022054652515390e-06
_EXP_P5 = 4.13813679705723846039e-08
_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_INV_LN2 = 1.44269504088896338700e+00
_EXP_OVERFLOW = 7.09782712893383973096e+02
_EXP_UNDERFLOW = -7.45133219101941108420e+02


def _high_word(x: np.ndarray) -> np.ndarray:
    return (x.view(np.uint64) >> np.uint64(32)).astype(np.int64)


def exp_array(x) -> np.ndarray:
    """Carrier-precision exp, bit-deterministic across backends."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    with np.errstate(all="ignore"):
        nan = np.isnan(flat)
        over = flat > _EXP_OVERFLOW
        under = flat < _EXP_UNDERFLOW
        special = nan | over | under
        spec_val = np.where(nan, flat, np.where(over, np.inf, 0.0))

        xm = np.where(special, 0.0, flat)
        hx = _high_word(xm) & 0x7FFFFFFF
        xsb = np.signbit(xm)

        big = hx > 0x3FD62E42  # |x| > ~0.5 ln 2
        near = hx < 0x3FF0A2B2  # |x| < ~1.5 ln 2
        tiny = hx < 0x3E300000  # |x| < 2^-28

        hi_near = np.where(xsb, xm + _LN2_HI, xm - _LN2_HI)
        lo_near = np.where(xsb, -_LN2_LO, _LN2_LO)
        k_near = np.where(xsb, -1, 1).astype(np.int64)

        kf = (_INV_LN2 * xm + np.where(xsb, -0.5, 0.5)).astype(np.int64)
        t = kf.astype(np.float64)
        hi_far = xm - t * _LN2_HI
        lo_far = t * _LN2_LO

        k = np.where(near, k_near, kf)
        hi = np.where(near, hi_near, hi_far)
        lo = np.where(near, lo_near, lo_far)

        xr = np.where(big, hi - lo, xm)
        t = xr * xr
        c = xr - t * (_EXP_P1 + t * (_EXP_P2 + t * (_EXP_P3 + t * (_EXP_P4 + t * _EXP_P5))))
        y0 = 1.0 - ((xr * c) / (c - 2.0) - xr)
        yk = 1.0 - ((lo - (xr * c) / (2.0 - c)) - hi)

        res = np.where(big, np.ldexp(yk, np.where(big, k, 0)), y0)
        res = np.where(tiny, 1.0 + xm, res)
        res = np.where(special, spec_val, res)
    return res.reshape(x.shape)


_LG1 = 6.666666666666735130e-01
_LG2 = 3.999999999940941908e-01
_LG3 = 2.857142874366239149e-01
_LG4 = 2.222219843214978396e-01
_LG5 = 1.818357216161805012e-01
_LG6 = 1.531383769920937332e-01
_LG7 = 1.479819860511658591e-01


def log_array(x) -> np.ndarray:
    """Carrier-precision natural log, bit-deterministic across backends."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    flat = x.reshape(-1)
    with np.errstate(all="ignore"):
        nan = np.isnan(flat) | (flat < 0.0)
        zero = flat == 0.0
        inf = np.isposinf(flat)
        special = nan | zero | inf
        spec_val = np.where(zero, -np.inf, np.where(inf, np.inf, np.nan))

        xm = np.where(special | (flat <= 0.0), 1.0, flat)
        subnormal = xm < 2.2250738585072014e-308
        xs = np.where(subnormal, xm * 1.8014398509481984e+16, xm)  # * 2^54
        k0 = np.where(subnormal, -54, 0).astype(np.int64)

        u = xs.view(np.uint64)
        hxw = (u >> np.uint64(32)).astype(np.int64)
        k = k0 + (hxw >> 20) - 1023
        hxm = hxw & 0xFFFFF
        i1 = (hxm + 0x95F64) & 0x100000
        new_hi = (hxm | (i1 ^ 0x3FF00000)).astype(np.uint64)
        xn = ((new_hi << np.uint64(32)) | (u & np.uint64(0xFFFFFFFF))).view(np.float64)
        k = k + (i1 >> 20)
        dk = k.astype(np.float64)

        f = xn - 1.0
        s = f / (2.0 + f)
        z = s * s
        w = z * z
        t1 = w * (_LG2 + w * (_LG4 + w * _LG6))
        t2 = z * (_LG1 + w * (_LG3 + w * (_LG5 + w * _LG7)))
        r = t2 + t1
        hfsq = 0.5 * f * f

        ij_pos = ((hxm - 0x6147A) | (0x6B851 - hxm)) > 0
        big_k0 = f - (hfsq - s * (hfsq + r))
        big_kn = dk * _LN2_HI - ((hfsq - (s * (hfsq + r) + dk * _LN2_LO)) - f)
        small_k0 = f - s * (f - r)
        small_kn = dk * _LN2_HI - ((s * (f - r) - dk * _LN2_LO) - f)

        res = np.where(
            ij_pos,
            np.where(k == 0, big_k0, big_kn),
            np.where(k == 0, small_k0, small_kn),
        )

        # |f| < 2^-20: short polynomial; f == 0: pure k*ln2.
        tinyf = ((hxm + 2) & 0xFFFFF) < 3
        rt = f * f * (0.5 - 0.33333333333333333 * f)
        tiny_val = np.where(
            f == 0.0,
            np.where(k == 0, 0.0, dk * _LN2_HI + dk * _LN2_LO),
            np.where(k == 0, f - rt, dk * _LN2_HI - ((rt - dk * _LN2_LO) - f)),
        )
        res = np.where(tinyf, tiny_val, res)
        res = np.where(special, spec_val, res)
    return res.reshape(x.shape)


# ---------------------------------------------------------------------------
# Philox4x32-10 counter-based RNG + AS241 inverse-normal transform

_PHILOX_M0 = np.uint64(0xD2511F53)
_PHILOX_M1 = np.uint64(0xCD9E8D57)
_PHILOX_W0 = np.uint64(0x9E3779B9)
_PHILOX_W1 = np.uint64(0xBB67AE85)
_M32 = np.uint64(0xFFFFFFFF)


def _philox4x32(block: np.ndarray, stream: int, seed: int):
    """One Philox4x32-10 block per entry of `block` (uint64 block indices)."""
    c0 = block & _M32
    c1 = block >> np.uint64(32)
    c2 = np.full_like(block, (stream & 0xFFFFFFFF))
    c3 = np.full_like(block, ((stream >> 32) & 0xFFFFFFFF))
    k0 = np.uint64(seed & 0xFFFFFFFF)
    k1 = np.uint64((seed >> 32) & 0xFFFFFFFF)
    for _ in range(10):
        p0 = _PHILOX_M0 * c0
        p1 = _PHILOX_M1 * c2
        c0, c1, c2, c3 = (
            (p1 >> np.uint64(32)) ^ c1 ^ k0,
            p1 & _M32,
            (p0 >> np.uint64(32)) ^ c3 ^ k1,
            p0 & _M32,
        )
        k0 = (k0 + _PHILOX_W0) & _M32
        k1 = (k1 + _PHILOX_W1) & _M32
    return c0, c1, c2, c3


def uniform01(seed: int, stream: int, n: int) -> np.ndarray:
    """n doubles in the open interval (0, 1): (2*v52 + 1) * 2^-53."""
    if n < 0:
        raise ValueError("n must be >= 0")
    blocks = (n + 1) // 2
    idx = np.arange(blocks, dtype=np.uint64)
    x0, x1, x2, x3 = _philox4x32(idx, stream & 0xFFFFFFFFFFFFFFFF, seed & 0xFFFFFFFFFFFFFFFF)
    v_a = (x0 << np.uint64(20)) | (x1 >> np.uint64(12))
    v_b = (x2 << np.uint64(20)) | (x3 >> np.uint64(12))
    v = np.empty(2 * blocks, dtype=np.uint64)
    v[0::2] = v_a
    v[1::2] = v_b
    odd = (v[:n] << np.uint64(1)) | np.uint64(1)
    return odd.astype(np.float64) * 1.1102230246251565e-16  # 2^-53


_PPND_A = (
    3.3871328727963666080e+00, 1.3314166789178437745e+02,
    1.9715909503065514427e+03, 1.3731693765509461125e+04,
    4.5921953931549871457e+04, 6.7265770927008700853e+04,
    3.3430575583588128105e+04, 2.5090809287301226727e+03,
)
_PPND_B = (
    4.2313330701600911252e+01, 6.8718700749205790830e+02,
    5.3941960214247511077e+03, 2.1213794301586595867e+04,
    3.9307895800092710610e+04, 2.8729085735721942674e+04,
    5.2264952788528545610e+03,
)
_PPND_C = (
    1.42343711074968357734e+00, 4.63033784615654529590e+00,
    5.76949722146069140550e+00, 3.64784832476320460504e+00,
    1.27045825245236838258e+00, 2.41780725177450611770e-01,
    2.27238449892691845833e-02, 7.74545014278341407640e-04,
)
_PPND_D = (
    2.05319162663775882187e+00, 1.67638483018380384940e+00,
    6.89767334985100004550e-01, 1.48103976427480074590e-01,
    1.51986665636164571966e-02, 5.47593808499534494600e-04,
    1.05075007164441684324e-09,
)
_PPND_E = (
    6.65790464350110377720e+00, 5.46378491116411436990e+00,
    1.78482653991729133580e+00, 2.96560571828504891230e-01,
    2.65321895265761230930e-02, 1.24266094738807843860e-03,
    2.71155556874348757815e-05, 2.01033439929228813265e-07,
)
_PPND_F = (
    5.99832206555887937690e-01, 1.36929880922735805310e-01,
    1.48753612908506148525e-02, 7.86869131145613259100e-04,
    1.84631831751005468180e-05, 1.42151175831644588870e-07,
    2.04426310338993978564e-15,
)


def _poly7(r, c):
    # Horner with eight coefficients, fixed order.
    return c[0] + r * (c[1] + r * (c[2] + r * (c[3] + r * (c[4] + r * (c[5] + r * (c[6] + r * c[7]))))))


def _poly7_b(r, c):
    # Denominator form: 1 + r*(...), seven coefficients.
    return 1.0 + r * (c[0] + r * (c[1] + r * (c[2] + r * (c[3] + r * (c[4] + r * (c[5] + r * c[6]))))))


def ppnd16(u: np.ndarray) -> np.ndarray:
    """AS241 inverse normal CDF on (0, 1) samples."""
    u = np.ascontiguousarray(u, dtype=np.float64)
    q = u - 0.5
    central = np.abs(q) <= 0.425

    r_c = 0.180625 - q * q
    z_central = q * _poly7(r_c, _PPND_A) / _poly7_b(r_c, _PPND_B)

    r_t = np.where(q < 0.0, u, 1.0 - u)
    r_t = np.where(central, 0.25, r_t)  # keep tail math well-defined off-path
    r = np.sqrt(-log_array(r_t))
    near = r <= 5.0
    r1 = r - 1.6
    z1 = _poly7(r1, _PPND_C) / _poly7_b(r1, _PPND_D)
    r2 = r - 5.0
    z2 = _poly7(r2, _PPND_E) / _poly7_b(r2, _PPND_F)
    z_tail = np.where(near, z1, z2)
    z_tail = np.where(q < 0.0, -z_tail, z_tail)

    return np.where(central, z_central, z_tail)


def standard_normal(seed: int, stream: int, n: int) -> np.ndarray:
    return ppnd16(uniform01(seed, stream, n))


# ---------------------------------------------------------------------------
# reductions with pinned ordering

def rowmax(a: np.ndarray) -> np.ndarray:
    """Left-to-right row max; NaN poisons a row; first operand wins ties."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    m = a[:, 0].copy()
    for j in range(1, a.shape[1]):
        v = a[:, j]
        bad = np.isnan(m) | np.isnan(v)
        m = np.where(bad, np.nan, np.where(v > m, v, m))
    return m


def _rowsum_rounded(p: np.ndarray, mbits: int, te: int, te_max: int, carrier: bool) -> np.ndarray:
    if carrier:
        acc = np.zeros(p.shape[0])
        for j in range(p.shape[1]):
            acc = acc + p[:, j]
        return quantize_array(acc, mbits, te, te_max)
    acc = np.zeros(p.shape[0])
    for j in range(p.shape[1]):
        acc = quantize_array(acc + p[:, j], mbits, te, te_max)
    return acc


# ---------------------------------------------------------------------------
# kernels


def matmul_rounded(a, b, mbits: int, te: int, te_max: int, carrier: bool) -> np.ndarray:
    """a @ b with left-to-right accumulation over k.

    carrier=False rounds each product and each partial sum; carrier=True
    keeps the accumulation in float64 and rounds the final sum once.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    kdim = a.shape[1]
    out = np.zeros((a.shape[0], b.shape[1]))
    if carrier:
        for k in range(kdim):
            out = out + a[:, k : k + 1] * b[k : k + 1, :]
        return quantize_array(out, mbits, te, te_max)
    for k in range(kdim):
        p = quantize_array(a[:, k : k + 1] * b[k : k + 1, :], mbits, te, te_max)
        out = quantize_array(out + p, mbits, te, te_max)
    return out


def softmax_rows_rounded(a, mbits: int, te: int, te_max: int, carrier: bool) -> np.ndarray:
    """Stable row softmax, every elementary step rounded."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    m = rowmax(a)
    z = quantize_array(a - m[:, None], mbits, te, te_max)
    p = quantize_array(exp_array(z), mbits, te, te_max)
    l = _rowsum_rounded(p, mbits, te, te_max, carrier)
    return quantize_array(p / l[:, None], mbits, te, te_max)


def flash_forward(
    q,
    k,
    v,
    scale: float,
    br: int,
    bc: int,
    mbits: int,
    te: int,
    te_max: int,
    carrier: bool,
    col_order=None,
    return_stats: bool = False,
):
    """Tiled online-softmax attention forward pass.

    Row blocks of br queries; for each column block of bc keys/values the
    running (max, denominator, output) triple is rescaled:

        l' = exp(m - m')*l + exp(mt - m')*lt
        O' = diag(exp(m - m')*l / l') O + diag(exp(mt - m') / l') (P Vj)

    Every elementary operation is rounded; the score and P@V matmuls follow
    matmul_rounded's accumulation contract. The n x n score matrix is never
    materialized. Ragged tail blocks run at their natural size.
    """
    q = np.ascontiguousarray(q, dtype=np.float64)
    k = np.ascontiguousarray(k, dtype=np.float64)
    v = np.ascontiguousarray(v, dtype=np.float64)
    n, d = q.shape
    fmt = (mbits, te, te_max)

    n_col_blocks = (n + bc - 1) // bc
    if col_order is None:
        order = range(n_col_blocks)
    else:
        order = [int(j) for j in col_order]

    out = np.empty((n, d))
    m_all = np.empty(n)
    l_all = np.empty(n)
    for i0 in range(0, n, br):
        i1 = min(i0 + br, n)
        qi = q[i0:i1]
        oi = np.zeros((i1 - i0, d))
        mi = np.full(i1 - i0, -np.inf)
        li = np.zeros(i1 - i0)
        for jb in order:
            j0 = jb * bc
            j1 = min(j0 + bc, n)
            s = matmul_rounded(qi, np.ascontiguousarray(k[j0:j1].T), *fmt, carrier)
            s = quantize_array(scale * s, *fmt)
            mt = rowmax(s)
            p = quantize_array(exp_array(quantize_array(s - mt[:, None], *fmt)), *fmt)
            lt = _rowsum_rounded(p, *fmt, carrier)
            bad = np.isnan(mi) | np.isnan(mt)
            mn = np.where(bad, np.nan, np.where(mt > mi, mt, mi))
            alpha = quantize_array(exp_array(quantize_array(mi - mn, *fmt)), *fmt)
            beta = quantize_array(exp_array(quantize_array(mt - mn, *fmt)), *fmt)
            al = quantize_array(alpha * li, *fmt)
            bl = quantize_array(beta * lt, *fmt)
            ln = quantize_array(al + bl, *fmt)
            c1 = quantize_array(al / ln, *fmt)
            c2 = quantize_array(beta / ln, *fmt)
            pv = matmul_rounded(p, v[j0:j1], *fmt, carrier)
            oi = quantize_array(
                quantize_array(c1[:, None] * oi, *fmt) + quantize_array(c2[:, None] * pv, *fmt),
                *fmt,
            )
            mi = mn
            li = ln
        out[i0:i1] = oi
        m_all[i0:i1] = mi
        l_all[i0:i1] = li
    if return_stats:
        return out, m_all, l_all
    return out
