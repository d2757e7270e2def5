"""Numba kernels for square Toeplitz matrix-vector products over GF(2).

Words are uint64 holding 64 consecutive bits, least significant first.  A
k-word Toeplitz matrix is described by its 2k-word diagonal array ``s``: the
matrix bit T[i][j] is bit ``i - j + 64k - 1`` of ``s`` (the top bit of the last
word is never read).

The product is computed by the three-way split

    [A B] [x1]   [A(x1 + x2) + (B - A) x2]
    [C A] [x2] = [A(x1 + x2) + (C - A) x1]

which needs three half-size products, down to a schoolbook base case built on
64x64 carryless multiplies.  Several input vectors are processed together (the
second axis of ``x``, a compile-time width) so the seed-side work is shared
between them.  On CPUs with 512-bit carryless multiply (VPCLMULQDQ) the base
case handles 16 input vectors per seed word in four instructions.
"""

from __future__ import annotations

import functools

import numpy as np
from llvmlite import ir
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic

BASE_WORDS = 16
WIDE_BASE_WORDS = 32  # the 512-bit base case amortizes its bookkeeping over more words


@intrinsic
def _pclmul(typingctx, a, b):
    sig = types.UniTuple(types.uint64, 2)(types.uint64, types.uint64)

    def codegen(context, builder, signature, args):
        i64 = ir.IntType(64)
        vec = ir.VectorType(i64, 2)
        fnty = ir.FunctionType(vec, [vec, vec, ir.IntType(8)])
        fn = cgutils.get_or_insert_function(builder.module, fnty, "llvm.x86.pclmulqdq")
        lane0 = ir.Constant(ir.IntType(32), 0)
        lane1 = ir.Constant(ir.IntType(32), 1)
        va = builder.insert_element(ir.Constant(vec, None), args[0], lane0)
        vb = builder.insert_element(ir.Constant(vec, None), args[1], lane0)
        r = builder.call(fn, [va, vb, ir.Constant(ir.IntType(8), 0)])
        lo = builder.extract_element(r, lane0)
        hi = builder.extract_element(r, lane1)
        return context.make_tuple(builder, signature.return_type, [lo, hi])

    return sig, codegen


@intrinsic
def _vclmul_acc16(typingctx, sv, x, xoff, acc, aoff):
    """acc[aoff:aoff+32] ^= sv * x.flat[xoff:xoff+16], four 512-bit carryless multiplies.

    Product of sv and x word b lands at acc[aoff + 16*(b//8) + 8*(b%2) + 2*((b%8)//2)]
    (low word) and the next slot (high word).
    """
    sig = types.void(types.uint64, x, types.intp, acc, types.intp)

    def codegen(context, builder, signature, args):
        sv, xv, xoff, accv, aoff = args
        i32 = ir.IntType(32)
        v8 = ir.VectorType(ir.IntType(64), 8)
        xarr = context.make_array(signature.args[1])(context, builder, xv)
        aarr = context.make_array(signature.args[3])(context, builder, accv)
        xp = builder.bitcast(builder.gep(xarr.data, [xoff]), v8.as_pointer())
        ap = builder.bitcast(builder.gep(aarr.data, [aoff]), v8.as_pointer())
        fnty = ir.FunctionType(v8, [v8, v8, ir.IntType(8)])
        fn = cgutils.get_or_insert_function(builder.module, fnty, "llvm.x86.pclmulqdq.512")
        undef = ir.Constant(v8, ir.Undefined)
        one = builder.insert_element(undef, sv, ir.Constant(i32, 0))
        sb = builder.shuffle_vector(one, undef, ir.Constant(ir.VectorType(i32, 8), [0] * 8))
        for g in range(2):
            xg = builder.load(builder.gep(xp, [ir.Constant(i32, g)]), align=8)
            for h, imm in enumerate((0x00, 0x10)):
                slot = builder.gep(ap, [ir.Constant(i32, 2 * g + h)])
                r = builder.call(fn, [sb, xg, ir.Constant(ir.IntType(8), imm)])
                builder.store(builder.xor(builder.load(slot, align=8), r), slot, align=8)
        return context.get_dummy_value()

    return sig, codegen


@njit(cache=True)
def clmul_soft(a, b):
    """64x64 -> 128 carryless multiply, shift-and-xor."""
    lo = np.uint64(0)
    hi = np.uint64(0)
    one = np.uint64(1)
    for i in range(64):
        if (b >> np.uint64(i)) & one:
            lo ^= a << np.uint64(i)
            if i:
                hi ^= a >> np.uint64(64 - i)
    return lo, hi


@njit
def clmul_hw(a, b):
    return _pclmul(a, b)


def _cpu_has(*names) -> bool:
    try:
        import platform

        from llvmlite import binding

        if platform.machine().lower() not in ("x86_64", "amd64"):
            return False
        feats = binding.get_host_cpu_features()
        return all(feats.get(n, False) for n in names)
    except Exception:  # pragma: no cover - feature probing is best effort
        return False


def has_pclmul() -> bool:
    return _cpu_has("pclmul")


def has_vpclmul() -> bool:
    return _cpu_has("vpclmulqdq", "avx512f")


def _make_wide_base(nb):
    groups = nb // 16

    @njit(nogil=True)
    def base(s, so, x, xo, y, yo, k, rows, acc):
        lanes = acc[0]
        prev = acc[1]
        for i in range(32 * groups):
            lanes[i] = 0
        one = np.uint64(1)
        top = np.uint64(63)
        for w in range(k - 2, k + rows):
            jlo = max(0, w - (2 * k - 1))
            jhi = min(w, k - 1)
            for j in range(jlo, jhi + 1):
                sv = s[so + w - j]
                for g in range(groups):
                    _vclmul_acc16(sv, x, (xo + j) * nb + 16 * g, lanes, 32 * g)
            for bb in range(nb):
                at = 32 * (bb // 16) + 16 * ((bb % 16) // 8) + 8 * (bb % 2) + 2 * ((bb % 8) // 2)
                lo = lanes[at]
                if w >= k:
                    y[yo + w - k, bb] = (prev[bb] >> top) | (lo << one)
                prev[bb] = lo
                lanes[at] = lanes[at + 1]
                lanes[at + 1] = 0

    return base


def _make_kernels(clmul, nb, wide=False):
    @njit(nogil=True)
    def narrow_base(s, so, x, xo, y, yo, k, rows, acc):
        lo_acc = acc[0]
        hi_acc = acc[1]
        prev = acc[2]
        for bb in range(nb):
            lo_acc[bb] = 0
            hi_acc[bb] = 0
        one = np.uint64(1)
        top = np.uint64(63)
        for w in range(k - 2, k + rows):
            jlo = max(0, w - (2 * k - 1))
            jhi = min(w, k - 1)
            for j in range(jlo, jhi + 1):
                sv = s[so + w - j]
                for bb in range(nb):
                    lo, hi = clmul(sv, x[xo + j, bb])
                    lo_acc[bb] ^= lo
                    hi_acc[bb] ^= hi
            # lo_acc now holds the complete product word w
            if w >= k:
                for bb in range(nb):
                    y[yo + w - k, bb] = (prev[bb] >> top) | (lo_acc[bb] << one)
            for bb in range(nb):
                prev[bb] = lo_acc[bb]
                lo_acc[bb] = hi_acc[bb]
                hi_acc[bb] = 0

    base = _make_wide_base(nb) if wide else narrow_base

    @njit(nogil=True)
    def rec(s, so, x, xo, y, yo, sw, swo, xw, xwo, k, rows, base_words, acc):
        if k <= base_words:
            base(s, so, x, xo, y, yo, k, rows, acc)
            return
        h = k // 2
        xs = xwo
        p0 = xwo + h
        p1 = xwo + 2 * h
        nxt = xwo + 3 * h
        sb = swo
        nsw = swo + 2 * h
        top = min(rows, h)
        bot = rows - top
        for i in range(h):
            for bb in range(nb):
                xw[xs + i, bb] = x[xo + i, bb] ^ x[xo + h + i, bb]
        rec(s, so + h, xw, xs, xw, p0, sw, nsw, xw, nxt, h, h if bot > 0 else top, base_words, acc)
        for i in range(2 * h):
            sw[sb + i] = s[so + i] ^ s[so + h + i]
        rec(sw, sb, x, xo + h, xw, p1, sw, nsw, xw, nxt, h, top, base_words, acc)
        for i in range(top):
            for bb in range(nb):
                y[yo + i, bb] = xw[p0 + i, bb] ^ xw[p1 + i, bb]
        if bot <= 0:
            return
        for i in range(2 * h):
            sw[sb + i] = s[so + 2 * h + i] ^ s[so + h + i]
        rec(sw, sb, x, xo, xw, p1, sw, nsw, xw, nxt, h, bot, base_words, acc)
        for i in range(bot):
            for bb in range(nb):
                y[yo + h + i, bb] = xw[p0 + i, bb] ^ xw[p1 + i, bb]

    @njit(nogil=True)
    def toeplitz(s, x, rows, base_words):
        k = x.shape[0]
        y = np.zeros((k, nb), np.uint64)
        # workspace: 2h seed words and 3h x words per recursion level
        sw = np.zeros(2 * k + 64, np.uint64)
        xw = np.zeros((3 * k + 64, nb), np.uint64)
        acc = np.zeros((3, 2 * nb), np.uint64)
        rec(s, 0, x, 0, y, 0, sw, 0, xw, 0, k, rows, base_words, acc)
        return y

    return toeplitz


@functools.lru_cache(maxsize=None)
def _kernel(batch, hardware, wide):
    return _make_kernels(clmul_hw if hardware else clmul_soft, batch, wide)


def get_kernel(batch: int, hardware: bool | None = None, wide: bool | None = None):
    """Kernel compiled for a fixed batch width.

    ``hardware=None`` picks pclmul when available; ``wide=None`` uses the
    512-bit base case when the CPU has it and the width is a multiple of 16.
    """
    batch = int(batch)
    if hardware is None:
        hardware = has_pclmul()
    if wide is None:
        wide = hardware and has_vpclmul() and batch % 16 == 0
    if wide and (batch % 16 or not has_vpclmul()):
        raise ValueError("the wide kernel needs VPCLMULQDQ and a batch width divisible by 16")
    return _kernel(batch, bool(hardware), bool(wide))


def padded_words(n_words: int, base_words: int = BASE_WORDS) -> int:
    """Smallest b * 2**L >= n_words with b <= base_words."""
    levels = 0
    while n_words > base_words << levels:
        levels += 1
    b = -(-n_words // (1 << levels))
    return b << levels


def toeplitz_words(s, x, rows=None, hardware=None, base_words=None, wide=None):
    """y = T x for a k-word square Toeplitz T given as 2k diagonal words.

    ``x`` has shape (k,) or (k, batch); only the first ``rows`` output words are
    guaranteed to be computed.  ``k`` must be b * 2**L with b <= 16.
    """
    s = np.ascontiguousarray(s, dtype=np.uint64)
    x = np.asarray(x, dtype=np.uint64)
    squeeze = x.ndim == 1
    x2 = np.ascontiguousarray(x.reshape(x.shape[0], -1))
    k = x2.shape[0]
    if s.shape[0] != 2 * k:
        raise ValueError("seed must have twice as many words as x")
    if k != padded_words(k):
        raise ValueError("word count must be b * 2**L with b <= 16")
    rows = k if rows is None else int(rows)
    width = x2.shape[1]
    # the batch width is a compile-time constant; round up to a power of two
    batch = 1 << (width - 1).bit_length()
    if batch != width:
        x2 = np.concatenate([x2, np.zeros((k, batch - width), np.uint64)], axis=1)
    hardware = has_pclmul() if hardware is None else hardware
    if wide is None:
        wide = hardware and batch % 16 == 0 and has_vpclmul()
    if base_words is None:
        base_words = WIDE_BASE_WORDS if wide else BASE_WORDS
    if k != padded_words(k, base_words):
        raise ValueError(f"word count must be b * 2**L with b <= {base_words}")
    y = get_kernel(batch, hardware, wide)(s, x2, rows, base_words)[:, :width]
    return y[:, 0] if squeeze else y
