"""Toeplitz-hashing randomness extraction over GF(2).

Seed layout: for an m x n matrix T with T[i][j] = d[i - j], the seed bit
``seed[t]`` holds ``d[t - (n - 1)]`` for t in [0, n + m - 2].  So seed[0:n]
is the first row read right to left and seed[n-1:] is the first column read
top down.

Three interchangeable paths compute y = T x:

* ``naive`` - the textbook double loop, used as the oracle;
* ``fast`` - word-packed recursive Toeplitz product on carryless multiplies
  (see :mod:`phaseqrng._gf2`), exact by construction;
* ``fft`` - floating-point convolution whose every output is checked to lie
  within 0.25 of an integer before rounding; a failed check raises
  :class:`~phaseqrng.errors.ExactnessError` rather than returning bad bits.
"""

from __future__ import annotations

import hashlib
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.fft

from . import _gf2
from .bits import BitStream, read_bits, write_bits
from .errors import DimensionError, ExactnessError, InsufficientEntropyError, OverExtractionError

DEFAULT_BLOCK_N = 1 << 20
DEFAULT_EPSILON = 2.0**-100
DEFAULT_BATCH = 32
SEED_DOMAIN = b"phaseqrng/toeplitz-seed/v1"


@dataclass(frozen=True)
class ToeplitzSpec:
    n: int
    m: int
    seed: BitStream

    def __post_init__(self):
        if not 1 <= self.m <= self.n:
            raise DimensionError("need 1 <= m <= n")
        if len(self.seed) != self.n + self.m - 1:
            raise DimensionError(f"seed must hold n + m - 1 = {self.n + self.m - 1} bits, got {len(self.seed)}")

    def matrix(self) -> np.ndarray:
        """Dense m x n matrix; only sensible for small sizes."""
        s = self.seed.to_bits()
        i = np.arange(self.m)[:, None]
        j = np.arange(self.n)[None, :]
        return s[i - j + self.n - 1]


@dataclass(frozen=True)
class ExtractionPolicy:
    hmin_per_bit: float
    epsilon: float = DEFAULT_EPSILON
    block_n: int = DEFAULT_BLOCK_N

    def __post_init__(self):
        if not 0 < self.hmin_per_bit <= 1:
            raise ValueError("hmin_per_bit must be in (0, 1]")
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must be in (0, 1]")
        if self.block_n < 1:
            raise ValueError("block_n must be >= 1")


def output_length(n: int, policy: ExtractionPolicy) -> int:
    """Leftover-hash output length floor(n*h - 2*log2(1/eps))."""
    if n < 1:
        raise ValueError("n must be >= 1")
    m = math.floor(n * policy.hmin_per_bit - 2.0 * -math.log2(policy.epsilon))
    if m <= 0:
        raise InsufficientEntropyError(f"entropy budget for n={n} is non-positive")
    return m


def implied_log2_inv_epsilon(n: int, m: int, hmin_per_bit: float) -> float:
    """log2(1/eps) implied by choosing m output bits from n input bits."""
    return (n * hmin_per_bit - m) / 2.0


def seed_from_master(master_seed, n: int, m: int) -> BitStream:
    """Expand a 256-bit master seed into the n + m - 1 Toeplitz seed bits.

    SHAKE-256 over ``SEED_DOMAIN || master || n (u64 LE) || m (u64 LE)``,
    output read LSB-first.
    """
    key = parse_master_seed(master_seed)
    xof = hashlib.shake_256(SEED_DOMAIN + key + n.to_bytes(8, "little") + m.to_bytes(8, "little"))
    length = n + m - 1
    return BitStream(np.frombuffer(xof.digest((length + 7) // 8), np.uint8), length)


def parse_master_seed(master_seed) -> bytes:
    if isinstance(master_seed, (bytes, bytearray)):
        key = bytes(master_seed)
    else:
        text = str(master_seed).strip().lower()
        if text.startswith("0x"):
            text = text[2:]
        try:
            key = bytes.fromhex(text)
        except ValueError as exc:
            raise ValueError("master seed must be hex") from exc
    if len(key) != 32:
        raise ValueError("master seed must be exactly 256 bits")
    return key


def seed_fingerprint(master_seed) -> str:
    return hashlib.sha256(parse_master_seed(master_seed)).hexdigest()[:16]


def _as_bitstream(x) -> BitStream:
    return x if isinstance(x, BitStream) else BitStream.from_bits(x)


def toeplitz_extract_naive(spec: ToeplitzSpec, x, rows=None) -> BitStream:
    """y_i = XOR_j T[i][j] x_j, one bit at a time."""
    x = _as_bitstream(x)
    if len(x) != spec.n:
        raise DimensionError(f"input has {len(x)} bits, expected {spec.n}")
    s = spec.seed.to_bits().tolist()
    xb = x.to_bits().tolist()
    n = spec.n
    out = []
    for i in range(spec.m if rows is None else rows):
        acc = 0
        for j in range(n):
            acc ^= s[i - j + n - 1] & xb[j]
        out.append(acc)
    return BitStream.from_bits(out)


class ToeplitzExtractor:
    """Precomputes the seed for repeated extraction with one ToeplitzSpec."""

    def __init__(self, spec: ToeplitzSpec, method="fast", batch=DEFAULT_BATCH, hardware=None):
        if method not in ("fast", "fft", "naive"):
            raise ValueError(f"unknown method {method!r}")
        self.spec = spec
        self.method = method
        self.batch = max(1, int(batch))
        self.hardware = hardware
        n, m = spec.n, spec.m
        self.in_bytes = (n + 7) // 8
        self.out_bytes = (m + 7) // 8
        if method == "fast":
            self.k = _gf2.padded_words(-(-n // 64))
            npad = 64 * self.k
            bits = np.zeros(2 * npad, np.uint8)
            bits[npad - n:npad - n + n + m - 1] = spec.seed.to_bits()
            self.seed_words = np.packbits(bits, bitorder="little").view("<u8").astype(np.uint64)
            self.rows = -(-m // 64)
        elif method == "fft":
            self.fft_len = scipy.fft.next_fast_len(n + m - 1, real=True)
            self.seed_fft = scipy.fft.rfft(spec.seed.to_bits().astype(np.float64), self.fft_len)

    def __call__(self, x) -> BitStream:
        x = _as_bitstream(x)
        if len(x) != self.spec.n:
            raise DimensionError(f"input has {len(x)} bits, expected {self.spec.n}")
        if self.method == "naive":
            return toeplitz_extract_naive(self.spec, x)
        out = self.extract_blocks(x.data.reshape(1, -1))
        return BitStream(out[0], self.spec.m)

    def extract_blocks(self, blocks: np.ndarray) -> np.ndarray:
        """Extract each row of a (count, ceil(n/8)) uint8 array of packed inputs.

        Returns a (count, ceil(m/8)) uint8 array of packed outputs.  Bits past n
        in each input row are ignored.
        """
        blocks = np.asarray(blocks, dtype=np.uint8)
        if blocks.ndim != 2 or blocks.shape[1] != self.in_bytes:
            raise DimensionError(f"blocks must have shape (count, {self.in_bytes})")
        if self.method == "naive":
            rows = [toeplitz_extract_naive(self.spec, BitStream(b, self.spec.n)).data for b in blocks]
            return np.array(rows, dtype=np.uint8).reshape(len(blocks), self.out_bytes)
        out = np.empty((blocks.shape[0], self.out_bytes), np.uint8)
        for start in range(0, blocks.shape[0], self.batch):
            chunk = blocks[start:start + self.batch]
            out[start:start + len(chunk)] = self._fast(chunk) if self.method == "fast" else self._fft(chunk)
        tail = self.spec.m % 8
        if tail:
            out[:, -1] &= (1 << tail) - 1
        return out

    def _fast(self, chunk):
        count = chunk.shape[0]
        padded = np.zeros((count, 8 * self.k), np.uint8)
        padded[:, :self.in_bytes] = chunk
        tail = self.spec.n % 8
        if tail:
            padded[:, self.in_bytes - 1] &= (1 << tail) - 1
        x = np.ascontiguousarray(padded.view("<u8").astype(np.uint64, copy=False).T)
        y = _gf2.toeplitz_words(self.seed_words, x, self.rows, hardware=self.hardware)
        yb = np.ascontiguousarray(y.T).astype("<u8", copy=False).view(np.uint8)
        return yb[:, :self.out_bytes]

    def _fft(self, chunk):
        n, m = self.spec.n, self.spec.m
        bits = np.unpackbits(chunk, axis=1, count=n, bitorder="little").astype(np.float64)
        conv = scipy.fft.irfft(scipy.fft.rfft(bits, self.fft_len, axis=1) * self.seed_fft, self.fft_len, axis=1)
        mid = conv[:, n - 1:n - 1 + m]
        rounded = np.rint(mid)
        err = float(np.max(np.abs(mid - rounded))) if mid.size else 0.0
        if err >= 0.25:
            raise ExactnessError(f"FFT rounding error {err:.3g} exceeds the 0.25 margin")
        parity = (rounded.astype(np.int64) & 1).astype(np.uint8)
        return np.packbits(parity, axis=1, bitorder="little")


def toeplitz_extract(spec: ToeplitzSpec, x, method="fast") -> BitStream:
    return ToeplitzExtractor(spec, method=method, batch=1)(x)


def _worker_count(workers):
    if workers is None:
        env = os.environ.get("QRNG_THREADS")
        workers = int(env) if env else 1
    return max(1, int(workers))


def extract_stream(policy, spec: ToeplitzSpec, data, drop_partial=True, method="fast",
                   workers=None, extractor=None) -> BitStream:
    """Extract consecutive n-bit blocks of ``data`` with one fixed seed.

    ``data`` is raw bytes (each byte = 8 bits LSB first), a uint8 array or a
    BitStream.  A trailing partial block is dropped, or rejected with
    DimensionError when ``drop_partial`` is false.  Output order always
    follows input order.
    """
    n = spec.n
    if policy is not None:
        if policy.block_n != n:
            raise DimensionError(f"policy block_n {policy.block_n} != spec n {n}")
        budget = output_length(n, policy)
        if spec.m > budget:
            raise OverExtractionError(f"m = {spec.m} exceeds the entropy budget {budget}")
    if isinstance(data, BitStream):
        stream = data
    else:
        raw = np.frombuffer(bytes(data), np.uint8) if isinstance(data, (bytes, bytearray, memoryview)) \
            else np.ascontiguousarray(data, dtype=np.uint8).ravel()
        stream = BitStream(raw, raw.size * 8)
    total = len(stream)
    count, rem = divmod(total, n)
    if rem and not drop_partial:
        raise DimensionError(f"input of {total} bits leaves a partial block of {rem} bits")
    if count == 0:
        return BitStream.zeros(0)
    if n % 8 == 0:
        blocks = stream.data[:count * n // 8].reshape(count, n // 8)
    else:
        bits = stream.to_bits()[:count * n].reshape(count, n)
        blocks = np.packbits(bits, axis=1, bitorder="little")
    ext = extractor or ToeplitzExtractor(spec, method=method)
    workers = _worker_count(workers)
    if workers == 1 or count <= ext.batch:
        out = ext.extract_blocks(blocks)
    else:
        step = ext.batch
        parts = [blocks[i:i + step] for i in range(0, count, step)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = np.concatenate(list(pool.map(ext.extract_blocks, parts)))
    if spec.m % 8 == 0:
        return BitStream(out.ravel(), count * spec.m)
    return BitStream.concat(BitStream(row, spec.m) for row in out)


def bench_throughput(spec: ToeplitzSpec, duration=1.0, method="fast", batch=DEFAULT_BATCH, seed=0):
    """Steady-state throughput on random input.

    Batches are timed one by one and the median batch rate is reported, which
    keeps short interruptions by other processes from skewing the figure (the
    mean and best rates are included too).  The naive path is timed on as many
    output rows as fit in ``duration`` and extrapolated to all m rows (its cost
    is exactly linear in the row count).
    """
    rng = np.random.default_rng(seed)
    in_bytes = (spec.n + 7) // 8
    if method == "naive":
        x = BitStream(rng.integers(0, 256, in_bytes, dtype=np.uint8), spec.n)
        rows, chunk, elapsed = 0, 1, 0.0
        while rows < spec.m and (elapsed < duration or rows == 0):
            chunk = min(chunk, spec.m - rows)
            t0 = time.perf_counter()
            toeplitz_extract_naive(spec, x, rows=chunk)
            elapsed += time.perf_counter() - t0
            rows += chunk
            chunk *= 2
        latency = elapsed / rows * spec.m
        mbps = spec.n / latency / 1e6
        return {"method": method, "input_mbps": mbps, "input_mbps_mean": mbps, "input_mbps_best": mbps,
                "output_mbps": spec.m / latency / 1e6, "block_latency_s": latency,
                "blocks": 1, "rows_timed": rows, "extrapolated": rows < spec.m}
    ext = ToeplitzExtractor(spec, method=method, batch=batch)
    blocks = rng.integers(0, 256, (ext.batch, in_bytes), dtype=np.uint8)
    ext.extract_blocks(blocks)  # warm-up / JIT compile
    times = []
    start = time.perf_counter()
    while not times or time.perf_counter() - start < duration:
        t0 = time.perf_counter()
        ext.extract_blocks(blocks)
        times.append(time.perf_counter() - t0)
    rates = blocks.shape[0] / np.array(times)  # blocks per second
    t1 = time.perf_counter()
    ext.extract_blocks(blocks[:1])
    single = time.perf_counter() - t1
    med = float(np.median(rates))
    return {"method": method, "input_mbps": med * spec.n / 1e6,
            "input_mbps_mean": len(times) * blocks.shape[0] / sum(times) * spec.n / 1e6,
            "input_mbps_best": float(rates.max()) * spec.n / 1e6,
            "output_mbps": med * spec.m / 1e6, "block_latency_s": single,
            "blocks": len(times) * blocks.shape[0], "extrapolated": False}


def write_seed(seed: BitStream, path) -> Path:
    return write_bits(seed, path)


def read_seed(path) -> BitStream:
    return read_bits(path)
