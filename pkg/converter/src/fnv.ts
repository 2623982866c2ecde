/**
 * 64-bit FNV-1a, the trailing checksum of the vitforge checkpoint format.
 *
 * The state is kept as two unsigned 32-bit halves in plain numbers so the
 * per-byte loop stays in JIT-friendly integer arithmetic; the multiply by
 * the FNV prime 2^40 + 0x1b3 is decomposed accordingly. All intermediates
 * stay below 2^53, and the 2^-32 scaling is exact (power of two), so the
 * carry extraction is lossless. BigInt only appears at the boundary.
 */

const PRIME_LOW = 0x1b3;
const INV_2_32 = 2.3283064365386963e-10; // 2^-32, exact

export function fnv1a64(data: Uint8Array): bigint {
  let lo = 0x84222325 >>> 0;
  let hi = 0xcbf29ce4 >>> 0;

  for (let i = 0; i < data.length; i++) {
    lo = (lo ^ data[i]) >>> 0;

    // (hi:lo) * (2^40 + 0x1b3) mod 2^64.
    const mLow = lo * PRIME_LOW; // < 2^41, exact in a double
    const carry = Math.floor(mLow * INV_2_32);
    const newLo = mLow >>> 0;
    let newHi = (hi * PRIME_LOW + carry) >>> 0;
    // + (hi:lo) << 40: only the low 24 bits of lo survive, shifted into hi.
    newHi = (newHi + ((lo & 0xffffff) * 256)) >>> 0;

    lo = newLo;
    hi = newHi;
  }
  return (BigInt(hi) << 32n) | BigInt(lo >>> 0);
}
