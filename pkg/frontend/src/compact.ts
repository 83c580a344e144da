// Compact private-key payload: the four integers (e, p, q, d) as unpadded
// base64url lines under a version header. Everything else about an RSA key
// (n, dp, dq, qi) is recomputed on import, which keeps the payload small
// enough for a comfortably scannable QR code.

import { b64urlToBigint, bigintToB64url } from "./b64.js";

export const COMPACT_HEADER = "dabih-compact-key:v1";

export interface CompactKey {
  e: bigint;
  p: bigint;
  q: bigint;
  d: bigint;
}

export interface ExpandedKey extends CompactKey {
  n: bigint;
  dp: bigint;
  dq: bigint;
  qi: bigint; // p^-1 mod q
}

export function modInverse(a: bigint, m: bigint): bigint {
  let [old_r, r] = [((a % m) + m) % m, m];
  let [old_s, s] = [1n, 0n];
  while (r !== 0n) {
    const q = old_r / r;
    [old_r, r] = [r, old_r - q * r];
    [old_s, s] = [s, old_s - q * s];
  }
  if (old_r !== 1n) throw new Error("not invertible");
  return ((old_s % m) + m) % m;
}

function gcd(a: bigint, b: bigint): bigint {
  while (b !== 0n) [a, b] = [b, a % b];
  return a;
}

function lcm(a: bigint, b: bigint): bigint {
  return (a / gcd(a, b)) * b;
}

export function exportCompact(key: CompactKey): string {
  let { p, q } = key;
  if (p > q) [p, q] = [q, p]; // payload convention: p is the smaller prime
  return [COMPACT_HEADER, bigintToB64url(key.e), bigintToB64url(p),
          bigintToB64url(q), bigintToB64url(key.d)].join("\n") + "\n";
}

export function parseCompact(payload: string): CompactKey {
  const lines = payload.trim().split("\n").map((l) => l.trim());
  if (lines[0] !== COMPACT_HEADER) {
    throw new Error(`missing '${COMPACT_HEADER}' header line`);
  }
  if (lines.length !== 5) {
    throw new Error(`expected 5 lines (header + e, p, q, d), got ${lines.length}`);
  }
  const [e, p, q, d] = lines.slice(1).map(b64urlToBigint);
  return { e, p, q, d };
}

export function expandCompact(key: CompactKey): ExpandedKey {
  const { e, p, q, d } = key;
  if (p < 2n || q < 2n || p === q) throw new Error("p and q must be two distinct primes");
  if ((e * d) % lcm(p - 1n, q - 1n) !== 1n) {
    throw new Error("inconsistent parameters: e*d != 1 modulo lcm(p-1, q-1)");
  }
  return {
    e, p, q, d,
    n: p * q,
    dp: d % (p - 1n),
    dq: d % (q - 1n),
    qi: modInverse(p, q),
  };
}
