import { describe, expect, test } from "vitest";

import { b64, b64url, b64urlToBigint, bigintToB64url, bytesToHex, hexToBytes } from "../src/b64.js";
import { crc32, crc32Hex } from "../src/crc32.js";
import { COMPACT_HEADER, expandCompact, exportCompact, modInverse, parseCompact } from "../src/compact.js";

describe("base64", () => {
  test("standard and url alphabets roundtrip", () => {
    for (const size of [0, 1, 2, 3, 4, 31, 32, 33, 255]) {
      const bytes = new Uint8Array(size).map((_, i) => (i * 37 + size) & 0xff);
      expect(b64.decode(b64.encode(bytes))).toEqual(bytes);
      expect(b64url.decode(b64url.encode(bytes))).toEqual(bytes);
    }
  });

  test("url alphabet is unpadded and urlsafe", () => {
    const text = b64url.encode(new Uint8Array([251, 255, 190]));
    expect(text).not.toMatch(/[+/=]/);
  });

  test("bigint helpers agree with hex", () => {
    const n = 0x1f2e3d4c5b6a798n;
    expect(b64urlToBigint(bigintToB64url(n))).toBe(n);
    expect(bytesToHex(hexToBytes("00ff10"))).toBe("00ff10");
  });
});

describe("crc32", () => {
  test("ieee check value", () => {
    const data = new TextEncoder().encode("123456789");
    expect(crc32(data)).toBe(0xcbf43926);
    expect(crc32Hex(data)).toBe("cbf43926");
  });

  test("empty input", () => {
    expect(crc32(new Uint8Array(0))).toBe(0);
  });
});

describe("compact key math", () => {
  test("toy-scale CRT reconstruction matches the worked values", () => {
    const expanded = expandCompact({ e: 17n, p: 61n, q: 53n, d: 2753n });
    expect(expanded.n).toBe(3233n);
    expect(expanded.dp).toBe(53n);
    expect(expanded.dq).toBe(49n);
    expect(expanded.qi).toBe(20n);
    expect((expanded.qi * expanded.p) % expanded.q).toBe(1n);
  });

  test("inconsistent parameters rejected", () => {
    expect(() => expandCompact({ e: 17n, p: 61n, q: 53n, d: 2754n })).toThrow(/inconsistent/);
    expect(() => expandCompact({ e: 17n, p: 61n, q: 61n, d: 2753n })).toThrow(/distinct/);
  });

  test("export orders p < q and parse roundtrips", () => {
    const payload = exportCompact({ e: 17n, p: 61n, q: 53n, d: 2753n });
    expect(payload.startsWith(COMPACT_HEADER + "\n")).toBe(true);
    expect(payload.endsWith("\n")).toBe(true);
    const parsed = parseCompact(payload);
    expect(parsed.p).toBe(53n);
    expect(parsed.q).toBe(61n);
    expect(parsed.d).toBe(2753n);
  });

  test("malformed payloads rejected", () => {
    expect(() => parseCompact("not-a-key\nAA\nAA\nAA\nAA\n")).toThrow(/header/);
    expect(() => parseCompact(COMPACT_HEADER + "\nAA\nAA\n")).toThrow(/5 lines/);
  });

  test("modular inverse", () => {
    expect(modInverse(3n, 11n)).toBe(4n);
    expect((modInverse(17n, 3120n) * 17n) % 3120n).toBe(1n);
    expect(() => modInverse(6n, 9n)).toThrow(/invertible/);
  });
});
