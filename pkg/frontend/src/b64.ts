// Base64 / base64url over Uint8Array, dependency- and Buffer-free so the
// same code runs in the browser and in node tests.

const STD = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
const URL = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789-_";

function encode(bytes: Uint8Array, alphabet: string, pad: boolean): string {
  let out = "";
  for (let i = 0; i < bytes.length; i += 3) {
    const b0 = bytes[i];
    const b1 = i + 1 < bytes.length ? bytes[i + 1] : 0;
    const b2 = i + 2 < bytes.length ? bytes[i + 2] : 0;
    out += alphabet[b0 >> 2];
    out += alphabet[((b0 & 3) << 4) | (b1 >> 4)];
    if (i + 1 < bytes.length) out += alphabet[((b1 & 15) << 2) | (b2 >> 6)];
    if (i + 2 < bytes.length) out += alphabet[b2 & 63];
  }
  if (pad) while (out.length % 4 !== 0) out += "=";
  return out;
}

function decode(text: string, alphabet: string): Uint8Array {
  const clean = text.replace(/=+$/, "");
  const values = new Map([...alphabet].map((c, i) => [c, i]));
  const out = new Uint8Array(Math.floor((clean.length * 3) / 4));
  let bits = 0;
  let acc = 0;
  let n = 0;
  for (const ch of clean) {
    const v = values.get(ch);
    if (v === undefined) throw new Error(`invalid base64 character: ${ch}`);
    acc = (acc << 6) | v;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out[n++] = (acc >> bits) & 0xff;
    }
  }
  return out.subarray(0, n);
}

export const b64 = {
  encode: (bytes: Uint8Array) => encode(bytes, STD, true),
  decode: (text: string) => decode(text, STD),
};

export const b64url = {
  encode: (bytes: Uint8Array) => encode(bytes, URL, false),
  decode: (text: string) => decode(text, URL),
};

export function bytesToHex(bytes: Uint8Array): string {
  return [...bytes].map((b) => b.toString(16).padStart(2, "0")).join("");
}

export function hexToBytes(hex: string): Uint8Array {
  const out = new Uint8Array(hex.length / 2);
  for (let i = 0; i < out.length; i++) out[i] = parseInt(hex.slice(i * 2, i * 2 + 2), 16);
  return out;
}

export function bigintToBytes(value: bigint): Uint8Array {
  let hex = value.toString(16);
  if (hex.length % 2) hex = "0" + hex;
  return hexToBytes(hex);
}

export function bytesToBigint(bytes: Uint8Array): bigint {
  if (bytes.length === 0) return 0n;
  return BigInt("0x" + bytesToHex(bytes));
}

export function b64urlToBigint(text: string): bigint {
  return bytesToBigint(b64url.decode(text));
}

export function bigintToB64url(value: bigint): string {
  return b64url.encode(bigintToBytes(value));
}
