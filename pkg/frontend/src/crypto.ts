// Browser-side cryptography on top of the Web Crypto API: 4096-bit RSA-OAEP
// key pairs, SHA-256 fingerprints over the canonical (SPKI) encoding,
// envelope decapsulation and AES-256-CBC chunk decryption/verification.
//
// Private keys live as non-extractable-in-spirit CryptoKey handles plus the
// compact payload held by the key store; nothing here ever serializes
// private material into a request.

import { b64, b64urlToBigint, bigintToB64url, bytesToHex, hexToBytes } from "./b64.js";
import { crc32Hex } from "./crc32.js";
import { CompactKey, expandCompact, exportCompact, modInverse, parseCompact } from "./compact.js";

const subtle = globalThis.crypto.subtle;

const RSA_PARAMS: RsaHashedKeyGenParams = {
  name: "RSA-OAEP",
  modulusLength: 4096,
  publicExponent: new Uint8Array([1, 0, 1]),
  hash: "SHA-256",
};

export interface KeyPairHandle {
  privateKey: CryptoKey;
  publicKey: CryptoKey;
  fingerprint: string; // SHA-256 of the SPKI DER, lowercase hex
  publicPem: string;
  compactPayload: string;
}

export async function sha256(bytes: Uint8Array): Promise<Uint8Array> {
  return new Uint8Array(await subtle.digest("SHA-256", bytes as BufferSource));
}

export async function sha256Hex(bytes: Uint8Array): Promise<string> {
  return bytesToHex(await sha256(bytes));
}

function derToPem(der: Uint8Array, label: string): string {
  const body = b64.encode(der).replace(/(.{64})/g, "$1\n").trimEnd();
  return `-----BEGIN ${label}-----\n${body}\n-----END ${label}-----\n`;
}

async function describePublicKey(publicKey: CryptoKey): Promise<{ fingerprint: string; pem: string }> {
  const spki = new Uint8Array(await subtle.exportKey("spki", publicKey));
  return { fingerprint: await sha256Hex(spki), pem: derToPem(spki, "PUBLIC KEY") };
}

export async function generateKeyPair(): Promise<KeyPairHandle> {
  const pair = await subtle.generateKey(RSA_PARAMS, true, ["encrypt", "decrypt"]);
  const jwk = await subtle.exportKey("jwk", pair.privateKey);
  const compact: CompactKey = {
    e: b64urlToBigint(jwk.e!),
    p: b64urlToBigint(jwk.p!),
    q: b64urlToBigint(jwk.q!),
    d: b64urlToBigint(jwk.d!),
  };
  const { fingerprint, pem } = await describePublicKey(pair.publicKey);
  return {
    privateKey: pair.privateKey,
    publicKey: pair.publicKey,
    fingerprint,
    publicPem: pem,
    compactPayload: exportCompact(compact),
  };
}

export async function importCompactPayload(payload: string): Promise<KeyPairHandle> {
  const expanded = expandCompact(parseCompact(payload));
  // RFC 7518 wants qi = q^-1 mod p for the (p, q) order used in the JWK.
  const jwk: JsonWebKey = {
    kty: "RSA",
    alg: "RSA-OAEP-256",
    ext: true,
    key_ops: ["decrypt"],
    n: bigintToB64url(expanded.n),
    e: bigintToB64url(expanded.e),
    d: bigintToB64url(expanded.d),
    p: bigintToB64url(expanded.p),
    q: bigintToB64url(expanded.q),
    dp: bigintToB64url(expanded.dp),
    dq: bigintToB64url(expanded.dq),
    qi: bigintToB64url(modInverse(expanded.q, expanded.p)),
  };
  const privateKey = await subtle.importKey(
    "jwk", jwk, { name: "RSA-OAEP", hash: "SHA-256" }, true, ["decrypt"]);
  const publicJwk: JsonWebKey = {
    kty: "RSA", alg: "RSA-OAEP-256", ext: true, key_ops: ["encrypt"],
    n: jwk.n, e: jwk.e,
  };
  const publicKey = await subtle.importKey(
    "jwk", publicJwk, { name: "RSA-OAEP", hash: "SHA-256" }, true, ["encrypt"]);
  const { fingerprint, pem } = await describePublicKey(publicKey);
  return { privateKey, publicKey, fingerprint, publicPem: pem, compactPayload: payload };
}

export interface EnvelopeView {
  recipient_fingerprint: string;
  ciphertext: string; // base64
  key_fingerprint: string;
}

export async function decapsulate(handle: KeyPairHandle, envelope: EnvelopeView): Promise<Uint8Array> {
  if (envelope.recipient_fingerprint !== handle.fingerprint) {
    throw new Error("envelope is addressed to a different key");
  }
  const raw = new Uint8Array(await subtle.decrypt(
    { name: "RSA-OAEP" }, handle.privateKey, b64.decode(envelope.ciphertext) as BufferSource));
  if ((await sha256Hex(raw)) !== envelope.key_fingerprint) {
    throw new Error("recovered key does not match the envelope's key fingerprint");
  }
  return raw;
}

export interface SealedChunkView {
  index: number;
  iv: string; // hex
  ciphertext: Uint8Array;
  plainHash: string; // hex
  crc32: string; // 8 hex chars
}

export async function openChunk(keyBytes: Uint8Array, chunk: SealedChunkView): Promise<Uint8Array> {
  if (crc32Hex(chunk.ciphertext) !== chunk.crc32) {
    throw new Error(`chunk ${chunk.index}: ciphertext CRC-32 mismatch`);
  }
  const key = await subtle.importKey("raw", keyBytes as BufferSource, "AES-CBC", false, ["decrypt"]);
  let plain: Uint8Array;
  try {
    plain = new Uint8Array(await subtle.decrypt(
      { name: "AES-CBC", iv: hexToBytes(chunk.iv) as BufferSource }, key,
      chunk.ciphertext as BufferSource));
  } catch {
    throw new Error(`chunk ${chunk.index}: decryption failed (wrong key or corruption)`);
  }
  if ((await sha256Hex(plain)) !== chunk.plainHash) {
    throw new Error(`chunk ${chunk.index}: plaintext hash mismatch`);
  }
  return plain;
}

export async function datasetHashOf(chunkHashesHex: string[]): Promise<string> {
  const joined = new Uint8Array(chunkHashesHex.length * 32);
  chunkHashesHex.forEach((hex, i) => joined.set(hexToBytes(hex), i * 32));
  return sha256Hex(joined);
}
