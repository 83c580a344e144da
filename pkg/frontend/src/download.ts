// In-browser download: decapsulate the dataset key with the local private
// key, fetch sealed chunks, verify (CRC-32 + plaintext hash) and decrypt in
// memory, reassemble in index order.

import { Api } from "./api.js";
import { decapsulate, KeyPairHandle, openChunk } from "./crypto.js";

export async function downloadDataset(
  api: Api, handle: KeyPairHandle, mnemonic: string,
  onProgress?: (done: number, total: number) => void,
): Promise<{ filename: string; bytes: Uint8Array }> {
  const info = await api.dataset(mnemonic);
  const chunks = info.chunks ?? [];
  const keyBytes = await decapsulate(handle, await api.envelope(mnemonic));
  try {
    const parts: Uint8Array[] = new Array(chunks.length);
    let done = 0;
    for (const chunk of chunks) {
      const sealed = await api.downloadChunk(mnemonic, chunk.index);
      parts[chunk.index] = await openChunk(keyBytes, {
        index: chunk.index,
        iv: sealed.iv,
        ciphertext: sealed.ciphertext,
        plainHash: sealed.plainHash,
        crc32: sealed.crc32,
      });
      done += 1;
      onProgress?.(done, chunks.length);
    }
    const total = parts.reduce((n, p) => n + p.length, 0);
    const bytes = new Uint8Array(total);
    let offset = 0;
    for (const part of parts) {
      bytes.set(part, offset);
      offset += part.length;
    }
    return { filename: info.filename, bytes };
  } finally {
    keyBytes.fill(0);
  }
}

export async function datasetKeyB64(api: Api, handle: KeyPairHandle, mnemonic: string): Promise<string> {
  const keyBytes = await decapsulate(handle, await api.envelope(mnemonic));
  let binary = "";
  for (const byte of keyBytes) binary += String.fromCharCode(byte);
  keyBytes.fill(0);
  return btoa(binary);
}
