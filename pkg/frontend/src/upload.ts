// Chunked upload pipeline: duplicate probe on the first chunk hash, resume
// of interrupted uploads, bounded concurrency, progress callbacks. Framing
// is identical to the CLI client, so the server has a single upload path.

import { Api } from "./api.js";
import { datasetHashOf, sha256Hex } from "./crypto.js";

export const CHUNK_SIZE = 2 * 1024 * 1024;

export interface FileLike {
  name: string;
  size: number;
  slice(start: number, end: number): Blob;
}

export interface DuplicateHint {
  mnemonic: string;
  dataset_hash: string;
}

export interface UploadCallbacks {
  onProgress?(sent: number, total: number): void;
  /** Return true to upload anyway; the default is to cancel the duplicate. */
  onDuplicate?(hint: DuplicateHint): Promise<boolean> | boolean;
}

export interface UploadOptions extends UploadCallbacks {
  chunkSize?: number;
  concurrency?: number;
  signal?: AbortSignal;
}

export type UploadResult = {
  status: "uploaded" | "resumed" | "duplicate";
  mnemonic: string;
  datasetHash: string;
};

export class UploadAborted extends Error {
  constructor(public mnemonic: string, public sentChunks: number) {
    super("upload aborted");
  }
}

async function chunkBytes(file: FileLike, index: number, chunkSize: number): Promise<Uint8Array> {
  const blob = file.slice(index * chunkSize, Math.min((index + 1) * chunkSize, file.size));
  return new Uint8Array(await blob.arrayBuffer());
}

export async function localChunkHashes(file: FileLike, chunkSize: number): Promise<string[]> {
  const total = Math.max(1, Math.ceil(file.size / chunkSize));
  const hashes: string[] = [];
  for (let i = 0; i < total; i++) {
    hashes.push(await sha256Hex(await chunkBytes(file, i, chunkSize)));
  }
  return hashes;
}

export class Uploader {
  private chunkSize: number;
  private concurrency: number;

  constructor(private api: Api, private options: UploadOptions = {}) {
    this.chunkSize = options.chunkSize ?? CHUNK_SIZE;
    this.concurrency = Math.max(1, options.concurrency ?? 2);
  }

  async upload(file: FileLike): Promise<UploadResult> {
    if (file.size === 0) throw new Error(`${file.name}: empty files cannot be stored`);
    const hashes = await localChunkHashes(file, this.chunkSize);
    const localHash = await datasetHashOf(hashes);

    const resumable = await this.findResumable(file, hashes);
    if (resumable) {
      const have = new Set(resumable.chunks.map((c) => c.index));
      const todo = hashes.map((_, i) => i).filter((i) => !have.has(i));
      await this.transfer(file, resumable.mnemonic, todo, hashes.length, have.size);
      const result = await this.api.finishUpload(resumable.mnemonic);
      this.verify(result.dataset_hash, localHash, file.name);
      return { status: "resumed", mnemonic: result.mnemonic, datasetHash: result.dataset_hash };
    }

    const start = await this.api.startUpload(file.name, file.size, hashes[0]);
    const hint = start.duplicate_hint;
    if (hint && hint.dataset_hash === localHash) {
      const proceed = this.options.onDuplicate ? await this.options.onDuplicate(hint) : false;
      if (!proceed) {
        await this.api.cancelUpload(start.mnemonic);
        return { status: "duplicate", mnemonic: hint.mnemonic, datasetHash: hint.dataset_hash };
      }
    }
    await this.transfer(file, start.mnemonic, hashes.map((_, i) => i), hashes.length, 0);
    const result = await this.api.finishUpload(start.mnemonic);
    this.verify(result.dataset_hash, localHash, file.name);
    return { status: "uploaded", mnemonic: result.mnemonic, datasetHash: result.dataset_hash };
  }

  private verify(serverHash: string, localHash: string, name: string): void {
    if (serverHash !== localHash) {
      throw new Error(`${name}: server dataset hash does not match local data`);
    }
  }

  private async findResumable(file: FileLike, hashes: string[]) {
    for (const upload of await this.api.incompleteUploads()) {
      if (upload.filename !== file.name || !upload.resumable) continue;
      if (upload.chunks.some((c) => c.index >= hashes.length)) continue;
      if (upload.chunks.every((c) => c.plain_hash === hashes[c.index])) return upload;
    }
    return null;
  }

  private async transfer(file: FileLike, mnemonic: string, indexes: number[],
                         total: number, alreadySent: number): Promise<void> {
    let sent = alreadySent;
    this.options.onProgress?.(sent, total);
    const queue = [...indexes];
    let failure: unknown = null;

    const worker = async () => {
      while (queue.length > 0) {
        if (failure) return;
        if (this.options.signal?.aborted) {
          throw new UploadAborted(mnemonic, sent);
        }
        const index = queue.shift()!;
        const bytes = await chunkBytes(file, index, this.chunkSize);
        await this.api.uploadChunk(mnemonic, index, bytes);
        sent += 1;
        this.options.onProgress?.(sent, total);
      }
    };

    const workers = Array.from({ length: this.concurrency }, () =>
      worker().catch((error) => { failure = failure ?? error; }));
    await Promise.all(workers);
    if (failure) throw failure;
  }
}
