// LocalKeyStore: the user's private key, as the compact payload, in
// browser-local persistent storage. The payload never leaves this store
// except into Web Crypto key imports; it is never put on the wire.

import { importCompactPayload, KeyPairHandle } from "./crypto.js";

const STORAGE_KEY = "dabih:private-key:v1";

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

export class LocalKeyStore {
  private cached: KeyPairHandle | null = null;

  constructor(private storage: StorageLike) {}

  hasKey(): boolean {
    return this.storage.getItem(STORAGE_KEY) !== null;
  }

  payload(): string | null {
    return this.storage.getItem(STORAGE_KEY);
  }

  async save(payload: string): Promise<KeyPairHandle> {
    const handle = await importCompactPayload(payload); // validates before storing
    this.storage.setItem(STORAGE_KEY, handle.compactPayload);
    this.cached = handle;
    return handle;
  }

  async load(): Promise<KeyPairHandle | null> {
    if (this.cached) return this.cached;
    const payload = this.storage.getItem(STORAGE_KEY);
    if (payload === null) return null;
    this.cached = await importCompactPayload(payload);
    return this.cached;
  }

  clear(): void {
    this.storage.removeItem(STORAGE_KEY);
    this.cached = null;
  }
}
