// Fetch client for the /api/v1 endpoints. The chunk framing (raw bytes in
// the body, x-chunk-hash header, index in the path) matches the CLI exactly
// so the server has one upload path.
//
// Every request goes through request(); the test interception harness wraps
// fetch to prove no private-key material ever leaves the client.

import { sha256Hex } from "./crypto.js";

export class ApiError extends Error {
  constructor(public status: number, public code: string, message: string,
              public detail: Record<string, unknown> = {}) {
    super(message);
  }
}

export interface DatasetView {
  mnemonic: string;
  owner: string;
  filename: string;
  size: number;
  dataset_hash: string | null;
  created_at: string;
  permission: string | null;
  members: { user_id: string; permission: string }[];
  chunks?: { index: number; plain_hash: string; plain_size: number }[];
}

export interface IncompleteUpload {
  mnemonic: string;
  filename: string;
  size: number;
  chunks: { index: number; plain_hash: string }[];
  resumable: boolean;
}

type FetchLike = typeof fetch;

export class Api {
  token: string | null = null; // held in memory only, never persisted
  private fetchImpl: FetchLike;

  constructor(public baseUrl: string = "", fetchImpl?: FetchLike) {
    // default must stay bound to the global, or browsers reject the call
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request(method: string, path: string, options: {
    json?: unknown; body?: BodyInit; headers?: Record<string, string>;
  } = {}): Promise<Response> {
    const headers: Record<string, string> = { ...options.headers };
    if (this.token) headers["Authorization"] = `Bearer ${this.token}`;
    let body = options.body;
    if (options.json !== undefined) {
      headers["Content-Type"] = "application/json";
      body = JSON.stringify(options.json);
    }
    const response = await this.fetchImpl(`${this.baseUrl}/api/v1${path}`, {
      method, headers, body,
    });
    if (!response.ok) {
      let code = "error";
      let message = response.statusText;
      let detail: Record<string, unknown> = {};
      try {
        const parsed = await response.json();
        code = parsed.code ?? code;
        message = parsed.message ?? message;
        detail = parsed.detail ?? {};
      } catch { /* non-JSON error body */ }
      throw new ApiError(response.status, code, message, detail);
    }
    return response;
  }

  private async json<T>(method: string, path: string, options = {}): Promise<T> {
    return (await this.request(method, path, options)).json() as Promise<T>;
  }

  // -- auth / keys -----------------------------------------------------------

  async login(userId: string, name = "", email = "") {
    const result = await this.json<{ token: string; user: { user_id: string; is_admin: boolean } }>(
      "POST", "/auth/login", { json: { user_id: userId, name, email } });
    this.token = result.token;
    return result;
  }

  me() {
    return this.json<{ user_id: string; name: string; is_admin: boolean;
                       key_fingerprint: string | null }>("GET", "/auth/me");
  }

  enrollKey(pem: string) {
    return this.json<{ fingerprint: string; enabled: boolean }>(
      "POST", "/keys", { json: { pem } });
  }

  listKeys() {
    return this.json<{ keys: { fingerprint: string; enabled: boolean }[] }>("GET", "/keys");
  }

  enableKey(fingerprint: string) {
    return this.json<{ fingerprint: string; enabled: boolean }>(
      "POST", `/keys/${fingerprint}/enable`);
  }

  // -- upload ---------------------------------------------------------------

  startUpload(filename: string, size: number, firstChunkHash?: string) {
    return this.json<{ mnemonic: string; duplicate_hint: { mnemonic: string; dataset_hash: string } | null }>(
      "POST", "/upload", { json: { filename, size, first_chunk_hash: firstChunkHash ?? null } });
  }

  async uploadChunk(mnemonic: string, index: number, data: Uint8Array) {
    return this.json<{ index: number; crc32: string }>(
      "PUT", `/upload/${mnemonic}/chunk/${index}`, {
        body: data as unknown as BodyInit,
        headers: {
          "Content-Type": "application/octet-stream",
          "x-chunk-hash": await sha256Hex(data),
        },
      });
  }

  finishUpload(mnemonic: string) {
    return this.json<{ mnemonic: string; dataset_hash: string }>(
      "POST", `/upload/${mnemonic}/finish`);
  }

  async cancelUpload(mnemonic: string) {
    await this.request("DELETE", `/upload/${mnemonic}`);
  }

  async incompleteUploads(): Promise<IncompleteUpload[]> {
    return (await this.json<{ uploads: IncompleteUpload[] }>("GET", "/upload/incomplete")).uploads;
  }

  // -- datasets -----------------------------------------------------------------

  async datasets(): Promise<DatasetView[]> {
    return (await this.json<{ datasets: DatasetView[] }>("GET", "/datasets")).datasets;
  }

  dataset(mnemonic: string) {
    return this.json<DatasetView>("GET", `/datasets/${mnemonic}`);
  }

  envelope(mnemonic: string) {
    return this.json<{ recipient_fingerprint: string; ciphertext: string; key_fingerprint: string }>(
      "GET", `/datasets/${mnemonic}/envelope`);
  }

  async downloadChunk(mnemonic: string, index: number) {
    const response = await this.request("GET", `/datasets/${mnemonic}/chunk/${index}`);
    return {
      index,
      iv: response.headers.get("x-chunk-iv")!,
      plainHash: response.headers.get("x-chunk-hash")!,
      crc32: response.headers.get("x-chunk-crc32")!,
      ciphertext: new Uint8Array(await response.arrayBuffer()),
    };
  }

  share(mnemonic: string, keyB64: string, userId: string, permission: string) {
    return this.json<{ user_id: string; permission: string }>(
      "POST", `/datasets/${mnemonic}/share`,
      { json: { key: keyB64, user_id: userId, permission } });
  }

  reencrypt(mnemonic: string, keyB64: string) {
    return this.json<{ key_fingerprint: string }>(
      "POST", `/datasets/${mnemonic}/reencrypt`, { json: { key: keyB64 } });
  }

  async deleteDataset(mnemonic: string) {
    await this.request("DELETE", `/datasets/${mnemonic}`);
  }

  // -- tokens / admin -----------------------------------------------------------

  createToken(ttlDays?: number) {
    return this.json<{ token: string; expires_at: string }>(
      "POST", "/tokens", { json: { ttl_days: ttlDays ?? null } });
  }

  async adminUsers() {
    return (await this.json<{ users: { user_id: string; name: string; is_admin: boolean;
      keys: { fingerprint: string; enabled: boolean }[] }[] }>("GET", "/admin/users")).users;
  }

  async adminEvents() {
    return (await this.json<{ events: { timestamp: string; actor: string; action: string;
      mnemonic: string | null; detail: string }[] }>("GET", "/admin/events")).events;
  }
}
