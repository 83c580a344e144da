// The dabih single-page app: login, key management with printable QR,
// drag-and-drop uploads with duplicate/resume handling, dataset browsing,
// sharing, key rotation, downloads with in-browser decryption, upload-token
// ingestion pages and the admin panel.
//
// Plain DOM code, hash-routed. The access token lives in memory only; the
// private key lives in LocalKeyStore (browser local storage) as the compact
// payload and never goes on the wire.

import { Api, ApiError } from "./api.js";
import { generateKeyPair } from "./crypto.js";
import { datasetKeyB64, downloadDataset } from "./download.js";
import { LocalKeyStore } from "./keystore.js";
import { decodeBitmap, drawToCanvas, encodeQr } from "./qr.js";
import { Uploader, UploadResult } from "./upload.js";

interface AppState {
  api: Api;
  keystore: LocalKeyStore;
  me: { user_id: string; name: string; is_admin: boolean; key_fingerprint: string | null } | null;
}

const state: AppState = {
  api: new Api(""),
  keystore: new LocalKeyStore(window.localStorage),
  me: null,
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K, attrs: Record<string, string> = {}, ...children: (Node | string)[]
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    if (key === "class") node.className = value;
    else node.setAttribute(key, value);
  }
  node.append(...children);
  return node;
}

function flash(message: string, kind: "ok" | "error" = "ok"): void {
  const banner = el("div", { class: `flash ${kind}` }, message);
  document.body.append(banner);
  setTimeout(() => banner.remove(), kind === "ok" ? 4000 : 8000);
}

function describeError(error: unknown): string {
  if (error instanceof ApiError) return `${error.code}: ${error.message}`;
  return error instanceof Error ? error.message : String(error);
}

async function guard<T>(work: () => Promise<T>): Promise<T | undefined> {
  try {
    return await work();
  } catch (error) {
    flash(describeError(error), "error");
    return undefined;
  }
}

// ---------------------------------------------------------------------------
// Views
// ---------------------------------------------------------------------------

function loginView(root: HTMLElement): void {
  const userId = el("input", { placeholder: "user id", autofocus: "true" });
  const name = el("input", { placeholder: "display name" });
  const email = el("input", { placeholder: "email", type: "email" });
  const button = el("button", {}, "Sign in");
  button.onclick = () => guard(async () => {
    await state.api.login(userId.value.trim(), name.value.trim(), email.value.trim());
    state.me = await state.api.me();
    location.hash = state.me.key_fingerprint ? "#/datasets" : "#/key";
    render();
  });
  root.append(
    el("h2", {}, "Sign in"),
    el("p", { class: "hint" },
       "Local account login. Deployments can swap this for an OpenID provider."),
    el("div", { class: "form" }, userId, name, email, button),
  );
}

function keyView(root: HTMLElement): void {
  const section = el("div", {});
  root.append(el("h2", {}, "Your key"), section);

  const refresh = async () => {
    section.replaceChildren();
    const handle = await state.keystore.load().catch(() => null);
    const keys = (await state.api.listKeys()).keys;

    if (handle) {
      const enrolled = keys.find((k) => k.fingerprint === handle.fingerprint);
      section.append(
        el("p", {}, "Fingerprint: ", el("code", {}, handle.fingerprint)),
        el("p", {}, enrolled
          ? (enrolled.enabled ? "Enrolled and enabled." :
             "Enrolled, waiting for an admin to enable it.")
          : "Not enrolled on this server yet."),
      );
      if (!enrolled) {
        const enroll = el("button", {}, "Enroll public key");
        enroll.onclick = () => guard(async () => {
          await state.api.enrollKey(handle.publicPem);
          flash("public key submitted; an admin must enable it");
          await refresh();
        });
        section.append(enroll);
      }
      const print = el("button", {}, "Print / export QR");
      print.onclick = () => { location.hash = "#/print"; };
      const forget = el("button", { class: "danger" }, "Forget key on this device");
      forget.onclick = () => { state.keystore.clear(); void refresh(); };
      section.append(" ", print, " ", forget);
      return;
    }

    const generate = el("button", {}, "Generate 4096-bit key pair");
    generate.onclick = () => guard(async () => {
      generate.disabled = true;
      generate.textContent = "Generating… (this takes a few seconds)";
      const fresh = await generateKeyPair();
      await state.keystore.save(fresh.compactPayload);
      await state.api.enrollKey(fresh.publicPem);
      flash("key generated locally and public half enrolled; an admin must enable it");
      await refresh();
    });

    const payload = el("textarea", { rows: "7", placeholder:
      "paste a compact key payload (dabih-compact-key:v1 …)" });
    const importButton = el("button", {}, "Import pasted payload");
    importButton.onclick = () => guard(async () => {
      await state.keystore.save(payload.value.trim() + "\n");
      flash("key imported");
      await refresh();
    });
    const scanButton = el("button", {}, "Scan QR with webcam");
    scanButton.onclick = () => void scanQr(section, refresh);

    section.append(
      el("p", {}, "No private key on this device."),
      el("p", {}, generate),
      el("h3", {}, "…or import an existing key"),
      payload, el("p", {}, importButton, " ", scanButton),
    );
  };
  void guard(refresh);
}

async function scanQr(section: HTMLElement, refresh: () => Promise<void>): Promise<void> {
  const video = document.createElement("video");
  const canvas = document.createElement("canvas");
  const stop = el("button", {}, "Stop scanning");
  const box = el("div", { class: "scanner" }, video, stop);
  section.append(box);
  let stream: MediaStream | null = null;
  let active = true;
  stop.onclick = () => { active = false; stream?.getTracks().forEach((t) => t.stop()); box.remove(); };
  try {
    stream = await navigator.mediaDevices.getUserMedia({ video: { facingMode: "environment" } });
    video.srcObject = stream;
    await video.play();
    const tick = async () => {
      if (!active) return;
      if (video.readyState === video.HAVE_ENOUGH_DATA) {
        canvas.width = video.videoWidth;
        canvas.height = video.videoHeight;
        const ctx = canvas.getContext("2d")!;
        ctx.drawImage(video, 0, 0);
        const image = ctx.getImageData(0, 0, canvas.width, canvas.height);
        const text = decodeBitmap(image.data, image.width, image.height);
        if (text && text.startsWith("dabih-compact-key:")) {
          stop.click();
          await guard(async () => {
            await state.keystore.save(text);
            flash("key scanned and imported");
            await refresh();
          });
          return;
        }
      }
      requestAnimationFrame(() => void tick());
    };
    void tick();
  } catch (error) {
    flash(`camera unavailable: ${describeError(error)}`, "error");
    box.remove();
  }
}

function printView(root: HTMLElement): void {
  void guard(async () => {
    const handle = await state.keystore.load();
    if (!handle) { location.hash = "#/key"; render(); return; }
    const canvas = document.createElement("canvas");
    drawToCanvas(encodeQr(handle.compactPayload, "M"), canvas, 4, 4);
    const printButton = el("button", {}, "Print");
    printButton.onclick = () => window.print();
    root.append(
      el("h2", {}, "Private key — keep this page safe"),
      el("p", { class: "hint" },
         "Scan the QR code with a webcam to restore the key, or copy the text. " +
         "Anyone holding this payload can read your datasets."),
      el("div", { class: "print-sheet" },
         canvas,
         el("pre", { class: "payload" }, handle.compactPayload)),
      printButton,
    );
  });
}

function uploadView(root: HTMLElement, ingestToken: string | null = null): void {
  const list = el("div", { class: "uploads" });
  const drop = el("div", { class: "dropzone" },
                  "Drop files here or click to choose");
  const input = el("input", { type: "file", multiple: "true", style: "display:none" });
  drop.onclick = () => input.click();
  drop.ondragover = (event) => { event.preventDefault(); drop.classList.add("hover"); };
  drop.ondragleave = () => drop.classList.remove("hover");
  drop.ondrop = (event) => {
    event.preventDefault();
    drop.classList.remove("hover");
    void handleFiles(event.dataTransfer?.files ?? null);
  };
  input.onchange = () => void handleFiles(input.files);

  const handleFiles = async (files: FileList | null) => {
    if (!files) return;
    for (const file of Array.from(files)) {
      const row = el("div", { class: "upload-row" },
                     el("span", {}, file.name), el("progress", { max: "100", value: "0" }),
                     el("span", { class: "status" }, "…"));
      list.append(row);
      const progress = row.querySelector("progress")!;
      const status = row.querySelector(".status")!;
      const uploader = new Uploader(state.api, {
        onProgress: (sent, total) => { progress.value = (100 * sent) / total; },
        onDuplicate: (hint) =>
          confirm(`This file already exists as ${hint.mnemonic}. Upload anyway?`),
      });
      const result: UploadResult | undefined = await guard(() => uploader.upload(file));
      if (result) {
        progress.value = 100;
        status.textContent = result.status === "duplicate"
          ? `duplicate of ${result.mnemonic}`
          : `${result.mnemonic} (${result.status})`;
      } else {
        status.textContent = "failed";
      }
    }
  };

  root.append(el("h2", {}, ingestToken ? "Upload (via token link)" : "Upload"), drop, input, list);

  // resume list surfaced on revisit
  void guard(async () => {
    const incomplete = (await state.api.incompleteUploads()).filter((u) => u.resumable);
    if (incomplete.length === 0) return;
    const banner = el("div", { class: "resume-banner" },
      el("strong", {}, `${incomplete.length} interrupted upload(s): `),
      incomplete.map((u) => u.filename).join(", "),
      el("p", { class: "hint" },
         "Drop the same file(s) again to resume where they left off."));
    root.insertBefore(banner, drop);
  });
}

function datasetsView(root: HTMLElement): void {
  root.append(el("h2", {}, "Datasets"));
  const table = el("table", { class: "datasets" });
  root.append(table);
  void guard(async () => {
    const handle = await state.keystore.load();
    const datasets = await state.api.datasets();
    if (datasets.length === 0) {
      table.replaceWith(el("p", {}, "No datasets yet. ",
                           el("a", { href: "#/upload" }, "Upload something.")));
      return;
    }
    table.append(el("tr", {},
      el("th", {}, "mnemonic"), el("th", {}, "file"), el("th", {}, "size"),
      el("th", {}, "access"), el("th", {}, "members"), el("th", {}, "")));
    for (const ds of datasets) {
      const actions = el("td", {});
      const download = el("button", {}, "download");
      download.onclick = () => guard(async () => {
        if (!handle) throw new Error("no private key on this device");
        download.disabled = true;
        const { filename, bytes } = await downloadDataset(state.api, handle, ds.mnemonic);
        const url = URL.createObjectURL(new Blob([bytes as BlobPart]));
        const link = el("a", { href: url, download: filename });
        link.click();
        URL.revokeObjectURL(url);
        download.disabled = false;
      });
      actions.append(download);
      if (ds.permission === "write") {
        const share = el("button", {}, "share");
        share.onclick = () => guard(async () => {
          if (!handle) throw new Error("no private key on this device");
          const who = prompt("share with user id:");
          if (!who) return;
          const write = confirm("grant write permission? (cancel = read only)");
          const keyB64 = await datasetKeyB64(state.api, handle, ds.mnemonic);
          await state.api.share(ds.mnemonic, keyB64, who.trim(), write ? "write" : "read");
          flash(`shared ${ds.mnemonic} with ${who}`);
          render();
        });
        const rotate = el("button", {}, "re-encrypt");
        rotate.onclick = () => guard(async () => {
          if (!handle) throw new Error("no private key on this device");
          const keyB64 = await datasetKeyB64(state.api, handle, ds.mnemonic);
          const result = await state.api.reencrypt(ds.mnemonic, keyB64);
          flash(`rotated key: ${result.key_fingerprint.slice(0, 12)}…`);
        });
        const remove = el("button", { class: "danger" }, "delete");
        remove.onclick = () => guard(async () => {
          if (!confirm(`delete ${ds.mnemonic} (${ds.filename})?`)) return;
          await state.api.deleteDataset(ds.mnemonic);
          render();
        });
        actions.append(" ", share, " ", rotate, " ", remove);
      }
      table.append(el("tr", {},
        el("td", {}, el("code", {}, ds.mnemonic)),
        el("td", {}, ds.filename),
        el("td", {}, String(ds.size)),
        el("td", {}, ds.permission ?? ""),
        el("td", {}, ds.members.map((m) => `${m.user_id}(${m.permission[0]})`).join(" ")),
        actions));
    }
  });
}

function tokensView(root: HTMLElement): void {
  root.append(el("h2", {}, "Upload tokens"),
              el("p", { class: "hint" },
                 "Hand the link to anyone who should upload into your account. " +
                 "No account or key is needed on their side; tokens are upload-only."));
  const create = el("button", {}, "Create upload link");
  const out = el("div", {});
  create.onclick = () => guard(async () => {
    const token = await state.api.createToken();
    const link = `${location.origin}/#/ingest?token=${encodeURIComponent(token.token)}`;
    out.append(el("p", {}, el("input", { value: link, readonly: "true", class: "wide" }),
                  el("span", { class: "hint" }, ` expires ${token.expires_at}`)));
  });
  root.append(create, out);
}

function adminView(root: HTMLElement): void {
  root.append(el("h2", {}, "Admin"));
  void guard(async () => {
    const users = await state.api.adminUsers();
    const table = el("table", { class: "datasets" },
      el("tr", {}, el("th", {}, "user"), el("th", {}, "keys"), el("th", {}, "")));
    for (const user of users) {
      const actions = el("td", {});
      for (const key of user.keys.filter((k) => !k.enabled)) {
        const enable = el("button", {}, `enable ${key.fingerprint.slice(0, 12)}…`);
        enable.onclick = () => guard(async () => {
          await state.api.enableKey(key.fingerprint);
          flash(`enabled key for ${user.user_id}`);
          render();
        });
        actions.append(enable, " ");
      }
      table.append(el("tr", {},
        el("td", {}, `${user.user_id}${user.is_admin ? " (admin)" : ""}`),
        el("td", {}, user.keys.map((k) =>
          `${k.fingerprint.slice(0, 12)}…${k.enabled ? " ✓" : " (pending)"}`).join(" | ")),
        actions));
    }
    const events = await state.api.adminEvents();
    const log = el("table", { class: "datasets" },
      el("tr", {}, el("th", {}, "time"), el("th", {}, "actor"), el("th", {}, "action"),
         el("th", {}, "dataset"), el("th", {}, "detail")));
    for (const event of events.slice(0, 200)) {
      log.append(el("tr", {},
        el("td", {}, event.timestamp.slice(0, 19)), el("td", {}, event.actor),
        el("td", {}, event.action), el("td", {}, event.mnemonic ?? ""),
        el("td", {}, event.detail)));
    }
    root.append(el("h3", {}, "Users and keys"), table,
                el("h3", {}, "Activity log"), log);
  });
}

// ---------------------------------------------------------------------------
// Router
// ---------------------------------------------------------------------------

function nav(): HTMLElement {
  const links: [string, string][] = [
    ["#/datasets", "Datasets"], ["#/upload", "Upload"], ["#/key", "Key"],
    ["#/tokens", "Tokens"],
  ];
  if (state.me?.is_admin) links.push(["#/admin", "Admin"]);
  const bar = el("nav", {},
    el("span", { class: "brand" }, "dabih"),
    ...links.map(([href, label]) => el("a", { href }, label)),
    el("span", { class: "spacer" }),
    el("span", { class: "whoami" }, state.me ? state.me.user_id : ""));
  return bar;
}

export function render(): void {
  const root = document.getElementById("app")!;
  root.replaceChildren();
  const [route, query] = location.hash.replace(/^#\//, "").split("?");
  const params = new URLSearchParams(query ?? "");

  if (route === "ingest") {
    const token = params.get("token");
    if (token) state.api.token = token;
    const page = el("main", {});
    root.append(el("nav", {}, el("span", { class: "brand" }, "dabih"),
                   el("span", { class: "hint" }, " data ingestion")), page);
    uploadView(page, token);
    return;
  }

  if (!state.me) {
    const page = el("main", {});
    root.append(el("nav", {}, el("span", { class: "brand" }, "dabih")), page);
    loginView(page);
    return;
  }

  const page = el("main", {});
  root.append(nav(), page);
  switch (route) {
    case "key": keyView(page); break;
    case "print": printView(page); break;
    case "upload": uploadView(page); break;
    case "tokens": tokensView(page); break;
    case "admin": adminView(page); break;
    default: datasetsView(page); break;
  }
}

export function start(): void {
  window.addEventListener("hashchange", render);
  render();
}
