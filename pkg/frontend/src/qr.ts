// QR encoding/decoding over the vendored implementations (qrcode-generator
// and jsQR, loaded as plain scripts in the browser, injected in tests).
// The payload is always the compact key text format, encoded as text so it
// can also be copy-pasted.

export interface QrMatrix {
  size: number;
  isDark(row: number, col: number): boolean;
}

type QrFactory = (typeNumber: number, level: string) => {
  addData(data: string, mode: string): void;
  make(): void;
  getModuleCount(): number;
  isDark(row: number, col: number): boolean;
};

type JsQrFn = (data: Uint8ClampedArray, width: number, height: number) =>
  { data: string } | null;

function qrFactory(): QrFactory {
  const factory = (globalThis as Record<string, unknown>)["qrcode"];
  if (typeof factory !== "function") {
    throw new Error("qrcode-generator is not loaded");
  }
  return factory as QrFactory;
}

export function encodeQr(payload: string, level: "L" | "M" | "Q" | "H" = "M"): QrMatrix {
  const qr = qrFactory()(0, level); // 0 = smallest version that fits
  qr.addData(payload, "Byte");
  qr.make();
  return { size: qr.getModuleCount(), isDark: (row, col) => qr.isDark(row, col) };
}

export function renderBitmap(matrix: QrMatrix, scale = 4, quiet = 4): {
  data: Uint8ClampedArray; width: number; height: number;
} {
  const width = (matrix.size + 2 * quiet) * scale;
  const data = new Uint8ClampedArray(width * width * 4).fill(255);
  for (let row = 0; row < matrix.size; row++) {
    for (let col = 0; col < matrix.size; col++) {
      if (!matrix.isDark(row, col)) continue;
      for (let dy = 0; dy < scale; dy++) {
        for (let dx = 0; dx < scale; dx++) {
          const px = ((row + quiet) * scale + dy) * width + (col + quiet) * scale + dx;
          data[px * 4] = data[px * 4 + 1] = data[px * 4 + 2] = 0;
        }
      }
    }
  }
  return { data, width, height: width };
}

export function decodeBitmap(data: Uint8ClampedArray, width: number, height: number): string | null {
  const jsQR = (globalThis as Record<string, unknown>)["jsQR"];
  if (typeof jsQR !== "function") throw new Error("jsQR is not loaded");
  const result = (jsQR as JsQrFn)(data, width, height);
  return result ? result.data : null;
}

export function drawToCanvas(matrix: QrMatrix, canvas: HTMLCanvasElement, scale = 4, quiet = 4): void {
  const bitmap = renderBitmap(matrix, scale, quiet);
  canvas.width = bitmap.width;
  canvas.height = bitmap.height;
  const ctx = canvas.getContext("2d")!;
  ctx.putImageData(new ImageData(bitmap.data, bitmap.width, bitmap.height), 0, 0);
}
