/** Binary PPM (P6) decoding and BMP data-URL encoding, no canvas needed. */

export interface RgbImage {
  width: number;
  height: number;
  rgb: Uint8Array; // row-major, 3 bytes per pixel
}

export function decodePpm(data: Uint8Array): RgbImage {
  if (data[0] !== 0x50 || data[1] !== 0x36) {
    throw new Error("not a binary PPM (P6) image");
  }
  // header fields: width, height, maxval, separated by whitespace
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < data.length && isSpace(data[pos])) pos++;
    if (data[pos] === 0x23) {
      while (pos < data.length && data[pos] !== 0x0a) pos++;
      continue;
    }
    let value = 0;
    const start = pos;
    while (pos < data.length && !isSpace(data[pos])) {
      value = value * 10 + (data[pos] - 0x30);
      pos++;
    }
    if (pos === start) throw new Error("truncated PPM header");
    fields.push(value);
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (maxval !== 255) throw new Error(`unsupported maxval ${maxval}`);
  const need = width * height * 3;
  if (data.length - pos < need) throw new Error("truncated PPM body");
  return { width, height, rgb: data.slice(pos, pos + need) };
}

function isSpace(b: number): boolean {
  return b === 0x20 || b === 0x0a || b === 0x0d || b === 0x09;
}

/** Encode as uncompressed 24-bit BMP wrapped in a data URL. */
export function toBmpDataUrl(img: RgbImage): string {
  const rowSize = Math.ceil((img.width * 3) / 4) * 4;
  const dataSize = rowSize * img.height;
  const fileSize = 54 + dataSize;
  const buf = new Uint8Array(fileSize);
  const view = new DataView(buf.buffer);
  buf[0] = 0x42; // 'B'
  buf[1] = 0x4d; // 'M'
  view.setUint32(2, fileSize, true);
  view.setUint32(10, 54, true);
  view.setUint32(14, 40, true);
  view.setInt32(18, img.width, true);
  view.setInt32(22, -img.height, true); // negative height: top-down rows
  view.setUint16(26, 1, true);
  view.setUint16(28, 24, true);
  view.setUint32(34, dataSize, true);
  for (let y = 0; y < img.height; y++) {
    for (let x = 0; x < img.width; x++) {
      const src = (y * img.width + x) * 3;
      const dst = 54 + y * rowSize + x * 3;
      buf[dst] = img.rgb[src + 2]; // BMP stores BGR
      buf[dst + 1] = img.rgb[src + 1];
      buf[dst + 2] = img.rgb[src];
    }
  }
  return `data:image/bmp;base64,${toBase64(buf)}`;
}

function toBase64(bytes: Uint8Array): string {
  const g = globalThis as { Buffer?: { from(b: Uint8Array): { toString(e: string): string } } };
  if (typeof g.Buffer !== "undefined") {
    return g.Buffer.from(bytes).toString("base64");
  }
  let binary = "";
  for (const b of bytes) binary += String.fromCharCode(b);
  return btoa(binary);
}
