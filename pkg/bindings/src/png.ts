/**
 * PNG <-> raw array conversion for 8-bit greyscale and RGB images.
 */

import { PNG } from "pngjs";

export interface ImageArray {
  /** Row-major, channel-interleaved 8-bit intensities. */
  data: Uint8Array;
  width: number;
  height: number;
  channels: 1 | 3;
}

export function validateImage(image: ImageArray, what = "image"): void {
  const { data, width, height, channels } = image;
  if (channels !== 1 && channels !== 3) {
    throw new Error(`ShapeError: ${what} must have 1 or 3 channels, got ${channels}`);
  }
  if (!Number.isInteger(width) || !Number.isInteger(height) || width < 1 || height < 1) {
    throw new Error(`ShapeError: ${what} has invalid dimensions ${width}x${height}`);
  }
  if (data.length !== width * height * channels) {
    throw new Error(
      `ShapeError: ${what} buffer holds ${data.length} bytes, expected ${width * height * channels}`
    );
  }
}

export function encodePng(image: ImageArray): Buffer {
  validateImage(image);
  return PNG.sync.write(
    {
      width: image.width,
      height: image.height,
      data: Buffer.from(image.data),
    } as PNG,
    {
      colorType: image.channels === 1 ? 0 : 2,
      inputColorType: image.channels === 1 ? 0 : 2,
      inputHasAlpha: false,
      bitDepth: 8,
    }
  );
}

export function decodePng(buffer: Buffer): ImageArray {
  const png = PNG.sync.read(buffer);
  const meta = png as unknown as { colorType?: number };
  const grey = meta.colorType === 0 || meta.colorType === 4;
  const pixels = png.width * png.height;
  if (grey) {
    const data = new Uint8Array(pixels);
    for (let i = 0; i < pixels; i++) {
      data[i] = png.data[i * 4];
    }
    return { data, width: png.width, height: png.height, channels: 1 };
  }
  const data = new Uint8Array(pixels * 3);
  for (let i = 0; i < pixels; i++) {
    data[i * 3] = png.data[i * 4];
    data[i * 3 + 1] = png.data[i * 4 + 1];
    data[i * 3 + 2] = png.data[i * 4 + 2];
  }
  return { data, width: png.width, height: png.height, channels: 3 };
}
