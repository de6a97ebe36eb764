/**
 * Deterministic eval-path preprocessing: bilinear resize of the shortest
 * side to ceil(8 * crop / 7), then a center crop. Half-pixel-center
 * sampling with edge clamping, all in float64.
 */

import { Image } from './ppm'

function axisCoords(nIn: number, nOut: number): { i0: Int32Array; i1: Int32Array; frac: Float64Array } {
  const i0 = new Int32Array(nOut)
  const i1 = new Int32Array(nOut)
  const frac = new Float64Array(nOut)
  for (let d = 0; d < nOut; d++) {
    let s = (d + 0.5) * (nIn / nOut) - 0.5
    s = Math.min(Math.max(s, 0), nIn - 1)
    const lo = Math.min(Math.floor(s), nIn - 1)
    i0[d] = lo
    i1[d] = Math.min(lo + 1, nIn - 1)
    frac[d] = s - lo
  }
  return { i0, i1, frac }
}

export function bilinearResize(img: Image, outH: number, outW: number): Image {
  const { width: w, height: h, pixels } = img
  const rows = axisCoords(h, outH)
  const cols = axisCoords(w, outW)
  const out = new Float64Array(3 * outH * outW)
  const planeIn = w * h
  const planeOut = outW * outH
  for (let c = 0; c < 3; c++) {
    for (let y = 0; y < outH; y++) {
      const r0 = rows.i0[y]
      const r1 = rows.i1[y]
      const fy = rows.frac[y]
      for (let x = 0; x < outW; x++) {
        const c0 = cols.i0[x]
        const c1 = cols.i1[x]
        const fx = cols.frac[x]
        const top = pixels[c * planeIn + r0 * w + c0] * (1 - fx) + pixels[c * planeIn + r0 * w + c1] * fx
        const bot = pixels[c * planeIn + r1 * w + c0] * (1 - fx) + pixels[c * planeIn + r1 * w + c1] * fx
        out[c * planeOut + y * outW + x] = top * (1 - fy) + bot * fy
      }
    }
  }
  return { width: outW, height: outH, pixels: out }
}

export function centerCrop(img: Image, size: number): Image {
  const top = Math.floor((img.height - size) / 2)
  const left = Math.floor((img.width - size) / 2)
  if (top < 0 || left < 0) {
    throw new Error(`image ${img.width}x${img.height} smaller than crop ${size}`)
  }
  const out = new Float64Array(3 * size * size)
  const planeIn = img.width * img.height
  const planeOut = size * size
  for (let c = 0; c < 3; c++) {
    for (let y = 0; y < size; y++) {
      for (let x = 0; x < size; x++) {
        out[c * planeOut + y * size + x] =
          img.pixels[c * planeIn + (top + y) * img.width + (left + x)]
      }
    }
  }
  return { width: size, height: size, pixels: out }
}

export function preprocess(img: Image, cropSize: number): Image {
  const short = Math.ceil((8 * cropSize) / 7)
  let newH: number
  let newW: number
  if (img.height <= img.width) {
    newH = short
    newW = Math.max(1, Math.round((img.width * short) / img.height))
  } else {
    newW = short
    newH = Math.max(1, Math.round((img.height * short) / img.width))
  }
  return centerCrop(bilinearResize(img, newH, newW), cropSize)
}
