/**
 * Built-in deterministic feature extractors.
 *
 * Real pretrained backbones plug in behind the same interface; the bundled
 * models are dependency-free stand-ins that still exercise the full
 * export path (preprocessing, batching, container format, manifests).
 * Only the last-layer output is ever exported.
 */

import { Image } from './ppm'
import { preprocess } from './image'

export interface FeatureModel {
  id: string
  featureDim: number
  cropSize: number
  /** features of one already-preprocessed image */
  embed(img: Image): Float64Array
}

const GRID = 16

/** Mean RGB over a GRID x GRID patch grid: a patch-embedding analog. */
class PatchMeanModel implements FeatureModel {
  readonly id: string
  readonly featureDim = GRID * GRID * 3
  readonly cropSize: number

  constructor(id: string, cropSize: number) {
    this.id = id
    this.cropSize = cropSize
  }

  embed(img: Image): Float64Array {
    const { width: w, height: h, pixels } = img
    const out = new Float64Array(this.featureDim)
    const plane = w * h
    for (let py = 0; py < GRID; py++) {
      const y0 = Math.round((py * h) / GRID)
      const y1 = Math.max(y0 + 1, Math.round(((py + 1) * h) / GRID))
      for (let px = 0; px < GRID; px++) {
        const x0 = Math.round((px * w) / GRID)
        const x1 = Math.max(x0 + 1, Math.round(((px + 1) * w) / GRID))
        for (let c = 0; c < 3; c++) {
          let sum = 0
          for (let y = y0; y < y1; y++) {
            for (let x = x0; x < x1; x++) sum += pixels[c * plane + y * w + x]
          }
          out[(py * GRID + px) * 3 + c] = sum / ((y1 - y0) * (x1 - x0))
        }
      }
    }
    return out
  }
}

// splitmix64-style mixer over BigInt, reduced to uniform doubles
const MASK = (1n << 64n) - 1n

function mix64(x: bigint): bigint {
  x = x & MASK
  x = (x ^ (x >> 30n)) * 0xbf58476d1ce4e5b9n & MASK
  x = (x ^ (x >> 27n)) * 0x94d049bb133111ebn & MASK
  return x ^ (x >> 31n)
}

function gaussianTable(seed: bigint, count: number): Float64Array {
  const out = new Float64Array(count)
  const pairs = Math.ceil(count / 2)
  for (let i = 0; i < pairs; i++) {
    const u1 = Number(mix64(seed + BigInt(2 * i + 1) * 0x9e3779b97f4a7c15n) >> 11n) * 2 ** -53
    const u2 = Number(mix64(seed + BigInt(2 * i + 2) * 0x9e3779b97f4a7c15n) >> 11n) * 2 ** -53
    const r = Math.sqrt(-2 * Math.log1p(-u1))
    const theta = 2 * Math.PI * u2
    out[2 * i] = r * Math.cos(theta)
    if (2 * i + 1 < count) out[2 * i + 1] = r * Math.sin(theta)
  }
  return out
}

/** Seeded Gaussian projection of the patch-mean features to a lower dim. */
class RandomProjectionModel implements FeatureModel {
  readonly id: string
  readonly featureDim: number
  readonly cropSize: number
  private readonly base: PatchMeanModel
  private readonly weights: Float64Array

  constructor(id: string, featureDim: number, cropSize: number, seed: bigint) {
    this.id = id
    this.featureDim = featureDim
    this.cropSize = cropSize
    this.base = new PatchMeanModel(`${id}-base`, cropSize)
    this.weights = gaussianTable(seed, featureDim * this.base.featureDim)
    const scale = 1 / Math.sqrt(this.base.featureDim)
    for (let i = 0; i < this.weights.length; i++) this.weights[i] *= scale
  }

  embed(img: Image): Float64Array {
    const patch = this.base.embed(img)
    const out = new Float64Array(this.featureDim)
    const d = patch.length
    for (let f = 0; f < this.featureDim; f++) {
      let acc = 0
      for (let j = 0; j < d; j++) acc += this.weights[f * d + j] * patch[j]
      out[f] = acc
    }
    return out
  }
}

export function buildModel(modelId: string, cropSize: number): FeatureModel {
  switch (modelId) {
    case 'patch16-mean':
      return new PatchMeanModel(modelId, cropSize)
    case 'patch16-rproj-512':
      return new RandomProjectionModel(modelId, 512, cropSize, 0x5eed5eed5eedn)
    default:
      throw new Error(`unknown model id '${modelId}' (try patch16-mean, patch16-rproj-512)`)
  }
}

export function embedPreprocessed(model: FeatureModel, raw: Image): Float64Array {
  return model.embed(preprocess(raw, model.cropSize))
}
