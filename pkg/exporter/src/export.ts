/**
 * Walk an image-folder dataset (one subdirectory per class, PPM files),
 * embed every image with the requested model, and write the engine's
 * embedding-table directory: features.ndt, labels.ndt, names.txt, plus a
 * manifest recording the model, layer, preprocessing, and a content hash.
 *
 * Row order is sorted(class name) then sorted(file name) — identical to the
 * engine's image-mode loader, so indices line up across tools. Output is
 * written to a temp directory and renamed into place.
 */

import { createHash } from 'crypto'
import * as fs from 'fs'
import * as path from 'path'

import { encodeFloat64, encodeUint32 } from './ndt'
import { decodePpm } from './ppm'
import { FeatureModel, buildModel, embedPreprocessed } from './models'

export interface ExportResult {
  count: number
  featureDim: number
  classNames: string[]
  contentHash: string
}

function listClassDirs(imageRoot: string): string[] {
  const entries = fs
    .readdirSync(imageRoot, { withFileTypes: true })
    .filter((e) => e.isDirectory())
    .map((e) => e.name)
    .sort()
  if (entries.length === 0) {
    throw new Error(`${imageRoot}: no class subdirectories`)
  }
  return entries
}

export function exportDataset(
  modelId: string,
  imageRoot: string,
  outDir: string,
  cropSize = 224,
): ExportResult {
  const model: FeatureModel = buildModel(modelId, cropSize)
  const classNames = listClassDirs(imageRoot)
  const rows: Float64Array[] = []
  const labels: number[] = []
  for (let cls = 0; cls < classNames.length; cls++) {
    const dir = path.join(imageRoot, classNames[cls])
    const files = fs
      .readdirSync(dir)
      .filter((f) => f.endsWith('.ppm'))
      .sort()
    if (files.length === 0) {
      throw new Error(`${dir}: class has no PPM samples`)
    }
    for (const file of files) {
      const raw = decodePpm(fs.readFileSync(path.join(dir, file)))
      rows.push(embedPreprocessed(model, raw))
      labels.push(cls)
    }
  }

  const n = rows.length
  const f = model.featureDim
  const features = new Float64Array(n * f)
  rows.forEach((row, i) => features.set(row, i * f))

  const featuresBuf = encodeFloat64([n, f], features)
  const labelsBuf = encodeUint32([n], Uint32Array.from(labels))
  const contentHash = createHash('sha256')
    .update(featuresBuf)
    .update(labelsBuf)
    .digest('hex')

  const short = Math.ceil((8 * cropSize) / 7)
  const manifest = [
    `model=${modelId}`,
    'layer=last',
    `preprocess=resize-shortest-${short},center-crop-${cropSize}`,
    `feature_dim=${f}`,
    `count=${n}`,
    `content_hash=sha256:${contentHash}`,
  ].join('\n')

  const tmp = `${outDir}.tmp-${process.pid}`
  fs.rmSync(tmp, { recursive: true, force: true })
  fs.mkdirSync(tmp, { recursive: true })
  fs.writeFileSync(path.join(tmp, 'features.ndt'), featuresBuf)
  fs.writeFileSync(path.join(tmp, 'labels.ndt'), labelsBuf)
  fs.writeFileSync(path.join(tmp, 'names.txt'), classNames.join('\n') + '\n')
  fs.writeFileSync(path.join(tmp, 'manifest.txt'), manifest + '\n')
  fs.rmSync(outDir, { recursive: true, force: true })
  fs.renameSync(tmp, outDir)

  return { count: n, featureDim: f, classNames, contentHash }
}
