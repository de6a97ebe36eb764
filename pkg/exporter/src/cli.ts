#!/usr/bin/env node
/** CLI: export --model ID --images DIR --out DIR [--crop-size N] */

import { exportDataset } from './export'

function parseArgs(argv: string[]): Map<string, string> {
  const args = new Map<string, string>()
  for (let i = 0; i < argv.length; i++) {
    if (!argv[i].startsWith('--')) {
      throw new Error(`unexpected argument '${argv[i]}'`)
    }
    const key = argv[i].slice(2)
    const value = argv[i + 1]
    if (value === undefined) throw new Error(`missing value for --${key}`)
    args.set(key, value)
    i++
  }
  return args
}

export function main(argv: string[]): number {
  if (argv[0] !== 'export') {
    process.stderr.write('usage: embed-exporter export --model ID --images DIR --out DIR [--crop-size N]\n')
    return 2
  }
  try {
    const args = parseArgs(argv.slice(1))
    for (const required of ['model', 'images', 'out']) {
      if (!args.has(required)) throw new Error(`--${required} is required`)
    }
    const crop = args.has('crop-size') ? parseInt(args.get('crop-size')!, 10) : 224
    if (!Number.isFinite(crop) || crop < 1) throw new Error('bad --crop-size')
    const result = exportDataset(args.get('model')!, args.get('images')!, args.get('out')!, crop)
    process.stdout.write(
      `exported ${result.count} rows x ${result.featureDim} dims ` +
        `(${result.classNames.length} classes) hash=${result.contentHash.slice(0, 12)}\n`,
    )
    return 0
  } catch (err) {
    process.stderr.write(`error: ${err instanceof Error ? err.message : String(err)}\n`)
    return 1
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)))
}
