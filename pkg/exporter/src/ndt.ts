/**
 * NDT binary tensor container, matching the engine's on-disk format:
 * magic "NDT1", dtype byte (1 = float64 LE, 3 = uint32 LE), ndim byte,
 * two zero padding bytes, ndim uint64 LE dims, row-major payload.
 */

const MAGIC = Buffer.from('NDT1', 'ascii')

export function encodeFloat64(dims: number[], data: Float64Array): Buffer {
  const count = dims.reduce((a, b) => a * b, 1)
  if (count !== data.length) {
    throw new Error(`dims ${dims} do not match data length ${data.length}`)
  }
  const header = Buffer.alloc(8 + 8 * dims.length)
  MAGIC.copy(header, 0)
  header.writeUInt8(1, 4)
  header.writeUInt8(dims.length, 5)
  dims.forEach((d, i) => header.writeBigUInt64LE(BigInt(d), 8 + 8 * i))
  const payload = Buffer.alloc(8 * data.length)
  for (let i = 0; i < data.length; i++) {
    payload.writeDoubleLE(data[i], 8 * i)
  }
  return Buffer.concat([header, payload])
}

export function encodeUint32(dims: number[], data: Uint32Array): Buffer {
  const count = dims.reduce((a, b) => a * b, 1)
  if (count !== data.length) {
    throw new Error(`dims ${dims} do not match data length ${data.length}`)
  }
  const header = Buffer.alloc(8 + 8 * dims.length)
  MAGIC.copy(header, 0)
  header.writeUInt8(3, 4)
  header.writeUInt8(dims.length, 5)
  dims.forEach((d, i) => header.writeBigUInt64LE(BigInt(d), 8 + 8 * i))
  const payload = Buffer.alloc(4 * data.length)
  for (let i = 0; i < data.length; i++) {
    payload.writeUInt32LE(data[i], 4 * i)
  }
  return Buffer.concat([header, payload])
}

export interface NdtArray {
  dims: number[]
  data: Float64Array | Uint32Array
}

/** Reader used by the tests to verify round trips. */
export function decode(buf: Buffer): NdtArray {
  if (!buf.subarray(0, 4).equals(MAGIC)) {
    throw new Error(`bad NDT magic ${buf.subarray(0, 4).toString('hex')}`)
  }
  const dtype = buf.readUInt8(4)
  const ndim = buf.readUInt8(5)
  const dims: number[] = []
  for (let i = 0; i < ndim; i++) {
    dims.push(Number(buf.readBigUInt64LE(8 + 8 * i)))
  }
  const count = dims.reduce((a, b) => a * b, 1)
  const start = 8 + 8 * ndim
  if (dtype === 1) {
    const data = new Float64Array(count)
    for (let i = 0; i < count; i++) data[i] = buf.readDoubleLE(start + 8 * i)
    return { dims, data }
  }
  if (dtype === 3) {
    const data = new Uint32Array(count)
    for (let i = 0; i < count; i++) data[i] = buf.readUInt32LE(start + 4 * i)
    return { dims, data }
  }
  throw new Error(`unknown NDT dtype code ${dtype}`)
}
