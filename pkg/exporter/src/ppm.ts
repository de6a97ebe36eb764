/** Binary P6 PPM decoding into channel-first float64 pixels in [0, 1]. */

export interface Image {
  width: number
  height: number
  /** channel-first, row-major: pixels[c * h * w + y * w + x] */
  pixels: Float64Array
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d
}

export function decodePpm(buf: Buffer): Image {
  if (buf.length < 2 || buf[0] !== 0x50 || buf[1] !== 0x36) {
    throw new Error('not a binary P6 PPM')
  }
  let pos = 2
  const fields: number[] = []
  while (fields.length < 3) {
    while (pos < buf.length && (isSpace(buf[pos]) || buf[pos] === 0x23)) {
      if (buf[pos] === 0x23) {
        while (pos < buf.length && buf[pos] !== 0x0a) pos++
      } else {
        pos++
      }
    }
    let start = pos
    while (pos < buf.length && !isSpace(buf[pos])) pos++
    if (start === pos) throw new Error('truncated PPM header')
    fields.push(parseInt(buf.subarray(start, pos).toString('ascii'), 10))
  }
  const [width, height, maxval] = fields
  if (maxval !== 255) throw new Error(`unsupported PPM maxval ${maxval}`)
  pos++ // single whitespace after maxval
  const expected = width * height * 3
  if (buf.length - pos < expected) throw new Error('truncated PPM payload')
  const pixels = new Float64Array(expected)
  const plane = width * height
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const base = pos + (y * width + x) * 3
      for (let c = 0; c < 3; c++) {
        pixels[c * plane + y * width + x] = buf[base + c] / 255.0
      }
    }
  }
  return { width, height, pixels }
}
