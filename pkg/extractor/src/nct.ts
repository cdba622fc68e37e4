/**
 * NCT1 binary tensor format and bundle manifests.
 *
 * Layout per tensor file: magic "NCT1", version u8 = 1, dtype u8
 * (1 = f32, 2 = f64, 3 = i64), ndim u8, ndim little-endian u64 extents,
 * then the row-major little-endian payload. Bundles are a directory of
 * `<role>.nct` files plus a `manifest.txt` with `key = value` lines
 * (`tensor.<role>` entries, `meta.<key>` metadata, `#` comments).
 */

import * as fs from 'node:fs'
import * as path from 'node:path'

export type Dtype = 'f32' | 'f64' | 'i64'

const MAGIC = Buffer.from('NCT1', 'ascii')
const VERSION = 1
const MAX_NDIM = 8

const DTYPE_CODES: Record<Dtype, number> = { f32: 1, f64: 2, i64: 3 }
const CODE_DTYPES: Record<number, Dtype> = { 1: 'f32', 2: 'f64', 3: 'i64' }
const ITEM_SIZE: Record<Dtype, number> = { f32: 4, f64: 8, i64: 8 }

export interface NctTensor {
  dtype: Dtype
  shape: number[]
  /** flat row-major values; BigInt64Array for i64 */
  data: Float32Array | Float64Array | BigInt64Array
}

function elementCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1)
}

function checkTensor(t: NctTensor): void {
  if (t.shape.length < 1 || t.shape.length > MAX_NDIM) {
    throw new Error(`shape must have 1..${MAX_NDIM} dims, got ${t.shape.length}`)
  }
  if (t.shape.some((e) => e < 0 || !Number.isInteger(e))) {
    throw new Error(`bad extents in shape [${t.shape}]`)
  }
  if (t.data.length !== elementCount(t.shape)) {
    throw new Error(
      `shape [${t.shape}] implies ${elementCount(t.shape)} scalars, data holds ${t.data.length}`,
    )
  }
}

export function encodeTensor(t: NctTensor): Buffer {
  checkTensor(t)
  const header = Buffer.alloc(7 + 8 * t.shape.length)
  MAGIC.copy(header, 0)
  header.writeUInt8(VERSION, 4)
  header.writeUInt8(DTYPE_CODES[t.dtype], 5)
  header.writeUInt8(t.shape.length, 6)
  t.shape.forEach((e, i) => header.writeBigUInt64LE(BigInt(e), 7 + 8 * i))

  const payload = Buffer.alloc(t.data.length * ITEM_SIZE[t.dtype])
  if (t.dtype === 'f32') {
    const data = t.data as Float32Array
    for (let i = 0; i < data.length; i++) payload.writeFloatLE(data[i], 4 * i)
  } else if (t.dtype === 'f64') {
    const data = t.data as Float64Array
    for (let i = 0; i < data.length; i++) payload.writeDoubleLE(data[i], 8 * i)
  } else {
    const data = t.data as BigInt64Array
    for (let i = 0; i < data.length; i++) payload.writeBigInt64LE(data[i], 8 * i)
  }
  return Buffer.concat([header, payload])
}

export function decodeTensor(buf: Buffer): NctTensor {
  if (buf.length < 7) throw new Error(`truncated header: ${buf.length} bytes`)
  if (!buf.subarray(0, 4).equals(MAGIC)) {
    throw new Error(`bad magic ${buf.subarray(0, 4).toString('ascii')}`)
  }
  const version = buf.readUInt8(4)
  if (version !== VERSION) throw new Error(`unsupported format version ${version}`)
  const dtype = CODE_DTYPES[buf.readUInt8(5)]
  if (!dtype) throw new Error(`unknown dtype code ${buf.readUInt8(5)}`)
  const ndim = buf.readUInt8(6)
  if (ndim < 1 || ndim > MAX_NDIM) throw new Error(`ndim ${ndim} outside 1..${MAX_NDIM}`)
  if (buf.length < 7 + 8 * ndim) throw new Error('truncated shape extents')
  const shape: number[] = []
  for (let i = 0; i < ndim; i++) shape.push(Number(buf.readBigUInt64LE(7 + 8 * i)))

  const count = elementCount(shape)
  const offset = 7 + 8 * ndim
  const expected = count * ITEM_SIZE[dtype]
  if (buf.length - offset !== expected) {
    throw new Error(`truncated payload: expected ${expected} bytes, got ${buf.length - offset}`)
  }
  let data: NctTensor['data']
  if (dtype === 'f32') {
    const out = new Float32Array(count)
    for (let i = 0; i < count; i++) out[i] = buf.readFloatLE(offset + 4 * i)
    data = out
  } else if (dtype === 'f64') {
    const out = new Float64Array(count)
    for (let i = 0; i < count; i++) out[i] = buf.readDoubleLE(offset + 8 * i)
    data = out
  } else {
    const out = new BigInt64Array(count)
    for (let i = 0; i < count; i++) out[i] = buf.readBigInt64LE(offset + 8 * i)
    data = out
  }
  return { dtype, shape, data }
}

export function writeTensorFile(t: NctTensor, file: string): void {
  fs.mkdirSync(path.dirname(file), { recursive: true })
  fs.writeFileSync(file, encodeTensor(t))
}

export function readTensorFile(file: string): NctTensor {
  return decodeTensor(fs.readFileSync(file))
}

export interface Bundle {
  datasetName?: string
  tensors: Record<string, NctTensor>
  metadata?: Record<string, string>
}

export function writeBundle(bundle: Bundle, dir: string): string {
  const features = bundle.tensors['features']
  const labels = bundle.tensors['labels']
  if (features && labels && labels.shape[0] !== features.shape[0]) {
    throw new Error(
      `labels length ${labels.shape[0]} does not match features first extent ${features.shape[0]}`,
    )
  }
  fs.mkdirSync(dir, { recursive: true })
  const lines = ['# NCT1 bundle manifest']
  if (bundle.datasetName) lines.push(`dataset_name = ${bundle.datasetName}`)
  for (const role of Object.keys(bundle.tensors)) {
    writeTensorFile(bundle.tensors[role], path.join(dir, `${role}.nct`))
    lines.push(`tensor.${role} = ${role}.nct`)
  }
  for (const [key, value] of Object.entries(bundle.metadata ?? {})) {
    lines.push(`meta.${key} = ${value}`)
  }
  const manifestPath = path.join(dir, 'manifest.txt')
  fs.writeFileSync(manifestPath, lines.join('\n') + '\n', 'utf-8')
  return manifestPath
}

export function readBundle(dirOrManifest: string): Bundle {
  const manifestPath = fs.statSync(dirOrManifest).isDirectory()
    ? path.join(dirOrManifest, 'manifest.txt')
    : dirOrManifest
  const base = path.dirname(manifestPath)
  const bundle: Bundle = { tensors: {}, metadata: {} }
  for (const raw of fs.readFileSync(manifestPath, 'utf-8').split('\n')) {
    const line = raw.trim()
    if (!line || line.startsWith('#')) continue
    const eq = line.indexOf('=')
    if (eq < 0) throw new Error(`expected 'key = value', got ${raw}`)
    const key = line.slice(0, eq).trim()
    const value = line.slice(eq + 1).trim()
    if (key === 'dataset_name') bundle.datasetName = value
    else if (key.startsWith('tensor.')) {
      bundle.tensors[key.slice('tensor.'.length)] = readTensorFile(path.join(base, value))
    } else if (key.startsWith('meta.')) {
      bundle.metadata![key.slice('meta.'.length)] = value
    } else {
      bundle.metadata![key] = value
    }
  }
  return bundle
}
