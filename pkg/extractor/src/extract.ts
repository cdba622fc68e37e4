/**
 * Export penultimate-layer features and the final linear layer of a
 * tf.LayersModel as an NCT1 bundle (roles: features, labels, weights, bias).
 *
 * Features are captured at the input of the final Dense layer, i.e. after
 * the last nonlinearity/pooling, in inference mode, with no input
 * perturbation. The Dense kernel is stored [D, C] by tfjs and exported
 * transposed as C x D weight rows.
 */

import * as tf from '@tensorflow/tfjs'
import { Bundle, NctTensor } from './nct.js'
import { GaussianRng } from './rng.js'

export interface HeadExport {
  /** C x D rows */
  weights: Float32Array
  bias: Float32Array
  nClasses: number
  dim: number
}

export function findFinalDense(model: tf.LayersModel): tf.layers.Layer {
  const last = model.layers[model.layers.length - 1]
  if (!last || last.getClassName() !== 'Dense') {
    throw new Error(
      `final layer ${last ? last.getClassName() : '(none)'} is not Dense; ` +
        'cannot identify the linear classification head',
    )
  }
  return last
}

export function exportHead(model: tf.LayersModel): HeadExport {
  const dense = findFinalDense(model)
  const [kernel, bias] = dense.getWeights()
  if (!kernel || kernel.shape.length !== 2) {
    throw new Error('final Dense layer has no 2-D kernel')
  }
  const [dim, nClasses] = kernel.shape as [number, number]
  const rows = tf.tidy(() => kernel.transpose() as tf.Tensor2D)
  const weights = rows.dataSync() as Float32Array
  rows.dispose()
  const biasData = bias
    ? (bias.dataSync() as Float32Array)
    : new Float32Array(nClasses)
  return { weights: Float32Array.from(weights), bias: Float32Array.from(biasData), nClasses, dim }
}

export function penultimateModel(model: tf.LayersModel): tf.LayersModel {
  const dense = findFinalDense(model)
  const input = Array.isArray(dense.input) ? dense.input[0] : dense.input
  return tf.model({ inputs: model.inputs, outputs: input as tf.SymbolicTensor })
}

function batched(
  net: tf.LayersModel,
  inputs: tf.Tensor,
  batchSize: number,
): { data: Float32Array; dim: number } {
  const n = inputs.shape[0]
  const pieces: Float32Array[] = []
  let dim = -1
  for (let start = 0; start < n; start += batchSize) {
    const size = Math.min(batchSize, n - start)
    const out = tf.tidy(() => {
      const slice = tf.slice(inputs, [start, ...inputs.shape.slice(1).map(() => 0)], [
        size,
        ...inputs.shape.slice(1),
      ])
      return net.predict(slice, { batchSize: size }) as tf.Tensor
    })
    if (out.shape.length !== 2) {
      out.dispose()
      throw new Error(`penultimate output must be 2-D, got shape [${out.shape}]`)
    }
    dim = out.shape[1]
    pieces.push(out.dataSync() as Float32Array)
    out.dispose()
  }
  if (dim < 0) dim = countPenultimateUnits(net)
  const total = pieces.reduce((a, p) => a + p.length, 0)
  const data = new Float32Array(total)
  let offset = 0
  for (const p of pieces) {
    data.set(p, offset)
    offset += p.length
  }
  return { data, dim }
}

function countPenultimateUnits(net: tf.LayersModel): number {
  const shape = net.outputs[0].shape
  const dim = shape[shape.length - 1]
  if (typeof dim !== 'number') throw new Error('penultimate width is not static')
  return dim
}

export interface ExtractOptions {
  batchSize?: number
  datasetName?: string
  metadata?: Record<string, string>
}

export function extractFeatures(
  model: tf.LayersModel,
  inputs: tf.Tensor,
  labels: Int32Array | BigInt64Array | number[] | null,
  options: ExtractOptions = {},
): Bundle {
  const batchSize = options.batchSize ?? 64
  const head = exportHead(model)
  const features = batched(penultimateModel(model), inputs, batchSize)
  if (features.dim !== head.dim) {
    throw new Error(
      `feature width ${features.dim} does not match head width ${head.dim}`,
    )
  }
  const n = inputs.shape[0]
  const tensors: Record<string, NctTensor> = {
    features: { dtype: 'f32', shape: [n, features.dim], data: features.data },
    weights: { dtype: 'f32', shape: [head.nClasses, head.dim], data: head.weights },
    bias: { dtype: 'f32', shape: [head.nClasses], data: head.bias },
  }
  if (labels !== null) {
    const flat =
      labels instanceof BigInt64Array
        ? new BigInt64Array(labels)
        : BigInt64Array.from(Array.from(labels as ArrayLike<number>), (v) => BigInt(v))
    if (flat.length !== n) {
      throw new Error(`labels length ${flat.length} does not match ${n} inputs`)
    }
    tensors.labels = { dtype: 'i64', shape: [n], data: flat }
  }
  return {
    datasetName: options.datasetName ?? 'extracted',
    tensors,
    metadata: options.metadata,
  }
}

export function modelLogits(
  model: tf.LayersModel,
  inputs: tf.Tensor,
  batchSize = 64,
): { data: Float32Array; nClasses: number } {
  const { data, dim } = batched(model, inputs, batchSize)
  return { data, nClasses: dim }
}

export interface NoiseOptions extends ExtractOptions {
  seed: number
}

/** Per-pixel standard-normal images, seeded, pushed through the network. */
export function genNoiseSet(
  model: tf.LayersModel,
  n: number,
  imageShape: number[],
  options: NoiseOptions,
): Bundle {
  const rng = new GaussianRng(options.seed)
  const perImage = imageShape.reduce((a, b) => a * b, 1)
  const raw = rng.normals(n * perImage)
  const inputs = tf.tensor(raw, [n, ...imageShape], 'float32')
  try {
    const head = exportHead(model)
    if (n === 0) {
      return {
        datasetName: options.datasetName ?? 'gaussian-noise',
        tensors: {
          features: { dtype: 'f32', shape: [0, head.dim], data: new Float32Array(0) },
        },
        metadata: { seed: String(options.seed), ...(options.metadata ?? {}) },
      }
    }
    const features = batched(penultimateModel(model), inputs, options.batchSize ?? 64)
    return {
      datasetName: options.datasetName ?? 'gaussian-noise',
      tensors: {
        features: { dtype: 'f32', shape: [n, features.dim], data: features.data },
      },
      metadata: { seed: String(options.seed), ...(options.metadata ?? {}) },
    }
  } finally {
    inputs.dispose()
  }
}
