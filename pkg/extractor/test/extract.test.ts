import * as fs from 'node:fs'
import * as os from 'node:os'
import * as path from 'node:path'
import * as tf from '@tensorflow/tfjs'
import { afterAll, describe, expect, it } from 'vitest'
import { extractFeatures, findFinalDense, genNoiseSet, modelLogits } from '../src/extract.js'
import { readBundle, writeBundle } from '../src/nct.js'
import { loadModel, saveModel } from '../src/modelio.js'
import {
  IMAGE_SHAPE,
  N_CLASSES,
  PENULTIMATE_WIDTH,
  argmaxRows,
  makeBlockImages,
  trainedReferenceModel,
} from './reference.js'
import { medianOf, rankSumPSmaller } from './ranksum.js'

const tmp = fs.mkdtempSync(path.join(os.tmpdir(), 'extract-'))
afterAll(() => fs.rmSync(tmp, { recursive: true, force: true }))

function logitsFromExport(bundle: {
  tensors: Record<string, { shape: number[]; data: any }>
}): { data: Float64Array; n: number; c: number } {
  const feats = bundle.tensors.features
  const weights = bundle.tensors.weights
  const bias = bundle.tensors.bias
  const [n, d] = feats.shape
  const [c, d2] = weights.shape
  expect(d2).toBe(d)
  const out = new Float64Array(n * c)
  for (let i = 0; i < n; i++) {
    for (let k = 0; k < c; k++) {
      let acc = bias.data[k] as number
      for (let j = 0; j < d; j++) {
        acc += (feats.data[i * d + j] as number) * (weights.data[k * d + j] as number)
      }
      out[i * c + k] = acc
    }
  }
  return { data: out, n, c }
}

describe('feature extraction fidelity (S1)', () => {
  it('exported features + head reproduce the model logits within 1e-4', async () => {
    const model = await trainedReferenceModel()
    const { xs, labels } = makeBlockImages(256, 123)
    const bundle = extractFeatures(model, xs, Array.from(labels), {
      batchSize: 32,
      datasetName: 'id-eval',
    })
    const dir = path.join(tmp, 'id-eval')
    writeBundle(bundle, dir)
    const back = readBundle(dir)

    expect(back.tensors.features.shape).toEqual([256, PENULTIMATE_WIDTH])
    expect(back.tensors.labels.shape).toEqual([256])
    expect(back.tensors.weights.shape).toEqual([N_CLASSES, PENULTIMATE_WIDTH])
    expect(back.tensors.bias.shape).toEqual([N_CLASSES])

    const rebuilt = logitsFromExport(back)
    const direct = modelLogits(model, xs, 32)
    expect(direct.nClasses).toBe(N_CLASSES)
    let worst = 0
    for (let i = 0; i < rebuilt.data.length; i++) {
      worst = Math.max(worst, Math.abs(rebuilt.data[i] - direct.data[i]))
    }
    expect(worst).toBeLessThan(1e-4)

    // recomputed accuracy matches the model's own within 0.1%
    const truth = Array.from(labels)
    const predExport = argmaxRows(rebuilt.data, N_CLASSES)
    const predModel = argmaxRows(direct.data, N_CLASSES)
    const accExport = truth.filter((t, i) => t === predExport[i]).length / truth.length
    const accModel = truth.filter((t, i) => t === predModel[i]).length / truth.length
    expect(Math.abs(accExport - accModel)).toBeLessThanOrEqual(0.001)
    expect(accModel).toBeGreaterThan(0.9) // the reference task is learnable
    xs.dispose()
  }, 120_000)

  it('round-trips exported tensors bit-exactly', async () => {
    const model = await trainedReferenceModel()
    const { xs } = makeBlockImages(16, 5)
    const bundle = extractFeatures(model, xs, null, { batchSize: 8 })
    const dir = path.join(tmp, 'roundtrip')
    writeBundle(bundle, dir)
    const back = readBundle(dir)
    const a = Buffer.from((bundle.tensors.features.data as Float32Array).buffer)
    const b = Buffer.from((back.tensors.features.data as Float32Array).buffer)
    expect(a.equals(b)).toBe(true)
    xs.dispose()
  }, 60_000)

  it('rejects models without a final Dense layer', async () => {
    await tf.setBackend('cpu')
    const model = tf.sequential()
    model.add(tf.layers.flatten({ inputShape: IMAGE_SHAPE }))
    model.add(tf.layers.activation({ activation: 'softmax' }))
    expect(() => findFinalDense(model)).toThrow(/Dense/)
  })
})

describe('noise set (S2)', () => {
  it('is deterministic per seed and differs across seeds', async () => {
    const model = await trainedReferenceModel()
    const a = genNoiseSet(model, 32, IMAGE_SHAPE, { seed: 9 })
    const b = genNoiseSet(model, 32, IMAGE_SHAPE, { seed: 9 })
    const c = genNoiseSet(model, 32, IMAGE_SHAPE, { seed: 10 })
    const bytes = (x: typeof a) => Buffer.from((x.tensors.features.data as Float32Array).buffer)
    expect(bytes(a).equals(bytes(b))).toBe(true)
    expect(bytes(a).equals(bytes(c))).toBe(false)
  }, 60_000)

  it('n=0 produces a valid empty bundle', async () => {
    const model = await trainedReferenceModel()
    const bundle = genNoiseSet(model, 0, IMAGE_SHAPE, { seed: 1 })
    const dir = path.join(tmp, 'empty-noise')
    writeBundle(bundle, dir)
    const back = readBundle(dir)
    expect(back.tensors.features.shape).toEqual([0, PENULTIMATE_WIDTH])
  }, 60_000)

  it('noise features have lower L1 norms than ID features at alpha=0.01', async () => {
    const model = await trainedReferenceModel()
    const { xs } = makeBlockImages(256, 321)
    const idBundle = extractFeatures(model, xs, null, {})
    const noiseBundle = genNoiseSet(model, 256, IMAGE_SHAPE, { seed: 77 })
    xs.dispose()

    const l1 = (t: { shape: number[]; data: any }) => {
      const [n, d] = t.shape
      const out: number[] = []
      for (let i = 0; i < n; i++) {
        let acc = 0
        for (let j = 0; j < d; j++) acc += Math.abs(t.data[i * d + j] as number)
        out.push(acc)
      }
      return out
    }
    const idNorms = l1(idBundle.tensors.features)
    const noiseNorms = l1(noiseBundle.tensors.features)
    expect(medianOf(noiseNorms)).toBeLessThan(medianOf(idNorms))
    expect(rankSumPSmaller(noiseNorms, idNorms)).toBeLessThan(0.01)
  }, 120_000)
})

describe('model persistence', () => {
  it('saves and reloads a model with identical predictions', async () => {
    const model = await trainedReferenceModel()
    const dir = path.join(tmp, 'model')
    await saveModel(model, dir)
    const reloaded = await loadModel(dir)
    const { xs } = makeBlockImages(8, 99)
    const a = modelLogits(model, xs, 8)
    const b = modelLogits(reloaded, xs, 8)
    for (let i = 0; i < a.data.length; i++) {
      expect(Math.abs(a.data[i] - b.data[i])).toBeLessThan(1e-6)
    }
    xs.dispose()
  }, 60_000)
})
