#!/usr/bin/env node
/**
 * Bridge real tfjs classifiers into the scoring toolkit.
 *
 *   extract  --model DIR --inputs x.nct [--labels y.nct] --out DIR
 *   noise    --model DIR --n 256 --shape 32,32,3 --seed 7 --out DIR
 *
 * Inputs travel as NCT1 tensors; outputs are NCT1 bundles consumable by the
 * scoring CLI (`ncood stats`, `ncood score`, ...).
 */

import * as tf from '@tensorflow/tfjs'
import yargs from 'yargs'
import { hideBin } from 'yargs/helpers'
import { extractFeatures, genNoiseSet } from './extract.js'
import { loadModel } from './modelio.js'
import { readTensorFile, writeBundle } from './nct.js'

async function runExtract(argv: {
  model: string
  inputs: string
  labels?: string
  batchSize: number
  name: string
  device: string
  out: string
}): Promise<void> {
  await tf.setBackend(argv.device)
  const model = await loadModel(argv.model)
  const inputsTensor = readTensorFile(argv.inputs)
  const inputs = tf.tensor(
    inputsTensor.data as Float32Array,
    inputsTensor.shape,
    'float32',
  )
  let labels: number[] | null = null
  if (argv.labels) {
    const t = readTensorFile(argv.labels)
    labels = Array.from(t.data as BigInt64Array, (v) => Number(v))
  }
  try {
    const bundle = extractFeatures(model, inputs, labels, {
      batchSize: argv.batchSize,
      datasetName: argv.name,
    })
    const manifest = writeBundle(bundle, argv.out)
    console.log(`wrote bundle: ${manifest}`)
  } finally {
    inputs.dispose()
  }
}

async function runNoise(argv: {
  model: string
  n: number
  shape: string
  seed: number
  batchSize: number
  device: string
  out: string
}): Promise<void> {
  await tf.setBackend(argv.device)
  const model = await loadModel(argv.model)
  const imageShape = argv.shape
    .split(',')
    .filter((s) => s.trim())
    .map((s) => {
      const v = Number(s)
      if (!Number.isInteger(v) || v < 1) throw new Error(`bad --shape entry ${s}`)
      return v
    })
  const bundle = genNoiseSet(model, argv.n, imageShape, {
    seed: argv.seed,
    batchSize: argv.batchSize,
  })
  const manifest = writeBundle(bundle, argv.out)
  console.log(`wrote noise bundle: ${manifest}`)
}

export async function main(args: string[]): Promise<number> {
  try {
    await yargs(args)
      .scriptName('nct-extract')
      .command(
        'extract',
        'export penultimate features + head from a saved model',
        (y) =>
          y
            .option('model', { type: 'string', demandOption: true })
            .option('inputs', { type: 'string', demandOption: true })
            .option('labels', { type: 'string' })
            .option('batch-size', { type: 'number', default: 64 })
            .option('name', { type: 'string', default: 'extracted' })
            .option('device', { type: 'string', default: 'cpu' })
            .option('out', { type: 'string', demandOption: true }),
        async (argv) =>
          runExtract({
            model: argv.model,
            inputs: argv.inputs,
            labels: argv.labels,
            batchSize: argv['batch-size'],
            name: argv.name,
            device: argv.device,
            out: argv.out,
          }),
      )
      .command(
        'noise',
        'export features of seeded per-pixel standard-normal images',
        (y) =>
          y
            .option('model', { type: 'string', demandOption: true })
            .option('n', { type: 'number', demandOption: true })
            .option('shape', { type: 'string', demandOption: true })
            .option('seed', { type: 'number', default: 0 })
            .option('batch-size', { type: 'number', default: 64 })
            .option('device', { type: 'string', default: 'cpu' })
            .option('out', { type: 'string', demandOption: true }),
        async (argv) =>
          runNoise({
            model: argv.model,
            n: argv.n,
            shape: argv.shape,
            seed: argv.seed,
            batchSize: argv['batch-size'],
            device: argv.device,
            out: argv.out,
          }),
      )
      .demandCommand(1)
      .strict()
      .fail((msg, err) => {
        throw err ?? new Error(msg)
      })
      .parseAsync()
    return 0
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`)
    return 1
  }
}

if (process.argv[1] && process.argv[1].endsWith('cli.js')) {
  main(hideBin(process.argv)).then((code) => {
    process.exitCode = code
  })
}
