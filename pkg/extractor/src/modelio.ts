/**
 * Save/load tf.LayersModel to a plain directory (model.json + weights.bin)
 * without the native tfjs-node IO handlers.
 */

import * as fs from 'node:fs'
import * as path from 'node:path'
import * as tf from '@tensorflow/tfjs'

export async function saveModel(model: tf.LayersModel, dir: string): Promise<void> {
  fs.mkdirSync(dir, { recursive: true })
  await model.save(
    tf.io.withSaveHandler(async (artifacts) => {
      const { weightData, ...rest } = artifacts
      fs.writeFileSync(path.join(dir, 'model.json'), JSON.stringify(rest))
      const data = weightData as ArrayBuffer
      fs.writeFileSync(path.join(dir, 'weights.bin'), Buffer.from(data))
      return {
        modelArtifactsInfo: {
          dateSaved: new Date(),
          modelTopologyType: 'JSON',
        },
      }
    }),
  )
}

export async function loadModel(dir: string): Promise<tf.LayersModel> {
  const jsonPath = path.join(dir, 'model.json')
  if (!fs.existsSync(jsonPath)) {
    throw new Error(`no model.json under ${dir}`)
  }
  const rest = JSON.parse(fs.readFileSync(jsonPath, 'utf-8'))
  const weights = fs.readFileSync(path.join(dir, 'weights.bin'))
  const weightData = weights.buffer.slice(
    weights.byteOffset,
    weights.byteOffset + weights.byteLength,
  )
  return tf.loadLayersModel(tf.io.fromMemory({ ...rest, weightData }))
}
