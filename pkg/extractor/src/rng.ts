/**
 * Deterministic RNG for the noise set: splitmix64 over a 64-bit counter,
 * mapped to uniforms in [0, 1), turned Gaussian by Box-Muller. The stream
 * depends only on the seed, so noise bundles are bit-reproducible.
 */

const GOLDEN = 0x9e3779b97f4a7c15n
const MASK64 = 0xffffffffffffffffn

function splitmix64(state: bigint): bigint {
  let z = (state + GOLDEN) & MASK64
  z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64
  z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK64
  return (z ^ (z >> 31n)) & MASK64
}

export class GaussianRng {
  private counter: bigint
  private spare: number | null = null

  constructor(seed: number | bigint) {
    this.counter = BigInt(seed) & MASK64
  }

  /** uniform in [0, 1) with 53 bits of entropy */
  uniform(): number {
    this.counter = (this.counter + 1n) & MASK64
    const bits = splitmix64(this.counter) >> 11n // 53 bits
    return Number(bits) / 2 ** 53
  }

  /** standard normal via Box-Muller, with the spare cached */
  normal(): number {
    if (this.spare !== null) {
      const out = this.spare
      this.spare = null
      return out
    }
    let u1 = this.uniform()
    while (u1 === 0) u1 = this.uniform()
    const u2 = this.uniform()
    const r = Math.sqrt(-2 * Math.log(u1))
    this.spare = r * Math.sin(2 * Math.PI * u2)
    return r * Math.cos(2 * Math.PI * u2)
  }

  normals(n: number): Float32Array {
    const out = new Float32Array(n)
    for (let i = 0; i < n; i++) out[i] = this.normal()
    return out
  }
}
