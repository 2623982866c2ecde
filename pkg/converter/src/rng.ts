/**
 * Deterministic random stream for the freshly initialized classification
 * head. splitmix64 drives 53-bit uniforms; normals come from Box-Muller and
 * are truncated to two standard deviations by resampling. The stream is a
 * pure function of the seed, so conversion output is reproducible.
 */

const MASK64 = 0xffffffffffffffffn;

export class Rng {
  private state: bigint;

  constructor(seed: bigint | number) {
    this.state = BigInt(seed) & MASK64;
  }

  private next64(): bigint {
    this.state = (this.state + 0x9e3779b97f4a7c15n) & MASK64;
    let z = this.state;
    z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK64;
    z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK64;
    return z ^ (z >> 31n);
  }

  /** Uniform in [0, 1) with 53 random bits. */
  uniform(): number {
    return Number(this.next64() >> 11n) / 2 ** 53;
  }

  /** Standard normal via Box-Muller. */
  normal(): number {
    let u1 = this.uniform();
    while (u1 === 0) {
      u1 = this.uniform();
    }
    const u2 = this.uniform();
    return Math.sqrt(-2 * Math.log(u1)) * Math.cos(2 * Math.PI * u2);
  }

  /** Normal truncated to |z| <= 2, scaled by std. */
  truncNormal(std: number): number {
    let z = this.normal();
    while (Math.abs(z) > 2) {
      z = this.normal();
    }
    return z * std;
  }
}
