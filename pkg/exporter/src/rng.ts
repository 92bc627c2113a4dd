/**
 * Small deterministic PRNG (mulberry32) so corpus crops and verification
 * slice sampling are reproducible from a single integer seed across
 * platforms and Node versions.
 */
export class SeededRng {
  private state: number;

  constructor(seed: number) {
    this.state = seed >>> 0;
  }

  /** Next uniform u32. */
  nextU32(): number {
    this.state = (this.state + 0x6d2b79f5) >>> 0;
    let t = this.state;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return (t ^ (t >>> 14)) >>> 0;
  }

  /** Uniform integer in [0, bound); rejection sampling avoids modulo bias. */
  nextBelow(bound: number): number {
    if (!Number.isInteger(bound) || bound <= 0 || bound > 0xffffffff) {
      throw new RangeError(`bound must be in [1, 2^32), got ${bound}`);
    }
    const limit = Math.floor(0x100000000 / bound) * bound;
    for (;;) {
      const x = this.nextU32();
      if (x < limit) return x % bound;
    }
  }
}
