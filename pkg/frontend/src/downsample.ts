// Min/max bucket downsampling for timeline lanes: long sessions render at
// one bucket per pixel without losing extremes or marker pins.

export interface Point {
  t: number;
  value: number;
}

export interface Bucket {
  t0: number;
  t1: number;
  min: number;
  max: number;
  first: number;
  last: number;
}

export function downsample(points: Point[], t0: number, t1: number,
                           buckets: number): Bucket[] {
  if (buckets <= 0 || t1 <= t0) return [];
  const width = (t1 - t0) / buckets;
  const out: (Bucket | null)[] = new Array(buckets).fill(null);
  for (const p of points) {
    if (p.t < t0 || p.t >= t1 || !Number.isFinite(p.value)) continue;
    const k = Math.min(Math.floor((p.t - t0) / width), buckets - 1);
    const b = out[k];
    if (b === null) {
      out[k] = {
        t0: t0 + k * width,
        t1: t0 + (k + 1) * width,
        min: p.value,
        max: p.value,
        first: p.value,
        last: p.value,
      };
    } else {
      b.min = Math.min(b.min, p.value);
      b.max = Math.max(b.max, p.value);
      b.last = p.value;
    }
  }
  return out.filter((b): b is Bucket => b !== null);
}
