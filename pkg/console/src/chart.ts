/**
 * Chart geometry for the weight time-series view.
 *
 * Every function here is pure and self-contained (no imports, no shared
 * state): the page embeds their compiled source verbatim in its inline
 * script, so the browser and the tests exercise the same math.
 */

export interface ChartPoint {
  x: number;
  y: number;
}

/**
 * Map one series of values in [yMin, yMax] onto pixel points, one point
 * per value, left to right in arrival order. Values are clamped to the
 * axis range; a single value sits at the horizontal center.
 */
export function polyline(
  values: number[],
  width: number,
  height: number,
  yMin: number,
  yMax: number,
): ChartPoint[] {
  const n = values.length;
  const points: ChartPoint[] = [];
  if (n === 0) return points;
  const span = yMax - yMin > 0 ? yMax - yMin : 1;
  for (let i = 0; i < n; i++) {
    const v = Math.min(Math.max(values[i], yMin), yMax);
    const x = n > 1 ? (i / (n - 1)) * width : width / 2;
    const y = height - ((v - yMin) / span) * height;
    points.push({ x, y });
  }
  return points;
}

/**
 * Place event timestamps on the x axis spanned by the series timestamps.
 * Events outside the visible span are dropped. With a single-instant axis
 * every in-span event lands at the center.
 */
export function markerOffsets(eventTimes: number[], axisTimes: number[], width: number): number[] {
  if (axisTimes.length === 0) return [];
  const t0 = axisTimes[0];
  const t1 = axisTimes[axisTimes.length - 1];
  const span = t1 - t0;
  const offsets: number[] = [];
  for (const t of eventTimes) {
    if (t < t0 || t > t1) continue;
    offsets.push(span > 0 ? ((t - t0) / span) * width : width / 2);
  }
  return offsets;
}

/** Stable distinct color per series index (golden-angle hue walk). */
export function seriesColor(index: number): string {
  const hue = (index * 137.508) % 360;
  return "hsl(" + hue.toFixed(1) + ", 70%, 45%)";
}
