import { describe, expect, it } from "vitest";

import { markerOffsets, polyline, seriesColor } from "../src/chart.js";

describe("polyline", () => {
  it("produces exactly one point per value", () => {
    for (const n of [0, 1, 2, 7, 600]) {
      const values = Array.from({ length: n }, (_, i) => (i % 10) / 10);
      expect(polyline(values, 900, 260, 0, 1)).toHaveLength(n);
    }
  });

  it("maps the axis range onto pixel space with y inverted", () => {
    const pts = polyline([0, 0.5, 1], 100, 200, 0, 1);
    expect(pts[0]).toEqual({ x: 0, y: 200 });
    expect(pts[1]).toEqual({ x: 50, y: 100 });
    expect(pts[2]).toEqual({ x: 100, y: 0 });
  });

  it("clamps values outside the axis range", () => {
    const pts = polyline([-3, 9], 10, 100, 0, 1);
    expect(pts[0].y).toBe(100);
    expect(pts[1].y).toBe(0);
  });

  it("centers a single point horizontally", () => {
    expect(polyline([0.5], 80, 100, 0, 1)).toEqual([{ x: 40, y: 50 }]);
  });

  it("tolerates a degenerate axis", () => {
    const pts = polyline([0.3, 0.3], 10, 10, 0.3, 0.3);
    expect(pts).toHaveLength(2);
    for (const p of pts) expect(Number.isFinite(p.y)).toBe(true);
  });
});

describe("markerOffsets", () => {
  it("places events proportionally along the time axis", () => {
    const offsets = markerOffsets([150, 200], [100, 200, 300], 100);
    expect(offsets).toEqual([25, 50]);
  });

  it("drops events outside the visible span", () => {
    expect(markerOffsets([5, 350], [100, 300], 100)).toEqual([]);
  });

  it("handles empty and single-instant axes", () => {
    expect(markerOffsets([1, 2], [], 100)).toEqual([]);
    expect(markerOffsets([7], [7], 100)).toEqual([50]);
  });
});

describe("seriesColor", () => {
  it("is stable and distinct for neighboring indices", () => {
    expect(seriesColor(3)).toBe(seriesColor(3));
    const palette = new Set(Array.from({ length: 16 }, (_, i) => seriesColor(i)));
    expect(palette.size).toBe(16);
  });
});
