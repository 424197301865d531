/**
 * DA time series at one unobserved grid point: truth, posterior mean, and
 * a shaded mean +/- 2 std band per method.  The band coverage fraction
 * annotated on each panel is recomputed here from the raw arrays, not read
 * from any upstream metric.
 */

import { at } from "./cgt.js";
import { RunDir, unobservedIndices } from "./run.js";
import { axis, band, linScale, methodColor, polyline, svgDocument, text } from "./svg.js";

const PANEL = { width: 460, height: 130, gap: 34 };
const MARGIN = { left: 58, top: 36, right: 16, bottom: 40 };

export function renderTimeseries(runs: RunDir[], stateIndex: number, traj = 0): string {
  if (runs.length === 0) {
    throw new Error("timeseries needs at least one run directory");
  }
  const d = runs[0].truth.dims[2];
  if (stateIndex < 0 || stateIndex >= d) {
    throw new Error(`state index ${stateIndex} outside the ${d}-point grid`);
  }

  const width = MARGIN.left + PANEL.width + MARGIN.right;
  const height = MARGIN.top + runs.length * (PANEL.height + PANEL.gap) + MARGIN.bottom;
  const parts: string[] = [];

  runs.forEach((run, panelIdx) => {
    const unobs = unobservedIndices(d, run.obsIndices);
    const k = unobs.indexOf(stateIndex);
    if (k < 0) {
      throw new Error(`state index ${stateIndex} is observed in ${run.path}`);
    }
    const steps = run.posteriorMean.dims[1];
    const ts = Array.from({ length: steps }, (_, t) => t + 1);
    const truth = ts.map((t) => at(run.truth, traj, t, stateIndex));
    const mean = ts.map((_, t) => at(run.posteriorMean, traj, t, k));
    const std = ts.map((_, t) => at(run.posteriorStd, traj, t, k));
    const upper = mean.map((m, i) => m + 2 * std[i]);
    const lower = mean.map((m, i) => m - 2 * std[i]);

    let covered = 0;
    let counted = 0;
    for (let t = run.warmup; t < steps; t++) {
      counted += 1;
      if (Math.abs(truth[t] - mean[t]) <= 2 * std[t]) covered += 1;
    }
    const coverage = counted ? covered / counted : 0;

    const y0 = MARGIN.top + panelIdx * (PANEL.height + PANEL.gap);
    const lo = Math.min(...truth, ...lower);
    const hi = Math.max(...truth, ...upper);
    const pad = 0.05 * (hi - lo || 1);
    const xScale = linScale([1, steps], [MARGIN.left, MARGIN.left + PANEL.width]);
    const yScale = linScale([lo - pad, hi + pad], [y0 + PANEL.height, y0]);

    const xs = ts.map((t) => xScale(t));
    parts.push(band(xs, upper.map(yScale), lower.map(yScale), methodColor(run.method)));
    parts.push(polyline(xs, truth.map(yScale), methodColor("truth"), 1.2));
    parts.push(polyline(xs, mean.map(yScale), methodColor(run.method), 1.6, "5,2"));
    // warm-up delimiter
    const wx = xScale(Math.max(run.warmup, 1));
    parts.push(`<line x1="${wx}" y1="${y0}" x2="${wx}" y2="${y0 + PANEL.height}" stroke="#888" stroke-dasharray="2,3"/>`);
    parts.push(text(wx + 3, y0 + 10, "warm-up", { size: 9, fill: "#666" }));
    parts.push(axis(xScale, { orient: "bottom", at: y0 + PANEL.height }));
    parts.push(axis(yScale, { orient: "left", at: MARGIN.left }));
    parts.push(
      text(MARGIN.left, y0 - 6,
        `${run.method}: truth (solid), mean (dashed), band = mean +/- 2 std, ` +
        `coverage ${(100 * coverage).toFixed(1)}%`,
        { size: 11 }),
    );
  });
  parts.push(text(MARGIN.left, height - 12, `unobserved state at grid index ${stateIndex}; x = data step`, { size: 10 }));
  return svgDocument(width, height, parts.join("\n"));
}
