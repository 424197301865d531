/**
 * Spatial profile panels: truth against each method's assimilated field at
 * a list of data steps, plotted over x in [0, L_x] from the run metadata.
 */

import { RunDir, estimatedField, truthField } from "./run.js";
import { axis, linScale, methodColor, polyline, svgDocument, text } from "./svg.js";

const PANEL = { width: 240, height: 150, gapX: 30, gapY: 40 };
const MARGIN = { left: 54, top: 34, right: 14, bottom: 42 };
const PER_ROW = 3;

export function renderProfiles(runs: RunDir[], times: number[], traj = 0): string {
  if (runs.length === 0) {
    throw new Error("profiles needs at least one run directory");
  }
  const base = runs[0];
  const steps = base.posteriorMean.dims[1];
  for (const t of times) {
    if (t < 0 || t >= steps) {
      throw new Error(`time step ${t} outside the run's ${steps} steps`);
    }
  }
  const d = base.truth.dims[2];
  const lX = base.lX;
  const xs = Array.from({ length: d }, (_, j) => (j * lX) / d);

  const rows = Math.ceil(times.length / PER_ROW);
  const width = MARGIN.left + PER_ROW * (PANEL.width + PANEL.gapX) + MARGIN.right;
  const height = MARGIN.top + rows * (PANEL.height + PANEL.gapY) + MARGIN.bottom;
  const parts: string[] = [];

  times.forEach((t, i) => {
    const col = i % PER_ROW;
    const row = Math.floor(i / PER_ROW);
    const x0 = MARGIN.left + col * (PANEL.width + PANEL.gapX);
    const y0 = MARGIN.top + row * (PANEL.height + PANEL.gapY);

    const truth = truthField(base, traj, t);
    const estimates = runs.map((run) => estimatedField(run, traj, t));
    const all = truth.concat(...estimates);
    const lo = Math.min(...all);
    const hi = Math.max(...all);
    const pad = 0.05 * (hi - lo || 1);
    const xScale = linScale([0, lX], [x0, x0 + PANEL.width]);
    const yScale = linScale([lo - pad, hi + pad], [y0 + PANEL.height, y0]);
    const px = xs.map((x) => xScale(x));

    parts.push(polyline(px, truth.map(yScale), methodColor("truth"), 1.4));
    runs.forEach((run, m) => {
      parts.push(polyline(px, estimates[m].map(yScale), methodColor(run.method), 1.3, "4,2"));
    });
    parts.push(axis(xScale, { orient: "bottom", at: y0 + PANEL.height, ticks: 4 }));
    parts.push(axis(yScale, { orient: "left", at: x0, ticks: 4 }));
    parts.push(text(x0, y0 - 6, `step ${t}`, { size: 11 }));
  });

  const legend = ["truth (solid)"].concat(runs.map((r) => `${r.method} (dashed)`));
  parts.push(text(MARGIN.left, height - 12, legend.join("   "), { size: 10 }));
  return svgDocument(width, height, parts.join("\n"));
}
