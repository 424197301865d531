/**
 * Spatiotemporal heatmap: one panel for the truth plus one panel per run
 * directory (assimilated field), all on a shared color scale whose limits
 * are the global min/max of the truth panel.
 */

import { interpolateViridis } from "d3-scale-chromatic";

import { RunDir, estimatedField, truthField } from "./run.js";
import { linScale, svgDocument, text } from "./svg.js";

const CELL_W = 7;
const CELL_H = 5;
const MARGIN = { left: 52, top: 30, gap: 26, bottom: 34 };

function panel(
  fields: number[][],
  x0: number,
  y0: number,
  title: string,
  lo: number,
  hi: number,
): string {
  const parts: string[] = [text(x0, y0 - 8, title, { size: 12 })];
  const color = linScale([lo, hi], [0, 1]).clamp(true);
  for (let t = 0; t < fields.length; t++) {
    const column = fields[t];
    for (let j = 0; j < column.length; j++) {
      const fill = interpolateViridis(color(column[j]));
      const y = y0 + (column.length - 1 - j) * CELL_H;
      parts.push(
        `<rect x="${x0 + t * CELL_W}" y="${y}" width="${CELL_W}" height="${CELL_H}" fill="${fill}"/>`,
      );
    }
  }
  return parts.join("\n");
}

export function renderHeatmap(runs: RunDir[], traj = 0): string {
  if (runs.length === 0) {
    throw new Error("heatmap needs at least one run directory");
  }
  const base = runs[0];
  const steps = base.posteriorMean.dims[1];
  const d = base.truth.dims[2];

  const truth: number[][] = [];
  for (let t = 0; t < steps; t++) {
    truth.push(truthField(base, traj, t));
  }
  const flat = truth.flat();
  const lo = Math.min(...flat);
  const hi = Math.max(...flat);

  const panelW = steps * CELL_W;
  const panelH = d * CELL_H;
  const width = MARGIN.left + panelW + 20;
  const height = MARGIN.top + (runs.length + 1) * (panelH + MARGIN.gap) + MARGIN.bottom;

  const parts: string[] = [];
  parts.push(panel(truth, MARGIN.left, MARGIN.top, "truth", lo, hi));
  runs.forEach((run, i) => {
    const fields: number[][] = [];
    for (let t = 0; t < run.posteriorMean.dims[1]; t++) {
      fields.push(estimatedField(run, traj, t));
    }
    const y0 = MARGIN.top + (i + 1) * (panelH + MARGIN.gap);
    parts.push(panel(fields, MARGIN.left, y0, run.method, lo, hi));
  });
  const yLast = MARGIN.top + runs.length * (panelH + MARGIN.gap) + panelH;
  parts.push(text(MARGIN.left, yLast + 18, "time step (left to right); space (bottom to top)", { size: 10 }));
  parts.push(text(MARGIN.left, yLast + 30, `color limits from truth panel: [${lo.toFixed(3)}, ${hi.toFixed(3)}]`, { size: 10 }));
  return svgDocument(width, height, parts.join("\n"));
}
