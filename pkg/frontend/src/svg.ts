/** Small SVG assembly helpers shared by the three figure types. */

import { scaleLinear, ScaleLinear } from "d3-scale";

export type Scale = ScaleLinear<number, number>;

export function linScale(domain: [number, number], range: [number, number]): Scale {
  return scaleLinear().domain(domain).range(range);
}

export function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export function svgDocument(width: number, height: number, body: string): string {
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}" font-family="Helvetica, Arial, sans-serif">`,
    `<rect width="${width}" height="${height}" fill="white"/>`,
    body,
    "</svg>",
  ].join("\n");
}

export function text(
  x: number,
  y: number,
  content: string,
  opts: { size?: number; anchor?: string; fill?: string } = {},
): string {
  const size = opts.size ?? 11;
  const anchor = opts.anchor ?? "start";
  const fill = opts.fill ?? "#222";
  return `<text x="${x.toFixed(1)}" y="${y.toFixed(1)}" font-size="${size}" text-anchor="${anchor}" fill="${fill}">${esc(content)}</text>`;
}

export function polyline(
  xs: number[],
  ys: number[],
  stroke: string,
  width = 1.4,
  dash = "",
): string {
  const pts = xs.map((x, i) => `${x.toFixed(2)},${ys[i].toFixed(2)}`).join(" ");
  const dashAttr = dash ? ` stroke-dasharray="${dash}"` : "";
  return `<polyline points="${pts}" fill="none" stroke="${stroke}" stroke-width="${width}"${dashAttr}/>`;
}

/** Closed band between an upper and a lower trace (uncertainty shading). */
export function band(
  xs: number[],
  upper: number[],
  lower: number[],
  fill: string,
  opacity = 0.25,
): string {
  const fwd = xs.map((x, i) => `${x.toFixed(2)},${upper[i].toFixed(2)}`);
  const back = xs
    .slice()
    .reverse()
    .map((x, i) => `${x.toFixed(2)},${lower[lower.length - 1 - i].toFixed(2)}`);
  return `<polygon points="${[...fwd, ...back].join(" ")}" fill="${fill}" fill-opacity="${opacity}" stroke="none"/>`;
}

export function axis(
  scale: Scale,
  opts: { orient: "bottom" | "left"; at: number; length?: number; ticks?: number; label?: string },
): string {
  const [d0, d1] = scale.domain();
  const parts: string[] = [];
  const n = opts.ticks ?? 5;
  const values = scale.ticks ? scale.ticks(n) : [];
  for (const v of values.length ? values : [d0, d1]) {
    const p = scale(v);
    const label = Math.abs(v) >= 1e4 || (v !== 0 && Math.abs(v) < 1e-3) ? v.toExponential(1) : String(Math.round(v * 1000) / 1000);
    if (opts.orient === "bottom") {
      parts.push(`<line x1="${p}" y1="${opts.at}" x2="${p}" y2="${opts.at + 4}" stroke="#222"/>`);
      parts.push(text(p, opts.at + 15, label, { size: 9, anchor: "middle" }));
    } else {
      parts.push(`<line x1="${opts.at - 4}" y1="${p}" x2="${opts.at}" y2="${p}" stroke="#222"/>`);
      parts.push(text(opts.at - 6, p + 3, label, { size: 9, anchor: "end" }));
    }
  }
  const [r0, r1] = scale.range();
  if (opts.orient === "bottom") {
    parts.unshift(`<line x1="${r0}" y1="${opts.at}" x2="${r1}" y2="${opts.at}" stroke="#222"/>`);
  } else {
    parts.unshift(`<line x1="${opts.at}" y1="${r0}" x2="${opts.at}" y2="${r1}" stroke="#222"/>`);
  }
  return parts.join("\n");
}

export const METHOD_COLORS: Record<string, string> = {
  truth: "#111111",
  cgkn: "#d62728",
  enkf: "#1f77b4",
  interp: "#2ca02c",
};

export function methodColor(method: string): string {
  return METHOD_COLORS[method] ?? "#9467bd";
}
