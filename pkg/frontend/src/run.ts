/**
 * Loading of cgkoop eval run directories: each holds posterior_mean.cgt,
 * posterior_std.cgt, truth.cgt, metrics.csv(.json) and a config.json copy
 * recording the method, warm-up length, observed indices and domain size.
 */

import { existsSync, readFileSync } from "node:fs";
import { join } from "node:path";

import { readCgt, Tensor, at } from "./cgt.js";

export interface RunDir {
  path: string;
  method: string;
  warmup: number;
  obsIndices: number[];
  lX: number;
  posteriorMean: Tensor; // (R, T, d2)
  posteriorStd: Tensor; // (R, T, d2)
  truth: Tensor; // (R, T+1, d)
}

export function loadRun(path: string): RunDir {
  for (const f of ["posterior_mean.cgt", "posterior_std.cgt", "truth.cgt", "config.json"]) {
    if (!existsSync(join(path, f))) {
      throw new Error(`run directory ${path} is missing ${f}`);
    }
  }
  const config = JSON.parse(readFileSync(join(path, "config.json"), "utf8"));
  const method = config.method ?? "unknown";
  const warmup = Number(config.warmup ?? 0);
  const obsIndices: number[] = (config.obs_indices ?? []).map(Number);
  const lX = Number(config.l_x ?? 1.0);
  return {
    path,
    method,
    warmup,
    obsIndices,
    lX,
    posteriorMean: readCgt(join(path, "posterior_mean.cgt")),
    posteriorStd: readCgt(join(path, "posterior_std.cgt")),
    truth: readCgt(join(path, "truth.cgt")),
  };
}

export function unobservedIndices(d: number, obs: number[]): number[] {
  const mask = new Set(obs);
  const out: number[] = [];
  for (let i = 0; i < d; i++) {
    if (!mask.has(i)) out.push(i);
  }
  return out;
}

/**
 * Full estimated field at data step t (1-based in the truth array): the
 * observed entries are taken from the truth (they are assimilated exactly)
 * and the unobserved ones from the posterior mean.
 */
export function estimatedField(run: RunDir, traj: number, t: number): number[] {
  const d = run.truth.dims[2];
  const unobs = unobservedIndices(d, run.obsIndices);
  const out = new Array<number>(d).fill(0);
  for (const i of run.obsIndices) {
    out[i] = at(run.truth, traj, t + 1, i);
  }
  unobs.forEach((i, k) => {
    out[i] = at(run.posteriorMean, traj, t, k);
  });
  return out;
}

export function truthField(run: RunDir, traj: number, t: number): number[] {
  const d = run.truth.dims[2];
  const out = new Array<number>(d).fill(0);
  for (let i = 0; i < d; i++) {
    out[i] = at(run.truth, traj, t + 1, i);
  }
  return out;
}
