#!/usr/bin/env node
/**
 * figs: render SVG figures from cgkoop eval run directories.
 *
 *   figs heatmap    --run DIR [--run DIR ...] --out PATH
 *   figs timeseries --run DIR [--run DIR ...] --state-index N --out PATH
 *   figs profiles   --run DIR [--run DIR ...] --times 2,5,9 --out PATH
 */

import { writeFileSync } from "node:fs";
import yargs, { Argv } from "yargs";
import { hideBin } from "yargs/helpers";

import { renderHeatmap } from "./heatmap.js";
import { renderProfiles } from "./profiles.js";
import { renderTimeseries } from "./timeseries.js";
import { loadRun } from "./run.js";

function runOptions(y: Argv) {
  return y
    .option("run", { type: "string", array: true, demandOption: true, describe: "eval run directory (repeatable)" })
    .option("out", { type: "string", demandOption: true, describe: "output SVG path" })
    .option("traj", { type: "number", default: 0, describe: "test trajectory index" });
}

async function main(): Promise<number> {
  try {
    await yargs(hideBin(process.argv))
      .scriptName("figs")
      .command(
        "heatmap",
        "spatiotemporal panels: truth plus each method's assimilated field",
        (y) => runOptions(y),
        (argv) => {
          const runs = (argv.run as string[]).map(loadRun);
          writeFileSync(argv.out as string, renderHeatmap(runs, argv.traj as number));
          console.log(`heatmap -> ${argv.out}`);
        },
      )
      .command(
        "timeseries",
        "per-method time series with mean +/- 2 std bands at one state",
        (y) =>
          runOptions(y).option("state-index", {
            type: "number",
            demandOption: true,
            describe: "unobserved grid index to plot",
          }),
        (argv) => {
          const runs = (argv.run as string[]).map(loadRun);
          writeFileSync(
            argv.out as string,
            renderTimeseries(runs, argv["state-index"] as number, argv.traj as number),
          );
          console.log(`timeseries -> ${argv.out}`);
        },
      )
      .command(
        "profiles",
        "spatial profiles of truth vs estimates at chosen steps",
        (y) =>
          runOptions(y).option("times", {
            type: "string",
            demandOption: true,
            describe: "comma-separated data steps, e.g. 2,5,9",
          }),
        (argv) => {
          const runs = (argv.run as string[]).map(loadRun);
          const times = (argv.times as string).split(",").map((s) => parseInt(s.trim(), 10));
          writeFileSync(argv.out as string, renderProfiles(runs, times, argv.traj as number));
          console.log(`profiles -> ${argv.out}`);
        },
      )
      .demandCommand(1)
      .strict()
      .fail((msg, err) => {
        throw err ?? new Error(msg);
      })
      .parseAsync();
    return 0;
  } catch (err) {
    console.error(`figs: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

main().then((code) => {
  process.exitCode = code;
});
