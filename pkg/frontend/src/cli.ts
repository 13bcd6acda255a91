#!/usr/bin/env node
/**
 * Render simulator CSV outputs to PNG figures.
 *
 *   npsim-plot <kind> --in <csv...> --out <png> [--metric eta|ttime] [--title ...]
 *
 * Kinds: population-curves, sweep-heatmap, metric-curves, difference-map
 * (difference-map takes two inputs: combined-model CSV then reference CSV).
 */
import { writeFileSync } from "fs";
import yargs from "yargs";
import { hideBin } from "yargs/helpers";
import { FigureKind, FigureSpec, render } from "./figures";

const KINDS: FigureKind[] = ["population-curves", "sweep-heatmap", "metric-curves", "difference-map"];

export function main(argv: string[]): number {
  const args = yargs(argv)
    .command("$0 <kind>", "render a figure", (y) =>
      y.positional("kind", { choices: KINDS, demandOption: true, type: "string" }))
    .option("in", { type: "string", array: true, demandOption: true, describe: "input CSV path(s)" })
    .option("out", { type: "string", demandOption: true, describe: "output PNG path" })
    .option("metric", { choices: ["eta", "ttime"] as const, default: "eta" as const })
    .option("title", { type: "string" })
    .strict()
    .exitProcess(false)
    .parseSync();

  const spec: FigureSpec = {
    kind: args.kind as FigureKind,
    inputs: args.in as string[],
    output: args.out,
    metric: args.metric,
    title: args.title,
  };
  try {
    writeFileSync(args.out, render(spec));
  } catch (err) {
    process.stderr.write(`npsim-plot: error: ${(err as Error).message}\n`);
    return 1;
  }
  process.stdout.write(`wrote ${args.out}\n`);
  return 0;
}

if (require.main === module) {
  process.exit(main(hideBin(process.argv)));
}
