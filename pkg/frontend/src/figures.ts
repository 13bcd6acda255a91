/**
 * The four figure kinds rendered from simulator CSVs:
 *
 * - population-curves: site populations vs time from a dynamics CSV
 * - sweep-heatmap: one metric on the (amplitude x switching-rate) grid
 * - metric-curves: metric vs amplitude, one curve per switching rate
 * - difference-map: bath+noise minus noise-only metric grids, with grey
 *   shading wherever the combined model is superior (higher efficiency /
 *   lower trapping time)
 */
import { loadCsv, numericColumn, pivotSweep, requireColumns, Row, SweepTable } from "./csv";
import { encodePng } from "./png";
import { Color, diverging, formatNumber, Raster, SERIES_COLORS, sequential } from "./raster";

export type FigureKind = "population-curves" | "sweep-heatmap" | "metric-curves" | "difference-map";

export interface FigureSpec {
  kind: FigureKind;
  inputs: string[];
  output: string;
  /** metric carried by sweep CSVs; decides the difference-map sign rule */
  metric?: "eta" | "ttime";
  title?: string;
}

const BLACK: Color = [0, 0, 0];
const GREY: Color = [120, 120, 120];
const MARGIN = { left: 64, right: 96, top: 28, bottom: 44 };

interface Frame {
  r: Raster;
  x0: number;
  y0: number;
  w: number;
  h: number;
}

function makeFrame(width: number, height: number, title: string): Frame {
  const r = new Raster(width, height);
  const x0 = MARGIN.left;
  const y0 = MARGIN.top;
  const w = width - MARGIN.left - MARGIN.right;
  const h = height - MARGIN.top - MARGIN.bottom;
  r.text(x0, 10, title, BLACK);
  // axes box
  r.line(x0, y0, x0 + w, y0, BLACK);
  r.line(x0, y0 + h, x0 + w, y0 + h, BLACK);
  r.line(x0, y0, x0, y0 + h, BLACK);
  r.line(x0 + w, y0, x0 + w, y0 + h, BLACK);
  return { r, x0, y0, w, h };
}

function xTicks(f: Frame, lo: number, hi: number, label: string): (v: number) => number {
  const span = hi - lo || 1;
  const toPx = (v: number) => f.x0 + Math.round(((v - lo) / span) * (f.w - 1));
  for (let k = 0; k <= 4; k++) {
    const v = lo + (span * k) / 4;
    const x = toPx(v);
    f.r.line(x, f.y0 + f.h, x, f.y0 + f.h + 4, BLACK);
    const s = formatNumber(v);
    f.r.text(x - f.r.textWidth(s) / 2, f.y0 + f.h + 8, s, BLACK);
  }
  f.r.text(f.x0 + f.w / 2 - f.r.textWidth(label) / 2, f.y0 + f.h + 24, label, BLACK);
  return toPx;
}

function yTicks(f: Frame, lo: number, hi: number, label: string): (v: number) => number {
  const span = hi - lo || 1;
  const toPx = (v: number) => f.y0 + f.h - 1 - Math.round(((v - lo) / span) * (f.h - 1));
  for (let k = 0; k <= 4; k++) {
    const v = lo + (span * k) / 4;
    const y = toPx(v);
    f.r.line(f.x0 - 4, y, f.x0, y, BLACK);
    const s = formatNumber(v);
    f.r.text(f.x0 - 6 - f.r.textWidth(s), y - 3, s, BLACK);
  }
  f.r.text(4, f.y0 - 14, label, BLACK);
  return toPx;
}

function legend(f: Frame, entries: Array<[string, Color]>): void {
  let y = f.y0 + 4;
  for (const [name, color] of entries) {
    f.r.fillRect(f.x0 + f.w + 8, y, 10, 3, color);
    f.r.text(f.x0 + f.w + 22, y - 2, name, BLACK);
    y += 12;
  }
}

function renderPopulationCurves(spec: FigureSpec): Raster {
  const rows = loadCsv(spec.inputs[0]);
  requireColumns(spec.inputs[0], rows, ["t", "p1"]);
  const t = numericColumn(rows, "t");
  const sites: string[] = [];
  for (let i = 1; `p${i}` in rows[0]; i++) sites.push(`p${i}`);
  const f = makeFrame(640, 420, spec.title ?? "site populations");
  const toX = xTicks(f, Math.min(...t), Math.max(...t), "t (ps)");
  const toY = yTicks(f, 0, 1, "population");
  sites.forEach((col, k) => {
    const p = numericColumn(rows, col);
    const color = SERIES_COLORS[k % SERIES_COLORS.length];
    for (let i = 1; i < t.length; i++) {
      f.r.line(toX(t[i - 1]), toY(p[i - 1]), toX(t[i]), toY(p[i]), color, 2);
    }
  });
  legend(f, sites.map((col, k) => [`P${k + 1}`, SERIES_COLORS[k % SERIES_COLORS.length]]));
  return f.r;
}

function heatCells(f: Frame, table: SweepTable) {
  const nx = table.omegas.length;
  const ny = table.nus.length;
  const cw = Math.max(1, Math.floor(f.w / nx));
  const ch = Math.max(1, Math.floor(f.h / ny));
  return { nx, ny, cw, ch };
}

function heatAxes(f: Frame, table: SweepTable): void {
  const { nx, ny, cw, ch } = heatCells(f, table);
  table.omegas.forEach((om, i) => {
    const s = formatNumber(om);
    const x = f.x0 + i * cw + cw / 2;
    f.r.text(x - f.r.textWidth(s) / 2, f.y0 + f.h + 8, s, BLACK);
  });
  table.nus.forEach((nu, j) => {
    const s = formatNumber(nu);
    const y = f.y0 + f.h - (j + 1) * ch + ch / 2;
    f.r.text(f.x0 - 6 - f.r.textWidth(s), y - 3, s, BLACK);
  });
  f.r.text(f.x0 + (nx * cw) / 2 - 30, f.y0 + f.h + 24, "OMEGA (1/PS)", BLACK);
  f.r.text(4, f.y0 - 14, "NU (1/PS)", BLACK);
}

function colorbar(f: Frame, lo: number, hi: number, map: (v: number) => Color,
                  isDiverging = false): void {
  const x = f.x0 + f.w + 16;
  for (let k = 0; k < f.h; k++) {
    const v = 1 - k / (f.h - 1);
    f.r.fillRect(x, f.y0 + k, 12, 1, map(isDiverging ? 2 * v - 1 : v));
  }
  f.r.text(x + 16, f.y0 - 3, formatNumber(hi), BLACK);
  f.r.text(x + 16, f.y0 + f.h - 5, formatNumber(lo), BLACK);
}

function renderSweepHeatmap(spec: FigureSpec): Raster {
  const table = pivotSweep(spec.inputs[0], loadCsv(spec.inputs[0]));
  const f = makeFrame(640, 420, spec.title ?? `sweep ${spec.metric ?? ""}`.trim());
  const { nx, ny, cw, ch } = heatCells(f, table);
  const flat = table.values.flat();
  const lo = Math.min(...flat);
  const hi = Math.max(...flat);
  const span = hi - lo || 1;
  for (let i = 0; i < nx; i++) {
    for (let j = 0; j < ny; j++) {
      const v = (table.values[i][j] - lo) / span;
      f.r.fillRect(f.x0 + i * cw, f.y0 + f.h - (j + 1) * ch, cw, ch, sequential(v));
    }
  }
  heatAxes(f, table);
  colorbar(f, lo, hi, sequential);
  return f.r;
}

function renderMetricCurves(spec: FigureSpec): Raster {
  const table = pivotSweep(spec.inputs[0], loadCsv(spec.inputs[0]));
  const label = spec.metric === "ttime" ? "<T> (PS)" : "ETA";
  const f = makeFrame(640, 420, spec.title ?? `${label} vs amplitude`);
  const flat = table.values.flat();
  const lo = Math.min(0, ...flat);
  const hi = Math.max(...flat);
  const toX = xTicks(f, table.omegas[0], table.omegas[table.omegas.length - 1], "OMEGA (1/PS)");
  const toY = yTicks(f, lo, hi, label);
  table.nus.forEach((nu, j) => {
    const color = SERIES_COLORS[j % SERIES_COLORS.length];
    for (let i = 1; i < table.omegas.length; i++) {
      f.r.line(toX(table.omegas[i - 1]), toY(table.values[i - 1][j]),
               toX(table.omegas[i]), toY(table.values[i][j]), color, 2);
    }
  });
  legend(f, table.nus.map((nu, j) => [`NU=${formatNumber(nu)}`, SERIES_COLORS[j % SERIES_COLORS.length]]));
  return f.r;
}

/**
 * Difference grid and the cells where the combined bath+noise model wins:
 * higher efficiency, or lower trapping time.
 */
export function differenceGrid(combined: SweepTable, reference: SweepTable,
                               metric: "eta" | "ttime"): { delta: number[][]; superior: boolean[][] } {
  if (combined.omegas.length !== reference.omegas.length
      || combined.nus.length !== reference.nus.length
      || combined.omegas.some((v, i) => v !== reference.omegas[i])
      || combined.nus.some((v, j) => v !== reference.nus[j])) {
    throw new Error("difference-map inputs have mismatched grids");
  }
  const delta = combined.values.map((row, i) => row.map((v, j) => v - reference.values[i][j]));
  const superior = delta.map((row) => row.map((d) => (metric === "ttime" ? d < 0 : d > 0)));
  return { delta, superior };
}

function renderDifferenceMap(spec: FigureSpec): Raster {
  if (spec.inputs.length !== 2) {
    throw new Error("difference-map needs two inputs: combined-model CSV, reference CSV");
  }
  const metric = spec.metric ?? "eta";
  const combined = pivotSweep(spec.inputs[0], loadCsv(spec.inputs[0]));
  const reference = pivotSweep(spec.inputs[1], loadCsv(spec.inputs[1]));
  const { delta, superior } = differenceGrid(combined, reference, metric);
  const f = makeFrame(640, 420, spec.title ?? `difference map (${metric})`);
  const { nx, ny, cw, ch } = heatCells(f, combined);
  const scale = Math.max(1e-12, ...delta.flat().map(Math.abs));
  for (let i = 0; i < nx; i++) {
    for (let j = 0; j < ny; j++) {
      const x = f.x0 + i * cw;
      const y = f.y0 + f.h - (j + 1) * ch;
      f.r.fillRect(x, y, cw, ch, diverging(delta[i][j] / scale));
      if (superior[i][j]) {
        // grey shading marks cells where bath+noise wins
        f.r.fillRect(x, y, cw, ch, [90, 90, 90, 110]);
        f.r.fillRect(x + 2, y + 2, Math.max(1, cw - 4), Math.max(1, ch - 4), [128, 128, 128, 60]);
      }
    }
  }
  heatAxes(f, combined);
  colorbar(f, -scale, scale, diverging, true);
  f.r.text(f.x0 + f.w + 16, f.y0 + f.h + 8, "GREY: COMBINED WINS", GREY);
  return f.r;
}

export function render(spec: FigureSpec): Buffer {
  if (spec.inputs.length === 0) throw new Error("no input CSV given");
  let raster: Raster;
  switch (spec.kind) {
    case "population-curves":
      raster = renderPopulationCurves(spec);
      break;
    case "sweep-heatmap":
      raster = renderSweepHeatmap(spec);
      break;
    case "metric-curves":
      raster = renderMetricCurves(spec);
      break;
    case "difference-map":
      raster = renderDifferenceMap(spec);
      break;
    default:
      throw new Error(`unknown figure kind '${spec.kind}'`);
  }
  return encodePng(raster.width, raster.height, raster.pixels);
}
