/** CSV loading and schema checks for the simulator's output files. */
import { readFileSync } from "fs";
import Papa from "papaparse";

export type Row = Record<string, number | string | null>;

export function loadCsv(path: string): Row[] {
  const text = readFileSync(path, "utf8");
  const parsed = Papa.parse<Row>(text.trim(), { header: true, dynamicTyping: true });
  if (parsed.errors.length > 0) {
    const e = parsed.errors[0];
    throw new Error(`${path}: CSV parse error at row ${e.row}: ${e.message}`);
  }
  return parsed.data;
}

export function requireColumns(path: string, rows: Row[], columns: string[]): void {
  if (rows.length === 0) throw new Error(`${path}: no data rows`);
  for (const column of columns) {
    if (!(column in rows[0])) {
      throw new Error(`${path}: missing required column '${column}'`);
    }
  }
}

export function numericColumn(rows: Row[], column: string): number[] {
  return rows.map((row) => {
    const v = Number(row[column]);
    if (!Number.isFinite(v)) throw new Error(`column '${column}' has non-numeric value '${row[column]}'`);
    return v;
  });
}

export interface SweepTable {
  omegas: number[];
  nus: number[];
  /** values[i][j] for omega i, nu j */
  values: number[][];
}

/** Pivots a sweep CSV (omega,nu,value,...) into a dense grid. */
export function pivotSweep(path: string, rows: Row[]): SweepTable {
  requireColumns(path, rows, ["omega", "nu", "value"]);
  const omegas = [...new Set(numericColumn(rows, "omega"))].sort((a, b) => a - b);
  const nus = [...new Set(numericColumn(rows, "nu"))].sort((a, b) => a - b);
  const values = omegas.map(() => nus.map(() => NaN));
  for (const row of rows) {
    const i = omegas.indexOf(Number(row.omega));
    const j = nus.indexOf(Number(row.nu));
    values[i][j] = Number(row.value);
  }
  for (let i = 0; i < omegas.length; i++) {
    for (let j = 0; j < nus.length; j++) {
      if (Number.isNaN(values[i][j])) {
        throw new Error(`${path}: missing cell omega=${omegas[i]}, nu=${nus[j]}`);
      }
    }
  }
  return { omegas, nus, values };
}
