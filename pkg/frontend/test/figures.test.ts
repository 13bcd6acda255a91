import { createHash } from "crypto";
import { mkdtempSync, readFileSync, writeFileSync } from "fs";
import { tmpdir } from "os";
import { join } from "path";
import { describe, expect, it } from "vitest";

import { loadCsv, pivotSweep } from "../src/csv";
import { differenceGrid, FigureSpec, render } from "../src/figures";
import { decodePng } from "../src/png";

const GOLDEN = join(__dirname, "golden");

function spec(kind: FigureSpec["kind"], inputs: string[], metric: "eta" | "ttime" = "eta"): FigureSpec {
  return { kind, inputs: inputs.map((f) => join(GOLDEN, f)), output: "unused.png", metric };
}

const ALL_KINDS: Array<[FigureSpec["kind"], string[]]> = [
  ["population-curves", ["dynamics_chain.csv"]],
  ["sweep-heatmap", ["sweep_rtn_eta.csv"]],
  ["metric-curves", ["sweep_rtn_eta.csv"]],
  ["difference-map", ["sweep_bath_eta.csv", "sweep_rtn_eta.csv"]],
];

describe("rendering", () => {
  it.each(ALL_KINDS)("renders %s from golden CSVs", (kind, inputs) => {
    const png = render(spec(kind, inputs));
    const decoded = decodePng(png);
    expect(decoded.width).toBeGreaterThan(100);
    expect(decoded.height).toBeGreaterThan(100);
    // some ink was applied over the white background
    const dark = decoded.rgba.filter((_, i) => i % 4 === 0).filter((v) => v < 250).length;
    expect(dark).toBeGreaterThan(1000);
  });

  it("is pixel-identical across repeated invocations", () => {
    for (const [kind, inputs] of ALL_KINDS) {
      const a = createHash("sha256").update(render(spec(kind, inputs))).digest("hex");
      const b = createHash("sha256").update(render(spec(kind, inputs))).digest("hex");
      expect(a).toBe(b);
    }
  });

  it("renders a single-cell heatmap without error", () => {
    const dir = mkdtempSync(join(tmpdir(), "npsim-fig-"));
    const one = join(dir, "one.csv");
    writeFileSync(one, "omega,nu,value,stderr,n_real,seed\n14,4,0.5,0.01,8,7\n");
    const png = render({ kind: "sweep-heatmap", inputs: [one], output: "x.png" });
    expect(decodePng(png).width).toBeGreaterThan(0);
  });
});

describe("difference map shading", () => {
  it("matches the sign rule cell-for-cell against the reference mask", () => {
    const combined = pivotSweep("bath", loadCsv(join(GOLDEN, "sweep_bath_eta.csv")));
    const reference = pivotSweep("rtn", loadCsv(join(GOLDEN, "sweep_rtn_eta.csv")));
    const { delta, superior } = differenceGrid(combined, reference, "eta");
    // independent re-derivation of the rule
    for (let i = 0; i < combined.omegas.length; i++) {
      for (let j = 0; j < combined.nus.length; j++) {
        expect(superior[i][j]).toBe(delta[i][j] > 0);
      }
    }
    const mask = JSON.parse(readFileSync(join(GOLDEN, "difference_mask_eta.json"), "utf8"));
    expect(superior).toEqual(mask);
  });

  it("inverts the rule for trapping times", () => {
    const combined = pivotSweep("bath", loadCsv(join(GOLDEN, "sweep_bath_tt.csv")));
    const reference = pivotSweep("rtn", loadCsv(join(GOLDEN, "sweep_rtn_tt.csv")));
    const { delta, superior } = differenceGrid(combined, reference, "ttime");
    for (let i = 0; i < combined.omegas.length; i++) {
      for (let j = 0; j < combined.nus.length; j++) {
        expect(superior[i][j]).toBe(delta[i][j] < 0);
      }
    }
  });

  it("an all-superior grid shades every cell", () => {
    const dir = mkdtempSync(join(tmpdir(), "npsim-fig-"));
    const hi = join(dir, "hi.csv");
    const lo = join(dir, "lo.csv");
    const header = "omega,nu,value,stderr,n_real,seed\n";
    writeFileSync(hi, header + "0,1,0.9,0,4,1\n10,1,0.8,0,4,2\n");
    writeFileSync(lo, header + "0,1,0.5,0,4,3\n10,1,0.4,0,4,4\n");
    const { superior } = differenceGrid(
      pivotSweep("hi", loadCsv(hi)), pivotSweep("lo", loadCsv(lo)), "eta");
    expect(superior.flat().every(Boolean)).toBe(true);
    const png = render({ kind: "difference-map", inputs: [hi, lo], output: "x.png" });
    expect(decodePng(png).width).toBeGreaterThan(0);
  });

  it("rejects mismatched grids", () => {
    const dir = mkdtempSync(join(tmpdir(), "npsim-fig-"));
    const a = join(dir, "a.csv");
    const b = join(dir, "b.csv");
    const header = "omega,nu,value,stderr,n_real,seed\n";
    writeFileSync(a, header + "0,1,0.9,0,4,1\n");
    writeFileSync(b, header + "5,1,0.5,0,4,2\n");
    expect(() => render({ kind: "difference-map", inputs: [a, b], output: "x.png" }))
      .toThrow(/mismatched grids/);
  });
});

describe("schema validation", () => {
  it("names the missing column", () => {
    const dir = mkdtempSync(join(tmpdir(), "npsim-fig-"));
    const bad = join(dir, "bad.csv");
    writeFileSync(bad, "omega,nu,stderr\n0,1,0.1\n");
    expect(() => render({ kind: "sweep-heatmap", inputs: [bad], output: "x.png" }))
      .toThrow(/missing required column 'value'/);
  });

  it("rejects a dynamics file without populations", () => {
    const dir = mkdtempSync(join(tmpdir(), "npsim-fig-"));
    const bad = join(dir, "bad.csv");
    writeFileSync(bad, "t,trace\n0,1\n");
    expect(() => render({ kind: "population-curves", inputs: [bad], output: "x.png" }))
      .toThrow(/missing required column 'p1'/);
  });
});

describe("png round trip", () => {
  it("decodes to the original pixel buffer", () => {
    const png = render(spec("sweep-heatmap", ["sweep_rtn_eta.csv"]));
    const decoded = decodePng(png);
    expect(decoded.rgba.length).toBe(decoded.width * decoded.height * 4);
    // fully opaque output
    for (let i = 3; i < decoded.rgba.length; i += 4 * 997) {
      expect(decoded.rgba[i]).toBe(255);
    }
  });
});
