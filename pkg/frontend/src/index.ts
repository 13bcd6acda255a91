export { render, differenceGrid, FigureSpec, FigureKind } from "./figures";
export { loadCsv, pivotSweep, requireColumns, SweepTable } from "./csv";
export { encodePng, decodePng } from "./png";
export { Raster } from "./raster";
