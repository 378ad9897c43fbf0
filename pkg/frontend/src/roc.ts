/** SVG geometry for the results ROC plot; pure string builders. */

export interface RocGeometry {
  width: number;
  height: number;
  polyline: string;   // "x1,y1 x2,y2 ..." in pixel coordinates
  diagonal: string;
}

export function rocGeometry(
  points: [number, number][],
  width = 320,
  height = 320,
  pad = 24,
): RocGeometry {
  const sx = (fpr: number) => pad + fpr * (width - 2 * pad);
  const sy = (tpr: number) => height - pad - tpr * (height - 2 * pad);
  const polyline = points.map(([fpr, tpr]) => `${sx(fpr)},${sy(tpr)}`).join(" ");
  const diagonal = `${sx(0)},${sy(0)} ${sx(1)},${sy(1)}`;
  return { width, height, polyline, diagonal };
}

export function formatAuc(auc: number): string {
  return auc.toFixed(3);
}

export function formatAccuracy(value: number | null): string {
  return value === null ? "n/a" : `${(100 * value).toFixed(1)}%`;
}
