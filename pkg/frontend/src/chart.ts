/** SVG rendering of the 6-hour history window.
 *
 * BGL as a line, meals as squares, boluses as circles; interpolated
 * samples are hollow. Pure string generation so it can run anywhere.
 */

import type { HistoryWindow } from "./types.js";

export interface ChartGeometry {
  width: number;
  height: number;
  padding: number;
}

export const DEFAULT_GEOMETRY: ChartGeometry = {
  width: 720,
  height: 220,
  padding: 28,
};

export interface Marker {
  kind: "meal" | "bolus";
  index: number;
  x: number;
  y: number;
  amount: number;
}

interface Scale {
  x(index: number): number;
  y(value: number): number;
  lo: number;
  hi: number;
}

function makeScale(window: HistoryWindow, geo: ChartGeometry): Scale {
  const values = window.bgl.filter((v) => Number.isFinite(v));
  const lo = Math.min(...values, 70) - 10;
  const hi = Math.max(...values, 180) + 10;
  const n = window.bgl.length;
  const innerW = geo.width - 2 * geo.padding;
  const innerH = geo.height - 2 * geo.padding;
  return {
    x: (index) => geo.padding + (index / Math.max(1, n - 1)) * innerW,
    y: (value) => geo.padding + (1 - (value - lo) / (hi - lo)) * innerH,
    lo,
    hi,
  };
}

/** Event markers with pixel positions (squares for meals, circles for boluses). */
export function markers(
  window: HistoryWindow,
  geo: ChartGeometry = DEFAULT_GEOMETRY,
): Marker[] {
  const scale = makeScale(window, geo);
  const out: Marker[] = [];
  window.carbs.forEach((amount, index) => {
    if (amount > 0) {
      out.push({
        kind: "meal",
        index,
        x: scale.x(index),
        y: scale.y(window.bgl[index]),
        amount,
      });
    }
  });
  window.bolus.forEach((amount, index) => {
    if (amount > 0) {
      out.push({
        kind: "bolus",
        index,
        x: scale.x(index),
        y: scale.y(window.bgl[index]),
        amount,
      });
    }
  });
  return out;
}

export function renderChart(
  window: HistoryWindow,
  geo: ChartGeometry = DEFAULT_GEOMETRY,
): string {
  const scale = makeScale(window, geo);
  const points = window.bgl
    .map((v, i) => `${scale.x(i).toFixed(1)},${scale.y(v).toFixed(1)}`)
    .join(" ");
  const dots = window.bgl
    .map((v, i) => {
      const fill = window.interpolated[i] ? "none" : "#3b6ea5";
      return (
        `<circle class="sample" cx="${scale.x(i).toFixed(1)}" ` +
        `cy="${scale.y(v).toFixed(1)}" r="1.6" fill="${fill}" ` +
        `stroke="#3b6ea5" stroke-width="0.6"/>`
      );
    })
    .join("");
  const eventMarks = markers(window, geo)
    .map((m) => {
      if (m.kind === "meal") {
        const s = 9;
        return (
          `<rect class="meal" x="${(m.x - s / 2).toFixed(1)}" ` +
          `y="${(m.y - s - 12).toFixed(1)}" width="${s}" height="${s}" ` +
          `fill="#2f9e44"><title>${m.amount} g</title></rect>`
        );
      }
      return (
        `<circle class="bolus" cx="${m.x.toFixed(1)}" ` +
        `cy="${(m.y + 16).toFixed(1)}" r="5" fill="#c2255c">` +
        `<title>${m.amount} u</title></circle>`
      );
    })
    .join("");
  const axis =
    `<text x="4" y="${geo.padding + 4}" class="axis">${Math.round(scale.hi)}</text>` +
    `<text x="4" y="${geo.height - geo.padding}" class="axis">${Math.round(scale.lo)}</text>`;
  return (
    `<svg viewBox="0 0 ${geo.width} ${geo.height}" ` +
    `xmlns="http://www.w3.org/2000/svg" role="img" ` +
    `aria-label="six hour glucose history">` +
    `<polyline points="${points}" fill="none" stroke="#3b6ea5" ` +
    `stroke-width="1.5" stroke-dasharray="none"/>` +
    `${dots}${eventMarks}${axis}</svg>`
  );
}

export function emptyState(message: string): string {
  return `<div class="empty-state">${message}</div>`;
}
