import { jointPositions, reach } from "./fk.js";

const SVG_NS = "http://www.w3.org/2000/svg";

export function createSvgNode<T extends keyof SVGElementTagNameMap>(
  parent: Element | null,
  tag: T,
  attrs: Record<string, string | number> = {},
): SVGElementTagNameMap[T] {
  const element = document.createElementNS(SVG_NS, tag);
  for (const key in attrs) {
    element.setAttribute(key, String(attrs[key]));
  }
  parent?.appendChild(element);
  return element;
}

export interface ArmViewTransform {
  scale: number;
  cx: number;
  cy: number;
}

/** Model (x, y) to pixel (x, y): shared by every panel of one query. */
export function modelToPixel(t: ArmViewTransform, p: [number, number]): [number, number] {
  return [t.cx + t.scale * p[0], t.cy - t.scale * p[1]];
}

export function pixelToModel(t: ArmViewTransform, p: [number, number]): [number, number] {
  return [(p[0] - t.cx) / t.scale, (t.cy - p[1]) / t.scale];
}

/** One transform for all five panels so arms are comparable at a glance. */
export function panelTransform(links: number[], size: number): ArmViewTransform {
  const radius = reach(links) * 1.08;
  return { scale: size / (2 * radius), cx: size / 2, cy: size / 2 };
}

/**
 * Draw a base-anchored stick arm plus the red target dot into an SVG panel.
 * Joint positions use the same accumulation rule as the service's planar FK.
 */
export function renderArm(
  svg: SVGSVGElement,
  links: number[],
  angles: number[],
  target: [number, number],
  options: { stroke?: string; size?: number } = {},
): void {
  const size = options.size ?? 170;
  const stroke = options.stroke ?? "#274156";
  svg.setAttribute("width", String(size));
  svg.setAttribute("height", String(size));
  svg.setAttribute("viewBox", `0 0 ${size} ${size}`);
  while (svg.firstChild) svg.removeChild(svg.firstChild);
  const t = panelTransform(links, size);
  const joints = jointPositions(links, angles).map((p) => modelToPixel(t, p));

  createSvgNode(svg, "polyline", {
    points: joints.map(([x, y]) => `${x},${y}`).join(" "),
    fill: "none",
    stroke,
    "stroke-width": 4,
    "stroke-linecap": "round",
    "stroke-linejoin": "round",
    class: "arm-links",
  });
  joints.forEach(([x, y], index) => {
    createSvgNode(svg, "circle", {
      cx: x,
      cy: y,
      r: index === 0 ? 6 : 4,
      fill: index === 0 ? "#111" : "#5a7894",
      class: "arm-joint",
      "data-joint": index,
    });
  });
  const [tx, ty] = modelToPixel(t, target);
  createSvgNode(svg, "circle", {
    cx: tx,
    cy: ty,
    r: 5,
    fill: "#d62828",
    class: "target-dot",
  });
}
