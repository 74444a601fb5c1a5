/**
 * Planar forward kinematics, mirroring the collection service's convention:
 * the first angle is absolute from +x, the rest are relative to the parent
 * link. Returns base plus one position per link.
 */
export function jointPositions(
  links: number[],
  angles: number[],
): [number, number][] {
  const positions: [number, number][] = [[0, 0]];
  let theta = 0;
  for (let i = 0; i < links.length; i++) {
    theta += angles[i];
    const prev = positions[positions.length - 1];
    positions.push([
      prev[0] + links[i] * Math.cos(theta),
      prev[1] + links[i] * Math.sin(theta),
    ]);
  }
  return positions;
}

export function reach(links: number[]): number {
  return links.reduce((total, length) => total + length, 0);
}
