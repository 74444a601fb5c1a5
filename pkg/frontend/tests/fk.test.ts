import { describe, expect, it } from "vitest";
import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { dirname, join } from "node:path";

import { jointPositions } from "../src/fk.js";

const here = dirname(fileURLToPath(import.meta.url));
const fixtures = JSON.parse(
  readFileSync(join(here, "fixtures", "fk_fixtures.json"), "utf-8"),
) as { links: number[]; cases: { angles: number[]; joints: number[][] }[] };

describe("planar forward kinematics", () => {
  it("matches the service's FK fixtures on all 20 configurations", () => {
    expect(fixtures.cases.length).toBe(20);
    for (const { angles, joints } of fixtures.cases) {
      const ours = jointPositions(fixtures.links, angles);
      expect(ours.length).toBe(joints.length);
      for (let j = 0; j < joints.length; j++) {
        expect(Math.abs(ours[j][0] - joints[j][0])).toBeLessThanOrEqual(1e-6);
        expect(Math.abs(ours[j][1] - joints[j][1])).toBeLessThanOrEqual(1e-6);
      }
    }
  });

  it("straight arm lies along +x", () => {
    const joints = jointPositions([1, 1, 1], [0, 0, 0]);
    expect(joints[3][0]).toBeCloseTo(3, 12);
    expect(joints[3][1]).toBeCloseTo(0, 12);
  });
});
