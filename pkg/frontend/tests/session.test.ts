// @vitest-environment happy-dom
import { afterAll, beforeAll, describe, expect, it } from "vitest";
import { spawn, spawnSync, ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { PreferenceApp } from "../src/app.js";

const PORT = 18650 + Math.floor(Math.random() * 1000);
const BASE = `http://127.0.0.1:${PORT}`;
let service: ChildProcess;
let logPath: string;

async function waitFor(probe: () => boolean | Promise<boolean>, timeoutMs = 15000) {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (await probe()) return;
    await new Promise((resolve) => setTimeout(resolve, 50));
  }
  throw new Error("timed out waiting for condition");
}

beforeAll(async () => {
  const dir = mkdtempSync(join(tmpdir(), "cspace-ui-"));
  const batteryPath = join(dir, "battery.json");
  logPath = join(dir, "answers.jsonl");
  const gen = spawnSync(
    "python3",
    [
      "-m", "cspace_metrics.cli", "gen",
      "--arm", "planar3", "--seed", "7",
      "--contractions", "1", "--expansions", "1",
      "--out", batteryPath,
    ],
    { encoding: "utf-8" },
  );
  expect(gen.status, gen.stderr).toBe(0);
  service = spawn("python3", [
    "-m", "cspace_metrics.cli", "serve",
    "--battery", batteryPath,
    "--log-path", logPath,
    "--port", String(PORT),
  ]);
  await waitFor(async () => {
    try {
      const r = await fetch(`${BASE}/api/distributions?criterion=naturalness`);
      return r.ok;
    } catch {
      return false;
    }
  });
}, 30000);

afterAll(() => {
  service?.kill();
});

function clickChoice(root: HTMLElement, criterion: string, index: number) {
  const input = root.querySelector<HTMLInputElement>(
    `.criterion-${criterion} input[value="${index}"]`,
  );
  expect(input, `radio for ${criterion}[${index}]`).toBeTruthy();
  input!.click();
}

describe("scripted study session", () => {
  it("completes a 2-query battery and the log holds exactly 8 records", async () => {
    localStorage.clear();
    const root = document.createElement("div");
    document.body.appendChild(root);
    const app = new PreferenceApp(root, BASE);
    await app.start();

    for (let queryIndex = 0; queryIndex < 2; queryIndex++) {
      await waitFor(() =>
        root.querySelector(".progress")?.textContent === `Question ${queryIndex + 1} of 2`,
      );
      // five panels: the start plus four candidates
      expect(root.querySelectorAll(".panel").length).toBe(5);
      const submit = root.querySelector<HTMLButtonElement>("button.submit")!;
      expect(submit.disabled).toBe(true);
      for (const criterion of [
        "naturalness", "visual_similarity", "closeness", "predictability",
      ]) {
        clickChoice(root, criterion, (queryIndex + 1) % 4);
      }
      expect(submit.disabled).toBe(false);
      submit.click();
    }

    await waitFor(() => root.querySelector(".complete") !== null);
    expect(root.querySelector(".answered-count")!.textContent).toContain("2");

    const lines = readFileSync(logPath, "utf-8").trim().split("\n");
    expect(lines.length).toBe(8);
    const records = lines.map((line) => JSON.parse(line));
    for (const record of records) {
      expect(record.type).toBe("answer");
    }
    const criteria = new Set(records.map((r) => r.criterion));
    expect(criteria.size).toBe(4);
  }, 30000);

  it("restores selections from local storage mid-query", async () => {
    // a fresh session in a fresh DOM, partially answered, then re-mounted
    localStorage.clear();
    const root = document.createElement("div");
    document.body.appendChild(root);
    const app = new PreferenceApp(root, BASE);
    await app.start();
    await waitFor(() => root.querySelector(".progress") !== null);
    clickChoice(root, "naturalness", 2);
    clickChoice(root, "closeness", 1);

    const root2 = document.createElement("div");
    document.body.appendChild(root2);
    const app2 = new PreferenceApp(root2, BASE);
    await app2.start();
    await waitFor(() => root2.querySelector(".progress") !== null);
    const natural = root2.querySelector<HTMLInputElement>(
      '.criterion-naturalness input[value="2"]',
    );
    const close = root2.querySelector<HTMLInputElement>(
      '.criterion-closeness input[value="1"]',
    );
    expect(natural!.checked).toBe(true);
    expect(close!.checked).toBe(true);
    expect(root2.querySelector<HTMLButtonElement>("button.submit")!.disabled).toBe(true);
  }, 30000);
});
