"""Regenerate the FK fixtures the UI tests check against.

Run from the repository root:  python3 frontend/scripts/generate_fixtures.py
"""
import json
import pathlib

import numpy as np

from cspace_metrics import fk_planar, load_arm

OUT = pathlib.Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "fk_fixtures.json"


def main():
    arm = load_arm("planar3")
    rng = np.random.default_rng(321)
    cases = []
    for _ in range(20):
        q = rng.uniform(-np.pi, np.pi, 3)
        joints = fk_planar(arm, q).joints
        cases.append(
            {
                "angles": [float(v) for v in q],
                "joints": [[float(x) for x in row] for row in joints],
            }
        )
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(
        json.dumps({"links": list(arm.link_lengths), "cases": cases}, indent=1) + "\n"
    )
    print(f"wrote {OUT} ({len(cases)} cases)")


if __name__ == "__main__":
    main()
