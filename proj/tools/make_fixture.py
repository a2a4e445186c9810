#!/usr/bin/env python3
"""Generate the bundled example trial (data/example_trial.csv).

The fixture mimics a small ethnic subgroup (42 members) next to a large
non-member group (795) that differs on a strong treatment-effect modifier
(wild-type KRAS), so the members-only analysis is the least precise one.

With --check PATH_TO_CLI the script also runs `analyze` on the fixture and
verifies that analysis D has the strictly largest confidence-limit difference.
"""

import argparse
import csv
import json
import math
import pathlib
import subprocess
import sys
import tempfile

import numpy as np

SEED = 837
N_MEMBERS = 42
N_NONMEMBERS = 795
N_INCOMPLETE = 6

LAWS = {
    # name: (member probability, non-member probability)
    "kras_wild": (0.40, 0.60),
    "age_over_65": (0.29, 0.39),
    "female": (0.52, 0.37),
    "liver_mets": (0.85, 0.89),
    "colon": (0.50, 0.69),
}
ECOG = {1: (0.45, 0.45, 0.10), 0: (0.56, 0.39, 0.05)}

BASE_RATE = -math.log(0.45) / 365.0
TREATMENT = 0.15
MAIN = {"kras_wild": -0.1, "age_over_65": 0.2, "female": -0.1, "liver_mets": 0.15}
INTERACTION = {"kras_wild": -0.65, "age_over_65": 0.3}


def generate(rng):
    rows = []
    for i in range(N_MEMBERS + N_NONMEMBERS):
        member = 1 if i < N_MEMBERS else 0
        covs = {name: int(rng.random() < probs[1 - member]) for name, probs in LAWS.items()}
        ecog = int(rng.choice(3, p=ECOG[member]))
        arm = int(rng.random() < 0.5)
        log_rate = math.log(BASE_RATE) + TREATMENT * arm + 0.1 * (ecog > 0)
        for name, value in covs.items():
            if value:
                log_rate += MAIN.get(name, 0.0) + INTERACTION.get(name, 0.0) * arm
        event_time = rng.exponential(1.0 / math.exp(log_rate))
        censor = min(900.0, rng.exponential(1.0 / 0.0003))
        rows.append({
            "patient_id": f"P{i + 1:04d}",
            "treatment": arm,
            "pfs_days": int(math.ceil(min(event_time, censor))),
            "pfs_event": int(event_time <= censor),
            "ethnicity": "Hispanic" if member else "White",
            "kras_wild": covs["kras_wild"],
            "age_over_65": "true" if covs["age_over_65"] else "false",
            "female": covs["female"],
            "liver_mets": covs["liver_mets"],
            "colon": covs["colon"],
            "ecog": ecog,
        })
    # Incomplete rows exercise complete-case filtering.
    for j in range(N_INCOMPLETE):
        row = dict(rows[j * 97 % len(rows)])
        row["patient_id"] = f"X{j + 1:04d}"
        row[["kras_wild", "ecog", "pfs_days"][j % 3]] = "NA" if j % 2 else ""
        rows.append(row)
    order = rng.permutation(len(rows))
    return [rows[k] for k in order]


SCHEMA = {
    "columns": {"id": "patient_id", "arm": "treatment", "time": "pfs_days",
                "event": "pfs_event", "member": "ethnicity", "member_level": "Hispanic"},
    "covariates": [
        {"name": "kras_wild", "kind": "binary"},
        {"name": "age_over_65", "kind": "binary"},
        {"name": "female", "kind": "binary"},
        {"name": "liver_mets", "kind": "binary"},
        {"name": "colon", "kind": "binary"},
        {"name": "ecog", "kind": "categorical", "levels": ["0", "1", "2"]},
    ],
}


def check(cli, data_dir):
    with tempfile.TemporaryDirectory() as out:
        subprocess.run([cli, "analyze", "--input", str(data_dir / "example_trial.csv"),
                        "--spec", str(data_dir / "example_schema.json"), "--seed", "2024",
                        "--out", out], check=True, stdout=subprocess.DEVNULL)
        report = json.loads((pathlib.Path(out) / "report.json").read_text())
    clds = {e["analysis"]: e["cld"] for e in report["estimates"]}
    print("CLDs:", {k: round(v, 3) for k, v in clds.items()})
    others = [v for k, v in clds.items() if k != "D"]
    if not all(clds["D"] > v for v in others):
        sys.exit("fixture check failed: analysis D does not have the largest CLD")
    print("fixture check passed")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=str(pathlib.Path(__file__).resolve().parent.parent / "data"))
    parser.add_argument("--check", metavar="CLI", help="path to the transweight executable")
    args = parser.parse_args()
    data_dir = pathlib.Path(args.out)
    data_dir.mkdir(parents=True, exist_ok=True)

    rows = generate(np.random.default_rng(SEED))
    with open(data_dir / "example_trial.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    (data_dir / "example_schema.json").write_text(json.dumps(SCHEMA, indent=2) + "\n")
    print(f"wrote {len(rows)} rows to {data_dir / 'example_trial.csv'}")
    if args.check:
        check(args.check, data_dir)


if __name__ == "__main__":
    main()
