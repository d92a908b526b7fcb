"""Run the whole experiment: build data, train both layers, evaluate, simulate.

    python scripts/run_pipeline.py --out runs/nslkdd --train-file KDDTrain+.txt --test-file KDDTest+.txt
    python scripts/run_pipeline.py --out runs/synthetic --synthetic

Every step goes through the ``healthids`` command line, so each output directory
gets its usual manifest. The script stops at the first failing step.
"""

import argparse
import sys
import time
from pathlib import Path

from healthids import cli


def step(name, argv):
    print(f"\n== {name}: healthids {' '.join(argv)}", flush=True)
    t0 = time.perf_counter()
    code = cli.main(argv)
    print(f"== {name} exited {code} in {time.perf_counter() - t0:.1f}s", flush=True)
    if code != cli.EXIT_OK:
        sys.exit(code)


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True, type=Path)
    ap.add_argument("--train-file")
    ap.add_argument("--test-file")
    ap.add_argument("--synthetic", action="store_true", help="generate and use the synthetic corpus")
    ap.add_argument("--seed", type=int, default=42)
    ap.add_argument("--repeats", type=int, default=10)
    ap.add_argument("--config", help="simulation config (YAML)")
    args = ap.parse_args()

    out = args.out
    sources = []
    if args.synthetic:
        step("synth-data", ["synth-data", "--out", str(out / "raw")])
        sources = ["--train-file", str(out / "raw" / "KDDTrain+.txt"), "--test-file", str(out / "raw" / "KDDTest+.txt")]
    else:
        if args.train_file:
            sources += ["--train-file", args.train_file]
        if args.test_file:
            sources += ["--test-file", args.test_file]

    data = str(out / "data")
    step("build-data", ["build-data", *sources, "--seed", str(args.seed), "--out", data])
    for layer in ("anomaly", "misuse"):
        step(f"train {layer}", ["train", "--data", data, "--layer", layer, "--out", str(out / "models" / f"{layer}.json")])
    models = ["--anomaly-model", str(out / "models" / "anomaly.json"),
              "--misuse-model", str(out / "models" / "misuse.json")]
    step("eval", ["eval", "--data", data, *models, "--repeats", str(args.repeats), "--out", str(out / "report")])
    sim = ["simulate", "--data", data, *models, "--seed", str(args.seed), "--out", str(out / "sim")]
    if args.config:
        sim += ["--config", args.config]
    step("simulate", sim)
    print(f"\nreport: {out / 'report' / 'report.csv'}")


if __name__ == "__main__":
    main()
