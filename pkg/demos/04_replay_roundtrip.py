"""Materialise a synthetic stream to disk and replay it.

Real score streams (a classifier's conformity scores on a test set) enter
through the replay format: one row per round with the true label's score
and the conformal set size at every threshold.  A replayed run of a stream
written by ``make-replay`` reproduces the live run exactly.

    python demos/04_replay_roundtrip.py
"""

import tempfile
from pathlib import Path

from ocpbandit.cli import main

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    common = ["--K", "20", "--T", "3000", "--alpha", "0.1", "--seed", "7"]
    main(["make-replay", *common, "--env", "shift", "--path", str(tmp / "stream.csv")])
    print("first rows of the replay file:")
    print("".join((tmp / "stream.csv").open().readlines()[:3]))

    main(["run", *common, "--env", "shift", "--out", str(tmp / "live")])
    main(["run", *common, "--env", f"replay:{tmp / 'stream.csv'}", "--out", str(tmp / "replayed")])
    same = (tmp / "live/steps_seed7.csv").read_bytes() == (tmp / "replayed/steps_seed7.csv").read_bytes()
    print("per-step logs identical:", same)
    main(["check", str(tmp / "replayed")])
