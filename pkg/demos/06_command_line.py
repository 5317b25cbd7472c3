# # The command line pipeline
#
# The same steps through the ``anthrokit`` command: generate, select,
# train, predict, evaluate. Each step writes a manifest that can replay
# it with ``--config``.

import json
import tempfile
from pathlib import Path

from anthrokit.cli import main

work = Path(tempfile.mkdtemp(prefix="anthrokit-demo-"))


def run(*argv):
    code = main([str(a) for a in argv] + ["--out-dir", str(work), "--log-level", "WARNING"])
    print(f"anthrokit {argv[0]:<8} -> exit {code}")


run("gen", "--subjects", "20", "--poses", "10", "--selection-poses", "200")
run("select", "--reference", work / "reference.tsv", "--poses", work / "selection_poses.tsv")
run("train", "--data", work / "train.tsv", "--selection", work / "selection.txt", "--epochs", "300")
run("predict", "--data", work / "test.tsv", "--selection", work / "selection.txt", "--model", work / "model.txt")
run("eval", "--pred", work / "predictions.csv", "--truth", work / "test.tsv")
print("aMAE:", round(json.loads((work / "eval.json").read_text())["amae_mm"], 2), "mm")

# Replaying a step from its manifest gives the same bytes.

before = (work / "model.txt").read_bytes()
run("train", "--config", work / "model.manifest")
print("replayed model identical:", (work / "model.txt").read_bytes() == before)
print("outputs in", work)
