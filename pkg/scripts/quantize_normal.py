"""CLVQ grids for N(0, 1): distortion per size and the log-log slope."""

import json
import os
import sys
from pathlib import Path

from nncontrol import cli

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "normal_quantize.json"


def main():
    code = cli.main(["quantize", str(CONFIG)])
    if code:
        return code
    out = cli.resolve_output_dir(cli.load_json(CONFIG)["output_dir"])
    with open(os.path.join(out, "quantizer_distortion.csv"), encoding="utf-8") as fh:
        print(fh.read().strip())
    with open(os.path.join(out, "manifest.json"), encoding="utf-8") as fh:
        print("log-log slope", json.load(fh)["distortion_loglog_slope"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
