#!/usr/bin/env python3
"""
EHR SEQUENCE WORKBENCH
Repository launcher for the command-line pipeline.

Usage:
    python main.py synth    --config desk_ablation_example --out out
    python main.py ablate   --config desk_ablation_example --out out --jobs 4 --resume
    python main.py report   --out out

Without --config the experiment in user_data_example/ is used.
"""

import sys

from ehr_sequence_workbench.main import run

if __name__ == "__main__":
    print("🚀 Starting EHR Sequence Workbench...")
    sys.exit(run(sys.argv[1:]))
