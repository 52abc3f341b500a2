#!/usr/bin/env python3
"""
vRAN Orchestrator

Trains and evaluates a learning-based orchestrator that picks the functional
split of a virtualized base station and sizes its vDU/vCU compute, and
compares it with the optimal static (STAO) and dynamic oracle (DYNO) policies.

Version: 1.0.0
License: MIT

Usage:
    python3 vran-orchestrator.py <command> [options]

Commands:
    pretrain-omega  Fit the resource orchestrator
    train           Train the split orchestrator
    eval            LOFV vs STAO and DYNO
    baseline        STAO and DYNO only
    sweep           Cost-coefficient or time-horizon sweep
    export          Summary, convergence series and plot from a metrics CSV
    measure         Per-split utilization samples CSV
    trace           Traffic trace CSV

Examples:
    python3 vran-orchestrator.py pretrain-omega --preset desk
    python3 vran-orchestrator.py train --preset desk --seed 7
    python3 vran-orchestrator.py eval --preset desk
    python3 vran-orchestrator.py sweep --preset desk --sweep horizon_hours=2,4,6
"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), ".."))

from vranlab.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main())
