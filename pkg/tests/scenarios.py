"""Scripted history/shift/probe scenarios for the selective-adaptation cascade.

Each row: (name, past relative changes, s_dist, probe result or None if the
probe must not run, expected stage).
"""
from adaptstress.tta import Stage

CASCADE = [
    ("history says it helps", [0.03, 0.04, 0.025], 0.7, None, Stage.HISTORY_APPLY),
    ("history says it hurts", [-0.06, -0.07, -0.055], 0.7, None, Stage.HISTORY_SKIP),
    ("history wins over low shift", [0.05, 0.05, 0.05], 0.1, None, Stage.HISTORY_APPLY),
    ("too little history, low shift", [0.10, 0.10], 0.2, None, Stage.LOW_SHIFT_SKIP),
    ("no history, low shift", [], 0.2, None, Stage.LOW_SHIFT_SKIP),
    ("no history, high shift, probe helps", [], 0.7, 0.03, Stage.PROBE_APPLY),
    ("no history, high shift, probe flat", [], 0.7, 0.01, Stage.PROBE_SKIP),
    ("middle band, probe helps", [], 0.45, 0.05, Stage.PROBE_APPLY),
    ("middle band, probe hurts", [], 0.45, -0.01, Stage.PROBE_SKIP),
    ("inconclusive history, high shift, probe helps", [0.01, -0.01, 0.0, 0.02], 0.8, 0.025,
     Stage.PROBE_APPLY),
    ("history exactly at thresholds is inconclusive", [0.02, 0.02, 0.02], 0.2, None,
     Stage.LOW_SHIFT_SKIP),
    ("shift exactly 0.3 and probe exactly 2% do not trigger", [], 0.3, 0.02,
     Stage.PROBE_SKIP),
]
