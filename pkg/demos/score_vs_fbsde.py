#!/usr/bin/env python3
"""Deterministic score dynamics vs the stochastic FBSDE baseline on the
entropy benchmark, three seeds each at a reduced budget.  The score system
replaces Brownian paths with the probability-flow ODE, so its trajectories
(and losses) are noise-free given the initial draw; the FBSDE version pays
for its Euler-Maruyama noise with slower, rougher convergence.

Run from the repo root:  python3 demos/score_vs_fbsde.py
"""

import os
from dataclasses import replace

import numpy as np

from mfcscore import svgplot, training
from mfcscore.problems import build_problem

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

prob = build_problem("entropy1d")
base = training.TrainConfig(k_end=60, batch=100, seed=0, validation_size=500)
seeds = (0, 1, 2)

curves = {}
print("mode    seed   phi     grad    lap     w2")
for mode in ("score", "fbsde"):
    curves[mode] = []
    for seed in seeds:
        result = training.train(prob, replace(base, mode=mode, seed=seed))
        fe = result.report.final_errors
        print(f"{mode:6s}  {seed}     {fe['phi']:.4f}  {fe['grad']:.4f}  "
              f"{fe['lap']:.4f}  {result.report.w2_terminal:.4f}")
        curves[mode].append(result.report.err_phi)

print("\nmean final phi error:")
for mode in ("score", "fbsde"):
    finals = [c[-1] for c in curves[mode]]
    print(f"  {mode:6s} {np.mean(finals):.4f}  (seeds: "
          + " ".join(f"{v:.4f}" for v in finals) + ")")

plot = svgplot.LinePlot(title="phi error, score vs fbsde", x_label="step",
                        y_label="rel L2 error", log_y=True)
steps = np.arange(base.k_end)
for mode in ("score", "fbsde"):
    stack = np.array(curves[mode])
    plot.add_band(steps, stack.min(axis=0), stack.max(axis=0))
    plot.add(steps, stack.mean(axis=0), mode)
path = os.path.join(OUT, "score_vs_fbsde.svg")
plot.save(path)
print(f"wrote {path}")
