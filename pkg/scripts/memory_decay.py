"""Memory trace after a long-term campaign stops, for IIR and FIR kernels.

Applies a constant long-term input for ``--pulse`` steps, then nothing,
and writes the per-step memory level (first agent) of each kernel as CSV.

    python scripts/memory_decay.py --tau 3 --window 6 > decay.csv
"""
import argparse
import csv
import sys

import numpy as np

from fjmpc import MemoryKernel, memory_convolution


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--tau", type=float, default=3.0)
    p.add_argument("--window", type=int, default=6)
    p.add_argument("--pulse", type=int, default=5)
    p.add_argument("--steps", type=int, default=20)
    p.add_argument("--level", type=float, default=0.5)
    args = p.parse_args(argv)

    kernels = {"iir": MemoryKernel("iir", args.tau), "fir": MemoryKernel("fir", args.tau, args.window)}
    history = [np.array([args.level])] * args.pulse + [np.zeros(1)] * args.steps
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["t", "u_l", "mem_iir", "mem_fir", "iir_decay_bound"])
    off = None
    for t in range(len(history) + 1):
        mem = {name: float(np.atleast_1d(memory_convolution(k, history[:t]))[0])
               for name, k in kernels.items()}
        if t == args.pulse:
            off = mem["iir"]
        bound = "" if off is None else repr(kernels["iir"].kappa ** (t - args.pulse) * off)
        u = history[t][0] if t < len(history) else ""
        w.writerow([t, u, repr(mem["iir"]), repr(mem["fir"]), bound])


if __name__ == "__main__":
    main()
