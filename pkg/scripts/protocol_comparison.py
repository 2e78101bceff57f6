"""Naive vs receding-horizon comparison on the 112-agent scenario.

Runs both designers at alpha=0.5, rho=0.7 for each budget and prints the
summary columns side by side. Artifacts land in ``--out``.

    python scripts/protocol_comparison.py --out runs/protocol
"""
import argparse
from pathlib import Path

from fjmpc.config import SweepSpec, parse_config
from fjmpc.sweep import default_jobs, run_sweep

HERE = Path(__file__).resolve().parent


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(HERE / "configs" / "baseline.yaml"))
    p.add_argument("--beta", type=float, nargs="+", default=[200.0, 400.0])
    p.add_argument("--out", default="runs/protocol")
    p.add_argument("--jobs", type=int, default=default_jobs())
    args = p.parse_args(argv)

    base = parse_config(args.config)
    spec = SweepSpec(alpha=(0.5,), rho=(0.7,), beta=tuple(args.beta), policy=("naive", "rh"))
    records = run_sweep(spec, base, out=args.out, jobs=args.jobs)

    print(f"{'policy':<8}{'beta':>8}{'x_bar_T':>10}{'sigma_x_T':>11}{'u_s_mean':>10}"
          f"{'u_l_mean':>10}{'r_beta':>10}")
    for r in sorted(records, key=lambda r: (r.beta, r.policy)):
        s = r.summary
        if s is None:
            print(f"{r.policy:<8}{r.beta:>8g}  failed")
            continue
        print(f"{r.policy:<8}{s.beta:>8g}{s.x_bar_T:>10.3f}{s.sigma_x_T:>11.3f}{s.u_s_mean:>10.3f}"
              f"{s.u_l_mean:>10.3f}{s.residual_budget:>10.2f}")


if __name__ == "__main__":
    main()
