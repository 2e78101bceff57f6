"""Effect of the conversion factor and the persistence weight on the designed effort.

Runs the alpha x rho x beta grid for both designers and prints, per cell,
the mean short- and long-term effort, the final mean inclination and the
unused budget.

    python scripts/alpha_rho_sweep.py --out runs/grid
"""
import argparse
from pathlib import Path

from fjmpc.config import parse_config, parse_sweep
from fjmpc.sweep import default_jobs, run_sweep

HERE = Path(__file__).resolve().parent


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", default=str(HERE / "configs" / "baseline.yaml"))
    p.add_argument("--sweep", default=str(HERE / "configs" / "grid.yaml"))
    p.add_argument("--out", default="runs/grid")
    p.add_argument("--jobs", type=int, default=default_jobs())
    args = p.parse_args(argv)

    records = run_sweep(parse_sweep(args.sweep), parse_config(args.config), out=args.out, jobs=args.jobs)
    print(f"{'policy':<7}{'beta':>6}{'alpha':>7}{'rho':>6}{'u_s_mean':>10}{'u_l_mean':>10}"
          f"{'x_bar_T':>9}{'r_beta':>9}")
    for r in sorted(records, key=lambda r: (r.policy, r.beta, r.rho, r.alpha)):
        s = r.summary
        if s is None:
            print(f"{r.policy:<7}{r.beta:>6g}{r.alpha:>7g}{r.rho:>6g}  failed")
            continue
        print(f"{r.policy:<7}{r.beta:>6g}{r.alpha:>7g}{r.rho:>6g}{s.u_s_mean:>10.3f}{s.u_l_mean:>10.3f}"
              f"{s.x_bar_T:>9.3f}{s.residual_budget:>9.2f}")


if __name__ == "__main__":
    main()
