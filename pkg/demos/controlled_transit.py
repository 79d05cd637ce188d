"""Accelerate a unit soliton to speed c_f and print the fitted (c, rho) along the way."""

import argparse
from pathlib import Path

from gkdv_control.control import transit_time
from gkdv_control.experiments import ExperimentConfig, simulate


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--cf", type=float, default=2.0)
    ap.add_argument("--eps", type=float, default=0.1)
    ap.add_argument("--out", type=Path, default=Path("runs/demo"))
    args = ap.parse_args()

    cfg = ExperimentConfig("accelerate", p=2, c_f=args.cf, eps=(args.eps,), stride=1.0)
    spec = cfg.spec(args.eps)
    rec = simulate(cfg, spec, transit_time(spec))
    if rec.failure:
        raise SystemExit(rec.failure)
    print(f"{'t':>7} {'c':>8} {'c0':>8} {'||z||_H1':>10}")
    for s in rec.samples[:: max(1, len(rec.samples) // 15)]:
        print(f"{s.t:7.2f} {s.c:8.4f} {s.c0:8.4f} {s.z_h1:10.3e}")
    s = rec.summary
    print(f"final: c(T)={s['c_T']:.4f}, ||u(T) - Q_cf||_H1={s['err_h1_T']:.3e}, wall {s['wall_time']:.1f}s")
    rec.write(args.out, f"transit_eps{args.eps:g}")


if __name__ == "__main__":
    main()
