#!/usr/bin/env python3
"""Mesh-refinement sweep on the cube benchmark.

Reproduces the dependence of the error and the estimators on the number of
degrees of freedom at the least favourable reaction contrast (kappa1 = 100,
kappa2 = 1e6), over M = 2, 4, 8, 16, 32. Writes CSV.

Usage:
    python scripts/sweep_mesh.py [--dim 3] [--kappa1 100] [--out mesh_sweep.csv]
"""
import argparse

from fluxbound.benchmark import RunConfig, sweep_mesh


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dim", type=int, default=3, choices=(2, 3))
    ap.add_argument("--kappa1", type=float, default=100.0)
    ap.add_argument("--kappa2", type=float, default=1.0e6)
    ap.add_argument("--m-list", default="2,4,8,16,32")
    ap.add_argument("--out", default="mesh_sweep.csv")
    args = ap.parse_args()
    cfg = RunConfig(dim=args.dim, m=2, kappa1=args.kappa1,
                    kappa2=args.kappa2, out=args.out)
    sink = sweep_mesh(cfg, [int(tok) for tok in args.m_list.split(",")])
    print(sink.text())
    print(f"wrote {len(sink.rows)} rows to {args.out}")


if __name__ == "__main__":
    main()
