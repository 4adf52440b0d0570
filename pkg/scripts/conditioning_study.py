#!/usr/bin/env python3
"""Conditioning study: preconditioned-Gram condition numbers for the
classical preconditioners on all three tasks at 16x16.

Usage: python3 scripts/conditioning_study.py [out_dir]
"""

import csv
import sys

import numpy as np

from d2gp.analysis import jacobian_fd, preconditioned_gram_spectrum
from d2gp.forward_models import build_mri, build_spc, build_sr
from d2gp.preconditioners import make_preconditioner


def main(out_dir="runs/conditioning"):
    import os
    os.makedirs(out_dir, exist_ok=True)
    side = 16
    tasks = {
        "spc_g025": build_spc(side, 0.25, normalized=True),
        "spc_full": build_spc(side, 1.0, normalized=True),
        "mri_af4": build_mri(side, 4, mask_seed=0),
        "sr_rf2": build_sr(side, 2),
    }
    rows = []
    x0 = np.zeros(side * side)
    for task, op in tasks.items():
        for variant in ("identity", "hessian", "polynomial", "scalar"):
            p = make_preconditioner(variant, op=op, K=20)
            rep = preconditioned_gram_spectrum(jacobian_fd(p, x0), op,
                                               threshold=1e-8)
            rows.append((task, variant, rep.condition_number, rep.rank))
            print(f"{task:10s} {variant:10s} kappa {rep.condition_number:12.6g} "
                  f"rank {rep.rank}")
    with open(f"{out_dir}/conditioning.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task", "preconditioner", "kappa", "rank"])
        w.writerows(rows)
    print(f"wrote {out_dir}/conditioning.csv")


if __name__ == "__main__":
    main(*sys.argv[1:])
