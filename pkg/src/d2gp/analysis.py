"""Conditioning analysis: finite-difference linearization of a
preconditioner, preconditioned-Gram spectra, and convergence reporting."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import CapabilityError, ContractError, ParameterError
from .metrics import psnr

DENSE_MAX_N = 4096


@dataclass
class JacobianEstimate:
    """Forward-difference Jacobian of a preconditioner around x0.

    Column j is (P(x0 + eps e_j) - P(x0)) / eps at iteration index k.
    """
    matrix: np.ndarray
    base_point: np.ndarray
    epsilon: float
    k: int


@dataclass
class SpectrumReport:
    singular_values: np.ndarray  # descending
    condition_number: float      # over values above the cutoff
    rank: int
    threshold: float


def jacobian_fd(p, x0, epsilon=1e-4, k=1):
    """Estimate the preconditioner's Jacobian by forward differences."""
    if epsilon <= 0:
        raise ParameterError(f"epsilon must be > 0, got {epsilon}")
    x0 = np.asarray(x0.data if isinstance(x0, T.Tensor) else x0, dtype=np.float64).reshape(-1)
    n = x0.size
    if n > DENSE_MAX_N:
        raise CapabilityError(f"jacobian_fd limited to n <= {DENSE_MAX_N}, got {n}")
    with T.no_grad():
        base = p.apply(T.Tensor(x0), k).data
        # probe in batches (row j of a probe batch is x0 + eps e_j)
        out = np.empty((n, n))
        chunk = 256
        for start in range(0, n, chunk):
            stop = min(start + chunk, n)
            probes = np.tile(x0, (stop - start, 1))
            probes[np.arange(stop - start), np.arange(start, stop)] += epsilon
            out[start:stop] = p.apply(T.Tensor(probes), k).data
    J = (out - base[None, :]).T / epsilon
    return JacobianEstimate(matrix=J, base_point=x0, epsilon=epsilon, k=k)


def preconditioned_gram_spectrum(J, op, threshold=1e-10):
    """Singular values and condition number of J * (H^T H)."""
    Jm = J.matrix if isinstance(J, JacobianEstimate) else np.asarray(J)
    if Jm.shape != (op.n, op.n):
        raise ContractError(f"Jacobian shape {Jm.shape} does not match operator n={op.n}")
    gram = op.gram_dense()
    sv = np.linalg.svd(Jm @ gram, compute_uv=False)
    sv = np.sort(sv)[::-1]
    cutoff = threshold * sv[0] if sv[0] > 0 else 0.0
    kept = sv[sv > cutoff]
    kappa = float(kept[0] / kept[-1]) if kept.size else float("inf")
    return SpectrumReport(singular_values=sv, condition_number=kappa,
                          rank=int(kept.size), threshold=cutoff)


def spectrum_to_csv(report, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "singular_value"])
        for i, s in enumerate(report.singular_values):
            w.writerow([i, repr(float(s))])


def convergence_report(runs, labels):
    """Long-format rows (label, iteration, psnr, fidelity) from solver traces."""
    if len(runs) != len(labels):
        raise ContractError("runs and labels must have equal lengths")
    if runs:
        K = runs[0].K
        for r in runs:
            if r.K != K or len(r.fidelity) != K:
                raise ContractError("all runs must share the same traced K")
    rows = []
    for run, label in zip(runs, labels):
        for i in range(run.K):
            fid = float(np.mean(run.fidelity[i]))
            ps = float(np.mean(run.psnr[i])) if run.psnr else float("nan")
            rows.append((label, i + 1, ps, fid))
    return rows


def convergence_to_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "iteration", "psnr", "fidelity"])
        for row in rows:
            w.writerow([row[0], row[1], repr(row[2]), repr(row[3])])


__all__ = [
    "JacobianEstimate", "SpectrumReport", "jacobian_fd",
    "preconditioned_gram_spectrum", "spectrum_to_csv",
    "convergence_report", "convergence_to_csv", "psnr",
]
