"""Jacobian estimation, preconditioned-Gram spectra, PSNR, and
convergence reporting."""

import csv
import math

import numpy as np
import pytest

from d2gp import tensor as T
from d2gp.analysis import (convergence_report, convergence_to_csv,
                           jacobian_fd, preconditioned_gram_spectrum,
                           spectrum_to_csv)
from d2gp.errors import CapabilityError, ContractError, ParameterError, ShapeError
from d2gp.forward_models import build_spc
from d2gp.metrics import psnr
from d2gp.preconditioners import (HessianPreconditioner,
                                  IdentityPreconditioner, make_preconditioner)
from d2gp.solver import (DctSoftThreshold, IdentityProx, SolverConfig,
                         pnp_fista)

from conftest import rel_err

SIDE = 8
N = SIDE * SIDE


class TestJacobian:
    @pytest.mark.parametrize("variant", ["identity", "scalar", "conv",
                                         "pointwise", "full_linear", "polynomial"])
    def test_linear_variants_recovered_exactly(self, variant, rng):
        op = build_spc(SIDE, 0.5, normalized=True)
        p = make_preconditioner(variant, op=op, K=3, seed=0)
        # randomize parameters so the matrix is nontrivial
        for q in p.parameters():
            q.data = q.data + 0.1 * rng.standard_normal(q.data.shape)
        x0 = rng.standard_normal(N)
        J = jacobian_fd(p, x0, epsilon=1e-4, k=2).matrix
        with T.no_grad():
            dense = p.apply(T.Tensor(np.eye(N)), 2).data.T
        assert np.max(np.abs(J - dense)) < 1e-9

    def test_npo_jacobian_close_to_identity_at_init(self, rng):
        p = make_preconditioner("npo", image_side=SIDE, K=3, seed=0,
                                channels=4, blocks=1, pe_dim=8)
        J = jacobian_fd(p, rng.standard_normal(N), k=1).matrix
        # global residual + zero head: exactly the identity map
        assert rel_err(J, np.eye(N)) < 1e-6

    def test_epsilon_validation(self, rng):
        p = IdentityPreconditioner()
        with pytest.raises(ParameterError):
            jacobian_fd(p, rng.standard_normal(N), epsilon=0.0)

    def test_capability_guard(self):
        with pytest.raises(CapabilityError):
            jacobian_fd(IdentityPreconditioner(), np.zeros(4097))


class TestSpectrum:
    def test_identity_on_full_sample_spc_is_flat(self):
        op = build_spc(16, 1.0)
        J = jacobian_fd(IdentityPreconditioner(), np.zeros(op.n))
        rep = preconditioned_gram_spectrum(J, op)
        assert abs(rep.condition_number - 1.0) < 1e-12
        assert rep.rank == op.n

    def test_hessian_flattens_sr_spectrum(self, rng):
        from d2gp.forward_models import build_sr
        op = build_sr(16, 2)
        ident = preconditioned_gram_spectrum(
            jacobian_fd(IdentityPreconditioner(), np.zeros(op.n)), op)
        hess = preconditioned_gram_spectrum(
            jacobian_fd(HessianPreconditioner(op), np.zeros(op.n)), op,
            threshold=1e-6)
        assert hess.condition_number < ident.condition_number

    def test_matches_reference_svd(self, rng):
        op = build_spc(SIDE, 0.5, normalized=True)
        J = rng.standard_normal((N, N))
        rep = preconditioned_gram_spectrum(J, op)
        ref = np.sort(np.linalg.svd(J @ op.gram_dense(), compute_uv=False))[::-1]
        assert rel_err(rep.singular_values, ref) < 1e-10

    def test_shape_mismatch(self):
        op = build_spc(SIDE, 0.5)
        with pytest.raises(ContractError):
            preconditioned_gram_spectrum(np.eye(5), op)

    def test_csv_roundtrip(self, tmp_path, rng):
        op = build_spc(SIDE, 0.5)
        rep = preconditioned_gram_spectrum(np.eye(N), op)
        path = tmp_path / "spec.csv"
        spectrum_to_csv(rep, str(path))
        with open(path) as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["index", "singular_value"]
        got = np.array([float(r[1]) for r in rows[1:]])
        assert np.array_equal(got, rep.singular_values)  # repr round-trips


class TestPsnr:
    def test_reference_values(self):
        a = np.zeros(100)
        assert abs(psnr(a + 0.1, a) - 20.0) < 1e-12
        assert abs(psnr(a + 0.5, a) - 10 * math.log10(4.0)) < 1e-12  # 6.0206 dB
        assert psnr(a, a) == math.inf

    def test_peak_scaling(self):
        a = np.zeros(10)
        assert abs(psnr(a + 0.1, a, peak=2.0) - (20.0 + 20 * math.log10(2))) < 1e-12

    def test_validation(self):
        with pytest.raises(ParameterError):
            psnr(np.zeros(3), np.zeros(3), peak=0.0)
        with pytest.raises(ShapeError):
            psnr(np.zeros(3), np.zeros(4))


class TestConvergenceReport:
    def _run(self, K, x_true, y, op):
        cfg = SolverConfig(alpha=0.4, rho=0.05, K=K, record_trace=True)
        return pnp_fista(IdentityPreconditioner(), op, T.Tensor(y), cfg,
                         DctSoftThreshold(SIDE), x_true=T.Tensor(x_true))

    def test_rows_long_format(self, rng):
        op = build_spc(SIDE, 0.5, normalized=True)
        x = rng.random(N)
        y = op.apply_np(x)
        runs = [self._run(4, x, y, op), self._run(4, x, y, op)]
        rows = convergence_report(runs, ["a", "b"])
        assert len(rows) == 8
        assert rows[0][0] == "a" and rows[0][1] == 1
        assert rows[-1][0] == "b" and rows[-1][1] == 4

    def test_ragged_traces_rejected(self, rng):
        op = build_spc(SIDE, 0.5, normalized=True)
        x = rng.random(N)
        y = op.apply_np(x)
        with pytest.raises(ContractError):
            convergence_report([self._run(4, x, y, op), self._run(5, x, y, op)],
                               ["a", "b"])
        with pytest.raises(ContractError):
            convergence_report([self._run(4, x, y, op)], ["a", "b"])

    def test_csv_export(self, tmp_path, rng):
        op = build_spc(SIDE, 0.5, normalized=True)
        x = rng.random(N)
        y = op.apply_np(x)
        rows = convergence_report([self._run(3, x, y, op)], ["run"])
        path = tmp_path / "trace.csv"
        convergence_to_csv(rows, str(path))
        with open(path) as fh:
            got = list(csv.reader(fh))
        assert got[0] == ["label", "iteration", "psnr", "fidelity"]
        assert len(got) == 4
