"""
Monte-Carlo checks on the shipped profiles. They take minutes, run them with

    RUN_SLOW=1 python -m unittest tests.test_acceptance
"""

import itertools
import os
import tempfile
import unittest

import numpy as np
import scipy.linalg as sla

from src.models.baseline_estimators import mmv_somp_estimate, noise_floor, somp_recover
from src.models.bench_harness import emit_csv, run_experiment
from src.models.mjce import run_mjce
from src.models.reflection_design import mutual_coherence, optimize_reflections
from src.models.subspace import estimate_common_subspace, mdl_order, project, sample_covariance
from src.scripts.run_benchmark import CONFIG_DIR
from src.utils.channel_model import build_dictionary, sample_channels, steering_matrix
from src.utils.config import SystemConfig, load_experiment
from src.utils.training_protocol import TrainingDesign, generate_pilots, random_reflections, simulate_uplink

RUN_SLOW = bool(os.environ.get("RUN_SLOW"))

REDUCED = dict(M=32, L=32, K=4, T=4, B=16, P_dB=10.0, G_r=128, G_t=128, N_f=4, N_h=1)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def profile(name, **overrides):
    return load_experiment(os.path.join(CONFIG_DIR, name), {"n_jobs": -1, **overrides})


def mean_nmse(table, estimator):
    rows = table.frame[table.frame["estimator"] == estimator]
    return rows.set_index("sweep")["mean_nmse"]


@unittest.skipUnless(RUN_SLOW, "slow Monte-Carlo checks, set RUN_SLOW=1")
class TestProfiles(unittest.TestCase):
    def test_exact_recovery_floor(self):
        table = run_experiment(profile("exact_recovery.yaml"), timing=False, progress=False)
        self.assertTrue(np.all(table.frame["failed"] == 0))
        self.assertTrue(np.all(table.frame["mean_nmse"] < 1e-10))

    def test_estimator_ordering_over_training_overhead(self):
        table = run_experiment(profile("reduced_overhead.yaml"), timing=False, progress=False)
        chain = ["s-genie-ls", "s-mjce", "s-mmv", "mmv", "smv"]
        curves = {name: mean_nmse(table, name) for name in chain}
        for B in curves["s-mjce"].index:
            for better, worse in zip(chain, chain[1:]):
                with self.subTest(B=B, pair=(better, worse)):
                    self.assertLessEqual(curves[better][B], curves[worse][B])
        gain_db = 10 * np.log10(curves["s-mmv"][16.0] / curves["s-mjce"][16.0])
        self.assertGreaterEqual(gain_db, 2.0)

    def test_penalty_weight_has_interior_optimum(self):
        table = run_experiment(profile("reduced_lambda.yaml"), timing=False, progress=False)
        curve = mean_nmse(table, "s-mjce").to_numpy()
        best = int(np.argmin(curve))
        self.assertTrue(0 < best < len(curve) - 1, f"s-mjce NMSE over the d sweep: {curve}")

    def test_optimized_reflections_do_not_hurt(self):
        overrides = dict(sweep_values=[8.0], estimators=["s-mjce"])
        random = run_experiment(profile("reduced_overhead.yaml", **overrides), timing=False, progress=False)
        optimized = run_experiment(
            profile("reduced_overhead.yaml", reflection_mode="optimized", **overrides), timing=False, progress=False
        )
        self.assertLessEqual(optimized.frame["mean_nmse"].iloc[0], random.frame["mean_nmse"].iloc[0])

    def test_csv_independent_of_worker_count(self):
        outputs = []
        with tempfile.TemporaryDirectory() as tmp:
            for n_jobs in (1, 8, 1):
                spec = profile("reduced_overhead.yaml", trials=5, n_jobs=n_jobs)
                path = os.path.join(tmp, f"run_{len(outputs)}.csv")
                emit_csv(run_experiment(spec, timing=False, progress=False), path)
                with open(path, "rb") as file:
                    outputs.append(file.read())
        self.assertEqual(outputs[0], outputs[1])
        self.assertEqual(outputs[0], outputs[2])


@unittest.skipUnless(RUN_SLOW, "slow Monte-Carlo checks, set RUN_SLOW=1")
class TestStatisticalProperties(unittest.TestCase):
    def test_projection_noise_reduction(self):
        rng = np.random.default_rng(0)
        M, N_hat, ratios = 32, 4, []
        for _ in range(1000):
            S_par = sla.orth(crandn(rng, M, N_hat))
            noise = crandn(rng, 4, M, 16)
            ratios.append(np.linalg.norm(project(noise, S_par)) ** 2 / np.linalg.norm(noise) ** 2)
        self.assertAlmostEqual(np.mean(ratios) / (N_hat / M), 1.0, delta=0.05)

    def test_mdl_recovers_planted_order(self):
        M, B, T = 32, 128, 4
        rng = np.random.default_rng(1)
        for N_f in (2, 4, 8):
            hits = 0
            for _ in range(200):
                phis = -1.0 + 2.0 * (np.arange(N_f) + 0.5 * rng.uniform(size=N_f)) / N_f
                signal = 10.0 * crandn(rng, N_f, B * T)
                Y = np.sqrt(M) * steering_matrix(M, phis) @ signal + crandn(rng, M, B * T)
                eigvals = sla.eigvalsh(sample_covariance(Y.reshape(M, B, T).transpose(1, 0, 2)))[::-1]
                hits += mdl_order(eigvals, M, B, T) == N_f
            with self.subTest(N_f=N_f):
                self.assertGreaterEqual(hits, 180)

    def test_somp_matches_best_subset(self):
        L, G_r, N = 16, 32, 4
        rng = np.random.default_rng(2)
        A_R = steering_matrix(L, -1.0 + 2.0 * np.arange(G_r) / G_r)
        for _ in range(100):
            V = np.exp(-2j * np.pi * np.outer(np.arange(L), np.arange(L)) / L)
            D = V.conj().T @ A_R
            n_paths = int(rng.integers(1, 3))
            first = 2 * int(rng.integers(0, G_r // 2))
            support = sorted({first, (first + G_r // 2) % G_r}) if n_paths == 2 else [first]
            X = np.zeros((G_r, N), dtype=complex)
            X[support] = crandn(rng, len(support), N)
            Y = D @ X

            best, best_residual = None, np.inf
            for subset in itertools.combinations(range(G_r), len(support)):
                D_sel = D[:, list(subset)]
                residual = np.linalg.norm(Y - D_sel @ sla.lstsq(D_sel, Y)[0])
                if residual < best_residual:
                    best, best_residual = sorted(subset), residual
            self.assertEqual(sorted(somp_recover(Y, D, eps=0.0).support.tolist()), best)

    def test_objective_is_monotone(self):
        cfg = SystemConfig(**REDUCED)
        dictionary = build_dictionary(cfg)
        A_R = dictionary.A_R
        rng = np.random.default_rng(3)
        violations = 0
        for _ in range(200):
            chan = sample_channels(cfg, rng)
            V = random_reflections(cfg.L, cfg.B, rng)
            td = TrainingDesign(S=generate_pilots(cfg.K, cfg.T, cfg.P), V=V, P=cfg.P, noise_var=cfg.noise_var)
            received = simulate_uplink(chan, td, rng)
            subspace = estimate_common_subspace(received.Y)
            eps = noise_floor(subspace.N_hat, cfg.B, cfg.noise_var, cfg.P, cfg.T)
            init = mmv_somp_estimate(received.Ytil, V, dictionary, eps, subspace.S_par)
            report = run_mjce(project(received.Ytil, subspace.S_par), V, A_R, cfg, subspace.S_par, init.G_hat)
            state = report.diagnostics["state"]
            for trace in [state.objective_trace] + state.inner_traces:
                trace = np.asarray(trace)
                violations += int(np.sum(np.diff(trace) > 1e-8 * np.abs(trace[:-1])))
        self.assertEqual(violations, 0)

    def test_optimized_reflections_lower_coherence(self):
        L, B, G_r = 64, 16, 256
        A_R = steering_matrix(L, -1.0 + 2.0 * np.arange(G_r) / G_r)
        rng = np.random.default_rng(4)
        random_mu, optimized_mu = [], []
        for _ in range(100):
            V = random_reflections(L, B, rng)
            random_mu.append(mutual_coherence(V.conj().T @ A_R).mu)
            V_opt = optimize_reflections(A_R, B, n_sweeps=3, rng=rng).V
            optimized_mu.append(mutual_coherence(V_opt.conj().T @ A_R).mu)
        self.assertLess(np.median(optimized_mu), np.median(random_mu))


if __name__ == "__main__":
    unittest.main()
