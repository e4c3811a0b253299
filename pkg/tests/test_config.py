import glob
import json
import os
import tempfile
import unittest

import yaml
from pydantic import ValidationError

from src.scripts.run_benchmark import CONFIG_DIR
from src.utils.config import ESTIMATORS, ExperimentSpec, SolverConfig, SystemConfig, db_to_linear, load_experiment, parse_sweep
from src.utils.errors import ConfigError

BASE = dict(M=8, L=8, K=2, T=2, B=4, P_dB=10.0, G_r=16, G_t=16, N_f=2)


class TestSystemConfig(unittest.TestCase):
    def test_power_in_db(self):
        cfg = SystemConfig(**BASE)
        self.assertAlmostEqual(cfg.P, 10.0)
        self.assertAlmostEqual(db_to_linear(0.0), 1.0)

    def test_defaults(self):
        cfg = SystemConfig(**BASE)
        self.assertEqual(cfg.noise_var, 1.0)
        self.assertEqual(cfg.varsigma, 1e-9)
        self.assertEqual(cfg.d, 0.1)
        self.assertEqual(cfg.N_h, 1)

    def test_power_given_twice(self):
        with self.assertRaises(ValidationError):
            SystemConfig(**BASE, P=3.0)

    def test_invalid_systems(self):
        for change in ({"T": 1}, {"G_r": 4}, {"noise_var": 0.0}, {"M": 0}, {"unknown": 1}):
            with self.subTest(change=change):
                with self.assertRaises(ValidationError):
                    SystemConfig(**{**BASE, **change})

    def test_with_sweep(self):
        cfg = SystemConfig(**BASE)
        self.assertEqual(cfg.with_sweep("B", 12.0).B, 12)
        self.assertEqual(cfg.with_sweep("N_f", 3).N_f, 3)
        self.assertAlmostEqual(cfg.with_sweep("P_dB", 20.0).P, 100.0)
        self.assertEqual(cfg.with_sweep("lambda_d", 0.5).d, 0.5)
        self.assertEqual(cfg.B, 4)

    def test_with_sweep_errors(self):
        cfg = SystemConfig(**BASE)
        with self.assertRaises(ConfigError):
            cfg.with_sweep("K", 3)
        with self.assertRaises(ConfigError):
            cfg.with_sweep("B", 0)


class TestExperimentSpec(unittest.TestCase):
    def test_estimator_names_are_normalised(self):
        spec = ExperimentSpec(base=BASE, sweep_values=[4], estimators=[" LS", "s-mjce", "ls"])
        self.assertEqual(spec.estimators, ["ls", "s-mjce"])

    def test_all_estimators_by_default(self):
        spec = ExperimentSpec(base=BASE, sweep_values=[4])
        self.assertEqual(spec.estimators, list(ESTIMATORS))
        self.assertEqual(spec.solver, SolverConfig())

    def test_unknown_estimator(self):
        with self.assertRaises(ValidationError):
            ExperimentSpec(base=BASE, sweep_values=[4], estimators=["mjce"])

    def test_empty_sweep(self):
        with self.assertRaises(ValidationError):
            ExperimentSpec(base=BASE, sweep_values=[])

    def test_alpha_step(self):
        self.assertEqual(SolverConfig().alpha_step, "noise-floor")
        self.assertEqual(SolverConfig(alpha_step="least-squares").alpha_step, "least-squares")
        with self.assertRaises(ValidationError):
            SolverConfig(alpha_step="ridge")

    def test_systems(self):
        spec = ExperimentSpec(base=BASE, sweep_values=[4, 8])
        self.assertEqual([cfg.B for _, cfg in spec.systems()], [4, 8])


class TestParseSweep(unittest.TestCase):
    def test_values(self):
        self.assertEqual(parse_sweep("B=8,16, 24"), ("B", [8.0, 16.0, 24.0]))
        self.assertEqual(parse_sweep("lambda_d=1e-3,0.1"), ("lambda_d", [1e-3, 0.1]))

    def test_errors(self):
        for text in ("B", "K=1,2", "B=a,b"):
            with self.subTest(text=text):
                with self.assertRaises(ConfigError):
                    parse_sweep(text)


class TestLoadExperiment(unittest.TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.document = {"base": BASE, "sweep_axis": "B", "sweep_values": [4, 8], "trials": 3, "seed": 5}

    def tearDown(self):
        self.tmp.cleanup()

    def write(self, name, text):
        path = os.path.join(self.tmp.name, name)
        with open(path, "w") as file:
            file.write(text)
        return path

    def test_yaml(self):
        spec = load_experiment(self.write("exp.yaml", yaml.safe_dump(self.document)))
        self.assertEqual(spec.trials, 3)
        self.assertAlmostEqual(spec.base.P, 10.0)

    def test_json(self):
        spec = load_experiment(self.write("exp.json", json.dumps(self.document)))
        self.assertEqual(spec.sweep_values, [4.0, 8.0])

    def test_overrides_skip_missing_values(self):
        path = self.write("exp.yaml", yaml.safe_dump(self.document))
        spec = load_experiment(path, {"trials": 9, "seed": None, "sweep_axis": "P_dB", "sweep_values": [0.0, 5.0]})
        self.assertEqual(spec.trials, 9)
        self.assertEqual(spec.seed, 5)
        self.assertEqual(spec.sweep_axis, "P_dB")

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_experiment(os.path.join(self.tmp.name, "nope.yaml"))

    def test_not_a_mapping(self):
        with self.assertRaises(ConfigError):
            load_experiment(self.write("list.yaml", "- 1\n- 2\n"))

    def test_unparsable(self):
        with self.assertRaises(ConfigError):
            load_experiment(self.write("bad.yaml", "base: [1, 2\n"))

    def test_invalid_contents(self):
        with self.assertRaises(ConfigError):
            load_experiment(self.write("exp.yaml", yaml.safe_dump({**self.document, "trials": 0})))

    def test_shipped_profiles(self):
        paths = sorted(glob.glob(os.path.join(CONFIG_DIR, "*.yaml")))
        self.assertGreaterEqual(len(paths), 6)
        for path in paths:
            with self.subTest(path=os.path.basename(path)):
                spec = load_experiment(path)
                self.assertEqual(len(spec.systems()), len(spec.sweep_values))


if __name__ == "__main__":
    unittest.main()
