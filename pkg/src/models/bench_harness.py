"""
Monte-Carlo experiment engine: draws channels, runs the training phase once per
trial, feeds the same observations to every selected estimator and aggregates
NMSE and run time per sweep point.
"""

import logging
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, List, Optional

import joblib
import numpy as np
import pandas as pd
from tqdm import tqdm

from src.models.baseline_estimators import (
    EstimateReport,
    binary_reflection_estimate,
    genie_ls_estimate,
    ls_estimate_all,
    mmv_somp_estimate,
    noise_floor,
    smv_omp_estimate,
    true_aod_subspace,
)
from src.models.mjce import run_mjce
from src.models.reflection_design import CoherenceReport, load_reflections, mutual_coherence, optimize_reflections
from src.models.subspace import SubspaceEstimate, estimate_common_subspace, project
from src.utils.channel_model import AngularDictionary, ChannelRealization, build_dictionary, sample_channels
from src.utils.config import ExperimentSpec, SolverConfig, SystemConfig
from src.utils.errors import ChannelEstimationError, ConfigError, HarnessIOError
from src.utils.metrics import nmse
from src.utils.training_protocol import (
    ReceivedBlocks,
    TrainingDesign,
    generate_pilots,
    random_reflections,
    simulate_uplink,
)

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["sweep", "estimator", "mean_nmse", "std_nmse", "mean_time_s", "failed"]


@dataclass
class ResultTable:
    frame: pd.DataFrame
    annotations: Dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.frame)

    @classmethod
    def empty(cls) -> "ResultTable":
        return cls(frame=pd.DataFrame(columns=CSV_COLUMNS))


class TrialContext:
    """
    Everything one trial's estimators share. The subspace and the S-MMV/S-SMV
    estimates are computed on first use and reused, their time is charged to
    every estimator that depends on them.
    """

    def __init__(
        self,
        cfg: SystemConfig,
        chan: ChannelRealization,
        training: TrainingDesign,
        received: ReceivedBlocks,
        dictionary: AngularDictionary,
        binary_rng: np.random.Generator,
        nf_override: Optional[int] = None,
        solver: Optional[SolverConfig] = None,
    ):
        self.cfg = cfg
        self.chan = chan
        self.training = training
        self.received = received
        self.dictionary = dictionary
        self.binary_rng = binary_rng
        self.nf_override = nf_override
        self.solver = solver if solver is not None else SolverConfig()
        self.subspace_time = 0.0

    @cached_property
    def subspace(self) -> SubspaceEstimate:
        start = time.perf_counter()
        estimate = estimate_common_subspace(self.received.Y, self.nf_override)
        self.subspace_time = time.perf_counter() - start
        return estimate

    @cached_property
    def Ybar(self) -> np.ndarray:
        return project(self.received.Ytil, self.subspace.S_par)

    @property
    def eps_full(self) -> float:
        cfg = self.cfg
        return noise_floor(cfg.M, self.training.B, cfg.noise_var, cfg.P, cfg.T)

    @property
    def eps_projected(self) -> float:
        cfg = self.cfg
        return noise_floor(self.subspace.N_hat, self.training.B, cfg.noise_var, cfg.P, cfg.T)

    @cached_property
    def s_mmv(self) -> EstimateReport:
        report = mmv_somp_estimate(
            self.received.Ytil, self.training.V, self.dictionary, self.eps_projected, self.subspace.S_par
        )
        report.wall_time += self.subspace_time
        return report

    @cached_property
    def s_smv(self) -> EstimateReport:
        report = smv_omp_estimate(
            self.received.Ytil, self.training.V, self.dictionary, self.eps_projected, self.subspace.S_par
        )
        report.wall_time += self.subspace_time
        return report


def _run_ls(ctx: TrialContext) -> EstimateReport:
    return ls_estimate_all(ctx.received.Ytil, ctx.training.V)


def _run_binary(ctx: TrialContext) -> EstimateReport:
    return binary_reflection_estimate(ctx.chan, ctx.cfg, ctx.binary_rng)


def _run_smv(ctx: TrialContext) -> EstimateReport:
    return smv_omp_estimate(ctx.received.Ytil, ctx.training.V, ctx.dictionary, ctx.eps_full)


def _run_mmv(ctx: TrialContext) -> EstimateReport:
    return mmv_somp_estimate(ctx.received.Ytil, ctx.training.V, ctx.dictionary, ctx.eps_full)


def _run_s_mjce(ctx: TrialContext) -> EstimateReport:
    init = {"s-mmv": lambda: ctx.s_mmv, "s-smv": lambda: ctx.s_smv, "identity": lambda: None}[ctx.solver.alpha_init]()
    report = run_mjce(
        ctx.Ybar,
        ctx.training.V,
        ctx.dictionary.A_R,
        ctx.cfg,
        ctx.subspace.S_par,
        Ghat_init=None if init is None else init.G_hat,
        solver=ctx.solver,
    )
    # the initial estimate already carries the subspace time
    report.wall_time += ctx.subspace_time if init is None else init.wall_time
    return report


def _run_genie(ctx: TrialContext) -> EstimateReport:
    S_true = true_aod_subspace(ctx.chan, ctx.cfg.M)
    return genie_ls_estimate(ctx.chan, ctx.received.Ytil, ctx.training.V, S_true)


ESTIMATOR_REGISTRY: Dict[str, Callable[[TrialContext], EstimateReport]] = {
    "ls": _run_ls,
    "binary": _run_binary,
    "smv": _run_smv,
    "s-smv": lambda ctx: ctx.s_smv,
    "mmv": _run_mmv,
    "s-mmv": lambda ctx: ctx.s_mmv,
    "s-mjce": _run_s_mjce,
    "s-genie-ls": _run_genie,
}


def trial_streams(seed: int, trial: int) -> List[np.random.Generator]:
    """
    Independent generators for channel, reflections, noise and the binary-reflection rerun.
    Keyed by trial only, so every sweep point sees the same draws.
    """
    children = np.random.SeedSequence([seed, trial]).spawn(4)
    return [np.random.default_rng(child) for child in children]


def run_trial(
    spec: ExperimentSpec,
    sweep_index: int,
    cfg: SystemConfig,
    trial: int,
    V_fixed: Optional[np.ndarray] = None,
) -> List[dict]:
    """One channel draw, one training phase, every selected estimator on the same data."""
    chan_rng, refl_rng, noise_rng, binary_rng = trial_streams(spec.seed, trial)
    dictionary = build_dictionary(cfg)
    chan = sample_channels(cfg, chan_rng)
    V = V_fixed if V_fixed is not None else random_reflections(cfg.L, cfg.B, refl_rng)
    training = TrainingDesign(S=generate_pilots(cfg.K, cfg.T, cfg.P), V=V, P=cfg.P, noise_var=cfg.noise_var)
    received = simulate_uplink(chan, training, noise_rng)
    ctx = TrialContext(cfg, chan, training, received, dictionary, binary_rng, spec.nf_override, spec.solver)

    records = []
    for name in spec.estimators:
        record = {"sweep_index": sweep_index, "estimator": name, "trial": trial}
        try:
            report = ESTIMATOR_REGISTRY[name](ctx)
            record.update(nmse=nmse(report.G_hat, chan.G), wall_time=report.wall_time, failed=False)
        except (ChannelEstimationError, np.linalg.LinAlgError) as e:
            logger.error(f"{name} failed on trial {trial} of sweep point {sweep_index}: {e}")
            record.update(nmse=np.nan, wall_time=np.nan, failed=True)
        records.append(record)
    return records


def fixed_reflections(spec: ExperimentSpec, sweep_index: int, cfg: SystemConfig) -> Optional[np.ndarray]:
    """Reflection matrix shared by all trials of a sweep point, None when every trial draws its own."""
    if spec.reflections_file is not None:
        V = load_reflections(spec.reflections_file)
        if V.shape != (cfg.L, cfg.B):
            raise ConfigError(
                f"reflection file {spec.reflections_file} is {V.shape[0]}x{V.shape[1]}, system needs {cfg.L}x{cfg.B}"
            )
        return V
    if spec.reflection_mode == "optimized":
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, sweep_index]))
        return optimize_reflections(build_dictionary(cfg).A_R, cfg.B, n_sweeps=spec.solver.n_sweeps, rng=rng).V
    return None


def aggregate(records: List[dict], spec: ExperimentSpec, timing: bool = True) -> pd.DataFrame:
    frame = pd.DataFrame(records, columns=["sweep_index", "estimator", "trial", "nmse", "wall_time", "failed"])
    index = pd.MultiIndex.from_product(
        [range(len(spec.sweep_values)), spec.estimators], names=["sweep_index", "estimator"]
    )
    ok = frame[~frame["failed"].astype(bool)]
    stats = ok.groupby(["sweep_index", "estimator"]).agg(
        mean_nmse=("nmse", "mean"),
        std_nmse=("nmse", "std"),
        mean_time_s=("wall_time", "mean"),
        n_ok=("nmse", "size"),
    )
    stats = stats.reindex(index)
    stats.loc[stats["n_ok"] == 1, "std_nmse"] = 0.0
    stats["failed"] = frame.groupby(["sweep_index", "estimator"])["failed"].sum().reindex(index, fill_value=0).astype(int)
    if not timing:
        stats["mean_time_s"] = 0.0

    stats = stats.reset_index()
    stats.insert(0, "sweep", [spec.sweep_values[i] for i in stats["sweep_index"]])
    return stats[CSV_COLUMNS]


def run_experiment(spec: ExperimentSpec, timing: bool = True, progress: bool = True) -> ResultTable:
    """
    Run every (sweep point, trial) pair, in parallel when ``spec.n_jobs`` != 1.
    The result does not depend on the worker count.
    """
    systems = spec.systems()
    fixed = [fixed_reflections(spec, i, cfg) for i, (_, cfg) in enumerate(systems)]
    tasks = [(i, cfg, trial) for i, (_, cfg) in enumerate(systems) for trial in range(spec.trials)]

    records: List[dict] = []
    for trial_records in joblib.Parallel(return_as="generator", n_jobs=spec.n_jobs)(
        joblib.delayed(run_trial)(spec, i, cfg, trial, fixed[i])
        for i, cfg, trial in tqdm(tasks, desc="trials", disable=not progress)
    ):
        records.extend(trial_records)

    table = ResultTable(frame=aggregate(records, spec, timing=timing))
    if "binary" in spec.estimators:
        overhead = sorted({cfg.L for _, cfg in systems})
        note = f"binary reflection always trains with B = L = {', '.join(map(str, overhead))} sub-frames"
        table.annotations["binary"] = note
        logger.info(note)
    failures = int(table.frame["failed"].sum())
    if failures:
        logger.warning(f"{failures} estimator runs failed and are excluded from the means")
    return table


def emit_csv(table: ResultTable, path: str) -> None:
    frame = table.frame.copy()
    frame["sweep"] = frame["sweep"].map(lambda v: f"{v:g}")
    for column in ("mean_nmse", "std_nmse"):
        frame[column] = frame[column].map(lambda v: f"{v:.5e}")
    frame["mean_time_s"] = frame["mean_time_s"].map(lambda v: f"{v:.6f}")
    frame["failed"] = frame["failed"].astype(int)
    try:
        frame.to_csv(path, index=False, columns=CSV_COLUMNS, lineterminator="\n", encoding="utf-8")
    except OSError as e:
        raise HarnessIOError(f"cannot write results ({e})", path) from e


def load_results(path: str) -> ResultTable:
    try:
        frame = pd.read_csv(path, dtype={"estimator": str})
    except (OSError, pd.errors.ParserError) as e:
        raise HarnessIOError(f"cannot read results ({e})", path) from e
    missing = [column for column in CSV_COLUMNS if column not in frame.columns]
    if missing:
        raise HarnessIOError(f"results file lacks columns {missing}", path)
    return ResultTable(frame=frame[CSV_COLUMNS])


@dataclass
class CoherenceComparison:
    random: CoherenceReport
    optimized: CoherenceReport
    V_optimized: np.ndarray


def compare_coherence(cfg: SystemConfig, rng: np.random.Generator, n_sweeps: int = 3) -> CoherenceComparison:
    """Mutual coherence of V^H A_R for a random reflection matrix and for its optimised refinement."""
    A_R = build_dictionary(cfg).A_R
    V_random = random_reflections(cfg.L, cfg.B, rng)
    V_optimized = optimize_reflections(A_R, cfg.B, n_sweeps=n_sweeps, rng=rng, V_init=V_random).V
    return CoherenceComparison(
        random=mutual_coherence(V_random.conj().T @ A_R),
        optimized=mutual_coherence(V_optimized.conj().T @ A_R),
        V_optimized=V_optimized,
    )
