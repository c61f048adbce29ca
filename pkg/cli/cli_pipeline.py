"""
实验流水线 (Experiment pipeline): one method per harness stage.

Every stage is keyed by a hash of the config blocks it reads. A stage whose
hash is already in the ledger (and whose artifacts still exist) is skipped
unless `force` is set. Upstream stages are resolved the same way, so asking
for `icl` on a fresh output directory runs generation, pretraining and
fine-tuning first.
"""
import itertools
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from cli.cli_config import ExperimentConfig, apply_overrides, config_hash
from cli.cli_ledger import RunLedger
from cli.cli_report import render_report
from datamodel.dm_container import read_dataset, write_dataset
from datamodel.dm_ops import dataset_union, split
from datamodel.dm_types import Dataset
from finetune.ft_metrics import EvalReport, append_results
from finetune.ft_train import TrainRun, evaluate_operator, operator_from_checkpoint, train_supervised
from fno.fno_bundle import TaskSpec
from fno.fno_checkpoint import load_checkpoint
from fno.fno_model import FnoConfig, FnoModel
from icl.icl_sweep import icl_sweep, summarize_sweep
from pdegen.pde_generate import GenerationSettings, append_cost_row, generate, measure_cost
from pdegen.pde_grf import GrfSpec
from pdegen.pde_params import RdParams
from pretrain.pt_proxy import BlurSpec, MaskSpec
from pretrain.pt_train import PretrainConfig, train_pretrain
from utils.constant import LEDGER_FILE
from utils.errors import ArtifactError, ConfigError
from utils.utils import check_artifact, derive_seed, run_indexed_jobs, timed

# dataset kind -> (parameter stage, labeled)
DATASET_KINDS = {
    "labeled": ("train", True),
    "unlabeled": ("pretrain", False),
    "ood": ("ood", True),
    "pool": ("ood", True),
}
GRID_AXES = ("mask", "blur", "pretrain_n", "patch", "order")
RESULTS_FILE = "results.csv"
SWEEP_FILE = "sweep.csv"
COST_FILE = "cost.csv"


@dataclass
class StageResult:
    stage: str
    skipped: bool
    artifacts: List[str] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)


def parse_grid(specs: Sequence[str]) -> List[Dict[str, Any]]:
    """
    Expands axis specs into the list of pretrain overrides (grid product, first axis slowest).

        mask=0,0.05,0.3      -> pretrain.mask_ratio
        blur=0:0,0:1,0:4     -> pretrain.blur_min / pretrain.blur_max
        pretrain_n=128,512   -> pretrain.n
        patch=1,4            -> pretrain.mask_patch
        order=mask_blur,blur_mask -> pretrain.order
    """
    axes: List[List[Dict[str, Any]]] = []
    for spec in specs:
        if "=" not in spec:
            raise ConfigError(f"grid axis '{spec}' must look like name=v1,v2,...")
        name, values = spec.split("=", 1)
        name = name.strip()
        if name not in GRID_AXES:
            raise ConfigError(f"unknown grid axis '{name}', expected one of {GRID_AXES}")
        points = [v.strip() for v in values.split(",") if v.strip()]
        if not points:
            raise ConfigError(f"grid axis '{name}' has no values")
        try:
            axes.append([_axis_point(name, v) for v in points])
        except ValueError as e:
            raise ConfigError(f"bad value on grid axis '{name}': {e}") from e
    combos = []
    for combo in itertools.product(*axes):
        merged: Dict[str, Any] = {}
        for part in combo:
            merged.update(part)
        combos.append(merged)
    return combos


def _axis_point(name: str, value: str) -> Dict[str, Any]:
    match name:
        case "mask":
            return {"pretrain.mask_ratio": float(value)}
        case "blur":
            low, _, high = value.partition(":")
            return {"pretrain.blur_min": float(low), "pretrain.blur_max": float(high or low)}
        case "pretrain_n":
            return {"pretrain.n": int(value)}
        case "patch":
            return {"pretrain.mask_patch": int(value)}
        case "order":
            return {"pretrain.order": value}
    raise ValueError(name)


def generation_settings(config: ExperimentConfig) -> GenerationSettings:
    g = config.generation
    return GenerationSettings(
        resolution=config.pde.resolution,
        grf=GrfSpec(alpha=g.grf_alpha, tau=g.grf_tau),
        rd=RdParams(t_final=g.rd_t_final),
        rd_t_in=g.rd_t_in,
        ns_record_dt=g.ns_record_dt,
        ns_frames=g.ns_frames,
    )


def default_task_kind(pde: str) -> str:
    return {"rd": "next_step", "ns": "one_shot"}.get(pde, "static")


class Pipeline:
    def __init__(self, config: ExperimentConfig, force: bool = False, max_workers: Optional[int] = None):
        self.config = config
        self.force = force
        self.max_workers = max_workers
        self.root = config.root
        self.root.mkdir(parents=True, exist_ok=True)
        self.ledger = RunLedger(self.root / LEDGER_FILE)

    # --- plumbing ---

    def _run(self, stage: str, key: str, fn: Callable[[], Tuple[List[Path], Dict[str, Any]]]) -> StageResult:
        entry = None if self.force else self.ledger.find(key, stage)
        if entry is not None:
            logging.info(f"{stage} {key[:12]} already completed; skipping (use --force to rerun)")
            return StageResult(stage, True, entry.artifacts)
        with timed() as elapsed:
            artifacts, summary = fn()
        self.ledger.record(key, stage, artifacts, elapsed[0])
        logging.info(f"{stage} {key[:12]} finished in {elapsed[0]:.2f}s")
        return StageResult(stage, False, [str(a) for a in artifacts], summary)

    def _for_pde(self, pde: str) -> "Pipeline":
        other = apply_overrides(self.config, {"pde.name": pde, "pde.ranges": {}})
        return Pipeline(other, self.force, self.max_workers)

    # --- generate ---

    def generate(self, kind: str = "labeled", n: Optional[int] = None, seed: Optional[int] = None,
                 labeled: Optional[bool] = None) -> StageResult:
        if kind not in DATASET_KINDS:
            raise ConfigError(f"dataset kind must be one of {sorted(DATASET_KINDS)}, got '{kind}'")
        stage_range, default_labeled = DATASET_KINDS[kind]
        g = self.config.generation
        n = n if n is not None else {"labeled": g.n, "unlabeled": g.n_unlabeled, "ood": g.n_ood, "pool": g.n_pool}[kind]
        seed = seed if seed is not None else g.seed
        labeled = default_labeled if labeled is None else labeled
        # query sets and demo pools draw from disjoint seed streams
        data_seed = seed if kind in ("labeled", "unlabeled") else derive_seed(seed, kind) % (2 ** 31)
        pde = self.config.pde.name
        param_range = self.config.pde.stage_range(stage_range)
        key = config_hash(self.config, "generate", blocks=("pde",), kind=kind, n=n, seed=seed, labeled=labeled,
                          settings={k: v for k, v in self.config.generation.__dict__.items()
                                    if k not in ("n", "n_unlabeled", "n_ood", "n_pool", "seed", "labeled")})
        out = self.root / "data" / f"{pde}_{kind}_n{n}_s{seed}_{key[:8]}"

        def work():
            dataset, report = generate(pde, n, param_range, labeled, data_seed, generation_settings(self.config),
                                       self.max_workers)
            write_dataset(dataset, out)
            return [out], {"n": n, "labeled": labeled, "secs": report.labeled_secs or report.unlabeled_secs}

        return self._run("generate", key, work)

    def dataset(self, kind: str) -> Dataset:
        result = self.generate(kind)
        return read_dataset(result.artifacts[0])

    # --- pretrain ---

    def pretrain_config(self) -> PretrainConfig:
        p = self.config.pretrain
        return PretrainConfig(
            mask=MaskSpec(ratio=p.mask_ratio, patch=p.mask_patch),
            blur=BlurSpec(sigma_min=p.blur_min, sigma_max=p.blur_max),
            epochs=p.epochs,
            batch_size=p.batch_size,
            lr=p.lr,
            seed=p.seed,
            loss=p.loss,
            order=p.order,
            n=p.n or None,
        )

    def _task(self, dataset: Dataset) -> TaskSpec:
        g = self.config.generation
        return TaskSpec.for_dataset(dataset, default_task_kind(self.config.pde.name), t_in=g.rd_t_in, t_out=g.ns_frames)

    def pretrain(self, union: Optional[Sequence[str]] = None) -> StageResult:
        union = list(union) if union is not None else list(self.config.pretrain.union)
        key = config_hash(self.config, "pretrain", blocks=("pde", "generation", "model", "pretrain"), union=union)
        out = self.root / "pretrain" / key[:12]

        def work():
            logging.info(f"Step 1: loading unlabeled '{self.config.pde.name}' data")
            datasets = [self.dataset("unlabeled")] + [self._for_pde(p).dataset("unlabeled") for p in union]
            dataset = dataset_union(datasets) if len(datasets) > 1 else datasets[0]
            task = self._task(dataset)
            m = self.config.model
            model = FnoModel(
                FnoConfig(task.model_in, task.model_out, width=m.width, modes1=m.modes1, modes2=m.modes2,
                          layers=m.layers, activation=m.activation, dtype=m.dtype, decoder=True),
                seed=self.config.pretrain.seed,
            )
            _, losses = train_pretrain(dataset, model, self.pretrain_config(), task, out)
            return [out], {"final_loss": losses[-1] if losses else None, "epochs": len(losses)}

        return self._run("pretrain", key, work)

    # --- finetune / eval ---

    def _train_run(self, init: str, n: int, seed: int, checkpoint: Optional[str]) -> TrainRun:
        f, m = self.config.finetune, self.config.model
        return TrainRun(
            init=init,
            checkpoint=checkpoint if init != "random" else None,
            n=n,
            epochs=f.epochs,
            seed=seed,
            lr=f.lr,
            split_seed=f.split_seed,
            fractions=tuple(f.fractions),
            model={"width": m.width, "modes1": m.modes1, "modes2": m.modes2, "layers": m.layers,
                   "activation": m.activation, "dtype": m.dtype},
            task_kind=default_task_kind(self.config.pde.name),
            rollout_steps=f.rollout_steps,
        )

    def finetune_leaf(self, init: str, n: int, seed: int, checkpoint: Optional[str] = None) -> StageResult:
        if init == "random":
            checkpoint = None
            blocks = ("pde", "generation", "model", "finetune")
        else:
            checkpoint = str(checkpoint or self.pretrain().artifacts[0])
            blocks = ("pde", "generation", "model", "pretrain", "finetune")
        key = config_hash(self.config, "finetune", blocks=blocks, init=init, n=n, seed=seed, checkpoint=checkpoint)
        out = self.root / "finetune" / key[:12] / f"{init}_n{n}_s{seed}"

        def work():
            _, report, _ = train_supervised(self.dataset("labeled"), self._train_run(init, n, seed, checkpoint), out)
            return [out], {"test_rl2": report.test_rl2, "train_rl2": report.train_rl2}

        return self._run("finetune", key, work)

    def finetune(self, budgets: Optional[Sequence[int]] = None, seeds: Optional[Sequence[int]] = None,
                 init_modes: Optional[Sequence[str]] = None, checkpoint: Optional[str] = None,
                 table_name: Optional[str] = RESULTS_FILE) -> StageResult:
        """
        Runs every (init mode, budget, seed) leaf and collects their reports.

        The results table is rewritten from all leaf reports, skipped ones
        included; table_name=None leaves it untouched.
        """
        f = self.config.finetune
        budgets, seeds, init_modes = budgets or f.budgets, seeds or f.seeds, init_modes or f.init_modes
        if checkpoint is not None:
            ok, found = check_artifact(checkpoint, "pretrained checkpoint")
            if not ok:
                raise ArtifactError(found)
        elif any(m != "random" for m in init_modes):
            # resolved once up front so parallel leaves share one pretraining run
            checkpoint = self.pretrain().artifacts[0]
        # upstream data is generated before the leaves fan out
        self.generate("labeled")

        leaves = [(i, n, s) for i in init_modes for n in budgets for s in seeds]
        logging.info(f"Step 2: {len(leaves)} fine-tuning runs ({init_modes} x budgets {list(budgets)} x seeds {list(seeds)})")
        results = run_indexed_jobs(lambda leaf: self.finetune_leaf(*leaf, checkpoint=checkpoint), leaves,
                                   self.max_workers, "finetune run")

        reports = [EvalReport.from_json((Path(r.artifacts[0]) / "report.json").read_text(encoding="utf-8"))
                   for r in results]
        leaf_dirs = [r.artifacts[0] for r in results]
        artifacts = list(leaf_dirs)
        if table_name is not None:
            table = self.root / "finetune" / table_name
            table.unlink(missing_ok=True)
            append_results(reports, table)
            artifacts.insert(0, str(table))
        summary = {"runs": len(reports), "skipped": sum(r.skipped for r in results), "leaves": leaf_dirs}
        return StageResult("finetune", all(r.skipped for r in results), artifacts, summary)

    def evaluate(self, checkpoint: str, kind: str = "test") -> Dict[str, Any]:
        """Relative L2 of a fine-tuned checkpoint on the test split of the labeled set, or on the OOD set."""
        ok, found = check_artifact(checkpoint, "checkpoint")
        if not ok:
            raise ArtifactError(found)
        op = operator_from_checkpoint(load_checkpoint(checkpoint))
        if kind == "ood":
            dataset = self.dataset("ood")
        elif kind in ("train", "test"):
            f = self.config.finetune
            train, _, test = split(self.dataset("labeled"), f.fractions, f.split_seed)
            dataset = test if kind == "test" else train
        else:
            raise ConfigError(f"evaluation split must be train, test or ood, got '{kind}'")
        rl2 = evaluate_operator(op, dataset)
        row = {"checkpoint": str(checkpoint), "split": kind, "n": dataset.n, "rl2": rl2}
        path = self.root / "finetune" / "eval.csv"
        pd.DataFrame([row]).to_csv(path, mode="a", header=not path.exists(), index=False)
        logging.info(f"eval {kind}: rl2 {rl2:.6f} over {dataset.n} samples")
        return row

    # --- icl ---

    def default_icl_checkpoint(self) -> str:
        f = self.config.finetune
        init = "pretrained" if "pretrained" in f.init_modes else f.init_modes[0]
        return self.finetune_leaf(init, max(f.budgets), f.seeds[0]).artifacts[0]

    def icl(self, checkpoint: Optional[str] = None) -> StageResult:
        if checkpoint is not None:
            ok, found = check_artifact(checkpoint, "fine-tuned checkpoint")
            if not ok:
                raise ArtifactError(found)
        else:
            checkpoint = self.default_icl_checkpoint()
        key = config_hash(self.config, "icl", blocks=("pde", "generation", "icl"), checkpoint=str(checkpoint),
                          fingerprint=load_checkpoint(checkpoint).dataset_fingerprint)
        out = self.root / "icl" / key[:12]

        def work():
            i = self.config.icl
            op = operator_from_checkpoint(load_checkpoint(checkpoint))
            table = icl_sweep(op, self.dataset("ood"), self.dataset("pool"), k=i.k, J_list=i.J, seeds=i.seeds,
                              sources=i.sources, chunk=i.chunk, out_csv=out / SWEEP_FILE)
            summarize_sweep(table).to_csv(out / "summary.csv", index=False)
            return [out / SWEEP_FILE, out / "summary.csv"], {"rows": len(table)}

        return self._run("icl", key, work)

    # --- cost ---

    def cost(self, n: int, seed: Optional[int] = None) -> StageResult:
        seed = seed if seed is not None else self.config.generation.seed
        key = config_hash(self.config, "cost", blocks=("pde", "generation"), n=n, seed=seed)
        path = self.root / "cost" / COST_FILE

        def work():
            report = measure_cost(self.config.pde.name, n, self.config.pde.stage_range("train"), seed,
                                  generation_settings(self.config), self.max_workers)
            append_cost_row(report, path)
            return [path], report.to_row()

        return self._run("cost", key, work)

    # --- sweep ---

    def sweep(self, grid: Sequence[str], budgets: Optional[Sequence[int]] = None,
              seeds: Optional[Sequence[int]] = None) -> StageResult:
        """Pretrains once per grid point and fine-tunes the pretrained init at every budget and seed."""
        points = parse_grid(grid)
        f = self.config.finetune
        budgets, seeds = budgets or f.budgets, seeds or f.seeds
        logging.info(f"Step 1: sweeping {len(points)} pretraining settings")
        rows = []
        for point in points:
            child = Pipeline(apply_overrides(self.config, point), self.force, self.max_workers)
            ckpt = child.pretrain().artifacts[0]
            result = child.finetune(budgets, seeds, ["pretrained"], checkpoint=ckpt, table_name=None)
            for leaf in result.summary["leaves"]:
                report = EvalReport.from_json((Path(leaf) / "report.json").read_text(encoding="utf-8"))
                p = child.config.pretrain
                rows.append({
                    "pde": report.pde,
                    "mask_ratio": p.mask_ratio,
                    "blur_min": p.blur_min,
                    "blur_max": p.blur_max,
                    "pretrain_n": p.n,
                    "mask_patch": p.mask_patch,
                    "order": p.order,
                    "n": report.n,
                    "seed": report.seed,
                    "test_rl2": report.test_rl2,
                    "gap": report.gap,
                })
        out = self.root / "sweep" / config_hash(self.config, "sweep", grid=list(grid))[:12]
        out.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(rows).to_csv(out / SWEEP_FILE, index=False)
        (out / "grid.json").write_text(json.dumps(points, indent=2), encoding="utf-8")
        return StageResult("sweep", False, [str(out / SWEEP_FILE)], {"points": len(points), "rows": len(rows)})

    # --- report ---

    def report(self) -> StageResult:
        artifacts = render_report(self.root, self.root / "report")
        return StageResult("report", False, [str(a) for a in artifacts], {"figures": len(artifacts)})
