"""Experiment configuration, orchestration, ablations and report emission."""

import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .classifier import Checkpoint, ModelSpec, TrainConfig, save_checkpoint, train
from .datasets import gen_blobs, gen_rings, load_csv, train_test_split_per_class
from .errors import ContractError, ParseError, PBUError
from .evaluation import MetricsReport, MiaConfig, class_split_accuracy, compare_report, mia_accuracy
from .fisher import save_fisher
from .unlearning import PBUConfig, finetune_baseline, retrain_baseline, run_pbu

log = logging.getLogger(__name__)

VARIANTS = ("initial", "retrain", "finetune", "pbu")
MATCH_THRESHOLD = 0.05


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass
class DatasetSection:
    kind: str = "blobs"
    d: int = 16
    classes: int = 4
    n_train_per_class: int = 500
    n_test_per_class: int = 200
    n_val_per_class: int = 100
    blob_spread: float = 1.0
    noise: float = 0.1
    seed: int = 0
    train_path: str | None = None
    test_path: str | None = None
    val_path: str | None = None

    def __post_init__(self):
        if self.kind not in ("blobs", "rings", "csv"):
            raise ContractError(f"dataset.kind must be blobs, rings or csv, got {self.kind!r}")
        if self.classes < 2:
            raise ContractError("dataset.classes must be >= 2")
        if self.kind == "csv" and not (self.train_path and self.test_path):
            raise ContractError("csv datasets need train_path and test_path")
        if self.kind != "csv" and min(self.n_train_per_class, self.n_test_per_class) < 1:
            raise ContractError("per-class train and test counts must be >= 1")
        if self.n_val_per_class < 0:
            raise ContractError("n_val_per_class must be >= 0")


@dataclass
class ModelSection:
    hidden_dims: list = field(default_factory=lambda: [32])


@dataclass
class TrainSection:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 200
    finetune_epochs: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.finetune_epochs < 1:
            raise ContractError("train.finetune_epochs must be >= 1")
        self.config(0)

    def config(self, seed, epochs=None):
        return TrainConfig(
            optimizer=self.optimizer, learning_rate=self.learning_rate,
            batch_size=self.batch_size, epochs=epochs or self.epochs, seed=seed,
            beta1=self.beta1, beta2=self.beta2, eps=self.eps,
        )


@dataclass
class UnlearnSection:
    forget_class: int = 0
    alpha: float = 1.0
    beta: float = 0.0
    gamma: float = 0.0
    eta: float = 1e-3
    steps: int = 160
    fisher_mode: str = "empirical"
    fisher_form: str = "diagonal"
    optimizer: str = "adam"
    batch_size: int | None = None
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    alphas: list | None = None

    def __post_init__(self):
        self.config(0)
        if self.alphas is not None:
            if not self.alphas:
                raise ContractError("unlearn.alphas must be nonempty")
            if list(self.alphas) != sorted(self.alphas):
                raise ContractError("unlearn.alphas must be ascending")

    def config(self, seed, **overrides):
        kw = {f.name: getattr(self, f.name) for f in fields(PBUConfig) if hasattr(self, f.name)}
        kw.update(seed=seed, **overrides)
        return PBUConfig(**kw)


@dataclass
class TuneSection:
    """Grid over the loss weights, scored on a validation split."""

    alphas: list = field(default_factory=lambda: [0.25, 1.0, 4.0])
    betas: list = field(default_factory=lambda: [0.0, 10.0])
    gammas: list = field(default_factory=lambda: [0.0, 10.0])
    max_forget_accuracy: float = MATCH_THRESHOLD

    def __post_init__(self):
        if not (self.alphas and self.betas and self.gammas):
            raise ContractError("tune grid axes must be nonempty")

    def grid(self):
        return [(a, b, g) for a in self.alphas for b in self.betas for g in self.gammas]


SECTIONS = {
    "dataset": DatasetSection,
    "model": ModelSection,
    "train": TrainSection,
    "unlearn": UnlearnSection,
    "mia": MiaConfig,
    "tune": TuneSection,
}


@dataclass
class ExperimentConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    unlearn: UnlearnSection = field(default_factory=UnlearnSection)
    mia: MiaConfig = field(default_factory=MiaConfig)
    tune: TuneSection | None = None
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    output_dir: str = "runs"

    def __post_init__(self):
        if not self.seeds:
            raise ContractError("seeds must be nonempty")
        if not 0 <= self.unlearn.forget_class < self.dataset.classes:
            raise ContractError(
                f"forget_class {self.unlearn.forget_class} outside 0..{self.dataset.classes - 1}"
            )
        self.model_spec(self.dataset.d if self.dataset.kind == "blobs" else 2)

    def model_spec(self, input_dim):
        return ModelSpec(input_dim, tuple(self.model.hidden_dims), self.dataset.classes)

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ContractError("config must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ContractError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for key, value in d.items():
            if key in SECTIONS and value is not None:
                kw[key] = _section(SECTIONS[key], value, key)
            else:
                kw[key] = value
        return cls(**kw)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _section(cls, value, name):
    if not isinstance(value, dict):
        raise ContractError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(value) - known
    if unknown:
        raise ContractError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return cls(**value)


def load_config(path):
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", exc.lineno) from None
    try:
        return ExperimentConfig.from_dict(raw)
    except TypeError as exc:
        raise ContractError(str(exc)) from None


# --------------------------------------------------------------------------
# data
# --------------------------------------------------------------------------

@dataclass
class Splits:
    train: object
    test: object
    val: object = None


def load_splits(cfg):
    """Build train/test(/validation) splits for the configured dataset."""
    ds = cfg.dataset
    if ds.kind == "csv":
        C = ds.classes
        return Splits(
            load_csv(ds.train_path, C, "train"),
            load_csv(ds.test_path, C, "test"),
            load_csv(ds.val_path, C, "val") if ds.val_path else None,
        )
    n_total = ds.n_train_per_class + ds.n_test_per_class + ds.n_val_per_class
    if ds.kind == "blobs":
        full = gen_blobs(ds.d, ds.classes, n_total, ds.blob_spread, ds.seed)
    else:
        full = gen_rings(ds.classes, n_total, ds.noise, ds.seed)
    train_set, rest = train_test_split_per_class(full, ds.n_train_per_class)
    test_set, val_set = train_test_split_per_class(rest, ds.n_test_per_class)
    return Splits(train_set, test_set, val_set if ds.n_val_per_class else None)


def dataset_id(cfg):
    ds = cfg.dataset
    if ds.kind == "csv":
        return f"csv:{os.path.basename(ds.train_path)}"
    return f"{ds.kind}-C{ds.classes}-s{ds.seed}"


# --------------------------------------------------------------------------
# records
# --------------------------------------------------------------------------

@dataclass
class RunRecord:
    config: dict
    reports: list = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    pbu_retain_examples_seen: int = 0

    def reports_for(self, variant):
        return [r for r in self.reports if r.variant == variant]

    def to_dict(self):
        return {
            "config": self.config,
            "reports": [r.to_dict() for r in self.reports],
            "artifacts": self.artifacts,
            "failures": self.failures,
            "extra": self.extra,
            "pbu_retain_examples_seen": self.pbu_retain_examples_seen,
        }


class _Context:
    """Per-experiment shared state: splits, spec and initial checkpoints."""

    def __init__(self, cfg, out_dir):
        self.cfg = cfg
        self.out_dir = out_dir
        self.splits = load_splits(cfg)
        self.spec = cfg.model_spec(self.splits.train.dim)
        self.forget = cfg.unlearn.forget_class
        self.s_n, self.s_p = self.splits.train.split_by_class(self.forget)
        self.test_n, _ = self.splits.test.split_by_class(self.forget)
        self.dataset = dataset_id(cfg)
        self.record = RunRecord(cfg.to_dict())
        self._initial = {}

    def path(self, *parts):
        full = os.path.join(self.out_dir, *parts)
        os.makedirs(os.path.dirname(full), exist_ok=True)
        return full

    def add_artifact(self, key, full_path):
        self.record.artifacts[key] = os.path.relpath(full_path, self.out_dir)

    def initial(self, seed):
        if seed not in self._initial:
            self._initial[seed] = train(self.spec, self.splits.train, self.cfg.train.config(seed))
        return self._initial[seed]

    def pbu(self, seed, pbu_cfg):
        """Unlearn from the seed's initial model; only ``S_n`` is handed over."""
        fisher_out = []
        res = run_pbu(self.spec, self.initial(seed), self.s_n, pbu_cfg, fisher_out)
        self.record.pbu_retain_examples_seen += res.counters.retain_examples_seen
        return res, fisher_out[0]

    def report(self, variant, seed, theta, steps=0, epochs=0.0, wall=0.0):
        a_df, a_dr = class_split_accuracy(self.spec, theta, self.splits.test, self.forget)
        mia = mia_accuracy(
            self.spec, theta, self.s_n, self.test_n, replace(self.cfg.mia, seed=self.cfg.mia.seed ^ seed)
        )
        r = MetricsReport(
            variant=variant, a_df=a_df, a_dr=a_dr, mia_accuracy=mia,
            unlearn_steps=int(steps), unlearn_epochs=float(epochs),
            wall_time_seconds=float(wall), seed=int(seed), dataset=self.dataset,
        )
        path = self.path(f"seed_{seed}", f"{variant}.json")
        with open(path, "w") as fh:
            fh.write(r.to_json() + "\n")
        self.add_artifact(f"seed_{seed}/{variant}.json", path)
        self.record.reports.append(r)
        return r

    def save_ckpt(self, seed, variant, ckpt):
        path = self.path(f"seed_{seed}", f"{variant}.ckpt")
        save_checkpoint(ckpt, path)
        self.add_artifact(f"seed_{seed}/{variant}.ckpt", path)

    def for_each_seed(self, body):
        for seed in self.cfg.seeds:
            try:
                body(seed)
            except PBUError as exc:
                log.warning("seed %s failed: %s", seed, exc)
                self.record.failures.append(
                    {"seed": seed, "error": type(exc).__name__, "message": str(exc)}
                )

    def finish(self, table_name="table.csv"):
        rec = self.record
        if rec.reports:
            table = compare_report(rec.reports)
            path = self.path(table_name)
            with open(path, "w") as fh:
                fh.write(table.to_csv())
            self.add_artifact(table_name, path)
        path = self.path("run_record.json")
        rec.artifacts["run_record.json"] = "run_record.json"
        with open(path, "w") as fh:
            json.dump(rec.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return rec


# --------------------------------------------------------------------------
# tuning
# --------------------------------------------------------------------------

def tune_pbu(cfg, ctx=None):
    """Pick ``(alpha, beta, gamma)`` on the validation split of the first seed.

    Among grid points whose validation forget accuracy is at most the
    configured threshold, the highest validation retain accuracy wins. Ties go
    to the later grid point, which with ascending axes is the more strongly
    anchored one. If none qualifies, the lowest forget accuracy wins.
    Returns ``(best, trials)``.
    """
    ctx = ctx or _Context(cfg, cfg.output_dir)
    if cfg.tune is None:
        u = cfg.unlearn
        return (u.alpha, u.beta, u.gamma), []
    val = ctx.splits.val
    if val is None:
        raise ContractError("tuning needs a validation split (n_val_per_class or val_path)")
    seed = cfg.seeds[0]
    trials = []
    for a, b, g in cfg.tune.grid():
        res, _ = ctx.pbu(seed, cfg.unlearn.config(seed, alpha=a, beta=b, gamma=g))
        a_df, a_dr = class_split_accuracy(ctx.spec, res.theta_u, val, ctx.forget)
        trials.append({"alpha": a, "beta": b, "gamma": g, "val_A_Df": a_df, "val_A_Dr": a_dr})
    ok = [t for t in trials if t["val_A_Df"] <= cfg.tune.max_forget_accuracy]
    if ok:
        best = max(reversed(ok), key=lambda t: t["val_A_Dr"])
    else:
        best = min(reversed(trials), key=lambda t: t["val_A_Df"])
    return (best["alpha"], best["beta"], best["gamma"]), trials


def _tuned(ctx):
    (a, b, g), trials = tune_pbu(ctx.cfg, ctx)
    ctx.record.extra["tuned"] = {"alpha": a, "beta": b, "gamma": g}
    if trials:
        ctx.record.extra["tuning_trials"] = trials
    return a, b, g


# --------------------------------------------------------------------------
# pipelines
# --------------------------------------------------------------------------

def run_experiment(cfg, variants=VARIANTS, out_dir=None):
    """Train, unlearn and evaluate every variant for every seed."""
    unknown = set(variants) - set(VARIANTS)
    if unknown:
        raise ContractError(f"unknown variants {sorted(unknown)}")
    ctx = _Context(cfg, out_dir or cfg.output_dir)
    tuned = _tuned(ctx) if "pbu" in variants else None

    def body(seed):
        init = ctx.initial(seed)
        if "initial" in variants:
            ctx.save_ckpt(seed, "initial", init)
            ctx.report("initial", seed, init.theta)
        if "retrain" in variants:
            t0 = time.perf_counter()
            ck = retrain_baseline(ctx.spec, ctx.s_p, cfg.train.config(seed), ctx.forget)
            wall = time.perf_counter() - t0
            ctx.save_ckpt(seed, "retrain", ck)
            ctx.report("retrain", seed, ck.theta, epochs=cfg.train.epochs, wall=wall)
        if "finetune" in variants:
            t0 = time.perf_counter()
            ck = finetune_baseline(
                init, ctx.s_p, cfg.train.config(seed, cfg.train.finetune_epochs), ctx.forget
            )
            wall = time.perf_counter() - t0
            ctx.save_ckpt(seed, "finetune", ck)
            ctx.report("finetune", seed, ck.theta, epochs=cfg.train.finetune_epochs, wall=wall)
        if "pbu" in variants:
            a, b, g = tuned
            res, F = ctx.pbu(seed, cfg.unlearn.config(seed, alpha=a, beta=b, gamma=g))
            ctx.save_ckpt(seed, "pbu", Checkpoint(ctx.spec, res.theta_u))
            if F.form == "diagonal":
                path = ctx.path(f"seed_{seed}", "pbu.fisher")
                save_fisher(F, path)
                ctx.add_artifact(f"seed_{seed}/pbu.fisher", path)
            ctx.report("pbu", seed, res.theta_u, res.steps_run, res.epochs, res.wall_time)

    ctx.for_each_seed(body)
    return ctx.finish()


def ablate_regularizer(cfg, out_dir=None):
    """Tuned PBU against the same alpha with both regularizers switched off."""
    ctx = _Context(cfg, out_dir or cfg.output_dir)
    a, b, g = _tuned(ctx)
    gaps = []

    def body(seed):
        full, _ = ctx.pbu(seed, cfg.unlearn.config(seed, alpha=a, beta=b, gamma=g))
        bare, _ = ctx.pbu(seed, cfg.unlearn.config(seed, alpha=a, beta=0.0, gamma=0.0))
        r_full = ctx.report("pbu", seed, full.theta_u, full.steps_run, full.epochs, full.wall_time)
        r_bare = ctx.report("pbu_noreg", seed, bare.theta_u, bare.steps_run, bare.epochs, bare.wall_time)
        gaps.append({
            "seed": seed,
            "A_Dr_gap": r_full.a_dr - r_bare.a_dr,
            "matched": max(r_full.a_df, r_bare.a_df) <= MATCH_THRESHOLD,
        })

    ctx.for_each_seed(body)
    ctx.record.extra["ablation"] = {
        "per_seed": gaps,
        "median_A_Dr_gap": float(np.median([x["A_Dr_gap"] for x in gaps])) if gaps else None,
        "all_matched": bool(gaps) and all(x["matched"] for x in gaps),
    }
    return ctx.finish()


def sweep_alpha(cfg, alphas=None, out_dir=None):
    """One PBU run per alpha per seed at the tuned ``(beta, gamma)``.

    Without explicit ``alphas`` (argument or ``unlearn.alphas``) the sweep
    uses the tuned alpha times 1/4, 1/2, 1 and 2.
    """
    ctx = _Context(cfg, out_dir or cfg.output_dir)
    a, b, g = _tuned(ctx)
    alphas = alphas or cfg.unlearn.alphas or [a * f for f in (0.25, 0.5, 1.0, 2.0)]
    if list(alphas) != sorted(alphas) or not alphas:
        raise ContractError("alphas must be nonempty and ascending")
    per_alpha = {i: [] for i in range(len(alphas))}

    def body(seed):
        rows = []
        for i, alpha in enumerate(alphas):
            res, _ = ctx.pbu(seed, cfg.unlearn.config(seed, alpha=alpha, beta=b, gamma=g))
            rows.append((i, ctx.report(f"pbu_alpha{i}", seed, res.theta_u, res.steps_run,
                                       res.epochs, res.wall_time)))
        for i, r in rows:
            per_alpha[i].append(r)

    ctx.for_each_seed(body)
    summary = []
    for i, alpha in enumerate(alphas):
        rs = per_alpha[i]
        summary.append({
            "alpha": alpha,
            "A_Df_median": float(np.median([r.a_df for r in rs])) if rs else None,
            "A_Dr_median": float(np.median([r.a_dr for r in rs])) if rs else None,
        })
    ctx.record.extra["alpha_sweep"] = summary
    lines = ["alpha,A_Df_median,A_Dr_median"]
    lines += [f"{s['alpha']!r},{s['A_Df_median']!r},{s['A_Dr_median']!r}" for s in summary]
    path = ctx.path("alpha_sweep.csv")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    ctx.add_artifact("alpha_sweep.csv", path)
    return ctx.finish()


def evaluate_checkpoint(cfg, ckpt, variant="eval", seed=None):
    """Evaluate one checkpoint against the configured test split."""
    splits = load_splits(cfg)
    spec = ckpt.spec
    forget = cfg.unlearn.forget_class
    s_n, _ = splits.train.split_by_class(forget)
    test_n, _ = splits.test.split_by_class(forget)
    seed = cfg.seeds[0] if seed is None else seed
    a_df, a_dr = class_split_accuracy(spec, ckpt.theta, splits.test, forget)
    mia = mia_accuracy(spec, ckpt.theta, s_n, test_n, replace(cfg.mia, seed=cfg.mia.seed ^ seed))
    return MetricsReport(variant, a_df, a_dr, mia, seed=int(seed), dataset=dataset_id(cfg))

