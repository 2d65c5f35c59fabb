"""Paired baseline-vs-KINN walk-forward experiments.

Every (model, arm, session) is an independent work item: a fresh model is
seeded from a hash of the master seed and the item's identity, trained on the
session's windows and scored on the next session. Items can run in a process
pool; results are always collected and written in schedule order, so serial
and parallel runs produce identical files.
"""

from __future__ import annotations

import configparser
import csv
import datetime as dt
import hashlib
import json
import logging
import os
import platform
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

import kinn
from kinn import kernels
from kinn.autodiff import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, GraphError
from kinn.dataset import (
    SeriesFrame,
    SessionPlan,
    assemble_vectors,
    load_series,
    plan_sessions,
    session_arrays,
)
from kinn.evaluation import (
    MetricsTable,
    SessionResult,
    aggregate,
    mean_std,
    session_metrics,
    write_session_csv,
    write_summary_csv,
)
from kinn.kinloss import LossSpec
from kinn.models import (
    ARCHITECTURES,
    RAW_BY_DEFAULT,
    ModelConfig,
    TrainingDiverged,
    build_model,
    fit_linear_closed_form,
    grow_gmdh,
    predict,
    train,
)

log = logging.getLogger(__name__)

OUTPUT_ENV = "KINN_OUTPUT_DIR"
ARMS = {"baseline": ("baseline",), "kinn": ("kinn",), "both": ("baseline", "kinn")}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data: str = ""
    architectures: list[str] = field(default_factory=lambda: ["kgate"])
    normalize: dict[str, bool] = field(default_factory=dict)
    arms: str = "both"
    t_p: int = 30
    t_f: int = 30
    session_len: int = 120
    train_obs: int = 30
    epochs: int = 1000
    batch_size: int = 32
    lr: float = 0.01
    seed: int = 0
    output_dir: str = "runs/latest"
    jobs: int = 1
    velocity_supervision: bool = False
    kin_weight: float = 1.0
    pooling: str = "days"
    attention_width: int = 8
    rbf_centers: int = 0
    gmdh_select_k: int = 0
    gmdh_max_layers: int = 4
    gmdh_candidate_epochs: int = 150
    gmdh_finetune: bool = True
    sessions: list[int] = field(default_factory=list)

    def models(self) -> list[tuple[str, str, bool]]:
        """(label, architecture, normalize) for every requested model.

        An entry may pin normalization with a suffix: ``kgate:norm`` or
        ``kgate:raw``. Otherwise the ``normalize`` map decides, falling back to
        raw input for linear, ReLU and KGate models and normalized otherwise.
        """
        out = []
        for entry in self.architectures:
            arch, _, mode = entry.partition(":")
            if mode:
                norm = mode == "norm"
            else:
                norm = self.normalize.get(arch, arch not in RAW_BY_DEFAULT)
            out.append((f"{arch}_{'norm' if norm else 'raw'}", arch, norm))
        return out

    def validate(self) -> None:
        for entry in self.architectures:
            arch, _, mode = entry.partition(":")
            if arch not in ARCHITECTURES:
                raise ConfigError(f"unknown architecture {arch!r}; choose from {', '.join(ARCHITECTURES)}")
            if mode not in ("", "norm", "raw"):
                raise ConfigError(f"{entry!r}: normalization suffix must be ':norm' or ':raw'")
        for arch in self.normalize:
            if arch not in ARCHITECTURES:
                raise ConfigError(f"normalize: unknown architecture {arch!r}")
        if not self.architectures:
            raise ConfigError("no architectures requested")
        labels = [label for label, _, _ in self.models()]
        if len(set(labels)) != len(labels):
            raise ConfigError(f"duplicate models in {self.architectures}")
        if self.arms not in ARMS:
            raise ConfigError(f"arms must be one of {sorted(ARMS)}")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0 or self.jobs < 1:
            raise ConfigError("epochs >= 0, batch_size >= 1, lr > 0 and jobs >= 1 required")
        if self.pooling not in ("days", "windows"):
            raise ConfigError("pooling must be 'days' or 'windows'")
        if self.t_f < 2 and self.arms != "baseline":
            raise ConfigError("the kinematic arm needs t_f >= 2")
        if self.t_p + self.t_f + self.train_obs - 1 > self.session_len:
            raise ConfigError("t_p + t_f + train_obs - 1 must not exceed session_len")
        if not self.data:
            raise ConfigError("no data file given")

    def arch_params(self, arch: str) -> dict:
        if arch == "attention":
            return {"width": self.attention_width}
        if arch == "rbf" and self.rbf_centers:
            return {"centers": self.rbf_centers}
        if arch == "gmdh":
            ap = {"max_layers": self.gmdh_max_layers, "candidate_epochs": self.gmdh_candidate_epochs}
            if self.gmdh_select_k:
                ap["select_k"] = self.gmdh_select_k
            return ap
        return {}


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def _split(text: str) -> list[str]:
    return [t.strip() for t in text.replace(";", ",").split(",") if t.strip()]


def coerce(key: str, raw) -> object:
    """Convert a textual config value to the RunConfig field type."""
    if key == "normalize":
        if isinstance(raw, dict):
            return raw
        out = {}
        for item in _split(raw):
            arch, sep, flag = item.partition(":")
            if not sep:
                raise ConfigError(f"normalize entries look like 'arch:true', got {item!r}")
            out[arch.strip()] = _parse_bool(flag)
        return out
    if key == "architectures":
        return raw if isinstance(raw, list) else _split(raw)
    if key == "sessions":
        return raw if isinstance(raw, list) else [int(s) for s in _split(raw)]
    default = RunConfig.__dataclass_fields__[key].default
    if isinstance(raw, str):
        if isinstance(default, bool):
            return _parse_bool(raw)
        try:
            if isinstance(default, int):
                return int(raw)
            if isinstance(default, float):
                return float(raw)
        except ValueError:
            raise ConfigError(f"{key}: cannot parse {raw!r}") from None
        return raw.strip()
    return raw


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a flat ``key = value`` file (``#`` comments) and apply overrides.

    Precedence: explicit overrides, then the ``KINN_OUTPUT_DIR`` environment
    variable for the output directory, then the file, then defaults.
    """
    values: dict = {}
    known = {f.name for f in fields(RunConfig)}
    if path is not None:
        parser = configparser.ConfigParser(inline_comment_prefixes=("#",), interpolation=None)
        text = Path(path).read_text(encoding="utf-8")
        try:
            parser.read_string("[run]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        for key, raw in parser["run"].items():
            if key not in known:
                raise ConfigError(f"{path}: unknown key {key!r}")
            values[key] = coerce(key, raw)
    if os.environ.get(OUTPUT_ENV):
        values["output_dir"] = os.environ[OUTPUT_ENV]
    for key, raw in (overrides or {}).items():
        if raw is None:
            continue
        if key not in known:
            raise ConfigError(f"unknown key {key!r}")
        values[key] = coerce(key, raw)
    return RunConfig(**values)


def item_seed(master: int, label: str, arm: str, session: int) -> int:
    digest = hashlib.sha256(f"{master}|{label}|{arm}|{session}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


@dataclass
class WorkItem:
    label: str
    arch: str
    normalize: bool
    arm: str
    plan: SessionPlan
    seed: int


@dataclass
class ItemOutcome:
    label: str
    arm: str
    result: SessionResult
    trace: list[tuple[int, float, float]]
    final_loss: float | None = None
    error: str | None = None


def fit_item(values: np.ndarray, item: WorkItem, cfg: RunConfig):
    """Train the model for one work item; returns (model, final training loss)."""
    kinematic = item.arm == "kinn"
    X, Y, _ = session_arrays(values, item.plan, kinematic, item.normalize)
    mcfg = ModelConfig.for_window(item.arch, cfg.t_p, cfg.t_f, kinematic,
                                  normalize=item.normalize, seed=item.seed,
                                  arch_params=cfg.arch_params(item.arch))
    spec = LossSpec("kinematic" if kinematic else "mse", cfg.t_f,
                    cfg.velocity_supervision, cfg.kin_weight)
    rng = np.random.default_rng(item.seed + 1)
    final = None
    if item.arch == "linear_closed_form":
        model = fit_linear_closed_form(X, Y, mcfg)
    elif item.arch == "gmdh":
        n_val = max(1, int(round(0.2 * len(X))))
        model, _ = grow_gmdh(X[:-n_val], Y[:-n_val], X[-n_val:], Y[-n_val:], mcfg)
        if cfg.gmdh_finetune and cfg.epochs:
            final = train(model, X, Y, spec, cfg.epochs, cfg.batch_size, cfg.lr, rng).losses[-1]
    else:
        model = build_model(mcfg, train_inputs=X)
        if cfg.epochs:
            final = train(model, X, Y, spec, cfg.epochs, cfg.batch_size, cfg.lr, rng).losses[-1]
    return model, final


def run_item(values: np.ndarray, item: WorkItem, cfg: RunConfig) -> ItemOutcome:
    kinematic = item.arm == "kinn"
    t_f = cfg.t_f
    _, _, test = session_arrays(values, item.plan, kinematic, item.normalize)
    actuals = [values[w.input_start + cfg.t_p : w.input_start + cfg.t_p + t_f] for w in test]
    try:
        model, final = fit_item(values, item, cfg)
        Xt = np.vstack([assemble_vectors(w, kinematic)[0] for w in test])
        pred = predict(model, Xt)[:, :t_f]
        forecasts = [w.norm.denormalize(p) for w, p in zip(test, pred)]
        if not all(np.all(np.isfinite(f)) for f in forecasts):
            raise TrainingDiverged("non-finite forecast")
    except (TrainingDiverged, GraphError, np.linalg.LinAlgError) as exc:
        log.warning("%s/%s session %d failed: %s", item.label, item.arm, item.plan.session_index, exc)
        res = SessionResult(item.plan.session_index, float("nan"), float("nan"), 0, failed=True)
        return ItemOutcome(item.label, item.arm, res, [], None, str(exc))
    res = session_metrics(item.plan.session_index, actuals, forecasts, cfg.pooling)
    trace = []
    for w, a, f in zip(test, actuals, forecasts):
        start = w.input_start + cfg.t_p
        trace.extend((start + h, float(a[h]), float(f[h])) for h in range(t_f))
    return ItemOutcome(item.label, item.arm, res, trace, final)


def _run_item_star(args):
    return run_item(*args)


def schedule(cfg: RunConfig, plans: list[SessionPlan]) -> list[WorkItem]:
    items = []
    for label, arch, norm in cfg.models():
        for arm in ARMS[cfg.arms]:
            for plan in plans:
                seed = item_seed(cfg.seed, label, arm, plan.session_index)
                items.append(WorkItem(label, arch, norm, arm, plan, seed))
    return items


def _init_worker():
    # one BLAS thread per worker keeps results independent of the pool size
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")


def execute(values: np.ndarray, items: list[WorkItem], cfg: RunConfig) -> list[ItemOutcome]:
    args = [(values, item, cfg) for item in items]
    if cfg.jobs <= 1 or len(items) <= 1:
        return [run_item(*a) for a in args]
    with ProcessPoolExecutor(max_workers=cfg.jobs, initializer=_init_worker) as pool:
        return list(pool.map(_run_item_star, args, chunksize=1))


def run_experiment(cfg: RunConfig, frame: SeriesFrame | None = None) -> dict:
    """Run every work item and write the report files; returns their paths."""
    cfg.validate()
    if frame is None:
        frame = load_series(cfg.data, cfg.session_len)
    plans = plan_sessions(frame, cfg.session_len, cfg.t_p, cfg.t_f, cfg.train_obs)
    if cfg.sessions:
        plans = [p for p in plans if p.session_index in set(cfg.sessions)]
    if not plans:
        raise ConfigError("data too short for a single train/test session pair")
    items = schedule(cfg, plans)
    log.info("%d work items over %d sessions", len(items), len(plans))
    outcomes = execute(np.asarray(frame.values), items, cfg)

    out = Path(cfg.output_dir)
    (out / "traces").mkdir(parents=True, exist_ok=True)
    by_model: dict[str, dict[str, list[SessionResult]]] = {}
    session_rows = []
    for o in outcomes:
        by_model.setdefault(o.label, {}).setdefault(o.arm, []).append(o.result)
        session_rows.append((o.label, o.arm, o.result))
        tdir = out / "traces" / o.label / o.arm
        tdir.mkdir(parents=True, exist_ok=True)
        with open(tdir / f"session_{o.result.session_index:03d}.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["day", "actual", "predicted"])
            for day, a, f in o.trace:
                w.writerow([day, repr(a), repr(f)])
    write_session_csv(out / "sessions.csv", session_rows)

    tables = []
    for label, arms in by_model.items():
        if "baseline" in arms and "kinn" in arms:
            tables.append(aggregate(label, arms["baseline"], arms["kinn"]))
        else:
            tables.append(single_arm_table(label, arms))
    write_summary_csv(out / "summary.csv", tables)

    meta = {
        "kinn_version": kinn.__version__,
        "kernel_backend": kernels.BACKEND,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "created": dt.datetime.now(dt.timezone.utc).isoformat(),
        "config": asdict(cfg),
        "adam": {"lr": cfg.lr, "beta1": ADAM_BETA1, "beta2": ADAM_BETA2, "eps": ADAM_EPS},
        "data_rows": len(frame),
        "sessions": len(plans),
        "notes": [],
        "items": [{"model": i.label, "arm": i.arm, "session": i.plan.session_index,
                   "seed": i.seed, "final_loss": o.final_loss, "error": o.error}
                  for i, o in zip(items, outcomes)],
    }
    if cfg.batch_size > cfg.train_obs:
        meta["notes"].append(
            f"batch_size {cfg.batch_size} exceeds the {cfg.train_obs} training windows per "
            "session; every epoch is one full-batch step")
    (out / "run_metadata.json").write_text(json.dumps(meta, indent=2))
    return {"sessions": out / "sessions.csv", "summary": out / "summary.csv",
            "traces": out / "traces", "metadata": out / "run_metadata.json", "tables": tables}


def single_arm_table(label: str, arms: dict) -> MetricsTable:
    arm, results = next(iter(arms.items()))
    table = MetricsTable(label, results if arm == "baseline" else [],
                         results if arm == "kinn" else [])
    mean, std, _ = mean_std([r.mape for r in results if not r.failed])
    if arm == "baseline":
        table.mean_ann, table.std_ann = mean, std
    else:
        table.mean_kinn, table.std_kinn = mean, std
    table.flags.append(f"{arm}_only")
    return table


def _resolve_label(run_dir: Path, architecture: str) -> str:
    labels = sorted(p.name for p in (run_dir / "traces").iterdir() if p.is_dir())
    if architecture in labels:
        return architecture
    matches = [lab for lab in labels if lab.rsplit("_", 1)[0] == architecture]
    if len(matches) == 1:
        return matches[0]
    raise FileNotFoundError(f"no unique traces for {architecture!r} in {run_dir} (have {labels})")


def emit_plot_data(run_dir, architecture: str, arm: str, out_path=None) -> Path:
    """Concatenate per-session traces into one plot-ready CSV.

    Rows: ``session,window,horizon,day,actual,predicted``; window and horizon
    are recovered from the row order of each session trace.
    """
    run_dir = Path(run_dir)
    if not (run_dir / "traces").is_dir() or not (run_dir / "run_metadata.json").exists():
        raise FileNotFoundError(f"{run_dir} does not contain a finished run")
    meta = json.loads((run_dir / "run_metadata.json").read_text())
    t_f = int(meta["config"]["t_f"])
    label = _resolve_label(run_dir, architecture)
    tdir = run_dir / "traces" / label / arm
    files = sorted(tdir.glob("session_*.csv"))
    if not files:
        raise FileNotFoundError(f"no traces for {label}/{arm} in {run_dir}")
    out_path = Path(out_path) if out_path else run_dir / f"plot_{label}_{arm}.csv"
    with open(out_path, "w", newline="") as dst:
        w = csv.writer(dst)
        w.writerow(["session", "window", "horizon", "day", "actual", "predicted"])
        for f in files:
            session = int(f.stem.split("_")[1])
            with open(f, newline="") as src:
                reader = csv.reader(src)
                next(reader)
                for r, (day, actual, pred) in enumerate(reader):
                    w.writerow([session, r // t_f, r % t_f, day, actual, pred])
    return out_path
