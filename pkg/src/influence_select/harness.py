"""Experiment driver: train, score, select, retrain and evaluate.

A run is described by one JSON document::

    {
      "data": {"train": ROLE, "additional": ROLE, "validation": ROLE, "test": ROLE},
      "vectorizer": {...}, "train": {...}, "solver": {...}, "selection": {...},
      "methods": ["original", "add_full", "random", "m1", ..., "m6"],
      "random_repeats": 5, "random_fraction": 0.1, "output_dir": "runs/x"
    }

where ROLE is ``{"path": ..., "format": "tsv" | "svmlight"}`` or
``{"synth": {"n": ..., "p": ..., "seed": ..., "separation": ..., "label_noise": ...}}``.
Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import (
    DataError,
    Dataset,
    VectorizerConfig,
    fit_vectorizer,
    load_svmlight,
    read_tsv,
    synth_generate,
    vectorize,
)
from .influence import InfluenceMatrix, SolverConfig, influence_matrix, save_influence
from .model import TrainConfig, TrainedModel, accuracy, train
from .selection import METHODS, SelectionConfig, random_baseline, run_method, write_scores_csv

__all__ = [
    "ROLES",
    "VARIANTS",
    "ExperimentConfig",
    "ReportRow",
    "StageError",
    "Splits",
    "load_config",
    "load_splits",
    "retrain_with",
    "run_experiment",
    "emit_report",
    "read_report",
    "prepare_sst2",
]

log = logging.getLogger(__name__)

ROLES = ("train", "additional", "validation", "test")
VARIANTS = ("original", "add_full", "random") + METHODS
OUTPUT_ENV = "INFLUENCE_SELECT_OUT"


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        self.stage = stage
        super().__init__(f"[{stage}] {message}")


def _build(cls, raw: dict | None, where: str):
    raw = raw or {}
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - names)
    if unknown:
        raise ValueError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    return cls(**raw)


@dataclass(frozen=True)
class ExperimentConfig:
    data: dict[str, dict]
    vectorizer: VectorizerConfig = VectorizerConfig()
    train: TrainConfig = TrainConfig()
    solver: SolverConfig = SolverConfig()
    selection: SelectionConfig = SelectionConfig()
    methods: tuple[str, ...] = VARIANTS
    random_repeats: int = 5
    random_fraction: float = 0.1
    output_dir: str | None = None
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def __post_init__(self):
        missing = [r for r in ROLES if r not in self.data]
        if missing:
            raise ValueError(f"data roles missing: {', '.join(missing)}")
        extra = sorted(set(self.data) - set(ROLES))
        if extra:
            raise ValueError(f"unknown data role(s): {', '.join(extra)}")
        for role, spec in self.data.items():
            keys = set(spec)
            if keys == {"synth"}:
                _build(_SynthSpec, spec["synth"], f"data.{role}.synth")
            elif "path" in keys and keys <= {"path", "format"}:
                if spec.get("format", "tsv") not in ("tsv", "svmlight"):
                    raise ValueError(f"data.{role}: unknown format {spec['format']!r}")
            else:
                raise ValueError(f"data.{role}: expected {{path, format}} or {{synth}}")
        bad = [m for m in self.methods if m not in VARIANTS]
        if bad:
            raise ValueError(f"unknown method(s): {', '.join(bad)}")
        if self.random_repeats < 1:
            raise ValueError("random_repeats must be >= 1")
        if not 0.0 <= self.random_fraction <= 1.0:
            raise ValueError("random_fraction must lie in [0, 1]")

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path | str = ".") -> ExperimentConfig:
        allowed = {f.name for f in dataclasses.fields(cls)} - {"base_dir"}
        unknown = sorted(set(raw) - allowed)
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(unknown)}")
        if "data" not in raw:
            raise ValueError("config needs a 'data' section")
        return cls(
            data={k: dict(v) for k, v in raw["data"].items()},
            vectorizer=_build(VectorizerConfig, raw.get("vectorizer"), "vectorizer"),
            train=_build(TrainConfig, raw.get("train"), "train"),
            solver=_build(SolverConfig, raw.get("solver"), "solver"),
            selection=_build(SelectionConfig, raw.get("selection"), "selection"),
            methods=tuple(raw.get("methods", VARIANTS)),
            random_repeats=raw.get("random_repeats", 5),
            random_fraction=raw.get("random_fraction", 0.1),
            output_dir=raw.get("output_dir"),
            base_dir=Path(base_dir),
        )

    def to_dict(self) -> dict:
        return {
            "data": self.data,
            "vectorizer": dataclasses.asdict(self.vectorizer),
            "train": dataclasses.asdict(self.train),
            "solver": dataclasses.asdict(self.solver),
            "selection": dataclasses.asdict(self.selection),
            "methods": list(self.methods),
            "random_repeats": self.random_repeats,
            "random_fraction": self.random_fraction,
            "output_dir": self.output_dir,
        }


@dataclass(frozen=True)
class _SynthSpec:
    n: int
    p: int
    seed: int
    separation: float = 1.0
    label_noise: float = 0.0


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from None
    return ExperimentConfig.from_dict(raw, base_dir=path.parent)


@dataclass(frozen=True, eq=False)
class Splits:
    train: Dataset
    additional: Dataset
    validation: Dataset
    test: Dataset
    vocab_digest: str = ""


def load_splits(cfg: ExperimentConfig) -> Splits:
    """Materialise the four roles in one shared feature space.

    Text roles share a vocabulary fitted on train and additional together.
    """
    kinds = {"tsv" if "path" in s and s.get("format", "tsv") == "tsv" else "numeric"
             for s in cfg.data.values()}
    if len(kinds) > 1:
        raise DataError("cannot mix text (tsv) and numeric (svmlight/synth) roles")

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else cfg.base_dir / p

    digest = ""
    if kinds == {"tsv"}:
        raw = {r: read_tsv(resolve(cfg.data[r]["path"])) for r in ROLES}
        vocab = fit_vectorizer(raw["train"][0] + raw["additional"][0], cfg.vectorizer)
        sets = {r: vectorize(t, y, vocab, cfg.vectorizer) for r, (t, y) in raw.items()}
        digest = vocab.digest()
    else:
        sets = {}
        for r in ROLES:
            spec = cfg.data[r]
            if "synth" in spec:
                sets[r] = synth_generate(**dataclasses.asdict(_build(_SynthSpec, spec["synth"], r)))
            else:
                sets[r] = load_svmlight(resolve(spec["path"]))
        dim = max(d.dim for d in sets.values())
        sets = {r: d.with_dim(dim) for r, d in sets.items()}
    if cfg.train.fit_intercept:
        sets = {r: d.with_bias() for r, d in sets.items()}
    for r, d in sets.items():
        if len(d) == 0:
            raise DataError(f"role {r} is empty")
    return Splits(sets["train"], sets["additional"], sets["validation"], sets["test"], digest)


def retrain_with(base: TrainedModel, train_data: Dataset, pool: Dataset,
                 selected_ids: Sequence, cfg: TrainConfig) -> TrainedModel:
    """Minimise the original risk plus the selected points' loss at weight 1/N,
    warm-started from the base weights."""
    if len(selected_ids) == 0:
        return base
    combined = Dataset.concat(train_data, pool.subset(selected_ids))
    model = train(combined, TrainConfig(base.lam, cfg.tol, cfg.max_iter),
                  n_normalizer=len(train_data), w0=base.weights)
    if not model.converged:
        raise StageError("retrain", f"did not converge (|g| = {model.final_grad_norm:.3e})")
    return model


# -- reports ------------------------------------------------------------------

@dataclass(frozen=True)
class ReportRow:
    variant: str
    added_percentage: float
    random_acc: float | None
    val_acc: float
    test_acc: float
    n_selected: int
    seed: int | None = None


_COLUMNS = [f.name for f in dataclasses.fields(ReportRow)]
_LABELS = {"original": "Original", "add_full": "Add Full", "random": "Random"}
_LABELS.update({m: f"Method {m[1:]}" for m in METHODS})


def _row_to_strings(row: ReportRow) -> list[str]:
    return ["" if v is None else (repr(v) if isinstance(v, float) else str(v))
            for v in dataclasses.astuple(row)]


def _row_from_strings(vals: dict[str, str]) -> ReportRow:
    def opt(v, t):
        return None if v == "" else t(v)
    return ReportRow(vals["variant"], float(vals["added_percentage"]), opt(vals["random_acc"], float),
                     float(vals["val_acc"]), float(vals["test_acc"]), int(vals["n_selected"]),
                     opt(vals["seed"], int))


def _markdown(rows: Sequence[ReportRow]) -> str:
    lines = ["| Variant | Added Percentage | Random | Val Acc | Test Acc |",
             "|---|---|---|---|---|"]
    for r in rows:
        rand = "*" if r.random_acc is None else f"{r.random_acc:.3f}"
        lines.append(f"| {_LABELS.get(r.variant, r.variant)} | {r.added_percentage:.1f}% | {rand} "
                     f"| {r.val_acc:.3f} | {r.test_acc:.3f} |")
    return "\n".join(lines) + "\n"


def emit_report(rows: Sequence[ReportRow], fmt: str, path: str | Path | None = None) -> str:
    """Render rows as ``csv``, ``json`` or ``markdown``; optionally write them."""
    if not rows:
        raise ValueError("no report rows to emit")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(_COLUMNS)
        w.writerows(_row_to_strings(r) for r in rows)
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps([dataclasses.asdict(r) for r in rows], indent=2) + "\n"
    elif fmt == "markdown":
        text = _markdown(rows)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def read_report(path: str | Path) -> list[ReportRow]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        return [ReportRow(**r) for r in json.loads(text)]
    return [_row_from_strings(r) for r in csv.DictReader(io.StringIO(text))]


# -- the run ------------------------------------------------------------------

def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None,
                   threads: int = 1, seed: int | None = None) -> list[ReportRow]:
    """Run every configured variant and write the run artifacts.

    Rows come back in config order.  Matched-size random baselines for each
    scoring method use seeds ``seed, seed + 1, ...`` and report mean test
    accuracy in ``random_acc``.
    """
    if seed is not None:
        cfg = dataclasses.replace(cfg, selection=dataclasses.replace(cfg.selection, seed=seed))
    out = _resolve_out(out_dir, cfg)
    out.mkdir(parents=True, exist_ok=True)
    tau, sel_seed = cfg.selection.tau, cfg.selection.seed

    t0 = time.perf_counter()
    try:
        splits = load_splits(cfg)
    except (OSError, ValueError) as exc:
        raise StageError("load", str(exc)) from exc
    tr, pool, val, test = splits.train, splits.additional, splits.validation, splits.test
    log.info("loaded N=%d, pool=%d, val=%d, test=%d, dim=%d", len(tr), len(pool), len(val),
             len(test), tr.dim)

    base = train(tr, cfg.train)
    if not base.converged:
        raise StageError("train", f"base model did not converge (|g| = {base.final_grad_norm:.3e})")

    infl: InfluenceMatrix | None = None
    if any(m in METHODS for m in cfg.methods):
        try:
            infl = influence_matrix(base, tr, pool, val, cfg.solver, threads=threads)
        except (RuntimeError, ValueError) as exc:
            raise StageError("influence", str(exc)) from exc
    log.info("base model and influence ready in %.1fs", time.perf_counter() - t0)

    def evaluate(ids):
        m = retrain_with(base, tr, pool, ids, cfg.train)
        return accuracy(m, val, tau), accuracy(m, test, tau)

    def random_mean(k):
        accs = [evaluate(random_baseline(pool, k, sel_seed + r).selected_ids)
                for r in range(cfg.random_repeats)]
        return float(np.mean([a[0] for a in accs])), float(np.mean([a[1] for a in accs]))

    M = len(pool)
    rows, score_files = [], {}
    for variant in cfg.methods:
        if variant == "original":
            rows.append(ReportRow(variant, 0.0, None, accuracy(base, val, tau),
                                  accuracy(base, test, tau), 0))
        elif variant == "add_full":
            va, te = evaluate(pool.ids)
            rows.append(ReportRow(variant, 100.0, None, va, te, M))
        elif variant == "random":
            k = round(cfg.random_fraction * M)
            va, te = random_mean(k)
            rows.append(ReportRow(variant, 100.0 * k / M, te, va, te, k, sel_seed))
        else:
            try:
                sv, sel = run_method(variant, infl, cfg.selection, pool, base)
            except (RuntimeError, ValueError) as exc:
                raise StageError(f"select:{variant}", str(exc)) from exc
            va, te = evaluate(sel.selected_ids)
            _, rand_te = random_mean(len(sel))
            rows.append(ReportRow(variant, 100.0 * sel.added_fraction, rand_te, va, te,
                                  len(sel), sel_seed))
            score_files[variant] = (sv, sel)
        log.info("%s done (%.1fs)", variant, time.perf_counter() - t0)

    emit_report(rows, "csv", out / "report.csv")
    emit_report(rows, "json", out / "report.json")
    emit_report(rows, "markdown", out / "report.md")
    for variant, (sv, sel) in score_files.items():
        write_scores_csv(sv, sel, out / f"scores_{variant}.csv")
    if infl is not None:
        save_influence(infl, out / "influence.bin")
    (out / "config.resolved.json").write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return rows


def _resolve_out(out_dir, cfg: ExperimentConfig) -> Path:
    if out_dir is not None:
        return Path(out_dir)
    if cfg.output_dir is not None:
        p = Path(cfg.output_dir)
        return p if p.is_absolute() else cfg.base_dir / p
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


# -- SST-2 preparation ----------------------------------------------------------

def _read_sentences(path: Path) -> tuple[list[str], list[int]]:
    """Accept ``label<TAB>text``, GLUE-style ``sentence<TAB>label`` with a
    header, or space-separated ``label text`` lines."""
    lines = [ln.rstrip("\r\n") for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise DataError(f"empty corpus: {path}")
    head = lines[0].lower().split("\t")
    texts, labels = [], []
    if "sentence" in head and "label" in head:
        si, li = head.index("sentence"), head.index("label")
        for ln in lines[1:]:
            parts = ln.split("\t")
            texts.append(parts[si])
            labels.append(int(parts[li]))
    else:
        for lineno, ln in enumerate(lines, start=1):
            sep = "\t" if "\t" in ln else " "
            label, _, text = ln.partition(sep)
            if label not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: invalid label {label!r}")
            texts.append(text)
            labels.append(int(label))
    return texts, labels


def prepare_sst2(train_file, dev_file, test_file, out_dir, seed: int = 0,
                 n_train: int = 4152, n_additional: int = 2768) -> Path:
    """Split sentence-level SST-2 into the four experiment roles.

    The training sentences are shuffled with ``seed``; the first ``n_train``
    form the original training set and the next ``n_additional`` the
    candidate pool.  Dev becomes validation and test stays test.  Writes the
    four TSVs and a ``config.json`` with the default pipeline.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    texts, labels = _read_sentences(Path(train_file))
    if len(texts) < n_train + n_additional:
        raise DataError(f"{train_file}: {len(texts)} sentences, need {n_train + n_additional}")
    order = np.random.default_rng(seed).permutation(len(texts))
    parts = {"train": order[:n_train], "additional": order[n_train:n_train + n_additional]}

    def write(name, t, y):
        with open(out / f"{name}.tsv", "w", encoding="utf-8") as fh:
            for text, label in zip(t, y):
                fh.write(f"{label}\t{' '.join(text.split())}\n")

    for name, idx in parts.items():
        write(name, [texts[i] for i in idx], [labels[i] for i in idx])
    write("validation", *_read_sentences(Path(dev_file)))
    write("test", *_read_sentences(Path(test_file)))
    cfg = {"data": {r: {"path": f"{r}.tsv", "format": "tsv"} for r in ROLES},
           "methods": list(VARIANTS), "random_repeats": 5, "output_dir": "run"}
    (out / "config.json").write_text(json.dumps(cfg, indent=2) + "\n", encoding="utf-8")
    return out / "config.json"

