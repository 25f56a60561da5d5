"""Staged pipeline: ingest -> pretrain -> rewire -> placeholders -> finetune -> eval -> report.

Every stage declares the files it reads and writes; reads go through
:meth:`Pipeline.read`, which refuses undeclared paths and records accesses.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import binio
from .compose import AssignmentMatrix, init_assignment, init_codebook, partition_entities
from .config import Config
from .evaluation import MetricsReport, ranking_metrics
from .finetune import assemble_inference_table, build_placeholders, finetune, imputed_entities
from .graph import (
    DatasetSplit,
    build_adjacency,
    load_interactions,
    normalize_symmetric,
    sample_negatives,
    split_dataset,
)
from .placeholder import PlaceholderCodebook
from .propagation import count_macs
from .quantizer import QuantizedCodebook, storage_bytes
from .rewiring import (
    RetentionPlan,
    RewiredGraph,
    contribution_scores,
    retained_count,
    retained_operator,
    rewire,
    select_retained,
)
from .trainer import TrainConfig, pretrain

log = logging.getLogger(__name__)

STAGES = ("ingest", "pretrain", "rewire", "placeholders", "finetune", "eval", "report")

SPLIT = "ingest/split.json"
CODEBOOK = "pretrain/codebook.bin"
ASSIGNMENT = "pretrain/assignment.bin"
TABLE = "pretrain/table.bin"
PRETRAIN_LOG = "pretrain/epochs.jsonl"
REPORT_CSV = "report.csv"
REPORT_JSON = "report.json"


class MissingArtifact(FileNotFoundError):
    pass


class UndeclaredAccess(RuntimeError):
    pass


def ratio_dir(ratio: float) -> str:
    return f"ratio_{ratio:g}"


def producer_of(rel: str) -> str:
    name = Path(rel).name
    if rel.startswith("ingest/"):
        return "ingest"
    if rel.startswith("pretrain/"):
        return "pretrain"
    return {
        "rewired.bin": "rewire",
        "placeholder.bin": "placeholders",
        "codebook.bin": "finetune",
        "epochs.jsonl": "finetune",
        "metrics.json": "eval",
    }.get(name, "report")


@dataclass
class StageIO:
    reads: list
    writes: list


class Pipeline:
    def __init__(self, cfg: Config, out: Path):
        self.cfg = cfg
        self.out = Path(out)
        self.config_hash = cfg.hash
        self.accesses: dict[str, list[str]] = {}
        self._stage = None

    # -- declared I/O -------------------------------------------------------
    def io(self, stage: str) -> StageIO:
        ratios = [ratio_dir(r) for r in self.cfg.rewire.retention_ratio]
        if stage == "ingest":
            return StageIO([self.cfg.data.path], [SPLIT])
        if stage == "pretrain":
            reads = [SPLIT] + ([self.cfg.model.partition_labels] if self.cfg.model.partition_labels else [])
            return StageIO(reads, [CODEBOOK, ASSIGNMENT, TABLE, PRETRAIN_LOG])
        if stage == "rewire":
            return StageIO([SPLIT, TABLE], [f"{r}/rewired.bin" for r in ratios])
        if stage == "placeholders":
            return StageIO([TABLE] + [f"{r}/rewired.bin" for r in ratios], [f"{r}/placeholder.bin" for r in ratios])
        if stage == "finetune":
            reads = [SPLIT, CODEBOOK, ASSIGNMENT]
            for r in ratios:
                reads += [f"{r}/rewired.bin", f"{r}/placeholder.bin"]
            writes = []
            for r in ratios:
                writes += [f"{r}/codebook.bin", f"{r}/epochs.jsonl"]
            return StageIO(reads, writes)
        if stage == "eval":
            reads = [SPLIT, CODEBOOK, ASSIGNMENT]
            for r in ratios:
                reads += [f"{r}/rewired.bin", f"{r}/placeholder.bin", f"{r}/codebook.bin"]
            return StageIO(reads, [f"{r}/metrics.json" for r in ratios])
        if stage == "report":
            return StageIO([f"{r}/metrics.json" for r in ratios], [REPORT_CSV, REPORT_JSON])
        raise ValueError(f"unknown stage {stage!r}")

    def plan(self, stage: str) -> list[str]:
        return list(STAGES) if stage == "all" else [stage]

    def describe(self, stage: str) -> str:
        lines = []
        for s in self.plan(stage):
            io_ = self.io(s)
            lines.append(f"[{s}]")
            lines += [f"  read  {p}" for p in io_.reads]
            lines += [f"  write {p}" for p in io_.writes]
        return "\n".join(lines)

    def path(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.out / p

    def check_inputs(self, stage: str) -> None:
        for rel in self.io(stage).reads:
            if not self.path(rel).exists():
                if rel == self.cfg.data.path or rel == self.cfg.model.partition_labels:
                    raise MissingArtifact(f"input file {rel} does not exist")
                raise MissingArtifact(
                    f"stage '{stage}' needs {rel}, which is missing; run stage '{producer_of(rel)}' first"
                )

    def read(self, rel: str) -> bytes:
        if rel not in self.io(self._stage).reads:
            raise UndeclaredAccess(f"stage {self._stage} read undeclared {rel}")
        self.accesses.setdefault(self._stage, []).append(rel)
        return self.path(rel).read_bytes()

    def write(self, rel: str, data) -> None:
        if rel not in self.io(self._stage).writes:
            raise UndeclaredAccess(f"stage {self._stage} wrote undeclared {rel}")
        binio.atomic_write(self.path(rel), data)

    def _check_hash(self, rel: str, h: str | None) -> None:
        if h != self.config_hash:
            raise binio.ArtifactError(
                f"{rel} was produced with config {h}, current config is {self.config_hash}; rerun upstream stages"
            )

    # -- running ------------------------------------------------------------
    def run(self, stage: str) -> None:
        for s in self.plan(stage):
            self.check_inputs(s)
            self._stage = s
            t0 = time.perf_counter()
            getattr(self, f"stage_{s}")()
            log.info("stage %s done in %.1fs", s, time.perf_counter() - t0)
        self._stage = None

    # -- artifact loaders ---------------------------------------------------
    def load_split(self) -> DatasetSplit:
        body = json.loads(self.read(SPLIT))
        self._check_hash(SPLIT, body["config_hash"])

        def arr(key, width=2):
            return np.array(body[key], dtype=np.int64).reshape(-1, width)

        k = self.cfg.data.negatives
        return DatasetSplit(
            body["num_users"], body["num_items"], arr("train"), arr("valid"), arr("test"), arr("negatives", k)
        )

    def load_codebook(self, rel) -> QuantizedCodebook:
        q, h = QuantizedCodebook.from_bytes(self.read(rel), rel)
        self._check_hash(rel, h)
        return q

    def load_assignment(self) -> AssignmentMatrix:
        s, h = AssignmentMatrix.from_bytes(self.read(ASSIGNMENT), ASSIGNMENT)
        self._check_hash(ASSIGNMENT, h)
        return s

    def load_table(self) -> np.ndarray:
        t, h = binio.table_from_bytes(self.read(TABLE), TABLE)
        self._check_hash(TABLE, h)
        return t

    def load_rewired(self, rdir) -> tuple[RewiredGraph, RetentionPlan]:
        rel = f"{rdir}/rewired.bin"
        rw, h = RewiredGraph.from_bytes(self.read(rel), rel)
        self._check_hash(rel, h)
        return rw, RetentionPlan.from_mask(rw.retained_mask)

    def load_placeholders(self, rdir, plan, rewired) -> PlaceholderCodebook:
        rel = f"{rdir}/placeholder.bin"
        p, h = PlaceholderCodebook.from_bytes(self.read(rel), rel)
        self._check_hash(rel, h)
        p.entities = imputed_entities(plan, rewired)
        return p

    def train_config(self, section) -> TrainConfig:
        m = self.cfg.model
        return TrainConfig(
            learning_rate=section.learning_rate,
            weight_decay=section.weight_decay,
            l2_lambda=section.l2_lambda,
            batch_size=section.batch_size,
            max_epochs=section.max_epochs,
            patience=section.patience,
            seed=section.seed,
            num_layers=m.num_layers,
            bits=m.b,
            lsq_grad_scale=section.lsq_grad_scale,
            eval_n=tuple(self.cfg.eval.n),
        )

    # -- stages -------------------------------------------------------------
    def stage_ingest(self):
        dc = self.cfg.data
        self.accesses.setdefault("ingest", []).append(dc.path)
        ds = load_interactions(dc.path, dc.format)
        log.info("loaded %d users, %d items, %d interactions", ds.num_users, ds.num_items, len(ds))
        split = sample_negatives(split_dataset(ds, dc.split, dc.seed), dc.negatives, dc.seed)
        body = {
            "config_hash": self.config_hash,
            "dataset": dc.name,
            "num_users": ds.num_users,
            "num_items": ds.num_items,
            "num_interactions": len(ds),
            "train": split.train.tolist(),
            "valid": split.valid.tolist(),
            "test": split.test.tolist(),
            "negatives": split.negatives.tolist(),
        }
        self.write(SPLIT, json.dumps(body, separators=(",", ":")))

    def _train_adjacency(self, split):
        return build_adjacency(split.train_dataset())

    def stage_pretrain(self):
        m = self.cfg.model
        split = self.load_split()
        adj = self._train_adjacency(split)
        external = None
        if m.partition_labels:
            self.accesses.setdefault("pretrain", []).append(m.partition_labels)
            external = np.loadtxt(m.partition_labels, dtype=np.int64, ndmin=1)
        labels = partition_entities(adj, m.c, m.seed, m.partition_eps, labels=external)
        s = init_assignment(labels, m.c, m.anchor_weight, m.seed)
        weights = init_codebook(m.c, m.d, m.seed).weights
        cfg = self.train_config(self.cfg.train)
        tmp_log = self.path(PRETRAIN_LOG).with_suffix(".partial")
        tmp_log.parent.mkdir(parents=True, exist_ok=True)
        art = pretrain(split, normalize_symmetric(adj), s, weights, cfg, log_path=tmp_log)
        self.write(CODEBOOK, art.codebook.to_bytes(self.config_hash))
        self.write(ASSIGNMENT, s.to_bytes(self.config_hash))
        self.write(TABLE, binio.table_to_bytes(art.table, self.config_hash))
        self.write(PRETRAIN_LOG, tmp_log.read_text())
        tmp_log.unlink()

    def stage_rewire(self):
        rc = self.cfg.rewire
        split = self.load_split()
        table = self.load_table()
        adj = self._train_adjacency(split)
        scores = contribution_scores(table)
        for ratio in rc.retention_ratio:
            plan = select_retained(scores, retained_count(split.num_entities, ratio), rc.boundary)
            rw = rewire(adj, plan.pruned, rc.max_hops)
            if len(rw.unrecovered):
                log.warning("ratio %g: %d entities left without neighbours", ratio, len(rw.unrecovered))
            self.write(f"{ratio_dir(ratio)}/rewired.bin", rw.to_bytes(self.config_hash))

    def stage_placeholders(self):
        rc = self.cfg.rewire
        table = self.load_table()
        for ratio in rc.retention_ratio:
            rdir = ratio_dir(ratio)
            rw, plan = self.load_rewired(rdir)
            p = build_placeholders(table, plan, rw, rc.placeholders, rc.seed, rc.kmeans_iters)
            self.write(f"{rdir}/placeholder.bin", p.to_bytes(self.config_hash))

    def stage_finetune(self):
        split = self.load_split()
        pre = self.load_codebook(CODEBOOK)
        s = self.load_assignment()
        cfg = self.train_config(self.cfg.finetune)
        for ratio in self.cfg.rewire.retention_ratio:
            rdir = ratio_dir(ratio)
            rw, plan = self.load_rewired(rdir)
            p = self.load_placeholders(rdir, plan, rw)
            tmp_log = self.path(f"{rdir}/epochs.partial")
            res = finetune(pre, s, plan, rw, p, split, cfg, log_path=tmp_log)
            self.write(f"{rdir}/codebook.bin", res.codebook.to_bytes(self.config_hash))
            self.write(f"{rdir}/epochs.jsonl", tmp_log.read_text() if tmp_log.exists() else "")
            if tmp_log.exists():
                tmp_log.unlink()

    def stage_eval(self):
        split = self.load_split()
        pre = self.load_codebook(CODEBOOK)
        s = self.load_assignment()
        m = self.cfg.model
        n_list = tuple(self.cfg.eval.n)
        rng = np.random.default_rng(self.cfg.eval.random_baseline_seed)
        random_table = rng.normal(size=(split.num_entities, m.d))
        random_metrics = ranking_metrics(random_table, split, "test", n_list)
        full_nnz = self._train_adjacency(split).nnz
        for ratio in self.cfg.rewire.retention_ratio:
            rdir = ratio_dir(ratio)
            rw, plan = self.load_rewired(rdir)
            p = self.load_placeholders(rdir, plan, rw)
            tuned = self.load_codebook(f"{rdir}/codebook.bin")
            t0 = time.perf_counter()
            table = assemble_inference_table(tuned, s, plan, rw, p, m.num_layers)
            t_infer = time.perf_counter() - t0
            t0 = time.perf_counter()
            metrics = ranking_metrics(table, split, "test", n_list)
            t_rank = time.perf_counter() - t0
            before = ranking_metrics(
                assemble_inference_table(pre, s, plan, rw, p, m.num_layers), split, "test", n_list
            )
            storage = storage_bytes(m.c, m.d, m.b, p.r, split.num_entities, plan.m)
            sub_nnz = retained_operator(rw, plan.retained).nnz
            report = MetricsReport(
                dataset=self.cfg.data.name,
                config_hash=self.config_hash,
                storage_bytes=storage.as_dict(),
                macs_per_layer=count_macs(rw.adjacency, m.d, 1),
                metrics=metrics,
                timing={"inference_table_s": t_infer, "ranking_s": t_rank},
                extra={
                    "retention_ratio": ratio,
                    "retained": plan.m,
                    "num_entities": split.num_entities,
                    "nnz": rw.adjacency.nnz,
                    "nnz_full_graph": full_nnz,
                    "macs_per_layer_full_graph": count_macs(full_nnz, m.d, 1),
                    "macs_per_layer_retained_block": count_macs(sub_nnz, m.d, 1),
                    "unrecovered_rows": int(len(rw.unrecovered)),
                    "metrics_without_finetune": before,
                    "metrics_random_embeddings": random_metrics,
                },
            )
            self.write(f"{rdir}/metrics.json", report.to_json())

    def stage_report(self):
        rows = []
        for ratio in self.cfg.rewire.retention_ratio:
            rel = f"{ratio_dir(ratio)}/metrics.json"
            rep = MetricsReport.from_json(self.read(rel).decode())
            self._check_hash(rel, rep.config_hash)
            row = {
                "retention_ratio": ratio,
                "retained": rep.extra.get("retained"),
                "nnz": rep.extra.get("nnz"),
                "macs_per_layer": rep.macs_per_layer,
                "storage_total_bytes": rep.storage_bytes["total"],
            }
            for n, vals in sorted(rep.metrics.items(), key=lambda kv: int(kv[0])):
                row[f"recall@{n}"] = vals["recall"]
                row[f"ndcg@{n}"] = vals["ndcg"]
            for n, vals in sorted(rep.extra.get("metrics_without_finetune", {}).items(), key=lambda kv: int(kv[0])):
                row[f"ndcg@{n}_without_finetune"] = vals["ndcg"]
            rows.append(row)
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        self.write(REPORT_CSV, buf.getvalue())
        self.write(REPORT_JSON, json.dumps({"config_hash": self.config_hash, "runs": rows}, indent=2) + "\n")
