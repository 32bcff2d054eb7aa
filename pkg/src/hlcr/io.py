"""
File formats.

Dataset CSV
    Header ``agent_id,entity_id,f_1,...,f_F,y``. Rows sharing an
    ``(agent_id, entity_id)`` pair are the events of one entity, kept in file
    order; agents and entities are ordered by first appearance.

Checkpoint JSON
    Hyperparameters, per-cluster ``D`` (row-major) and ``c``, label counts,
    1-based training labels (centralized mode only) and the RNG state. ``H`` is
    never stored; it is recomputed from ``D`` on load.

All floats are written with ``repr``, the shortest string that round-trips,
so a load/save cycle is byte-stable.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from hlcr import linalg
from hlcr.errors import CheckpointError, DatasetFormatError
from hlcr.model import Agent, ClusterStats, Entity, HierDataset, Hyperparams

CHECKPOINT_VERSION = 1
DATASET_VERSION = 1


def _fmt(v):
    return repr(float(v))


def write_dataset_csv(data, path):
    F = data.feature_dim
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent_id", "entity_id", *[f"f_{a + 1}" for a in range(F)], "y"])
        for agent in data.agents:
            for ent in agent.entities:
                for x, y in zip(ent.X, ent.y):
                    w.writerow([agent.id, ent.id, *map(_fmt, x), _fmt(y)])


def read_dataset_csv(path):
    """Parse a dataset CSV; ragged rows and non-finite values raise with the line number."""
    groups = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        F = len(header) - 3
        expected = ["agent_id", "entity_id", *[f"f_{a + 1}" for a in range(F)], "y"]
        if F < 1 or [h.strip() for h in header] != expected:
            raise DatasetFormatError(f"{path}:1: header must be agent_id,entity_id,f_1..f_F,y")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != F + 3:
                raise DatasetFormatError(f"{path}:{line}: expected {F + 3} fields, got {len(row)}")
            try:
                vals = [float(v) for v in row[2:]]
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{line}: {exc}") from None
            if not all(math.isfinite(v) for v in vals):
                raise DatasetFormatError(f"{path}:{line}: non-finite value")
            groups.setdefault(row[0], {}).setdefault(row[1], []).append(vals)
    if not groups:
        raise DatasetFormatError(f"{path}: no data rows")
    agents = []
    for aid, ents in groups.items():
        entities = []
        for eid, rows in ents.items():
            arr = np.array(rows, dtype=np.float64)
            entities.append(Entity(eid, arr[:, :F], arr[:, F]))
        agents.append(Agent(aid, entities))
    return HierDataset(F, agents)


def dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def truth_to_json(truth, data):
    return {
        "K": int(truth.w.shape[0]),
        "F": int(truth.w.shape[1]),
        "w": truth.w.tolist(),
        "psi": truth.psi.tolist(),
        "theta": truth.theta.tolist(),
        "labels": {
            a.id: {e.id: int(k) + 1 for e, k in zip(a.entities, zi)}
            for a, zi in zip(data.agents, truth.z)
        },
    }


def load_truth_labels(path):
    """``{(agent_id, entity_id): label}`` with 0-based labels."""
    raw = json.loads(Path(path).read_text())
    return {(a, e): int(k) - 1 for a, ents in raw["labels"].items() for e, k in ents.items()}


@dataclass
class Checkpoint:
    mode: str  # "centralized" or "federated"
    hyperparams: Hyperparams
    index: int  # sweep or round
    D: np.ndarray
    c: np.ndarray
    counts: np.ndarray
    labels: dict | None  # {(agent_id, entity_id): 0-based label}
    rng: dict

    @property
    def K(self):
        return self.D.shape[0]

    @property
    def F(self):
        return self.D.shape[1]

    def stats(self):
        hp = self.hyperparams
        H = np.stack([linalg.invert(d) for d in self.D])
        return ClusterStats(
            self.D.copy(), self.c.copy(), H, np.zeros(self.K), np.zeros(self.K, dtype=np.int64),
            hp.prior_precision, hp.noise_precision,
        )

    def agent_counts(self, agent_id):
        counts = np.zeros(self.K)
        if self.labels:
            for (aid, _), k in self.labels.items():
                if aid == agent_id:
                    counts[k] += 1
        return counts

    def to_json(self):
        labels = None
        if self.labels is not None:
            labels = {}
            for (aid, eid), k in self.labels.items():
                labels.setdefault(aid, {})[eid] = int(k) + 1
        obj = {
            "format": "hlcr-checkpoint",
            "version": CHECKPOINT_VERSION,
            "mode": self.mode,
            "hyperparams": self.hyperparams.to_dict(),
            "K": self.K,
            "F": self.F,
            "index": int(self.index),
            "clusters": [
                {"D": self.D[k].ravel().tolist(), "c": self.c[k].tolist(), "count": float(self.counts[k])}
                for k in range(self.K)
            ],
            "labels": labels,
            "rng": self.rng,
        }
        return json.dumps(obj, indent=1) + "\n"

    @classmethod
    def from_json(cls, text):
        try:
            obj = json.loads(text)
            if obj.get("format") != "hlcr-checkpoint" or obj.get("version") != CHECKPOINT_VERSION:
                raise CheckpointError("not an hlcr checkpoint or unsupported version")
            K, F = int(obj["K"]), int(obj["F"])
            clusters = obj["clusters"]
            if len(clusters) != K:
                raise CheckpointError(f"expected {K} clusters, found {len(clusters)}")
            D = np.array([cl["D"] for cl in clusters], dtype=np.float64).reshape(K, F, F)
            c = np.array([cl["c"] for cl in clusters], dtype=np.float64).reshape(K, F)
            counts = np.array([cl["count"] for cl in clusters], dtype=np.float64)
            labels = None
            if obj["labels"] is not None:
                labels = {(a, e): int(k) - 1 for a, ents in obj["labels"].items() for e, k in ents.items()}
            return cls(obj["mode"], Hyperparams(**obj["hyperparams"]), int(obj["index"]), D, c, counts,
                       labels, obj["rng"])
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, CheckpointError):
                raise
            raise CheckpointError(f"malformed checkpoint: {exc}") from exc

    def save(self, path):
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path):
        return cls.from_json(Path(path).read_text())


def write_rows_csv(rows, columns, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row[c]) if isinstance(row[c], float) else row[c] for c in columns])


TRAIN_TRACE_COLUMNS = ["sweep", "label_changes", "log_marginal", "mse_train", "mse_heldout"]
ROUND_METRICS_COLUMNS = ["round", "mse_train", "mse_heldout", "agents_sampled", "label_changes"]
