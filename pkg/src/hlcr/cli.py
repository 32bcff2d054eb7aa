"""Command line interface: ``hlcr generate|train|fed-train|predict|evaluate``.

Validation problems exit with status 2. Log verbosity comes from the
``HLCR_LOG_LEVEL`` environment variable (default WARNING).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from hlcr import io, metrics
from hlcr.errors import HLCRError, InvalidParameter, InvalidShape
from hlcr.federated import RoundConfig, run_federated
from hlcr.inference import choose_label, predict, train_centralized
from hlcr.model import Entity, Hyperparams, generate_synthetic, split_heldout
from hlcr.rng import derive_rng, describe

log = logging.getLogger("hlcr")


def predict_dataset(ckpt, data, holdout=0.2):
    """Predict every target event of ``data`` with the model in ``ckpt``.

    With ``holdout > 0`` the targets are each entity's held-out tail and the
    label of an unseen entity is chosen from the remaining events; with
    ``holdout == 0`` every event is a target and the whole entity is the
    history. Returns ``(rows, entity_labels)``.
    """
    if ckpt.F != data.feature_dim:
        raise InvalidShape(f"checkpoint has F={ckpt.F} but dataset has F={data.feature_dim}")
    stats = ckpt.stats()
    hp = ckpt.hyperparams
    per_agent = {}
    for (aid, _), k in (ckpt.labels or {}).items():
        per_agent.setdefault(aid, np.zeros(ckpt.K))[k] += 1
    rows, entity_labels = [], {}
    for agent in data.agents:
        for ent in agent.entities:
            n_hold = min(int(np.floor(holdout * ent.n_events)), ent.n_events - 1) if holdout > 0 else 0
            cut = ent.n_events - n_hold
            history = Entity(ent.id, ent.X[:cut], ent.y[:cut])
            first = cut if holdout > 0 else 0
            label = (ckpt.labels or {}).get((agent.id, ent.id))
            if label is None:
                label = choose_label(history, stats, hp, per_agent.get(agent.id), ckpt.counts)
            entity_labels[(agent.id, ent.id)] = label
            if first == ent.n_events:
                continue
            y_hat = np.atleast_1d(predict(ent.X[first:], label, stats))
            for n in range(first, ent.n_events):
                rows.append({
                    "agent_id": agent.id,
                    "entity_id": ent.id,
                    "event": n + 1,
                    "label": label + 1,
                    "y": float(ent.y[n]),
                    "y_hat": float(y_hat[n - first]),
                })
    return rows, entity_labels


def _hyperparams(args, T=None):
    return Hyperparams(alpha=args.alpha, beta=args.beta, delta=args.delta, sigma=args.sigma,
                       K=args.K, gamma=getattr(args, "gamma", 0.1), T=args.T if T is None else T,
                       seed=args.seed)


def _load_training_data(args):
    data = io.read_dataset_csv(args.data)
    if args.F is not None and args.F != data.feature_dim:
        raise InvalidShape(f"--F {args.F} does not match the dataset's {data.feature_dim} features")
    return data


def cmd_generate(args):
    hp = _hyperparams(args, T=1)
    if args.N < 1 or args.F < 1:
        raise InvalidParameter("--N and --F must be >= 1")
    data, truth = generate_synthetic(hp, args.N, args.mean_entities, args.mean_events, args.F,
                                     bias=args.bias)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.write_dataset_csv(data, out / "data.csv")
    io.dump_json(io.truth_to_json(truth, data), out / "truth.json")
    io.dump_json({
        "format": "hlcr-dataset",
        "version": io.DATASET_VERSION,
        "F": data.feature_dim,
        "num_agents": data.n_agents,
        "num_entities": data.n_entities,
        "num_events": data.n_events,
        "seed": hp.seed,
        "generator": {
            "K": hp.K, "alpha": hp.alpha, "beta": hp.beta, "delta": hp.delta, "sigma": hp.sigma,
            "mean_entities": args.mean_entities, "mean_events": args.mean_events,
            "features": "standard_normal", "bias": bool(args.bias),
            "rng": describe(hp.seed, "generate"),
        },
        "data": "data.csv",
        "ground_truth": "truth.json",
    }, out / "manifest.json")
    log.info("wrote %d events for %d agents to %s", data.n_events, data.n_agents, out)


def cmd_train(args):
    data = _load_training_data(args)
    hp = _hyperparams(args)
    train, heldout = split_heldout(data, args.holdout)
    res = train_centralized(train, hp, rng=derive_rng(hp.seed, "train"), heldout=heldout)
    for row in res.trace:
        log.info("sweep %(sweep)d: %(label_changes)d changes, held-out MSE %(mse_heldout).4g", row)
    labels = {(a.id, e.id): int(res.labels.z[i][j]) for i, a in enumerate(train.agents)
              for j, e in enumerate(a.entities)}
    ckpt = io.Checkpoint("centralized", hp, hp.T, res.stats.D, res.stats.c,
                         res.labels.global_counts.astype(np.float64), labels,
                         {**describe(hp.seed, "train"), "state": res.rng_state})
    ckpt.save(args.checkpoint)
    if args.trace:
        io.write_rows_csv(res.trace, io.TRAIN_TRACE_COLUMNS, args.trace)


def cmd_fed_train(args):
    data = _load_training_data(args)
    hp = _hyperparams(args)
    rc = RoundConfig(fraction=args.fraction, gamma=args.gamma, T=args.T, seed=args.seed)
    train, heldout = split_heldout(data, args.holdout)
    res = run_federated(train, hp, rc, heldout=heldout, workers=args.workers)
    for row in res.trace:
        log.info("round %(round)d: %(agents_sampled)d agents, held-out MSE %(mse_heldout).4g", row)
    m = res.model
    ckpt = io.Checkpoint("federated", hp, m.round, m.D, m.c, m.counts, None,
                         {**describe(rc.seed, "fed-sample"), "agent_streams": "fed-agent/<round>/<agent_id>"})
    ckpt.save(args.checkpoint)
    if args.trace:
        io.write_rows_csv(res.trace, io.ROUND_METRICS_COLUMNS, args.trace)


def _evaluate(args):
    ckpt = io.Checkpoint.load(args.checkpoint)
    data = io.read_dataset_csv(args.data)
    rows, entity_labels = predict_dataset(ckpt, data, args.holdout)
    return ckpt, data, rows, entity_labels


def cmd_predict(args):
    _, _, rows, _ = _evaluate(args)
    io.write_rows_csv(rows, ["agent_id", "entity_id", "event", "label", "y", "y_hat"], args.out)


def cmd_evaluate(args):
    ckpt, data, rows, entity_labels = _evaluate(args)
    result = {
        "n_events": len(rows),
        "mse": metrics.mse([r["y"] for r in rows], [r["y_hat"] for r in rows]),
    }
    truth_path = args.truth
    if truth_path is None:
        candidate = Path(args.data).with_name("truth.json")
        truth_path = candidate if candidate.exists() else None
    if truth_path is not None:
        truth = io.load_truth_labels(truth_path)
        keys = [key for key in entity_labels if key in truth]
        pred = [entity_labels[key] for key in keys]
        true = [truth[key] for key in keys]
        result["n_entities"] = len(keys)
        result["label_accuracy"] = metrics.best_permutation_accuracy(pred, true, ckpt.K)
        result["adjusted_rand_index"] = metrics.adjusted_rand_index(pred, true)
    else:
        log.warning("no ground truth found; clustering metrics omitted")
    text = json.dumps(result, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _add_model_flags(p, T_default):
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--sigma", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    if T_default is not None:
        p.add_argument("--T", type=int, default=T_default, help="sweeps (train) or rounds (fed-train)")


def build_parser():
    parser = argparse.ArgumentParser(prog="hlcr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset drawn from the generative model")
    _add_model_flags(g, None)
    g.add_argument("--N", type=int, default=128, help="number of agents")
    g.add_argument("--F", type=int, default=5, help="number of features")
    g.add_argument("--mean-entities", type=float, default=4.0)
    g.add_argument("--mean-events", type=float, default=5.0)
    g.add_argument("--bias", action="store_true", help="append a constant-1 feature")
    g.add_argument("--out", required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    for name, func, T_default in (("train", cmd_train, 10), ("fed-train", cmd_fed_train, 30)):
        p = sub.add_parser(name, help=f"{'centralized' if name == 'train' else 'federated'} training")
        _add_model_flags(p, T_default)
        p.add_argument("--data", required=True)
        p.add_argument("--F", type=int, default=None, help="expected feature count (checked)")
        p.add_argument("--holdout", type=float, default=0.2, help="per-entity held-out tail fraction")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--trace", default=None, help="per-iteration CSV")
        if name == "fed-train":
            p.add_argument("--gamma", type=float, default=0.1)
            p.add_argument("--fraction", type=float, default=0.15)
            p.add_argument("--workers", type=int, default=1)
        p.set_defaults(func=func)

    for name, func in (("predict", cmd_predict), ("evaluate", cmd_evaluate)):
        p = sub.add_parser(name)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--holdout", type=float, default=0.2)
        if name == "predict":
            p.add_argument("--out", required=True)
        else:
            p.add_argument("--truth", default=None, help="truth.json (default: next to the data file)")
            p.add_argument("--out", default=None)
        p.set_defaults(func=func)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("HLCR_LOG_LEVEL", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    if getattr(args, "holdout", 0.0) and not 0.0 <= args.holdout < 1.0:
        print(f"hlcr: error: --holdout must lie in [0, 1), got {args.holdout}", file=sys.stderr)
        return 2
    try:
        args.func(args)
    except HLCRError as exc:
        print(f"hlcr: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
