"""``aggre`` command line: preprocess, train, eval, predict.

Run configuration is a flat ``key = value`` text file (``#`` comments).
Keys are the :class:`RunConfig` fields; unknown keys are rejected and
missing ones take their defaults. Command-line flags override the file.

The preprocessed bundle is an ``.npz`` archive holding ``format``,
``triples``, ``splits``, ``entity_labels``, ``relation_labels``,
``duplicates``, ``cross_split_duplicates`` and the context index arrays
(``ctx_*``) together with ``ctx_splits`` and ``ctx_directed``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .config import TrainConfig
from .errors import AggrEError, ConfigurationError, DataError, StorageError
from .evaluation import FILTERED, RAW, evaluate, known_relations
from .kg_store import ContextIndex, KnowledgeGraph, Vocab, build_context_index, load_directory
from .model import aggregate, relation_logits
from .trainer import load_checkpoint, train, write_vocabs

logger = logging.getLogger("aggre")

BUNDLE_FORMAT = "aggre-bundle-1"
_CTX_FIELDS = ("entity_ctx_offsets", "entity_ctx_rel", "entity_ctx_ent", "entity_ctx_src",
               "relation_ctx_offsets", "relation_ctx_head", "relation_ctx_tail", "relation_ctx_src")


@dataclass
class RunConfig(TrainConfig):
    data_dir: Optional[str] = None
    bundle: Optional[str] = None
    out_dir: str = "runs/aggre"
    train_file: str = "train.txt"
    valid_file: str = "valid.txt"
    test_file: str = "test.txt"
    eval_mode: str = RAW
    context_splits: str = "train"
    directed: bool = False
    threads: Optional[int] = None

    def validate(self):
        super().validate()
        if self.eval_mode not in (RAW, FILTERED):
            raise ConfigurationError(f"eval_mode must be raw or filtered, not {self.eval_mode!r}")
        if self.context_splits not in ("train", "train+valid"):
            raise ConfigurationError("context_splits must be 'train' or 'train+valid'")

    @property
    def context_split_names(self):
        return tuple(self.context_splits.split("+"))

    def train_config(self) -> TrainConfig:
        names = TrainConfig.field_names()
        return TrainConfig(**{k: v for k, v in asdict(self).items() if k in names})

    def dump(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            lines.append(f"{f.name} = {'none' if value is None else value}")
        return "\n".join(lines) + "\n"


def _convert(name, raw, default):
    text = raw.strip()
    if text.lower() == "none":
        return None
    kind = type(default) if default is not None else None
    if name in ("neighbor_cap", "patience", "threads"):
        kind = int
    elif name in ("data_dir", "bundle"):
        kind = str
    try:
        if kind is bool:
            if text.lower() in ("true", "1", "yes", "on"):
                return True
            if text.lower() in ("false", "0", "no", "off"):
                return False
            raise ValueError(text)
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigurationError(f"bad value for {name}: {raw!r}") from None
    return text


def parse_run_config(text: str, **overrides) -> RunConfig:
    defaults = {f.name: f.default for f in fields(RunConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {lineno}: expected key = value")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in defaults:
            raise ConfigurationError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw, defaults[key])
    for key, value in overrides.items():
        if key not in defaults:
            raise ConfigurationError(f"unknown key {key!r}")
        if value is not None:
            values[key] = value
    return RunConfig(**values)


def load_run_config(path=None, **overrides) -> RunConfig:
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_run_config(text, **overrides)


# bundle --------------------------------------------------------------------

def save_bundle(path, kg: KnowledgeGraph, ctx: ContextIndex, ctx_splits=("train",)):
    arrays = {
        "format": np.array(BUNDLE_FORMAT),
        "triples": kg.triples,
        "splits": kg.splits,
        "entity_labels": np.array(kg.entity_vocab.labels, dtype=str),
        "relation_labels": np.array(kg.relation_vocab.labels, dtype=str),
        "duplicates": np.array(kg.duplicates),
        "cross_split_duplicates": np.array(kg.cross_split_duplicates),
        "ctx_splits": np.array("+".join(ctx_splits)),
        "ctx_directed": np.array(ctx.directed),
    }
    for name in _CTX_FIELDS:
        arrays["ctx_" + name] = getattr(ctx, name)
    try:
        with open(path, "wb") as fh:
            np.savez_compressed(fh, **arrays)
    except OSError as exc:
        raise StorageError(f"cannot write bundle {path}: {exc}") from exc


def load_bundle(path):
    """Returns ``(kg, ctx, ctx_splits)``."""
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read bundle {path}: {exc}") from exc
    with data:
        if "format" not in data or str(data["format"]) != BUNDLE_FORMAT:
            raise DataError(f"{path} is not an {BUNDLE_FORMAT} bundle")
        kg = KnowledgeGraph(data["triples"], data["splits"],
                            Vocab(data["entity_labels"].tolist()),
                            Vocab(data["relation_labels"].tolist()),
                            duplicates=int(data["duplicates"]),
                            cross_split_duplicates=int(data["cross_split_duplicates"]))
        ctx = ContextIndex(kg.num_entities, kg.num_relations,
                           *(data["ctx_" + name] for name in _CTX_FIELDS),
                           directed=bool(data["ctx_directed"]))
        return kg, ctx, tuple(str(data["ctx_splits"]).split("+"))


def load_graph(cfg: RunConfig, directed=None):
    """Graph and context index per ``cfg`` (bundle preferred over data_dir)."""
    directed = cfg.directed if directed is None else directed
    splits = cfg.context_split_names
    if cfg.bundle:
        kg, ctx, ctx_splits = load_bundle(cfg.bundle)
        if ctx_splits != splits or ctx.directed != directed:
            ctx = build_context_index(kg, splits, directed=directed)
        return kg, ctx
    if not cfg.data_dir:
        raise ConfigurationError("either bundle or data_dir is required")
    kg = load_directory(cfg.data_dir, (cfg.train_file, cfg.valid_file, cfg.test_file))
    return kg, build_context_index(kg, splits, directed=directed)


def _summary(kg: KnowledgeGraph, ctx: ContextIndex) -> str:
    n = [len(kg.split_ids(s)) for s in ("train", "valid", "test")]
    return (f"entities {kg.num_entities}  relations {kg.num_relations}  "
            f"train {n[0]}  valid {n[1]}  test {n[2]}  duplicates {kg.duplicates}  "
            f"cross-split duplicates {kg.cross_split_duplicates}  "
            f"entity-context pairs {ctx.num_entity_pairs}  "
            f"relation-context pairs {ctx.num_relation_pairs}")


# commands ------------------------------------------------------------------

def cmd_preprocess(cfg: RunConfig, out_bundle):
    kg = load_directory(cfg.data_dir, (cfg.train_file, cfg.valid_file, cfg.test_file))
    ctx = build_context_index(kg, cfg.context_split_names, directed=cfg.directed)
    save_bundle(out_bundle, kg, ctx, cfg.context_split_names)
    print(_summary(kg, ctx))
    return kg, ctx


def cmd_train(cfg: RunConfig):
    kg, ctx = load_graph(cfg)
    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.txt").write_text(cfg.dump(), encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write to {out}: {exc}") from exc
    known = known_relations(kg.triples) if cfg.eval_mode == FILTERED else None
    result = train(kg, ctx, cfg.train_config(), out_dir=out, eval_mode=cfg.eval_mode, known=known)
    for name in ("best.ckpt", "last.ckpt"):
        write_vocabs(out / name, kg.entity_vocab, kg.relation_vocab)
    print(f"trained {len(result.log)} epochs; best epoch {result.best_epoch}; "
          f"checkpoint {out / 'best.ckpt'}")
    return result


def _trace_for(cfg: RunConfig, checkpoint):
    ckpt = load_checkpoint(checkpoint)
    kg, _ = load_graph(cfg, directed=False)
    directed = ckpt.state.relation_table.shape[0] == 2 * kg.num_relations
    _, ctx = load_graph(cfg, directed=directed)
    if ckpt.state.entity_table.shape[0] != kg.num_entities:
        raise DataError("checkpoint does not match the graph vocabulary")
    state = ckpt.state.astype(np.float64) if cfg.wide_precision else ckpt.state
    return kg, ckpt, aggregate(state, ctx, ckpt.num_layers, strict=cfg.strict_determinism)


def cmd_eval(cfg: RunConfig, checkpoint, split="test", report_path=None, per_query=False):
    kg, ckpt, trace = _trace_for(cfg, checkpoint)
    known = known_relations(kg.triples) if cfg.eval_mode == FILTERED else None
    report = evaluate(trace, kg.split_triples(split), mode=cfg.eval_mode, known=known)
    report.extra.update(split=split, num_layers=ckpt.num_layers, context_splits=cfg.context_splits)
    if report_path is not None:
        report_path = Path(report_path)
        try:
            report_path.write_text(
                report.to_json(per_query=per_query, config=asdict(cfg),
                               labels=(kg.entity_vocab, kg.relation_vocab)), encoding="utf-8")
            report_path.with_suffix(".txt").write_text(report.table(dataset=split) + "\n",
                                                       encoding="utf-8")
        except OSError as exc:
            raise StorageError(f"cannot write report {report_path}: {exc}") from exc
    print(report.table(dataset=split))
    return report


def predict_top_k(trace, kg: KnowledgeGraph, head: str, tail: str, k=3):
    """Top-``k`` ``(relation label, score)``; ties broken by label order."""
    h, t = kg.entity_vocab.id(head), kg.entity_vocab.id(tail)
    scores = relation_logits(trace, [(h, t)], kg.num_relations)[0]
    labels = kg.relation_vocab.labels
    order = sorted(range(len(labels)), key=lambda j: (-scores[j], labels[j]))
    return [(labels[j], float(scores[j])) for j in order[:k]]


def cmd_predict(cfg: RunConfig, checkpoint, head, tail, k=3):
    kg, _, trace = _trace_for(cfg, checkpoint)
    ranked = predict_top_k(trace, kg, head, tail, k)
    for label, score in ranked:
        print(f"{label}\t{score:.6f}")
    return ranked


# argument parsing ----------------------------------------------------------

_FLAG_TO_KEY = {
    "data_dir": "data_dir", "bundle": "bundle", "seed": "seed", "layers": "num_layers",
    "dim": "dim", "lr": "learning_rate", "l2": "l2_lambda", "batch_size": "batch_size",
    "epochs": "max_epochs", "eval_mode": "eval_mode", "threads": "threads",
    "context": "context_splits",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value run configuration file")
    common.add_argument("--data-dir", help="directory with train/valid/test TSV files")
    common.add_argument("--bundle", help="preprocessed bundle (.npz)")
    common.add_argument("--seed", type=int)
    common.add_argument("--layers", type=int, help="number of aggregation layers L")
    common.add_argument("--dim", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--l2", type=float)
    common.add_argument("--batch-size", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--eval-mode", choices=[RAW, FILTERED])
    common.add_argument("--context", choices=["train", "train+valid"],
                        help="splits feeding entity/relation contexts")
    common.add_argument("--exclude-self", action="store_true", default=None,
                        help="drop each batch triple's own context pairs during training")
    common.add_argument("--directed", action="store_true", default=None,
                        help="separate relation slots for incoming context pairs")
    common.add_argument("--strict", action="store_true", default=None,
                        help="sequential reductions for bitwise reproducibility")
    common.add_argument("--threads", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="aggre", description="AggrE relation prediction")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("preprocess", parents=[common], help="parse TSV files into a bundle")
    p.add_argument("--out", required=True, help="bundle path to write")
    p = sub.add_parser("train", parents=[common], help="train and checkpoint")
    p.add_argument("--out", help="output directory")
    p = sub.add_parser("eval", parents=[common], help="rank relations on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=["train", "valid", "test"])
    p.add_argument("--out", help="JSON report path (a .txt table is written alongside)")
    p.add_argument("--per-query", action="store_true")
    p = sub.add_parser("predict", parents=[common], help="top-k relations for an entity pair")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("head")
    p.add_argument("tail")
    p.add_argument("-k", type=int, default=3)
    return parser


def config_from_args(args) -> RunConfig:
    overrides = {key: getattr(args, flag) for flag, key in _FLAG_TO_KEY.items()}
    overrides["exclude_self"] = args.exclude_self
    overrides["directed"] = args.directed
    overrides["strict_determinism"] = args.strict
    if args.command == "train" and args.out:
        overrides["out_dir"] = args.out
    return load_run_config(args.config, **overrides)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=cfg.threads):
            if args.command == "preprocess":
                if not cfg.data_dir:
                    raise ConfigurationError("preprocess needs --data-dir")
                cmd_preprocess(cfg, args.out)
            elif args.command == "train":
                cmd_train(cfg)
            elif args.command == "eval":
                cmd_eval(cfg, args.checkpoint, args.split, args.out, args.per_query)
            else:
                cmd_predict(cfg, args.checkpoint, args.head, args.tail, args.k)
    except AggrEError as exc:
        print(f"aggre: error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
