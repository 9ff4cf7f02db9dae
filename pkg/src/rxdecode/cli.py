"""Command-line entry point: gen | train-lm | label | extract | ablate | eval.

All experiment subcommands take a JSON config plus a mandatory --seed;
flags override config fields. Paths in the config resolve relative to the
config file. Omitted vocabulary/grammar/distractor paths fall back to the
bundled data. Exit codes: 0 success, 2 config error, 3 data error. The
RXDECODE_THREADS environment variable caps the decode worker pool.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from .decoder import DecoderConfig, decode_topk
from .errors import ConfigError, DataError, RxDecodeError
from .grammar import GrammarSpec, MedicineVocabulary, default_grammar, load_grammar, load_vocabulary
from .lm import NGramModel, save_lm, train_ngram
from .matcher import MatchStrategy, match_line
from .metrics import jaccard_metrics, seg_miou
from .pipeline import extract_documents, train_medicine_lm, train_vanilla_lm, worker_count
from .simulator import SimConfig, dataset_stats, gen_dataset, load_dataset, save_dataset
from .weaklabel import (
    SEGMENTERS,
    IterationConfig,
    OracleSegmenter,
    WeakLabeledDoc,
    iterate,
    save_strong_labels,
)

DATA_DIR = Path(__file__).parent / "data"

ABLATION_AXES = ("alpha", "ngram", "paths", "vocab_fraction", "strategy")


@dataclass
class PipelineConfig:
    vocab_path: Path | None = None
    grammar_path: Path | None = None
    distractor_path: Path | None = None

    sim: SimConfig = field(default_factory=SimConfig)

    lm_order: int = 7
    lm_discount: float = 0.4
    corpus_mode: str = "exhaustive"
    samples_per_entry: int = 5

    med_alpha: float = 0.6
    med_k: int = 1000
    med_beam: int | None = None
    van_alpha: float = 0.3
    van_k: int = 1
    van_beam: int | None = None

    label_k: int = 48
    label_alpha: float = 0.6
    label_lm: str = "medicine"   # medicine | vanilla | none
    iterations: int = 3
    coverage_threshold: float = 0.9
    dedup_iou: float = 0.5
    segmenter: str = "reference"

    strategy: str = "topk_majority"
    edit_threshold: float = 0.85

    ablation_alphas: list = field(default_factory=lambda: [0.0, 0.2, 0.4, 0.6, 1.0])
    ablation_ngrams: list = field(default_factory=lambda: [3, 5, 7, 9])
    ablation_paths: list = field(default_factory=lambda: [1, 10, 100, 1000])
    ablation_vocab_fractions: list = field(default_factory=lambda: [0.25, 0.5, 1.0])

    @classmethod
    def load(cls, path: str | Path | None) -> "PipelineConfig":
        if path is None:
            return cls()
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        cfg = cls()
        base = path.parent
        for key in ("vocab_path", "grammar_path", "distractor_path"):
            if raw.get(key):
                setattr(cfg, key, (base / raw[key]).resolve())
        if "sim" in raw:
            known = {f for f in SimConfig.__dataclass_fields__}
            bad = set(raw["sim"]) - known
            if bad:
                raise ConfigError(f"unknown sim config fields: {sorted(bad)}")
            sim_kwargs = dict(raw["sim"])
            if "confusion_pairs" in sim_kwargs:
                sim_kwargs["confusion_pairs"] = [tuple(p) for p in sim_kwargs["confusion_pairs"]]
            try:
                cfg.sim = SimConfig(**sim_kwargs)
            except TypeError as exc:
                raise ConfigError(f"bad sim config: {exc}") from exc
        flat = {f for f in cls.__dataclass_fields__ if f not in ("sim", "vocab_path", "grammar_path", "distractor_path")}
        for key, value in raw.items():
            if key in ("sim", "vocab_path", "grammar_path", "distractor_path"):
                continue
            if key not in flat:
                raise ConfigError(f"unknown config field: {key}")
            setattr(cfg, key, value)
        if cfg.strategy not in MatchStrategy._KINDS:
            raise ConfigError(f"unknown strategy {cfg.strategy!r}")
        if cfg.segmenter not in SEGMENTERS:
            raise ConfigError(f"unknown segmenter {cfg.segmenter!r}")
        return cfg

    # ---- resolved resources -------------------------------------------------

    def vocabulary(self) -> MedicineVocabulary:
        return load_vocabulary(self.vocab_path or DATA_DIR / "medicines.tsv")

    def grammar(self, vocab: MedicineVocabulary) -> GrammarSpec:
        if self.grammar_path is not None:
            return load_grammar(self.grammar_path, vocab.entries)
        return default_grammar(vocab.entries)

    def distractors(self) -> list[str]:
        path = self.distractor_path or DATA_DIR / "distractors.txt"
        lines = [l for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip()]
        if not lines:
            raise DataError(f"{path}: empty distractor corpus")
        return lines

    def match_strategy(self) -> MatchStrategy:
        return MatchStrategy(self.strategy, edit_threshold=self.edit_threshold)

    def medicine_lm(self, spec: GrammarSpec, order: int | None = None, entries=None) -> NGramModel:
        return train_medicine_lm(spec, order=order or self.lm_order, discount=self.lm_discount,
                                 mode=self.corpus_mode, samples_per_entry=self.samples_per_entry,
                                 seed=self.sim.seed, entries=entries)

    def vanilla_lm(self, order: int | None = None) -> NGramModel:
        return train_vanilla_lm(self.distractors(), order=order or self.lm_order,
                                discount=self.lm_discount)

    def decoder_cfg(self, which: str, lm: NGramModel | None, k: int | None = None,
                    alpha: float | None = None) -> DecoderConfig:
        if which == "medicine":
            k = self.med_k if k is None else k
            alpha = self.med_alpha if alpha is None else alpha
            beam = self.med_beam or max(k, 32)
        else:
            k = self.van_k if k is None else k
            alpha = self.van_alpha if alpha is None else alpha
            beam = self.van_beam or max(k, 32)
        return DecoderConfig(k=k, beam_width=max(beam, k), alpha=alpha, lm=lm)

    def iteration_cfg(self) -> IterationConfig:
        return IterationConfig(iterations=self.iterations, coverage_threshold=self.coverage_threshold,
                               k_label=self.label_k, dedup_iou=self.dedup_iou)


def format_table(headers: list[str], rows: list[list]) -> str:
    cells = [[str(h) for h in headers]] + [[f"{v:.4f}" if isinstance(v, float) else str(v) for v in row]
                                           for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _write_json(path: Path, payload) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, headers: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        writer.writerows(rows)


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------


def cmd_gen(cfg: PipelineConfig, out: Path) -> None:
    vocab = cfg.vocabulary()
    spec = cfg.grammar(vocab)
    train, test = gen_dataset(cfg.sim, vocab, spec, cfg.distractors())
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(train, out / "train.jsonl", inline=cfg.sim.logits_inline)
    save_dataset(test, out / "test.jsonl", inline=cfg.sim.logits_inline)
    stats = {"train": dataset_stats(train), "test": dataset_stats(test)}
    _write_json(out / "dataset_stats.json", stats)
    rows = [[split, s["n_docs"], s["n_writers"], s["mean_medicines_per_doc"],
             s["mean_units_per_doc"]] for split, s in stats.items()]
    print(format_table(["split", "docs", "writers", "medicines/doc", "units/doc"], rows))
    print(f"wrote {out / 'train.jsonl'} and {out / 'test.jsonl'}")


def cmd_train_lm(cfg: PipelineConfig, source: str, text_path: Path | None, out: Path) -> None:
    if source == "grammar":
        vocab = cfg.vocabulary()
        model = cfg.medicine_lm(cfg.grammar(vocab))
        name = "medicine_lm.arpa"
    elif source == "textfile":
        path = text_path or (cfg.distractor_path or DATA_DIR / "distractors.txt")
        lines = [l for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip()]
        model = train_ngram(lines, order=cfg.lm_order, discount=cfg.lm_discount)
        name = "vanilla_lm.arpa"
    else:
        raise ConfigError(f"unknown LM source {source!r}")
    out.mkdir(parents=True, exist_ok=True)
    save_lm(model, out / name)
    entries = {k + 1: sum(len(n.probs) for n in model.tables[k].values()) for k in range(model.order)}
    print(format_table(["order", "entries"], [[k, v] for k, v in entries.items()]))
    print(f"wrote {out / name}")


def _labeling_decoder(cfg: PipelineConfig, spec: GrammarSpec) -> DecoderConfig:
    if cfg.label_lm == "medicine":
        lm = cfg.medicine_lm(spec)
    elif cfg.label_lm == "vanilla":
        lm = cfg.vanilla_lm()
    elif cfg.label_lm == "none":
        lm = None
    else:
        raise ConfigError(f"unknown label_lm {cfg.label_lm!r}")
    alpha = cfg.label_alpha if lm is not None else 0.0
    return DecoderConfig(k=cfg.label_k, beam_width=cfg.label_k, alpha=alpha, lm=lm)


def cmd_label(cfg: PipelineConfig, dataset: Path, out: Path) -> None:
    docs = load_dataset(dataset)
    weak = [WeakLabeledDoc.from_sim(d) for d in docs]
    vocab = cfg.vocabulary()
    spec = cfg.grammar(vocab)
    decoder_cfg = _labeling_decoder(cfg, spec)
    results = iterate(weak, SEGMENTERS[cfg.segmenter], cfg.iteration_cfg(), decoder_cfg)

    rows = []
    payload = []
    for result in results:
        # label quality over the admitted documents only
        pred_boxes = [[b.box for b in s.boxes] for s in result.training_set]
        truth_boxes = [s.doc.medicine_boxes() for s in result.training_set]
        seg = seg_miou(pred_boxes, truth_boxes) if result.training_set else None
        seg_value = seg.mean_iou if seg else 0.0
        stats = result.stats
        rows.append([stats.iteration, stats.admitted, stats.total,
                     stats.admitted_fraction, seg_value, stats.boxes_total])
        payload.append({
            "iteration": stats.iteration,
            "admitted": stats.admitted,
            "total": stats.total,
            "admitted_fraction": stats.admitted_fraction,
            "seg_miou_admitted": seg_value,
            "boxes_total": stats.boxes_total,
            "boxes_by_source": stats.boxes_by_source,
        })
    out.mkdir(parents=True, exist_ok=True)
    save_strong_labels(results[-1].training_set, out / "strong_labels.jsonl")
    _write_json(out / "label_iterations.json", payload)
    _write_csv(out / "label_iterations.csv",
               ["iteration", "admitted", "total", "admitted_fraction", "seg_miou", "boxes_total"],
               rows)
    print(format_table(["iter", "admitted", "total", "fraction", "seg_mIoU", "boxes"], rows))
    print(f"wrote {out / 'strong_labels.jsonl'}")


def _segment_fn(cfg: PipelineConfig, train_dataset: Path | None, spec: GrammarSpec):
    if cfg.segmenter == "oracle":
        return OracleSegmenter().predict
    if cfg.segmenter == "null":
        return SEGMENTERS["null"]().predict
    if train_dataset is None:
        raise ConfigError("segmented mode with the reference segmenter needs --train-dataset "
                          "to run the labeling iterations on")
    train_docs = load_dataset(train_dataset)
    weak = [WeakLabeledDoc.from_sim(d) for d in train_docs]
    results = iterate(weak, SEGMENTERS[cfg.segmenter], cfg.iteration_cfg(),
                      _labeling_decoder(cfg, spec))
    segmenter = results[-1].segmenter
    if segmenter is None:
        raise DataError("labeling finished without a trained segmenter (iterations < 2)")
    return segmenter.predict


def cmd_extract(cfg: PipelineConfig, dataset: Path, mode: str, lm_choice: str,
                train_dataset: Path | None, out: Path) -> dict:
    docs = load_dataset(dataset)
    vocab = cfg.vocabulary()
    spec = cfg.grammar(vocab)
    med_lm = cfg.medicine_lm(spec)
    van_lm = cfg.vanilla_lm()
    chosen = cfg.decoder_cfg("medicine", med_lm) if lm_choice == "medicine" \
        else cfg.decoder_cfg("vanilla", van_lm)
    vanilla = cfg.decoder_cfg("vanilla", van_lm)
    segment_fn = _segment_fn(cfg, train_dataset, spec) if mode == "segmented" else None
    run = extract_documents(docs, mode=mode, chosen_cfg=chosen, vanilla_cfg=vanilla,
                            vocab=vocab, strategy=cfg.match_strategy(), segment_fn=segment_fn)
    out.mkdir(parents=True, exist_ok=True)
    report = run.report.as_dict()
    report["mode"] = mode
    report["lm"] = lm_choice
    report["n_units_chosen_lm"] = run.n_chosen_units
    report["n_units_vanilla_lm"] = run.n_vanilla_units
    _write_json(out / "extract_report.json", report)
    _write_json(out / "predictions.json", {str(k): v for k, v in run.predictions.items()})
    print(format_table(["mode", "lm", "mJI", "mP", "mR", "docs"],
                       [[mode, lm_choice, report["mean_jaccard"], report["mean_precision"],
                         report["mean_recall"], report["n_docs"]]]))
    print(f"wrote {out / 'extract_report.json'}")
    return report


def _ablate_rows(cfg: PipelineConfig, axis: str, docs, vocab, spec) -> tuple[list[str], list[list]]:
    van_lm = cfg.vanilla_lm()
    vanilla = cfg.decoder_cfg("vanilla", van_lm)
    oracle_fn = OracleSegmenter().predict
    strategy = cfg.match_strategy()

    def run(chosen_cfg, strat=None):
        r = extract_documents(docs, mode="segmented", chosen_cfg=chosen_cfg, vanilla_cfg=vanilla,
                              vocab=vocab, strategy=strat or strategy, segment_fn=oracle_fn)
        return r.report

    rows = []
    if axis == "alpha":
        med_lm = cfg.medicine_lm(spec)
        for alpha in cfg.ablation_alphas:
            rep = run(cfg.decoder_cfg("medicine", med_lm, alpha=float(alpha)))
            rows.append([float(alpha), rep.mean_jaccard, rep.mean_precision, rep.mean_recall])
        return ["alpha", "mJI", "mP", "mR"], rows
    if axis == "ngram":
        for order in cfg.ablation_ngrams:
            med_lm = cfg.medicine_lm(spec, order=int(order))
            rep = run(cfg.decoder_cfg("medicine", med_lm))
            rows.append([int(order), rep.mean_jaccard, rep.mean_precision, rep.mean_recall])
        return ["ngram_order", "mJI", "mP", "mR"], rows
    if axis == "vocab_fraction":
        for fraction in cfg.ablation_vocab_fractions:
            n = max(1, int(len(spec.entries) * float(fraction)))
            med_lm = cfg.medicine_lm(spec, entries=spec.entries[:n])
            rep = run(cfg.decoder_cfg("medicine", med_lm))
            rows.append([float(fraction), rep.mean_jaccard, rep.mean_precision, rep.mean_recall])
        return ["vocab_fraction", "mJI", "mP", "mR"], rows
    if axis == "strategy":
        med_lm = cfg.medicine_lm(spec)
        chosen = cfg.decoder_cfg("medicine", med_lm)
        for kind in MatchStrategy._KINDS:
            rep = run(chosen, MatchStrategy(kind, edit_threshold=cfg.edit_threshold))
            rows.append([kind, rep.mean_jaccard, rep.mean_precision, rep.mean_recall])
        return ["strategy", "mJI", "mP", "mR"], rows
    if axis == "paths":
        med_lm = cfg.medicine_lm(spec)
        k_max = max(int(k) for k in cfg.ablation_paths)
        chosen = cfg.decoder_cfg("medicine", med_lm, k=k_max)
        # decode once at the largest k; shorter path lists are prefixes
        decoded = []
        for doc in docs:
            selected = OracleSegmenter().predict(doc)
            from .pipeline import select_units
            chosen_units = select_units(doc, selected)
            lines = []
            for idx, unit in enumerate(doc.units):
                lines.append(decode_topk(unit.logits, chosen if idx in chosen_units else vanilla))
            decoded.append(lines)
        for k in sorted(int(k) for k in cfg.ablation_paths):
            preds = []
            for doc, lines in zip(docs, decoded):
                names = set()
                for paths in lines:
                    pred = match_line(paths[:k], vocab, strategy)
                    if pred.medicine:
                        names.add(pred.medicine)
                preds.append(sorted(names))
            rep = jaccard_metrics(preds, [sorted(d.weak_labels) for d in docs])
            rows.append([k, rep.mean_jaccard, rep.mean_precision, rep.mean_recall])
        return ["paths", "mJI", "mP", "mR"], rows
    raise ConfigError(f"unknown ablation axis {axis!r}; expected one of {ABLATION_AXES}")


def cmd_ablate(cfg: PipelineConfig, dataset: Path, axis: str, out: Path) -> None:
    docs = load_dataset(dataset)
    vocab = cfg.vocabulary()
    spec = cfg.grammar(vocab)
    headers, rows = _ablate_rows(cfg, axis, docs, vocab, spec)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / f"ablate_{axis}.csv", headers, rows)
    print(format_table(headers, rows))
    print(f"wrote {out / f'ablate_{axis}.csv'}")


def cmd_eval(pred_path: Path, dataset: Path, out: Path) -> None:
    docs = load_dataset(dataset)
    try:
        raw = json.loads(Path(pred_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{pred_path}: cannot read predictions: {exc}") from exc
    preds = [raw.get(str(doc.doc_id), []) for doc in docs]
    report = jaccard_metrics(preds, [sorted(d.weak_labels) for d in docs])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "eval_report.json", report.as_dict())
    print(format_table(["mJI", "mP", "mR", "docs"],
                       [[report.mean_jaccard, report.mean_precision, report.mean_recall,
                         report.n_docs]]))


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rxdecode",
                                     description="Medicine-name extraction pipeline over simulated documents.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed_required=True):
        p.add_argument("--config", type=Path, default=None, help="JSON config file")
        p.add_argument("--seed", type=int, required=seed_required, help="experiment seed")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory")

    p_gen = sub.add_parser("gen", help="generate a synthetic dataset")
    common(p_gen)
    p_gen.add_argument("--n-docs", type=int, default=None)
    p_gen.add_argument("--noise", type=float, default=None)

    p_lm = sub.add_parser("train-lm", help="train and save an n-gram LM")
    common(p_lm, seed_required=False)
    p_lm.add_argument("--source", choices=("grammar", "textfile"), default="grammar")
    p_lm.add_argument("--text", type=Path, default=None, help="corpus file for --source textfile")
    p_lm.add_argument("--order", type=int, default=None)

    p_label = sub.add_parser("label", help="run the weak-to-strong labeling iterations")
    common(p_label)
    p_label.add_argument("--dataset", type=Path, required=True)
    p_label.add_argument("--segmenter", choices=tuple(SEGMENTERS), default=None)
    p_label.add_argument("--iterations", type=int, default=None)

    p_ext = sub.add_parser("extract", help="decode, match, and score a dataset")
    common(p_ext)
    p_ext.add_argument("--dataset", type=Path, required=True)
    p_ext.add_argument("--mode", choices=("full_page", "segmented"), default="segmented")
    p_ext.add_argument("--lm", choices=("medicine", "vanilla"), default="medicine")
    p_ext.add_argument("--strategy", choices=MatchStrategy._KINDS, default=None)
    p_ext.add_argument("--segmenter", choices=tuple(SEGMENTERS), default=None)
    p_ext.add_argument("--train-dataset", type=Path, default=None,
                       help="train split for fitting the reference segmenter")

    p_abl = sub.add_parser("ablate", help="sweep one axis and emit plot data")
    common(p_abl)
    p_abl.add_argument("--dataset", type=Path, required=True)
    p_abl.add_argument("--axis", choices=ABLATION_AXES, required=True)
    p_abl.add_argument("--strategy", choices=MatchStrategy._KINDS, default=None)

    p_eval = sub.add_parser("eval", help="score a predictions file against a dataset")
    common(p_eval, seed_required=False)
    p_eval.add_argument("--dataset", type=Path, required=True)
    p_eval.add_argument("--pred", type=Path, required=True)

    return parser


def _apply_overrides(cfg: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    if getattr(args, "seed", None) is not None:
        cfg.sim = replace(cfg.sim, seed=args.seed)
    if getattr(args, "n_docs", None) is not None:
        cfg.sim = replace(cfg.sim, n_docs=args.n_docs)
    if getattr(args, "noise", None) is not None:
        cfg.sim = replace(cfg.sim, noise_sigma=args.noise)
    if getattr(args, "order", None) is not None:
        cfg.lm_order = args.order
    if getattr(args, "strategy", None) is not None:
        cfg.strategy = args.strategy
    if getattr(args, "segmenter", None) is not None:
        cfg.segmenter = args.segmenter
    if getattr(args, "iterations", None) is not None:
        cfg.iterations = args.iterations
    return cfg


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = PipelineConfig.load(args.config)
        cfg = _apply_overrides(cfg, args)
        if args.command == "gen":
            cmd_gen(cfg, args.out)
        elif args.command == "train-lm":
            cmd_train_lm(cfg, args.source, args.text, args.out)
        elif args.command == "label":
            cmd_label(cfg, args.dataset, args.out)
        elif args.command == "extract":
            cmd_extract(cfg, args.dataset, args.mode, args.lm, args.train_dataset, args.out)
        elif args.command == "ablate":
            cmd_ablate(cfg, args.dataset, args.axis, args.out)
        elif args.command == "eval":
            cmd_eval(args.pred, args.dataset, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except RxDecodeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
