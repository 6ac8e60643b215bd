"""Command-line entry point: ``vogue {train,evaluate,predict,corrupt}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .data import Example, IngestError, Mention, Reference, load_dataset
from .evaluate import CompatibilityError, evaluate, predict as predict_examples
from .grammar import CorruptionImpossible, GrammarError, corrupt, execute, load_kg, parse_lf
from .synth import answer_text
from .text import gazetteer_spans, tokenize
from .trainer import TrainConfig, TrainingAborted, train

log = logging.getLogger("vogue")

LOG_LEVELS = {"error": logging.ERROR, "warning": logging.WARNING, "info": logging.INFO,
              "debug": logging.DEBUG}

# config-file keys that are not TrainConfig fields
RUN_KEYS = {"data", "kg", "checkpoint", "out", "question_only", "beam_width", "question",
            "logical_form", "answer"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def read_config(path: str | Path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment. Values are parsed as JSON when possible."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="vogue", description=__doc__)
    p.add_argument("command", choices=["train", "evaluate", "predict", "corrupt"])
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--kg")
    p.add_argument("--checkpoint")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--no-cross-attention", action="store_true", default=None)
    p.add_argument("--no-multitask", action="store_true", default=None)
    p.add_argument("--question-only", action="store_true", default=None)
    p.add_argument("--beam-width", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--dim", type=int, dest="d")
    p.add_argument("--question")
    p.add_argument("--logical-form")
    p.add_argument("--answer")
    return p


def resolve(argv) -> dict:
    """CLI flags override the config file, which overrides built-in defaults."""
    args = vars(build_parser().parse_args(argv))
    settings = read_config(args["config"]) if args.get("config") else {}
    settings.update({k: v for k, v in args.items() if v is not None and k != "config"})
    unknown = set(settings) - RUN_KEYS - set(TrainConfig.__dataclass_fields__) - {"command"}
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cmd = settings["command"]
    if cmd == "train" and settings.get("beam_width") is not None:
        raise UsageError("--beam-width is only valid with evaluate or predict")
    if cmd == "train" and settings.get("question_only"):
        raise UsageError("--question-only is only valid with evaluate or predict")
    if cmd in ("train", "evaluate", "corrupt") and not settings.get("data"):
        raise UsageError(f"{cmd} needs --data")
    if cmd in ("train", "evaluate", "predict") and not settings.get("checkpoint"):
        raise UsageError(f"{cmd} needs --checkpoint")
    if cmd == "predict" and not settings.get("question"):
        raise UsageError("predict needs --question")
    if settings.get("beam_width") is not None and settings["beam_width"] < 1:
        raise UsageError("--beam-width must be >= 1")
    return settings


def train_config(settings: dict) -> TrainConfig:
    fields = {k: v for k, v in settings.items() if k in TrainConfig.__dataclass_fields__}
    return TrainConfig.desk(**fields)


def _kg(settings):
    return load_kg(settings["kg"]) if settings.get("kg") else None


def _write(out: str | None, text: str) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def run_train(settings: dict) -> int:
    cfg = train_config(settings)
    data = load_dataset(settings["data"], kg=_kg(settings))
    ckpt = Path(settings["checkpoint"])
    stream = open(settings["out"], "w", encoding="utf-8") if settings.get("out") else sys.stdout
    best = [float("inf")]

    def on_epoch(stats, model):
        stream.write(json.dumps(stats.to_dict()) + "\n")
        stream.flush()
        if stats.dev_ppl < best[0]:
            best[0] = stats.dev_ppl
            checkpoint.save(ckpt.with_name(ckpt.name + ".best"), model, cfg.seed, stats.epoch,
                            {"train_config": cfg.to_dict()})

    try:
        result = train(data, cfg, on_epoch=on_epoch)
    finally:
        if stream is not sys.stdout:
            stream.close()
    checkpoint.save(ckpt, result.model, cfg.seed, len(result.stats),
                    {"train_config": cfg.to_dict()})
    return 0


def _mode(settings) -> str:
    return "question" if settings.get("question_only") else "auto"


def run_evaluate(settings: dict) -> int:
    model, manifest = checkpoint.load(settings["checkpoint"])
    data = load_dataset(settings["data"], kg=_kg(settings))
    report = evaluate(model, data, mode=_mode(settings), beam_width=settings.get("beam_width"),
                      seed=settings.get("seed", manifest["seed"]))
    text = json.dumps(report.to_json(), indent=1) + "\n"
    if settings.get("out"):
        Path(settings["out"]).write_text(text, encoding="utf-8")
    c = report.corpus
    for key in ("bleu1", "bleu2", "bleu3", "bleu4", "meteor", "threshold_f1", "exact_match"):
        print(f"{key}\t{c[key]:.4f}\t{100 * c[key]:.2f}")
    print(f"perplexity\t{c['perplexity']:.4f}")
    return 0


def run_predict(settings: dict) -> int:
    model, _ = checkpoint.load(settings["checkpoint"])
    kg = _kg(settings)
    question = settings["question"]
    lf = parse_lf(settings["logical_form"]) if settings.get("logical_form") else None
    tokens = tokenize(question)
    if kg is not None:
        labels = kg.entities
    elif lf is not None:
        labels = [r.name for r in lf.leaves() if r.role == "entity"]
    else:
        labels = []
    mentions = [Mention(" ".join(tokens[s.start:s.end]), s.start, s.end)
                for s in gazetteer_spans(tokens, labels)]
    answer = settings.get("answer")
    if answer is None:
        answer = answer_text(execute(lf, kg)) if lf is not None and kg is not None else "[ANS]"
    answer = str(answer)
    # the decoder needs one reference to frame the teacher-forced pass; it is not scored
    refs = [Reference("")]
    if lf is None:
        # without a logical form the record carries a placeholder one and skips the gate
        ex = Example(question, parse_lf("count(find(_, _))"), answer, mentions, refs)
        mode = "question"
    else:
        ex = Example(question, lf, answer, mentions, refs)
        mode = _mode(settings)
    preds, _, _ = predict_examples(model, [ex], mode=mode, beam_width=settings.get("beam_width"))
    print(json.dumps({"verbalization": preds[0].text, "use_hybrid": bool(preds[0].use_hybrid)}))
    return 0


def run_corrupt(settings: dict) -> int:
    data = load_dataset(settings["data"], kg=_kg(settings))
    rng = np.random.default_rng(settings.get("seed", 0))
    pool = [ex.logical_form for ex in data]
    lines, skipped = [], 0
    for ex in data:
        try:
            neg = corrupt(ex.logical_form, pool, rng)
        except CorruptionImpossible as e:
            skipped += 1
            log.info("skipping: %s", e)
            continue
        rec = ex.to_json()
        rec["logical_form"] = neg.surface
        rec["label"] = 0
        lines.append(json.dumps(rec) + "\n")
    if skipped:
        log.warning("skipped %d record(s) with no possible corruption", skipped)
    _write(settings.get("out"), "".join(lines))
    return 0


COMMANDS = {"train": run_train, "evaluate": run_evaluate, "predict": run_predict,
            "corrupt": run_corrupt}


def _fail(kind: str, exc, code: int) -> int:
    msg = " ".join(str(exc).split())
    print(f"vogue: error: {kind}: {msg}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    level = os.environ.get("VOGUE_LOG", "warning").lower()
    if level not in LOG_LEVELS:
        return _fail("usage", f"VOGUE_LOG must be one of {', '.join(LOG_LEVELS)}", 2)
    logging.basicConfig(level=LOG_LEVELS[level], format="%(levelname)s %(name)s: %(message)s")
    log.setLevel(LOG_LEVELS[level])
    try:
        settings = resolve(sys.argv[1:] if argv is None else argv)
        return COMMANDS[settings["command"]](settings)
    except UsageError as e:
        return _fail("usage", e, 2)
    except FileNotFoundError as e:
        return _fail("missing-file", f"{e.filename}", 1)
    except IngestError as e:
        return _fail("ingest", e, 1)
    except GrammarError as e:
        return _fail("parse", e, 1)
    except checkpoint.CheckpointError as e:
        return _fail("checkpoint", e, 1)
    except CompatibilityError as e:
        return _fail("compatibility", e, 1)
    except TrainingAborted as e:
        return _fail("training-aborted", e, 1)
    except (ValueError, OSError) as e:
        return _fail("invalid", e, 1)


if __name__ == "__main__":
    sys.exit(main())
