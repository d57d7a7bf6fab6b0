"""Experiment runner: dataset generation, model training, batched
sessions across semantic variants, rendering, and report emission.

Configuration is INI-style (sections of key=value); command-line flags
override file values, which override built-in defaults. Every command
persists the resolved configuration next to its outputs so runs are
reproducible from the output directory alone. The SEMCOM_OUT environment
variable supplies the default output root.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import scenegen
from .attention import ClassLabel, TextPrompt
from .codec import compression_rate
from .diffusion import (
    DenoiserTrainConfig,
    LearnedDenoiser,
    ZeroDenoiser,
    make_schedule,
    train_denoiser,
)
from .errors import IoFailure, ModelMissing, SemcomError
from .evaltasks import build_report, evaluate_reconstruction
from .imgproc import canny_edges, to_u8, write_raster
from .learner import (
    TrainConfig,
    checkpoint_load,
    checkpoint_save,
    presence_labels,
    train_classifier,
)
from .protocol import ModelBundle, SessionConfig, SessionTranscript, run_session

DEFAULTS = {
    "dataset": {
        "n_scenes": "200",
        "seed": "0",
        "width": "64",
        "height": "32",
    },
    "schedule": {
        "t_steps": "200",
        "beta_start": "1e-4",
        "beta_end": "0.02",
    },
    "training": {
        "classifier_lr": "3e-3",
        "classifier_epochs": "60",
        "denoiser_lr": "2e-3",
        "denoiser_steps": "2000",
        "denoiser_hidden": "24,24",
        "batch_size": "16",
        "p_drop": "0.5",
        "seed": "0",
    },
    "session": {
        "tau": "0.35",
        "patch_size": "8",
        "blur_sigma": "1.0",
        "sample_seed": "0",
    },
    "run": {
        "variants": "no-attn,all-attn,car-oracle,person-oracle",
        "n_scenes": "50",
        "eval_seed": "5000",
        "sampler": "learned",
    },
}


@dataclass
class Experiment:
    """Typed view over the merged configuration."""

    cfg: configparser.ConfigParser
    out: Path

    def geti(self, section, key) -> int:
        return int(float(self.cfg[section][key]))

    def getf(self, section, key) -> float:
        return float(self.cfg[section][key])

    def gets(self, section, key) -> str:
        return self.cfg[section][key]

    @property
    def generator_config(self) -> scenegen.GeneratorConfig:
        return scenegen.GeneratorConfig(
            width=self.geti("dataset", "width"),
            height=self.geti("dataset", "height"),
        )

    @property
    def schedule(self):
        return make_schedule(
            self.geti("schedule", "t_steps"),
            self.getf("schedule", "beta_start"),
            self.getf("schedule", "beta_end"),
        )

    @property
    def hidden(self) -> tuple:
        return tuple(
            int(c) for c in self.gets("training", "denoiser_hidden").split(",") if c
        )

    def classifier_path(self) -> Path:
        return self.out / "classifier.ckpt"

    def denoiser_path(self) -> Path:
        return self.out / "denoiser.ckpt"

    def persist(self, name="config_used.ini") -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        with open(self.out / name, "w") as f:
            self.cfg.write(f)


def load_experiment(config_path, out, overrides=()) -> Experiment:
    cfg = configparser.ConfigParser()
    cfg.read_dict(DEFAULTS)
    if config_path:
        read = cfg.read(config_path)
        if not read:
            raise IoFailure(f"config file not found: {config_path}")
    for section, key, value in overrides:
        if not cfg.has_section(section):
            cfg.add_section(section)
        cfg[section][key] = str(value)
    out = Path(out or os.environ.get("SEMCOM_OUT", "semcom_out"))
    return Experiment(cfg, out)


def spec_digest(spec: scenegen.SceneSpec) -> str:
    doc = {
        "width": spec.width,
        "height": spec.height,
        "seed": spec.seed,
        "plan": [
            [o.class_id, list(o.center), list(o.half_extents), o.draw_order]
            for o in spec.object_plan
        ],
        "texture_amplitude": spec.texture_amplitude,
        "base_colors": np.asarray(spec.base_colors).tolist(),
    }
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def cmd_gen_data(exp: Experiment) -> Path:
    n = exp.geti("dataset", "n_scenes")
    if n < 1:
        raise IoFailure("dataset.n_scenes must be >= 1")
    seed = exp.geti("dataset", "seed")
    gen_cfg = exp.generator_config
    data_dir = exp.out / "dataset"
    data_dir.mkdir(parents=True, exist_ok=True)
    manifest = data_dir / "manifest.jsonl"
    with open(manifest, "w") as f:
        for i in range(n):
            scene_seed = scenegen.splitmix64(seed, i)
            spec = scenegen.make_scene_spec(scene_seed, gen_cfg)
            bundle = scenegen.generate_scene(spec)
            image_path = data_dir / f"scene_{i:04d}_image.ppm"
            seg_path = data_dir / f"scene_{i:04d}_seg.pgm"
            inst_path = data_dir / f"scene_{i:04d}_inst.pgm"
            write_raster(image_path, to_u8(bundle.image))
            write_raster(seg_path, bundle.seg.astype(np.uint8))
            write_raster(inst_path, bundle.instance_map.astype(np.uint8))
            f.write(
                json.dumps(
                    {
                        "index": i,
                        "seed": scene_seed,
                        "spec_digest": spec_digest(spec),
                        "image": image_path.name,
                        "seg": seg_path.name,
                        "instance": inst_path.name,
                        "class_counts": bundle.class_counts.tolist(),
                    }
                )
                + "\n"
            )
    exp.persist()
    return manifest


def _training_dataset(exp: Experiment):
    bundles = scenegen.sample_dataset(
        exp.geti("dataset", "n_scenes"), exp.geti("dataset", "seed"), exp.generator_config
    )
    triples = []
    for b in bundles:
        gray = b.instance_map / max(int(b.instance_map.max()), 1)
        triples.append((b.image, b.seg, canny_edges(gray).bits))
    return bundles, triples


def cmd_train(exp: Experiment, which: str, resume: str | None = None) -> Path:
    exp.out.mkdir(parents=True, exist_ok=True)
    log_path = exp.out / f"{which}_train.log"
    bundles, triples = _training_dataset(exp)
    if which == "classifier":
        cfg = TrainConfig(
            lr=exp.getf("training", "classifier_lr"),
            epochs=exp.geti("training", "classifier_epochs"),
            batch_size=exp.geti("training", "batch_size"),
            seed=exp.geti("training", "seed"),
        )
        model = train_classifier(bundles, presence_labels(bundles, scenegen.K_CLASSES), cfg)
        path = exp.classifier_path()
        checkpoint_save(model.net, path)
        with open(log_path, "w") as f:
            if model.val_ap is not None:
                f.write("val_ap " + " ".join(f"{v:.4f}" for v in model.val_ap) + "\n")
    elif which == "denoiser":
        cfg = DenoiserTrainConfig(
            lr=exp.getf("training", "denoiser_lr"),
            steps=exp.geti("training", "denoiser_steps"),
            batch_size=exp.geti("training", "batch_size"),
            p_drop=exp.getf("training", "p_drop"),
            seed=exp.geti("training", "seed"),
            hidden=exp.hidden,
        )
        lines = []
        init_path = Path(resume) if resume else None
        model = train_denoiser(
            triples,
            exp.schedule,
            scenegen.K_CLASSES,
            cfg,
            log=lambda s, l: lines.append(f"{s} {l:.6f}"),
            init_from=init_path,
        )
        path = exp.denoiser_path()
        checkpoint_save(model.net, path)
        log_path.write_text("\n".join(lines) + "\n")
    else:
        raise IoFailure(f"unknown training target {which!r}")
    exp.persist()
    return path


VARIANT_CLASS_SETS = {
    "car": (scenegen.CAR,),
    "person": (scenegen.PERSON,),
    "car-person": (scenegen.CAR, scenegen.PERSON),
}

_PROMPTS = {
    (scenegen.CAR,): "cars on the street",
    (scenegen.PERSON,): "I am interested in people on the street.",
    (scenegen.CAR, scenegen.PERSON): "cars and people",
}


def parse_variant(name: str):
    """Variant name -> (attention_mode, scripted feedback list)."""
    if name == "no-attn":
        return "oracle", []
    if name == "all-attn":
        return "all", [TextPrompt("everything")]
    for prefix, classes in VARIANT_CLASS_SETS.items():
        if name == f"{prefix}-cam":
            fb = ClassLabel(classes[0]) if len(classes) == 1 else TextPrompt(_PROMPTS[classes])
            return "cam", [fb]
        if name == f"{prefix}-oracle":
            fb = ClassLabel(classes[0]) if len(classes) == 1 else TextPrompt(_PROMPTS[classes])
            return "oracle", [fb]
        if name == f"{prefix}-prompt":
            return "cam", [TextPrompt(_PROMPTS[classes])]
    raise IoFailure(f"unknown variant {name!r}")


def load_models(exp: Experiment, need_classifier: bool) -> ModelBundle:
    sched = exp.schedule
    sampler = exp.gets("run", "sampler")
    if sampler == "zero":
        denoiser = ZeroDenoiser()
    else:
        path = exp.denoiser_path()
        if not path.exists():
            raise ModelMissing(f"denoiser checkpoint missing: {path}")
        denoiser = LearnedDenoiser(scenegen.K_CLASSES, sched, hidden=exp.hidden)
        checkpoint_load(denoiser.net, path)
    classifier = None
    if need_classifier:
        cpath = exp.classifier_path()
        if not cpath.exists():
            raise ModelMissing(f"classifier checkpoint missing: {cpath}")
        from .learner import ClassifierModel, TinyNet, classifier_arch

        net = TinyNet(classifier_arch(scenegen.K_CLASSES))
        checkpoint_load(net, cpath)
        classifier = ClassifierModel(net=net, k_classes=scenegen.K_CLASSES)
    return ModelBundle(sched=sched, denoiser=denoiser, classifier=classifier)


def cmd_run(exp: Experiment) -> Path:
    variant_names = [v for v in exp.gets("run", "variants").split(",") if v]
    if not variant_names:
        raise IoFailure("run.variants must list at least one variant")
    variants = {name: parse_variant(name) for name in variant_names}
    models = load_models(exp, any(mode == "cam" for mode, _ in variants.values()))

    n = exp.geti("run", "n_scenes")
    eval_seed = exp.geti("run", "eval_seed")
    scenes = scenegen.sample_dataset(n, eval_seed, exp.generator_config)

    tdir = exp.out / "transcripts"
    evaluations = {}
    for name, (mode, feedbacks) in sorted(variants.items()):
        vdir = tdir / name
        vdir.mkdir(parents=True, exist_ok=True)
        evaluations[name] = []
        for i, scene in enumerate(scenes):
            config = SessionConfig(
                tau=exp.getf("session", "tau"),
                patch_size=exp.geti("session", "patch_size"),
                attention_mode=mode,
                blur_sigma=exp.getf("session", "blur_sigma"),
                sample_seed=exp.geti("session", "sample_seed") + i,
            )
            transcript = run_session(
                scene,
                list(feedbacks),
                models,
                config,
                variant=name,
                scene_seed=scenegen.splitmix64(eval_seed, i),
            )
            (vdir / f"scene_{i:04d}.jsonl").write_text(transcript.to_jsonl())
            evaluations[name].append(_evaluate_transcript(transcript))
    report = build_report(evaluations)
    (exp.out / "report.txt").write_text(report.as_text() + "\n")
    (exp.out / "report.tsv").write_text(report.as_tsv() + "\n")
    exp.persist()
    return exp.out / "report.txt"


def _evaluate_transcript(transcript: SessionTranscript):
    return evaluate_reconstruction(
        transcript.final_reconstruction(),
        transcript.gt_objects,
        transcript.gt_counts,
        cr=compression_rate(transcript.ledger),
    )


def cmd_report(exp: Experiment, transcripts_dir=None) -> Path:
    tdir = Path(transcripts_dir) if transcripts_dir else exp.out / "transcripts"
    if not tdir.is_dir():
        raise IoFailure(f"transcript directory missing: {tdir}")
    evaluations = {}
    for vdir in sorted(p for p in tdir.iterdir() if p.is_dir()):
        evaluations[vdir.name] = [
            _evaluate_transcript(SessionTranscript.from_jsonl(p.read_text()))
            for p in sorted(vdir.glob("*.jsonl"))
        ]
    report = build_report(evaluations)
    (exp.out / "report.txt").write_text(report.as_text() + "\n")
    (exp.out / "report.tsv").write_text(report.as_tsv() + "\n")
    return exp.out / "report.txt"


def cmd_render(exp: Experiment, transcript_path) -> list:
    path = Path(transcript_path)
    if not path.exists():
        raise IoFailure(f"transcript missing: {path}")
    transcript = SessionTranscript.from_jsonl(path.read_text())
    exp.out.mkdir(parents=True, exist_ok=True)
    written = []
    for rnd in transcript.rounds():
        out_path = exp.out / f"{path.stem}_round{rnd}.ppm"
        write_raster(out_path, to_u8(transcript.reconstructions[rnd]))
        written.append(out_path)
    return written


def _parse_overrides(pairs):
    out = []
    for pair in pairs or ():
        key, _, value = pair.partition("=")
        section, _, name = key.partition(".")
        if not name or not value:
            raise IoFailure(f"override must look like section.key=value, got {pair!r}")
        out.append((section, name, value))
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semcom",
        description="task-adaptive semantic communication experiments",
    )
    parser.add_argument("--config", help="INI config file")
    parser.add_argument("--out", help="output directory (default $SEMCOM_OUT)")
    parser.add_argument("--seed", type=int, help="override dataset.seed")
    parser.add_argument(
        "--set",
        action="append",
        metavar="SECTION.KEY=VALUE",
        help="override any config value",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="generate a labeled scene dataset")
    gen.add_argument("--n", type=int, help="override dataset.n_scenes")

    train = sub.add_parser("train", help="train a model")
    train.add_argument("which", choices=["classifier", "denoiser"])
    train.add_argument("--resume", help="checkpoint to continue from")

    sub.add_parser("run", help="run sessions for every variant and report")

    render = sub.add_parser("render", help="write per-round rasters")
    render.add_argument("transcript")

    report = sub.add_parser("report", help="rebuild the report from transcripts")
    report.add_argument("--transcripts", help="transcript directory")

    serve = sub.add_parser("serve", help="start the HTTP gateway")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8787)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = _parse_overrides(args.set)
    if args.seed is not None:
        overrides.append(("dataset", "seed", args.seed))
    if getattr(args, "n", None) is not None:
        overrides.append(("dataset", "n_scenes", args.n))
    try:
        exp = load_experiment(args.config, args.out, overrides)
        if args.command == "gen-data":
            path = cmd_gen_data(exp)
            print(path)
        elif args.command == "train":
            print(cmd_train(exp, args.which, resume=args.resume))
        elif args.command == "run":
            print(cmd_run(exp))
        elif args.command == "render":
            for p in cmd_render(exp, args.transcript):
                print(p)
        elif args.command == "report":
            print(cmd_report(exp, args.transcripts))
        elif args.command == "serve":
            import uvicorn

            from .gateway import create_app

            uvicorn.run(create_app(exp), host=args.host, port=args.port)
    except SemcomError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
