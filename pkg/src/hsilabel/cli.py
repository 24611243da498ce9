"""Stage-wise command-line pipeline.

Subcommands ``pseudo``, ``train``, ``eval``, ``render`` and ``pipeline``
wire the preprocessing, pseudo-labeling, training and evaluation stages
end-to-end, driven by a key = value config file with per-key CLI overrides.
"""

from __future__ import annotations

import argparse
import configparser
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from hsilabel import evalreport, mixture, prep, pseudo, synthetic, trainer
from hsilabel.ptf import IGNORE, load_ptf, save_ptf


@dataclass
class PipelineConfig:
    # paths
    cube: str = ""
    wavelengths: str = ""
    gt: str = ""
    scores: str = ""
    out: str = "out"
    # pseudo-label stage
    scales: str = "1,2"
    window: int = 224
    stride: int = 112
    tau: float = 0.01
    # training stage
    epochs: int = 15
    iters_per_epoch: int = 20
    n_per_class: int = 64
    lr0: float = 1e-3
    eta_min: float = 1e-5
    warmup_fraction: float = 0.5
    lambda1: float = 1.0
    lambda2: float = 0.5
    noise_std: float = 0.1
    pca_q: int = 8
    gmm_m: int = 2
    hidden: str = "128,128"
    refine: bool = True
    # synthetic scene
    synthetic: bool = False
    height: int = 64
    width: int = 64
    classes: int = 4
    bands: int = 16
    flip_prob: float = 0.3
    sharpness: float = 5.0
    scene_noise: float = 0.1
    # global
    seed: int = 0
    force: bool = False
    aliases: dict = field(default_factory=dict)

    def scale_list(self) -> list[float]:
        return [float(s) for s in self.scales.split(",") if s.strip()]

    def hidden_list(self) -> list[int]:
        return [int(h) for h in self.hidden.split(",") if h.strip()]

    def train_config(self) -> trainer.TrainConfig:
        return trainer.TrainConfig(
            epochs=self.epochs, iters_per_epoch=self.iters_per_epoch,
            n_per_class=self.n_per_class, lr0=self.lr0, eta_min=self.eta_min,
            warmup_fraction=self.warmup_fraction, lambda1=self.lambda1,
            lambda2=self.lambda2, noise_std=self.noise_std, seed=self.seed,
            pca_q=self.pca_q, gmm_m=self.gmm_m,
            hidden=tuple(self.hidden_list()), refine=self.refine)


_SECTIONS = {
    "paths": ["cube", "wavelengths", "gt", "scores", "out"],
    "pseudo": ["scales", "window", "stride", "tau"],
    "train": ["epochs", "iters_per_epoch", "n_per_class", "lr0", "eta_min",
              "warmup_fraction", "lambda1", "lambda2", "noise_std", "pca_q",
              "gmm_m", "hidden", "refine"],
    "synthetic": ["synthetic", "height", "width", "classes", "bands",
                  "flip_prob", "sharpness", "scene_noise"],
    "run": ["seed", "force"],
}


def load_config(path) -> PipelineConfig:
    cfg = PipelineConfig()
    parser = configparser.ConfigParser()
    parser.optionxform = str
    parser.read(path)
    types = {f.name: f.type for f in fields(PipelineConfig)}
    for section, keys in _SECTIONS.items():
        if not parser.has_section(section):
            continue
        for key in keys:
            if parser.has_option(section, key):
                raw = parser.get(section, key)
                kind = types[key]
                if kind == "bool":
                    setattr(cfg, key, raw.strip().lower() in ("1", "true", "yes", "on"))
                elif kind == "int":
                    setattr(cfg, key, int(raw))
                elif kind == "float":
                    setattr(cfg, key, float(raw))
                else:
                    setattr(cfg, key, raw)
    if parser.has_section("alias"):
        cfg.aliases = dict(parser.items("alias"))
    return cfg


def echo_config(cfg: PipelineConfig, path) -> None:
    """Write the fully-resolved config so the run can be reproduced."""
    lines = []
    for section, keys in _SECTIONS.items():
        lines.append(f"[{section}]")
        for key in keys:
            if key == "force":
                continue  # run mode, not part of the experiment
            lines.append(f"{key} = {getattr(cfg, key)}")
        lines.append("")
    lines.append("[alias]")
    for name in sorted(cfg.aliases):
        lines.append(f"{name} = {cfg.aliases[name]}")
    Path(path).write_text("\n".join(lines) + "\n")


def _seed_rngs(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


class StageError(Exception):
    pass


def _known_aliases(aliases: dict, names: list[str]) -> dict:
    return {k: v for k, v in aliases.items() if k in names}


def _outputs_ready(out: Path, names: list[str]) -> bool:
    return all((out / n).exists() for n in names)


PSEUDO_OUTPUTS = ["probmap.ptf", "pseudo_labels.ptf", "confidence.ptf", "pseudo_preview.png"]
TRAIN_OUTPUTS = ["prediction.ptf", "prediction_probs.ptf", "train_log.csv"]


def _load_scene(cfg: PipelineConfig, out: Path):
    """Cube, ground truth (or None) and vocabulary for the current run."""
    if cfg.synthetic:
        cube = prep.HsiCube(load_ptf(out / "cube.ptf"),
                            prep.load_wavelengths(out / "wavelengths.txt"))
        gt = load_ptf(out / "gt.ptf")
        names = [f"class_{i}" for i in range(cfg.classes)]
        vocab = pseudo.ClassVocabulary(names, _known_aliases(cfg.aliases, names))
        return cube, gt, vocab
    cube = prep.HsiCube(load_ptf(cfg.cube), prep.load_wavelengths(cfg.wavelengths))
    gt = load_ptf(cfg.gt) if cfg.gt and Path(cfg.gt).exists() else None
    vocab = pseudo.load_vocabulary(Path(cfg.scores) / "classes.txt",
                                   Path(cfg.scores) / "aliases.txt")
    if cfg.aliases:
        merged = {**vocab.aliases, **_known_aliases(cfg.aliases, vocab.names)}
        vocab = pseudo.ClassVocabulary(vocab.names, merged)
    return cube, gt, vocab


def cmd_pseudo(cfg: PipelineConfig) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if _outputs_ready(out, PSEUDO_OUTPUTS) and not cfg.force:
        print("[pseudo] outputs exist; skipping (use --force to regenerate)")
        return
    scene_rng, scorer_rng = _seed_rngs(cfg.seed, 2)

    if cfg.synthetic:
        cube, gt = synthetic.make_synthetic_scene(cfg.height, cfg.width, cfg.classes,
                                                  cfg.bands, scene_rng, cfg.scene_noise)
        save_ptf(cube.values, out / "cube.ptf")
        save_ptf(gt, out / "gt.ptf")
        prep.save_wavelengths(cube.wavelengths, out / "wavelengths.txt")
        names = [f"class_{i}" for i in range(cfg.classes)]
        vocab = pseudo.ClassVocabulary(names, _known_aliases(cfg.aliases, names))
        scorer = pseudo.make_synthetic_scorer(gt, cfg.classes, cfg.flip_prob,
                                              cfg.sharpness, scorer_rng)
    else:
        if not cfg.scores:
            raise StageError("no score directory configured and --synthetic not set")
        cube, gt, vocab = _load_scene(cfg, out)
        scorer = pseudo.FileScorer.from_dir(cfg.scores)
        h, w = cube.values.shape[:2]
        missing = []
        for s in cfg.scale_list():
            hs = int(np.floor(h * s + 0.5))
            ws = int(np.floor(w * s + 0.5))
            try:
                fr = scorer._frame(s)
            except KeyError:
                missing.append(f"scores_s{s:g}.ptf")
                continue
            if fr.shape[:2] != (hs, ws):
                raise StageError(f"scale {s:g} frame is {fr.shape[:2]}, expected {(hs, ws)}")
        if missing:
            raise StageError("missing scale files: " + ", ".join(missing))

    rgb = prep.interpolate_rgb(cube)
    probs = pseudo.fused_score(scorer, rgb, vocab, pseudo.ScaleSet(cfg.scale_list()),
                               tau=cfg.tau, window=cfg.window, stride=cfg.stride)
    labels = pseudo.argmax_labels(probs)
    conf = pseudo.bvsb(probs) if len(vocab) >= 2 else np.ones(labels.shape, np.float32)

    save_ptf(probs, out / "probmap.ptf")
    save_ptf(labels, out / "pseudo_labels.ptf")
    save_ptf(conf, out / "confidence.ptf")
    evalreport.render_map(labels, path=out / "pseudo_preview.png")
    echo_config(cfg, out / "config.ini")

    if cfg.synthetic or (cfg.gt and Path(cfg.gt).exists()):
        gt_map = load_ptf(out / "gt.ptf") if cfg.synthetic else load_ptf(cfg.gt)
        rep = evalreport.metrics(evalreport.confusion(labels, gt_map, len(vocab)))
        (out / "pseudo_metrics.txt").write_text(evalreport.report_text(rep))
        print(f"[pseudo] OA={rep.oa:.2f} AA={rep.aa:.2f} kappa={rep.kappa:.2f}")
    else:
        print("[pseudo] done")


def cmd_train(cfg: PipelineConfig) -> None:
    out = Path(cfg.out)
    if not _outputs_ready(out, ["pseudo_labels.ptf", "confidence.ptf"]):
        raise StageError("pseudo-label artifacts missing; run the pseudo stage first")
    if _outputs_ready(out, TRAIN_OUTPUTS) and not cfg.force:
        print("[train] outputs exist; skipping (use --force to regenerate)")
        return
    tcfg = cfg.train_config()

    cube, _, vocab = _load_scene(cfg, out)
    pseudo_labels = load_ptf(out / "pseudo_labels.ptf")
    conf = load_ptf(out / "confidence.ptf")

    norm_cube, _ = prep.normalize_spectra(cube)
    spectra = norm_cube.values.reshape(-1, norm_cube.bands)
    k = len(vocab)

    init_rng, train_rng, sets_rng = _seed_rngs(cfg.seed + 1, 3)
    model = trainer.MlpClassifier([norm_cube.bands, *tcfg.hidden, k], rng=init_rng)
    log: list = []
    state = trainer.warmup_train(model, spectra, pseudo_labels, conf, tcfg,
                                 train_rng, log=log)
    if tcfg.refine:
        pca = mixture.fit_pca(spectra, min(tcfg.pca_q, norm_cube.bands))
        sets, _, bank = trainer.build_training_sets(model, norm_cube.values, pca,
                                                    pseudo_labels, conf, tcfg, sets_rng)
        mixture.save_bank(bank, pca, out / "bank")
        trainer.refine_train(model, spectra, sets, tcfg, train_rng, state, log=log)

    trainer.save_checkpoint(model, tcfg, out / "checkpoint")
    trainer.write_train_log(log, out / "train_log.csv")
    probs = trainer.predict_map(model, norm_cube.values)
    labels = pseudo.argmax_labels(probs)
    save_ptf(probs, out / "prediction_probs.ptf")
    save_ptf(labels, out / "prediction.ptf")
    evalreport.render_map(labels, path=out / "prediction.png")
    echo_config(cfg, out / "config.ini")
    print(f"[train] {len(log)} iterations; final loss {log[-1][-1]:.4f}" if log
          else "[train] done")


def cmd_eval(cfg: PipelineConfig) -> None:
    out = Path(cfg.out)
    pred_path = out / "prediction.ptf"
    if not pred_path.exists():
        raise StageError("prediction.ptf missing; run the train stage first")
    if cfg.synthetic:
        gt_path = out / "gt.ptf"
    else:
        gt_path = Path(cfg.gt) if cfg.gt else None
    if gt_path is None or not gt_path.exists():
        raise StageError("ground truth unavailable")
    pred = load_ptf(pred_path)
    gt = load_ptf(gt_path)
    if pred.shape != gt.shape:
        raise StageError(f"prediction {pred.shape} vs ground truth {gt.shape}")
    valid = gt[gt != IGNORE]
    k = max(int(pred.max()), int(valid.max()) if len(valid) else 0) + 1
    rep = evalreport.metrics(evalreport.confusion(pred, gt, k))
    (out / "report.txt").write_text(evalreport.report_text(rep))
    (out / "report.csv").write_text(evalreport.report_csv(rep))
    print(evalreport.report_csv(rep).splitlines()[1])


def cmd_render(cfg: PipelineConfig, input_path: str, output_path: str) -> None:
    labels = load_ptf(input_path)
    evalreport.render_map(labels, path=output_path)
    print(f"[render] wrote {output_path}")


def cmd_pipeline(cfg: PipelineConfig) -> None:
    cmd_pseudo(cfg)
    cmd_train(cfg)
    gt_ok = cfg.synthetic or (cfg.gt and Path(cfg.gt).exists())
    if gt_ok:
        cmd_eval(cfg)
    else:
        print("[pipeline] no ground truth; eval skipped")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hsilabel",
                                     description="Zero-shot hyperspectral classification pipeline")
    sub = parser.add_subparsers(dest="command", required=True)
    types = {f.name: f.type for f in fields(PipelineConfig)}
    for name in ("pseudo", "train", "eval", "render", "pipeline"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key = value config file")
        for key in [k for keys in _SECTIONS.values() for k in keys]:
            flag = "--" + key.replace("_", "-")
            if types[key] == "bool":
                p.add_argument(flag, dest=key, action="store_true", default=None)
                p.add_argument("--no-" + key.replace("_", "-"), dest=key,
                               action="store_false", default=None)
            else:
                p.add_argument(flag, dest=key, default=None)
        if name == "render":
            p.add_argument("--input", required=True)
            p.add_argument("--output", required=True)
    return parser


def resolve_config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    types = {f.name: f.type for f in fields(PipelineConfig)}
    for key in [k for keys in _SECTIONS.values() for k in keys]:
        val = getattr(args, key, None)
        if val is None:
            continue
        kind = types[key]
        if kind == "bool":
            setattr(cfg, key, bool(val))
        elif kind == "int":
            setattr(cfg, key, int(val))
        elif kind == "float":
            setattr(cfg, key, float(val))
        else:
            setattr(cfg, key, val)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = resolve_config(args)
    try:
        if args.command == "pseudo":
            cmd_pseudo(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg)
        elif args.command == "render":
            cmd_render(cfg, args.input, args.output)
        elif args.command == "pipeline":
            cmd_pipeline(cfg)
    except (StageError, ValueError, OSError) as err:
        print(f"[{args.command}] error: {err}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
