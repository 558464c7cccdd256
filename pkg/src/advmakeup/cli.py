"""Command-line entry point: ``advmakeup <command> [options]``.

Commands: ``prepare``, ``train-classifier``, ``train-attack``, ``generate``,
``evaluate``. Each command reads an optional JSON config (``--config``);
command-line flags override config values. The effective config is validated
in full before anything is written, then copied into the output directory
together with its digest.

Exit codes: 0 success, 2 validation error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from advmakeup import objectives as obj
from advmakeup.dataset import DOMAIN_TAGS, MAKEUP, NON_MAKEUP, load_image, read_image, save_image, scan_manifest
from advmakeup.errors import AdvMakeupError, ConfigError
from advmakeup.evaluation import DEFAULT_TAU, FrameSet, attack_report, emit_report
from advmakeup.facepipe import center_crop_detector, crop_face, detect_face_for_path, sidecar_detector
from advmakeup.models import CLASSIFIER, GENERATOR, NetworkSpec, checkpoint_exists, load_checkpoint, save_checkpoint
from advmakeup.runconfig import canonical_json, config_digest, deterministic_mode
from advmakeup.training import ClassifierTrainConfig, train_attack, train_classifier

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3

_VALIDATION_CODES = {
    "INVALID_CONFIG",
    "INVALID_BLUR",
    "MISSING_PATH",
    "EMPTY_DATASET",
    "MIXED_LAYOUT",
    "INCOMPATIBLE_VICTIM",
    "INCOMPATIBLE_CHECKPOINT",
    "VERSION_MISMATCH",
    "SPEC_MISMATCH",
    "CLASS_COUNT_MISMATCH",
    "WRONG_DOMAIN",
    "AMBIGUOUS_ATTACKER",
}


class ValidationError(ConfigError):
    pass


def _fail(message, code="INVALID_CONFIG"):
    raise ValidationError(code, message)


def _load_config(path):
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        _fail(f"config file {p} not found", "MISSING_PATH")
    try:
        data = json.loads(p.read_text())
    except ValueError as exc:
        raise ValidationError("INVALID_CONFIG", f"{p}: {exc}") from exc
    if not isinstance(data, dict):
        _fail(f"{p} must hold a JSON object")
    return data


def _merge(args, keys):
    """Config file values overlaid by every flag that was given on the command line."""
    cfg = _load_config(args.config)
    for key in keys:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    return cfg


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, "")]
    if missing:
        _fail(f"missing required settings: {', '.join(missing)}")


def _require_dir(path, what):
    if not Path(path).is_dir():
        _fail(f"{what} {path} is not a directory", "MISSING_PATH")


def _require_checkpoint(path, what):
    if not checkpoint_exists(path):
        _fail(f"{what} checkpoint {path} (and its .json sidecar) not found", "MISSING_PATH")
    return load_checkpoint(path)


def _write_config(out_dir, cfg):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    digest = config_digest(cfg)
    (out_dir / "config_digest.txt").write_text(digest + "\n")
    return digest


def _blur_from(cfg):
    blur = cfg.get("blur") or {}
    if not isinstance(blur, dict):
        _fail("blur must be an object {kernel_size, sigma}")
    if cfg.get("blur_kernel") is not None:
        blur["kernel_size"] = cfg.pop("blur_kernel")
    if cfg.get("blur_sigma") is not None:
        blur["sigma"] = cfg.pop("blur_sigma")
    cfg.pop("blur_kernel", None)
    cfg.pop("blur_sigma", None)
    b = obj.BlurConfig(**blur)
    cfg["blur"] = dataclasses.asdict(b)
    return b


def _image_files(root):
    root = Path(root)
    return sorted(
        (p for p in root.rglob("*") if p.is_file() and p.suffix.lower() in (".png", ".jpg", ".jpeg")),
        key=lambda p: p.relative_to(root).as_posix(),
    )


# -- commands ---------------------------------------------------------------


def cmd_prepare(args):
    cfg = _merge(args, ["raw_dir", "size", "detector", "detections", "domain"])
    cfg.setdefault("size", 64)
    cfg.setdefault("detector", "center")
    cfg.setdefault("domain", NON_MAKEUP)
    _require(cfg, "raw_dir", "out")
    _require_dir(cfg["raw_dir"], "raw_dir")
    if cfg["domain"] not in DOMAIN_TAGS:
        _fail(f"domain must be one of {DOMAIN_TAGS}")
    if cfg["detector"] == "center":
        detector = center_crop_detector
    elif cfg["detector"] == "sidecar":
        _require(cfg, "detections")
        if not Path(cfg["detections"]).is_file():
            _fail(f"detections sidecar {cfg['detections']} not found", "MISSING_PATH")
        detector = sidecar_detector(cfg["detections"])
    else:
        _fail("detector must be 'center' or 'sidecar'")
    raw = Path(cfg["raw_dir"])
    scan_manifest(raw, cfg["domain"])  # layout validation only
    files = _image_files(raw)

    out = Path(cfg["out"])
    size = int(cfg["size"])
    cfg["raw_dir"] = str(raw)
    _write_config(out, cfg)
    skipped = []
    for path in files:
        image = read_image(path)
        box = detect_face_for_path(detector, str(path), image)
        if box is None:
            skipped.append(path.relative_to(raw).as_posix())
            continue
        face = crop_face(image, box, size)
        save_image(face, (out / path.relative_to(raw)).with_suffix(".png"))
    (out / "skipped.json").write_text(json.dumps(skipped, indent=2) + "\n")
    manifest = scan_manifest(out, cfg["domain"]) if len(skipped) < len(files) else None
    if manifest is not None:
        manifest.save(out / "manifest.json")
    print(f"prepared {len(files) - len(skipped)} images into {out} ({len(skipped)} skipped)")
    return EXIT_OK


def cmd_train_classifier(args):
    cfg = _merge(args, ["train_dir", "test_dir", "image_size", "learning_rate", "epochs", "batch_size",
                        "init_checkpoint", "base_width", "depth"])
    defaults = dict(image_size=64, base_width=16, depth=3, seed=0, init_checkpoint=None, **{
        k: v for k, v in ClassifierTrainConfig().to_dict().items() if k not in ("seed", "init_checkpoint")})
    for k, v in defaults.items():
        cfg.setdefault(k, v)
    _require(cfg, "train_dir", "test_dir", "out")
    _require_dir(cfg["train_dir"], "train_dir")
    _require_dir(cfg["test_dir"], "test_dir")
    train = scan_manifest(cfg["train_dir"], NON_MAKEUP)
    test = scan_manifest(cfg["test_dir"], NON_MAKEUP)
    if train.num_classes != test.num_classes:
        _fail(f"train has {train.num_classes} classes, test has {test.num_classes}", "CLASS_COUNT_MISMATCH")
    spec = NetworkSpec(CLASSIFIER, int(cfg["image_size"]), int(cfg["base_width"]), int(cfg["depth"]),
                       num_classes=train.num_classes)
    if cfg["init_checkpoint"]:
        init = _require_checkpoint(cfg["init_checkpoint"], "init")
        if init.spec != spec:
            _fail(f"init checkpoint spec {init.spec} does not match {spec}", "INCOMPATIBLE_CHECKPOINT")
    tcfg = ClassifierTrainConfig(
        learning_rate=float(cfg["learning_rate"]),
        epochs=int(cfg["epochs"]),
        batch_size=int(cfg["batch_size"]),
        init_checkpoint=cfg["init_checkpoint"],
        seed=int(cfg["seed"]),
    )
    cfg["regime"] = tcfg.regime
    out = Path(cfg["out"])
    digest = _write_config(out, cfg)
    train.save(out / "train_manifest.json")
    with deterministic_mode(args.deterministic):
        ckpt, history = train_classifier(tcfg, train, test, spec, log=print)
    save_checkpoint(ckpt, out / "classifier.npz", config_digest=digest, class_names=train.class_names)
    history.to_jsonl(out / "history.jsonl")
    (out / "timing.json").write_text(json.dumps({"epoch_seconds": history.wall_clock}) + "\n")
    print(f"{tcfg.regime} classifier: final test accuracy {history.records[-1]['test_accuracy']:.4f}")
    return EXIT_OK


_ATTACK_FIELDS = [f.name for f in dataclasses.fields(obj.AttackConfig)]


def cmd_train_attack(args):
    cfg = _merge(args, ["victim", "x_dir", "y_dir", "attacker_label", "blur_kernel", "blur_sigma"] + _ATTACK_FIELDS)
    _require(cfg, "victim", "x_dir", "y_dir", "out")
    _blur_from(cfg)
    attack_keys = {k: cfg[k] for k in _ATTACK_FIELDS if k in cfg}
    attack = obj.AttackConfig.from_dict(attack_keys)
    for k, v in attack.to_dict().items():
        cfg[k] = v
    unknown = set(cfg) - set(_ATTACK_FIELDS) - {"victim", "x_dir", "y_dir", "attacker_label", "out"}
    if unknown:
        _fail(f"unknown settings: {sorted(unknown)}")
    victim = _require_checkpoint(cfg["victim"], "victim")
    if victim.spec.kind != CLASSIFIER:
        _fail("victim checkpoint is not a classifier", "INCOMPATIBLE_VICTIM")
    _require_dir(cfg["x_dir"], "x_dir")
    _require_dir(cfg["y_dir"], "y_dir")
    x_set = scan_manifest(cfg["x_dir"], NON_MAKEUP)
    y_set = scan_manifest(cfg["y_dir"], MAKEUP)
    if x_set.num_classes != victim.spec.num_classes:
        _fail(f"victim has {victim.spec.num_classes} classes, x_dir has {x_set.num_classes}", "INCOMPATIBLE_VICTIM")
    if cfg.get("attacker_label") is None and x_set.num_classes != 1:
        _fail("attacker_label is required when x_dir holds several identities", "AMBIGUOUS_ATTACKER")

    print(f"lambda_cycle={attack.lambda_cycle:g} alpha_identity={attack.alpha_identity:g} kappa={attack.kappa:g} "
          f"mode={attack.mode}")
    out = Path(cfg["out"])
    _write_config(out, cfg)
    result = train_attack(
        attack,
        victim,
        x_set,
        y_set,
        attacker_label=cfg.get("attacker_label"),
        out_dir=out,
        deterministic=args.deterministic,
        log=print,
    )
    save_checkpoint(result.generator, out / "generator.npz")
    save_checkpoint(result.reconstructor, out / "reconstructor.npz")
    save_checkpoint(result.selected, out / "selected_generator.npz")
    (out / "timing.json").write_text(json.dumps({"epoch_seconds": result.history.wall_clock}) + "\n")
    return EXIT_OK


def cmd_generate(args):
    cfg = _merge(args, ["generator", "input", "blur_kernel", "blur_sigma"])
    cfg["apply_blur"] = bool(args.blur or cfg.get("apply_blur", False))
    _require(cfg, "generator", "input", "out")
    blur = _blur_from(cfg)
    ckpt = _require_checkpoint(cfg["generator"], "generator")
    if ckpt.spec.kind != GENERATOR:
        _fail("checkpoint is not a generator", "SPEC_MISMATCH")
    _require_dir(cfg["input"], "input")
    files = _image_files(cfg["input"])
    if not files:
        _fail(f"no images in {cfg['input']}", "EMPTY_DATASET")

    import torch

    out = Path(cfg["out"])
    _write_config(out, cfg)
    generator = ckpt.build(torch.float32).eval()
    size = ckpt.spec.input_size
    root = Path(cfg["input"])
    written = 0
    with torch.no_grad(), deterministic_mode(args.deterministic):
        for path in files:
            x = torch.as_tensor(load_image(path, size))[None]
            g = generator(x)
            rel = path.relative_to(root).with_suffix("")
            save_image(g[0].numpy(), out / rel.parent / f"{rel.name}.png")
            written += 1
            if cfg["apply_blur"]:
                save_image(obj.gaussian_blur(g, blur)[0].numpy(), out / rel.parent / f"{rel.name}_blur.png")
                written += 1
    print(f"wrote {written} images to {out}")
    return EXIT_OK


def cmd_evaluate(args):
    cfg = _merge(args, ["classifier", "generator", "frames", "mode", "attacker_label", "target_label", "tau",
                        "tau_prime", "blur_kernel", "blur_sigma"])
    cfg.setdefault("mode", obj.UNTARGETED)
    cfg.setdefault("tau", DEFAULT_TAU)
    cfg.setdefault("tau_prime", DEFAULT_TAU)
    _require(cfg, "classifier", "generator", "frames", "attacker_label", "out")
    if cfg["mode"] not in obj.MODES:
        _fail(f"mode must be one of {obj.MODES}")
    if cfg["mode"] == obj.UNTARGETED and cfg.get("target_label") is not None:
        _fail("target_label must not be given for an untargeted evaluation")
    if cfg["mode"] == obj.TARGETED and cfg.get("target_label") is None:
        _fail("target_label is required for a targeted evaluation")
    blur = _blur_from(cfg)
    classifier_ckpt = _require_checkpoint(cfg["classifier"], "classifier")
    generator_ckpt = _require_checkpoint(cfg["generator"], "generator")
    if classifier_ckpt.spec.kind != CLASSIFIER or generator_ckpt.spec.kind != GENERATOR:
        _fail("checkpoint kinds must be classifier and generator", "SPEC_MISMATCH")
    k = classifier_ckpt.spec.num_classes
    for key in ("attacker_label", "target_label"):
        if cfg.get(key) is not None and not 0 <= int(cfg[key]) < k:
            _fail(f"{key} {cfg[key]} outside [0, {k})")
    _require_dir(cfg["frames"], "frames")
    frames = FrameSet.from_directory(cfg["frames"], cfg["attacker_label"], generator_ckpt.spec.input_size)

    import torch

    out = Path(cfg["out"])
    digest = _write_config(out, cfg)
    with deterministic_mode(args.deterministic):
        report = attack_report(
            classifier_ckpt.build(torch.float32).eval(),
            generator_ckpt.build(torch.float32).eval(),
            blur,
            frames,
            cfg["mode"],
            int(cfg["attacker_label"]),
            None if cfg.get("target_label") is None else int(cfg["target_label"]),
            tau=float(cfg["tau"]),
            tau_prime=float(cfg["tau_prime"]),
            config_digest=digest,
        )
    emit_report(report, out)
    print(canonical_json({"per_class_percent": [round(p, 3) for p in report.per_class_percent],
                          "success": report.success}))
    return EXIT_OK


# -- parser -----------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--seed", type=int, help="top-level seed for every random stream")
    common.add_argument("--out", help="output directory")
    common.add_argument("--deterministic", action="store_true", help="force deterministic torch kernels")

    parser = argparse.ArgumentParser(prog="advmakeup", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", parents=[common], help="detect, crop and resize faces")
    p.add_argument("--raw-dir", dest="raw_dir")
    p.add_argument("--size", type=int)
    p.add_argument("--detector", choices=["center", "sidecar"])
    p.add_argument("--detections", help="JSON map image path -> [x0, y0, x1, y1]")
    p.add_argument("--domain", choices=list(DOMAIN_TAGS))
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train-classifier", parents=[common], help="train the victim classifier")
    p.add_argument("--train-dir", dest="train_dir")
    p.add_argument("--test-dir", dest="test_dir")
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--init-checkpoint", dest="init_checkpoint")
    p.add_argument("--base-width", dest="base_width", type=int)
    p.add_argument("--depth", type=int)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("train-attack", parents=[common], help="train the adversarial makeup generator")
    p.add_argument("--victim")
    p.add_argument("--x-dir", dest="x_dir", help="non-makeup faces, one subdirectory per identity")
    p.add_argument("--y-dir", dest="y_dir", help="makeup faces (flat directory)")
    p.add_argument("--attacker-label", dest="attacker_label", type=int)
    p.add_argument("--mode", choices=list(obj.MODES))
    p.add_argument("--target-label", dest="target_label", type=int)
    p.add_argument("--kappa", type=float)
    p.add_argument("--lambda-cycle", dest="lambda_cycle", type=float)
    p.add_argument("--alpha-identity", dest="alpha_identity", type=float)
    p.add_argument("--lr", dest="learning_rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--delta-scale", dest="additive_delta_scale", type=float)
    p.add_argument("--blur-kernel", dest="blur_kernel", type=int)
    p.add_argument("--blur-sigma", dest="blur_sigma", type=float)
    p.set_defaults(func=cmd_train_attack)

    p = sub.add_parser("generate", parents=[common], help="write adversarial makeup images")
    p.add_argument("--generator")
    p.add_argument("--input")
    p.add_argument("--blur", action="store_true", help="also write blurred outputs")
    p.add_argument("--blur-kernel", dest="blur_kernel", type=int)
    p.add_argument("--blur-sigma", dest="blur_sigma", type=float)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", parents=[common], help="per-class frame percentages of an attack")
    p.add_argument("--classifier")
    p.add_argument("--generator")
    p.add_argument("--frames", help="directory of frame images")
    p.add_argument("--mode", choices=list(obj.MODES))
    p.add_argument("--attacker-label", dest="attacker_label", type=int)
    p.add_argument("--target-label", dest="target_label", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--tau-prime", dest="tau_prime", type=float)
    p.add_argument("--blur-kernel", dest="blur_kernel", type=int)
    p.add_argument("--blur-sigma", dest="blur_sigma", type=float)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except AdvMakeupError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION if exc.code in _VALIDATION_CODES else EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
