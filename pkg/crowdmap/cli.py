"""
crowdmap - Command Line Module
Subcommands: gen-gt, augment, train, eval, render, gradcheck, synth, summarize, replay.
Every command writes a RunManifest that is enough to replay it.
"""

import argparse
import json
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from . import __version__
from .annotations import (
    BBox,
    DetectionSet,
    ImageAnnotation,
    parse_annotations,
    parse_boxes_sidecar,
    parse_detection_file,
    serialize_detections,
    write_annotations,
)
from .augment import DatasetAugmenter, NoiseSpec, PatchSpec
from .density_core import DensityMap, KnnConfig, gen_fixed, gen_knn
from .exceptions import CrowdmapError, ValidationError
from .hybrid_gt import FaceGtConfig, gen_face
from .metrics import (
    MapPredictor,
    NetworkPredictor,
    evaluate,
    kfold_splits,
    read_report,
    results_matrix,
)
from .msnn import (
    MultiStreamNetwork,
    TrainConfig,
    load_checkpoint,
    load_network_spec,
    normalize_image,
    preset,
    save_checkpoint,
    train,
)
from .render import render_box_overlay, render_color_overlay, render_map
from .synthetic import DotDatasetSpec, write_dot_dataset
from .tensor_nn import grad_check
from .utils.config import Config
from .utils.helpers import (
    atomic_write_text,
    file_digest,
    format_float,
    load_dmap,
    load_pgm,
    parallel_map,
    save_dmap,
    save_pgm,
    to_uint8,
)
from .utils.logger import get_logger, setup_logging

logger = get_logger(__name__)

MANIFEST_NAME = 'manifest.json'


@dataclass
class RunManifest:
    """
    Everything needed to re-run a command: its argument vector, the fully resolved
    configuration with provenance, the seed, input digests and produced outputs.
    """

    command: str
    argv: List[str]
    config: Dict[str, Dict[str, Any]]
    seed: Optional[int] = None
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    records: List[Dict[str, Any]] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)
    version: str = __version__
    generated_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())

    def add_input(self, path: Path) -> None:
        path = Path(path)
        if path.is_dir():
            for child in sorted(p for p in path.rglob('*') if p.is_file()):
                self.inputs[str(child)] = file_digest(child)
        elif path.exists():
            self.inputs[str(path)] = file_digest(path)

    def add_output(self, path: Path, root: Path) -> None:
        self.outputs[str(Path(path).relative_to(root))] = file_digest(path)

    def save(self, path: Path) -> Path:
        return atomic_write_text(path, json.dumps(asdict(self), indent=2, sort_keys=True) + '\n')

    def report(self) -> str:
        lines = [
            "=" * 60,
            f" CROWDMAP RUN: {self.command}",
            "=" * 60,
            f"Inputs: {len(self.inputs)}",
            f"Outputs: {len(self.outputs)}",
        ]
        if self.seed is not None:
            lines.append(f"Seed: {self.seed}")
        lines.extend(f"Warning: {w}" for w in self.warnings)
        return "\n".join(lines)


# flag name -> dotted config key, per command
GT_KEYS = {
    'sigma': 'density.sigma', 'truncation': 'density.truncation',
    'k': 'knn.k', 'beta': 'knn.beta', 'fallback_sigma': 'knn.fallback_sigma', 'min_sigma': 'knn.min_sigma',
    't_overlaps': 'face.t_overlaps', 'crowded_sigma': 'face.crowded_sigma', 'sigma_scale': 'face.sigma_scale',
    'distance_epsilon': 'face.distance_epsilon', 'overlap_against': 'face.overlap_against',
}
AUGMENT_KEYS = {
    'window': 'augment.window', 'stride': 'augment.stride', 'seed': 'noise.seed',
    'gaussian_stddev': 'noise.gaussian_stddev', 'brightness': 'noise.brightness_delta',
    'contrast_low': 'noise.contrast_low', 'contrast_high': 'noise.contrast_high',
}
TRAIN_KEYS = {
    'streams': 'training.streams', 'lr': 'training.learning_rate', 'batch': 'training.batch_size',
    'epochs': 'training.epochs', 'max_steps': 'training.max_steps', 'seed': 'training.seed',
    'init_std': 'training.init_std', 'shrink': 'training.shrink',
}


def load_config(args: argparse.Namespace, keys: Dict[str, str]) -> Config:
    """Defaults, then the YAML file, then explicitly given flags."""
    config = Config(args.config) if getattr(args, 'config', None) else Config()
    for flag, key in keys.items():
        value = getattr(args, flag, None)
        if value is not None:
            config.set(key, value)
    if getattr(args, 'threads', None):
        config.set('runtime.threads', args.threads)
    return config


def _manifest(args: argparse.Namespace, config: Config, seed: Optional[int] = None) -> RunManifest:
    return RunManifest(command=args.command, argv=list(args.argv), config=config.resolved(), seed=seed)


def _finish(manifest: RunManifest, out_dir: Path, produced: Sequence[Path]) -> RunManifest:
    for path in sorted(produced):
        manifest.add_output(path, out_dir)
    manifest.save(out_dir / MANIFEST_NAME)
    logger.info(manifest.report())
    return manifest


def _select_fold(annotations: List[ImageAnnotation], args: argparse.Namespace, part: str) -> List[ImageAnnotation]:
    if not getattr(args, 'folds', None):
        return annotations
    if args.fold is None or not 0 <= args.fold < args.folds:
        raise ValidationError(f"--fold must be in [0, {args.folds})")
    train_idx, test_idx = kfold_splits(len(annotations), args.folds, seed=args.fold_seed)[args.fold]
    chosen = train_idx if part == 'train' else test_idx
    return [annotations[i] for i in chosen]


def gt_generator(method: str, config: Config,
                 detections: Optional[Dict[str, DetectionSet]] = None
                 ) -> Callable[[ImageAnnotation], Tuple[DensityMap, Optional[list]]]:
    """Map an annotation to (density map, person boxes or None) for one method."""
    truncation = float(config.get('density.truncation'))
    if method == 'fixed':
        sigma = float(config.get('density.sigma'))
        return lambda ann: (gen_fixed(ann, sigma, truncation), None)
    if method == 'knn':
        cfg = KnnConfig(int(config.get('knn.k')), float(config.get('knn.beta')),
                        float(config.get('knn.fallback_sigma')), float(config.get('knn.min_sigma')), truncation)
        return lambda ann: (gen_knn(ann, cfg), None)
    if method == 'face':
        cfg = FaceGtConfig(int(config.get('face.t_overlaps')), float(config.get('face.crowded_sigma')),
                           float(config.get('face.sigma_scale')), float(config.get('face.distance_epsilon')),
                           str(config.get('face.overlap_against')), truncation)
        sets = detections or {}

        def face(ann: ImageAnnotation):
            found = sets.get(ann.image_id, DetectionSet(ann.image_id)).validate_against(ann.shape)
            return gen_face(ann, found, cfg)
        return face
    raise ValidationError(f"unknown ground-truth method {method!r}")


def cmd_gen_gt(args: argparse.Namespace) -> RunManifest:
    config = load_config(args, GT_KEYS)
    out_dir = Path(args.out)
    annotations = parse_annotations(args.annotations)
    detections = parse_detection_file(args.detections) if args.method == 'face' else None
    manifest = _manifest(args, config)
    manifest.add_input(Path(args.annotations))
    if args.detections:
        manifest.add_input(Path(args.detections))
    generate = gt_generator(args.method, config, detections)
    logger.info(f"Starting ground-truth generation ({args.method}) for {len(annotations)} images...")

    results = parallel_map(generate, annotations, config.threads())
    produced = []
    sidecar_sets, crowded_flags = [], {}
    for ann, (density, boxes) in tqdm(zip(annotations, results), total=len(annotations), desc='images',
                                      disable=args.quiet):
        produced.append(save_dmap(out_dir / f"{ann.image_id}.dmap", density.values))
        if boxes is not None:
            sidecar_sets.append(DetectionSet(ann.image_id, tuple(p.box for p in boxes)))
            crowded_flags[ann.image_id] = [p.crowded for p in boxes]
        manifest.records.append({'image': ann.image_id, 'heads': ann.count, 'map_sum': float(density.values.sum())})
    if args.method == 'face':
        produced.append(atomic_write_text(out_dir / 'boxes.json', serialize_detections(sidecar_sets, crowded_flags)))
    return _finish(manifest, out_dir, produced)


def _dataset_paths(data_dir: Path) -> Tuple[Path, Path, Path]:
    return data_dir / 'annotations.json', data_dir / 'images', data_dir / 'maps'


def _require_files(paths: Sequence[Path]) -> None:
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise CrowdmapError(f"unreadable inputs: {', '.join(missing)}")


def cmd_augment(args: argparse.Namespace) -> RunManifest:
    config = load_config(args, AUGMENT_KEYS)
    out_dir = Path(args.out)
    images_dir, maps_dir = Path(args.images), Path(args.maps)
    annotations = parse_annotations(args.annotations)
    image_paths = [images_dir / f"{a.image_id}.pgm" for a in annotations]
    map_paths = [maps_dir / f"{a.image_id}.dmap" for a in annotations]
    _require_files(image_paths + map_paths)

    patch_spec = PatchSpec(int(config.get('augment.window')), int(config.get('augment.stride')))
    noise_spec = None
    if not args.no_noise:
        delta = float(config.get('noise.brightness_delta'))
        noise_spec = NoiseSpec(float(config.get('noise.gaussian_stddev')), (-delta, delta),
                               (float(config.get('noise.contrast_low')), float(config.get('noise.contrast_high'))),
                               int(config.get('noise.seed')))
    config.set('augment.noise', noise_spec is not None)
    manifest = _manifest(args, config, seed=int(config.get('noise.seed')))
    for path in [Path(args.annotations)] + image_paths + map_paths:
        manifest.add_input(path)

    augmenter = DatasetAugmenter(patch_spec, noise_spec)
    items = [(a, load_pgm(i), DensityMap(load_dmap(m))) for a, i, m in zip(annotations, image_paths, map_paths)]
    records = augmenter.augment(items)
    produced = []
    for record in tqdm(records, desc='patches', disable=args.quiet):
        produced.append(save_pgm(out_dir / 'images' / f"{record.patch_id}.pgm", to_uint8(record.image)))
        produced.append(save_dmap(out_dir / 'maps' / f"{record.patch_id}.dmap", record.patch.density.values))
        manifest.records.append(record.provenance())
    produced.append(write_annotations(out_dir / 'annotations.json', [r.patch.annotation for r in records]))
    manifest.warnings.extend(augmenter.warnings)
    return _finish(manifest, out_dir, produced)


def load_training_data(data_dir: Path, annotations: Sequence[ImageAnnotation]):
    _, images_dir, maps_dir = _dataset_paths(data_dir)
    image_paths = [images_dir / f"{a.image_id}.pgm" for a in annotations]
    map_paths = [maps_dir / f"{a.image_id}.dmap" for a in annotations]
    _require_files(image_paths + map_paths)
    return [(normalize_image(load_pgm(i)), DensityMap(load_dmap(m))) for i, m in zip(image_paths, map_paths)]


def build_network_spec(config: Config, network_config: Optional[str], append_final_conv: bool):
    if network_config:
        spec = load_network_spec(network_config)
    else:
        spec = preset(int(config.get('training.streams')), append_final_conv=append_final_conv)
    shrink = int(config.get('training.shrink'))
    return spec.shrink(shrink) if shrink > 1 else spec


def cmd_train(args: argparse.Namespace) -> RunManifest:
    config = load_config(args, TRAIN_KEYS)
    if args.append_final_conv:
        config.set('training.append_final_conv', True)
    data_dir, out_dir = Path(args.data), Path(args.out)
    annotations = _select_fold(parse_annotations(_dataset_paths(data_dir)[0]), args, 'train')
    seed = int(config.get('training.seed'))
    spec = build_network_spec(config, args.network_config, bool(config.get('training.append_final_conv')))
    cfg = TrainConfig(learning_rate=float(config.get('training.learning_rate')),
                      batch_size=int(config.get('training.batch_size')),
                      epochs=int(config.get('training.epochs')),
                      seed=seed,
                      max_steps=config.get('training.max_steps'),
                      data_dir=str(data_dir))
    manifest = _manifest(args, config, seed=seed)
    manifest.add_input(data_dir)
    if args.network_config:
        manifest.add_input(Path(args.network_config))

    network = MultiStreamNetwork(spec, seed=seed, init_std=float(config.get('training.init_std')))
    result = train(network, load_training_data(data_dir, annotations), cfg, progress=not args.quiet)
    produced = [save_checkpoint(network, out_dir / 'model.msnw')]
    log_text = result.to_frame().to_csv(index=False, float_format=format_float, lineterminator='\n')
    produced.append(atomic_write_text(out_dir / 'loss_log.csv', log_text))
    manifest.records.append({'network': spec.to_dict(), 'steps': result.steps})
    return _finish(manifest, out_dir, produced)


def cmd_eval(args: argparse.Namespace) -> RunManifest:
    config = load_config(args, {})
    data_dir, report_path = Path(args.data), Path(args.out)
    annotations = _select_fold(parse_annotations(_dataset_paths(data_dir)[0]), args, 'test')
    manifest = _manifest(args, config)
    manifest.add_input(_dataset_paths(data_dir)[0])
    if args.checkpoint:
        manifest.add_input(Path(args.checkpoint))
        predictor = NetworkPredictor(load_checkpoint(args.checkpoint), _dataset_paths(data_dir)[1])
    else:
        manifest.add_input(Path(args.maps))
        predictor = MapPredictor(args.maps)
    label = {key: value for key, value in (('method', args.method), ('preset', args.preset)) if value}
    report = evaluate(predictor, annotations, workers=config.threads(), **label)
    manifest.warnings.extend(f"{image}: {error}" for image, error in sorted(report.failures.items()))
    manifest.records.append({'mae': report.mae, 'rmse': report.rmse, **label})
    produced = [report.write(report_path)]
    logger.info(report.summary())
    for path in produced:
        manifest.add_output(path, report_path.parent)
    manifest.save(report_path.with_name(report_path.stem + '.manifest.json'))
    return manifest


def cmd_render(args: argparse.Namespace) -> RunManifest:
    config = load_config(args, {})
    maps_path, out_dir = Path(args.maps), Path(args.out)
    map_files = sorted(maps_path.glob('*.dmap')) if maps_path.is_dir() else [maps_path]
    _require_files(map_files)
    sidecar = parse_boxes_sidecar(args.boxes) if args.boxes else {}
    detections = parse_detection_file(args.detections) if args.detections else {}
    manifest = _manifest(args, config)
    for path in map_files + [Path(p) for p in (args.boxes, args.detections) if p]:
        manifest.add_input(path)

    produced = []
    for map_file in map_files:
        image_id = map_file.stem
        density = DensityMap(load_dmap(map_file))
        produced.append(render_map(density, out_dir / f"{image_id}.pgm"))
        person_boxes = sidecar.get(image_id, [])
        detected: List[BBox] = list(detections[image_id].boxes) if image_id in detections else []
        background = None
        if args.images:
            background_path = Path(args.images) / f"{image_id}.pgm"
            if background_path.is_file():
                background = load_pgm(background_path)
        if person_boxes or detected:
            base = to_uint8(background) if background is not None else np.asarray(
                load_pgm(out_dir / f"{image_id}.pgm"), dtype=np.uint8)
            produced.append(render_box_overlay(base, [b for b, _ in person_boxes],
                                               out_dir / f"{image_id}.boxes.pgm", detected))
        if args.png:
            produced.append(render_color_overlay(density, out_dir / f"{image_id}.png", person_boxes,
                                                 detected, background))
    return _finish(manifest, out_dir, produced)


def cmd_gradcheck(args: argparse.Namespace) -> RunManifest:
    config = load_config(args, {})
    out_path = Path(args.out)
    manifest = _manifest(args, config, seed=args.seed)
    if args.checkpoint:
        manifest.add_input(Path(args.checkpoint))
        network = load_checkpoint(args.checkpoint)
    else:
        network = MultiStreamNetwork(preset(args.streams).shrink(args.shrink), seed=args.seed, init_std=args.init_std)
    rng = np.random.default_rng(args.seed)
    images = rng.uniform(0.0, 1.0, size=(1, network.spec.in_channels, args.size, args.size))
    targets = rng.uniform(0.0, 0.1, size=(1, -(-args.size // 4), -(-args.size // 4)))
    report = grad_check(network, images, targets, tolerance=args.tolerance,
                        samples_per_tensor=args.samples, seed=args.seed)
    produced = [atomic_write_text(out_path, json.dumps(report.to_dict(), indent=2, sort_keys=True) + '\n')]
    manifest.records.append(report.to_dict())
    for path in produced:
        manifest.add_output(path, out_path.parent)
    manifest.save(out_path.with_name(out_path.stem + '.manifest.json'))
    if report.passed:
        logger.info(f"Gradient check passed: max relative error {report.max_relative_error:.3g}")
    else:
        raise CrowdmapError(f"gradient check failed in {report.offending_layer}: "
                            f"max relative error {report.max_relative_error:.3g} > {report.tolerance:g}")
    return manifest


def cmd_synth(args: argparse.Namespace) -> RunManifest:
    config = load_config(args, {})
    out_dir = Path(args.out)
    spec = DotDatasetSpec(count=args.count, size=args.size, min_people=args.min_people,
                          max_people=args.max_people, seed=args.seed)
    manifest = _manifest(args, config, seed=args.seed)
    write_dot_dataset(out_dir, spec, map_sigma=args.map_sigma)
    produced = [p for p in out_dir.rglob('*') if p.is_file() and p.name != MANIFEST_NAME]
    return _finish(manifest, out_dir, produced)


def cmd_summarize(args: argparse.Namespace) -> RunManifest:
    config = load_config(args, {})
    out_path = Path(args.out)
    manifest = _manifest(args, config)
    entries = []
    for method, preset_label, report_path in args.entry:
        manifest.add_input(Path(report_path))
        _, mae_value, rmse_value = read_report(report_path)
        entries.append((method, preset_label, mae_value, rmse_value))
    table = results_matrix(entries)
    produced = [atomic_write_text(out_path, table.to_csv(float_format=format_float, lineterminator='\n'))]
    logger.info("\n" + table.to_string())
    for path in produced:
        manifest.add_output(path, out_path.parent)
    manifest.save(out_path.with_name(out_path.stem + '.manifest.json'))
    return manifest


def cmd_replay(args: argparse.Namespace) -> RunManifest:
    recorded = json.loads(Path(args.manifest).read_text(encoding='utf-8'))
    argv = recorded.get('argv')
    if not argv or argv[0] == 'replay':
        raise CrowdmapError(f"{args.manifest}: no replayable argument vector")
    logger.info(f"Replaying: {' '.join(argv)}")
    parsed = build_parser().parse_args(argv)
    parsed.argv = argv
    return parsed.handler(parsed)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help='YAML configuration file')
    parser.add_argument('--threads', type=int, help='worker cap (CROWDMAP_THREADS wins)')


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='crowdmap', description='Crowd-counting ground truth and multi-stream networks.')
    parser.add_argument('--log-level', default='INFO')
    parser.add_argument('-q', '--quiet', action='store_true')
    parser.add_argument('--version', action='version', version=f"crowdmap {__version__}")
    sub = parser.add_subparsers(dest='command', required=True)

    gen = sub.add_parser('gen-gt', help='generate ground-truth density maps')
    _add_common(gen)
    gen.add_argument('--method', required=True, choices=['fixed', 'knn', 'face'])
    gen.add_argument('--annotations', required=True)
    gen.add_argument('--detections')
    gen.add_argument('--out', required=True)
    gen.add_argument('--sigma', type=float)
    gen.add_argument('--truncation', type=float)
    gen.add_argument('--k', type=int)
    gen.add_argument('--beta', type=float)
    gen.add_argument('--fallback-sigma', type=float)
    gen.add_argument('--min-sigma', type=float)
    gen.add_argument('--t-overlaps', type=int)
    gen.add_argument('--crowded-sigma', type=float)
    gen.add_argument('--sigma-scale', type=float)
    gen.add_argument('--distance-epsilon', type=float)
    gen.add_argument('--overlap-against', choices=['regions', 'detections'])
    gen.set_defaults(handler=cmd_gen_gt)

    aug = sub.add_parser('augment', help='sliding-window patches with photometric noise')
    _add_common(aug)
    aug.add_argument('--annotations', required=True)
    aug.add_argument('--images', required=True)
    aug.add_argument('--maps', required=True)
    aug.add_argument('--out', required=True)
    aug.add_argument('--window', type=int)
    aug.add_argument('--stride', type=int)
    aug.add_argument('--seed', type=int)
    aug.add_argument('--no-noise', action='store_true')
    aug.add_argument('--gaussian-stddev', type=float)
    aug.add_argument('--brightness', type=float, help='brightness delta range is +/- this value')
    aug.add_argument('--contrast-low', type=float)
    aug.add_argument('--contrast-high', type=float)
    aug.set_defaults(handler=cmd_augment)

    trn = sub.add_parser('train', help='train a multi-stream network')
    _add_common(trn)
    trn.add_argument('--streams', type=int, choices=[1, 2, 3, 4])
    trn.add_argument('--data', required=True)
    trn.add_argument('--out', required=True)
    trn.add_argument('--lr', type=float)
    trn.add_argument('--batch', type=int)
    trn.add_argument('--epochs', type=int)
    trn.add_argument('--max-steps', type=int)
    trn.add_argument('--seed', type=int)
    trn.add_argument('--init-std', type=float)
    trn.add_argument('--shrink', type=int)
    trn.add_argument('--network-config')
    trn.add_argument('--append-final-conv', action='store_true')
    _add_folds(trn)
    trn.set_defaults(handler=cmd_train)

    ev = sub.add_parser('eval', help='MAE / RMSE report')
    _add_common(ev)
    ev.add_argument('--data', required=True)
    source = ev.add_mutually_exclusive_group(required=True)
    source.add_argument('--checkpoint')
    source.add_argument('--maps')
    ev.add_argument('--out', required=True)
    ev.add_argument('--method', help='ground-truth method label for result matrices')
    ev.add_argument('--preset', help='network label for result matrices')
    _add_folds(ev)
    ev.set_defaults(handler=cmd_eval)

    ren = sub.add_parser('render', help='PGM renders of maps and box overlays')
    _add_common(ren)
    ren.add_argument('--maps', required=True, help='a .dmap file or a directory of them')
    ren.add_argument('--out', required=True)
    ren.add_argument('--boxes', help='boxes sidecar written by gen-gt --method face')
    ren.add_argument('--detections')
    ren.add_argument('--images')
    ren.add_argument('--png', action='store_true', help='also write colour overlays')
    ren.set_defaults(handler=cmd_render)

    gc = sub.add_parser('gradcheck', help='finite-difference gradient check')
    _add_common(gc)
    gc.add_argument('--checkpoint')
    gc.add_argument('--streams', type=int, default=2, choices=[1, 2, 3, 4])
    gc.add_argument('--shrink', type=int, default=4)
    gc.add_argument('--size', type=int, default=16)
    gc.add_argument('--seed', type=int, default=0)
    gc.add_argument('--init-std', type=float, default=0.1)
    gc.add_argument('--tolerance', type=float, default=1e-4)
    gc.add_argument('--samples', type=int, default=6, help='entries checked per parameter tensor')
    gc.add_argument('--out', required=True)
    gc.set_defaults(handler=cmd_gradcheck)

    syn = sub.add_parser('synth', help='synthetic dot dataset')
    _add_common(syn)
    syn.add_argument('--out', required=True)
    syn.add_argument('--count', type=int, default=200)
    syn.add_argument('--size', type=int, default=64)
    syn.add_argument('--min-people', type=int, default=5)
    syn.add_argument('--max-people', type=int, default=25)
    syn.add_argument('--seed', type=int, default=0)
    syn.add_argument('--map-sigma', type=float, default=2.0, help='fixed-kernel maps; 0 skips them')
    syn.set_defaults(handler=cmd_synth)

    summ = sub.add_parser('summarize', help='method x preset matrix from eval reports')
    _add_common(summ)
    summ.add_argument('--entry', nargs=3, action='append', required=True, metavar=('METHOD', 'PRESET', 'REPORT'))
    summ.add_argument('--out', required=True)
    summ.set_defaults(handler=cmd_summarize)

    rep = sub.add_parser('replay', help='re-run a command from its manifest')
    rep.add_argument('manifest')
    rep.set_defaults(handler=cmd_replay)
    return parser


def _add_folds(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--folds', type=int, help='k-fold cross-validation over the annotations')
    parser.add_argument('--fold', type=int, help='which fold (0-based) to use')
    parser.add_argument('--fold-seed', type=int, default=0)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging('WARNING' if args.quiet else args.log_level)
    if args.command == 'gen-gt' and args.method == 'face' and not args.detections:
        parser.error('--detections is required with --method face')
    if args.command == 'gen-gt' and args.method != 'face' and args.detections:
        parser.error(f"--detections only applies to --method face, not {args.method}")
    # the recorded argv starts at the subcommand so replays ignore logging flags
    args.argv = argv[argv.index(args.command):]
    try:
        args.handler(args)
    except CrowdmapError as exc:
        logger.error(str(exc))
        return 1
    return 0
