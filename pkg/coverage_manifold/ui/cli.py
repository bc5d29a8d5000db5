"""
Командная строка: ingest, synthesize, simulate, train, eval, compare, plan, heatmap
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import ValidationError
from rich.progress import track

from ..config.logging_config import setup_logging
from ..config.toolkit_config import ToolkitConfig
from ..core import geodata, planner, sgmodels, simcore, synthgen
from ..errors import ArtifactError, ConfigurationError, CoverageToolkitError, DomainError
from ..models import cnnae
from ..utils import artifacts
from .display_utils import DisplayUtils

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2

SPLIT_FILE = "split.json"
HISTORY_FILE = "history.csv"


def _parse_bounds(text: str):
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError as e:
        raise ConfigurationError(f"Некорректные границы {text!r}: ожидается S,W,N,E") from e
    if len(values) != 4:
        raise ConfigurationError(f"Некорректные границы {text!r}: ожидается 4 числа S,W,N,E")
    return tuple(values)


def _threads(args: argparse.Namespace, config: ToolkitConfig) -> int:
    return max(1, int(getattr(args, "threads", None) or config.threads))


def _pick(value, default):
    return default if value is None else value


def cmd_ingest(args: argparse.Namespace, config: ToolkitConfig, display: DisplayUtils) -> int:
    """Разбор вышек, сетка RoI, фильтр и запись каталогов RoI с index.json"""
    side_km = _pick(args.side_km, config.side_km)
    column_map = geodata.ColumnMap(
        lat=_pick(args.lat_column, config.lat_column),
        lon=_pick(args.lon_column, config.lon_column),
    )
    bounds = _parse_bounds(args.bounds)
    cells = Path(args.cells)
    if not cells.exists():
        raise ArtifactError(f"Файл вышек не найден: {cells}")

    parsed = geodata.parse_bs_records(str(cells), column_map)
    grid = geodata.build_grid(bounds, side_km)
    assigned = geodata.assign_and_filter(parsed.records, grid)

    counts = assigned.counts()
    counts.update({'records': len(parsed.records), 'skipped_records': parsed.skipped, 'grid_cells': len(grid)})
    index = {
        'counts': counts,
        'params': {
            'bounds': list(bounds),
            'side_km': side_km,
            'columns': column_map.model_dump(),
            'source': cells.name,
        },
    }
    artifacts.write_rois(Path(args.out), assigned.rois, index)
    display.display_counts("📥 Ingest", counts)
    return EXIT_OK


def cmd_synthesize(args: argparse.Namespace, config: ToolkitConfig, display: DisplayUtils) -> int:
    """Синтетические RoI (PPP или кластерные) в формате каталогов RoI"""
    side_km = _pick(args.side_km, config.side_km)
    seed = _pick(args.seed, config.seed)
    if args.process == "ppp":
        rois = synthgen.gen_ppp_dataset(args.count, args.lam, side_km, seed)
        params = {'process': 'ppp', 'lambda': args.lam}
    else:
        rois = synthgen.gen_cluster_dataset(args.count, args.parents, args.daughters, args.spread_km, side_km, seed)
        params = {'process': 'cluster', 'parents': args.parents, 'daughters_per_parent': args.daughters,
                  'spread_km': args.spread_km}
    params.update({'side_km': side_km, 'seed': seed, 'count': args.count})
    counts = {
        'kept': len(rois),
        'resamples': sum(int(r.meta['resamples']) for r in rois),
        'mean_bs': float(np.mean([r.raw_count for r in rois])) if rois else 0.0,
    }
    artifacts.write_rois(Path(args.out), rois, {'counts': counts, 'params': params, 'synthetic': True})
    display.display_counts("🧪 Synthesize", counts)
    return EXIT_OK


def _sim_setup(args: argparse.Namespace, config: ToolkitConfig):
    fading = simcore.FadingModel.parse(_pick(args.fading, config.fading))
    if args.gamma_db is None:
        gammas_db = [config.gamma_db]
    elif isinstance(args.gamma_db, (list, tuple)):
        gammas_db = list(args.gamma_db)
    else:
        gammas_db = [args.gamma_db]
    params = simcore.ChannelParams.from_db(
        alpha=_pick(args.alpha, config.alpha),
        gamma_db=gammas_db[0],
        noise_ratio=_pick(args.noise_ratio, config.noise_ratio),
    )
    mc = simcore.McConfig(n_draws=_pick(args.mc, config.n_draws), seed=_pick(args.seed, config.seed))
    return params, fading, mc, gammas_db


def cmd_simulate(args: argparse.Namespace, config: ToolkitConfig, display: DisplayUtils) -> int:
    """Монте-Карло многообразия покрытия (по порогам) и скорости для каждого RoI"""
    params, fading, mc, gammas_db = _sim_setup(args, config)
    rois = artifacts.read_rois(Path(args.roi_dir))
    out = Path(args.out)
    workers = _threads(args, config)
    gammas = [simcore.db_to_linear(g) for g in gammas_db]

    for roi in track(rois, description="Симуляция RoI", console=display.console, disable=len(rois) < 2):
        sweep, rate = simcore.simulate_sweep(roi.image, roi.spec, params, fading, mc, gammas, workers=workers)
        directory = out / roi.roi_id
        files: Dict[str, str] = {}
        for gamma_db, gamma in zip(gammas_db, gammas):
            name = artifacts.coverage_file_name(gamma_db)
            artifacts.write_manifold_csv(directory / name, sweep[gamma])
            files[name] = "coverage"
        artifacts.write_manifold_csv(directory / "rate_raw.csv", rate)
        files["rate_raw.csv"] = "rate_raw"
        manifest = simcore.simulation_manifest(params, fading, mc, gammas_db, roi.spec)
        manifest['files'] = files
        manifest['occupied'] = roi.image.occupied_count
        artifacts.write_json(directory / artifacts.MANIFEST_FILE, manifest)

    display.display_counts("📡 Simulate", {'rois': len(rois), 'thresholds_db': gammas_db, 'n_draws': mc.n_draws})
    return EXIT_OK


def _target_file(metric: str, gamma_db: float) -> str:
    return artifacts.coverage_file_name(gamma_db) if metric == "coverage" else "rate_raw.csv"


def _load_samples(roi_dir: Path, sim_dir: Path, metric: str, gamma_db: float) -> List[cnnae.Sample]:
    """Пары (изображение, истинное многообразие) по каталогам RoI и симуляции"""
    name = _target_file(metric, gamma_db)
    kind = "coverage" if metric == "coverage" else "rate_raw"
    samples: List[cnnae.Sample] = []
    for roi in artifacts.read_rois(roi_dir):
        path = sim_dir / roi.roi_id / name
        if not path.exists():
            raise ArtifactError(f"Нет многообразия {path}: запустите simulate с нужным порогом")
        samples.append(cnnae.Sample(roi.image, artifacts.read_manifold_csv(path, kind), roi.roi_id))
    if not samples:
        raise ConfigurationError(f"В {roi_dir} нет RoI")
    return samples


def cmd_train(args: argparse.Namespace, config: ToolkitConfig, display: DisplayUtils) -> int:
    """Обучение CNN-AE с разбиением 70/30; модель, история и разбиение в out"""
    gamma_db = _pick(args.gamma_db, config.gamma_db)
    samples = _load_samples(Path(args.roi_dir), Path(args.sim_dir), args.metric, gamma_db)
    arch = cnnae.ArchConfig(
        ff_hidden=_pick(args.ff_hidden, config.ff_hidden),
        latent_dim=_pick(args.latent_dim, config.latent_dim),
    )
    train_config = cnnae.TrainConfig(
        lr=_pick(args.lr, config.lr),
        batch_size=_pick(args.batch_size, config.batch_size),
        epochs=_pick(args.epochs, config.epochs),
        seed=_pick(args.seed, config.seed),
        split_fraction=_pick(args.split, config.split_fraction),
        metric=args.metric,
    )
    fit = cnnae.fit_and_evaluate(samples, arch, train_config, rate_scale=args.rate_scale)
    fit.model.manifest.update({'gamma_db': gamma_db if args.metric == "coverage" else None})

    out = Path(args.out)
    cnnae.save_model(fit.model, out)
    history = fit.train.history_frame()
    artifacts.write_frame_csv(out / HISTORY_FILE, history)
    artifacts.write_frame_csv(out / "test_losses.csv", fit.report.frame())
    artifacts.write_json(out / SPLIT_FILE, {'train': fit.train_ids, 'test': fit.test_ids, 'seed': train_config.seed})

    display.display_history(history)
    display.display_success(f"Модель сохранена в {out}; тестовая потеря {fit.report.mean_loss:.4f}")
    return EXIT_OK


def _model_samples(model_dir: Path, model: cnnae.ModelParams, args: argparse.Namespace) -> List[cnnae.Sample]:
    gamma_db = model.manifest.get('gamma_db')
    if model.metric == "coverage" and gamma_db is None:
        raise ConfigurationError(f"В манифесте модели {model_dir} не указан gamma_db")
    samples = _load_samples(Path(args.roi_dir), Path(args.sim_dir), model.metric, gamma_db or 0.0)
    if getattr(args, "subset", "all") == "test":
        split_path = model_dir / SPLIT_FILE
        test_ids = set(artifacts.read_json(split_path).get('test', []))
        samples = [s for s in samples if s.roi_id in test_ids]
        if not samples:
            raise ConfigurationError(f"Тестовые RoI модели {model_dir} не найдены в {args.roi_dir}")
    return samples


def cmd_eval(args: argparse.Namespace, config: ToolkitConfig, display: DisplayUtils) -> int:
    """Потери модели по каждому RoI"""
    model_dir = Path(args.model)
    model = cnnae.load_model(model_dir)
    report = cnnae.evaluate(model, _model_samples(model_dir, model, args))
    artifacts.write_frame_csv(Path(args.out), report.frame())
    display.display_frame("📊 Потери по RoI", report.frame())
    display.display_success(f"Средняя потеря {report.mean_loss:.4f} на {len(report.losses)} RoI")
    return EXIT_OK


def _baseline_params(sim_dir: Path, roi_id: str, gamma_db: Optional[float]) -> Tuple[simcore.ChannelParams, str]:
    """Параметры канала и закон замираний из манифеста симуляции RoI"""
    manifest = artifacts.read_json(sim_dir / roi_id / artifacts.MANIFEST_FILE)
    params = simcore.ChannelParams.from_db(
        alpha=float(manifest['alpha']),
        gamma_db=gamma_db if gamma_db is not None else 0.0,
        noise_ratio=float(manifest['noise_ratio']),
    )
    return params, str(manifest.get('fading', sgmodels.PPP_FADING))


def compare_rows(
    model: cnnae.ModelParams,
    samples: Sequence[cnnae.Sample],
    rois: Dict[str, geodata.Roi],
    sim_dir: Path,
) -> List[Dict[str, Any]]:
    """
    Строки отчета: потери NN, PPP и лучшей константы и два снижения потерь, %

    Базовая модель PPP всегда рассчитана на Rayleigh; закон замираний симуляции
    записывается в колонку sim_fading.
    """
    gamma_db = model.manifest.get('gamma_db')
    kind = "coverage" if model.metric == "coverage" else "rate_raw"
    report = cnnae.evaluate(model, samples)
    rows: List[Dict[str, Any]] = []
    for sample, loss_nn in zip(samples, report.losses):
        if sample.target.kind != kind:
            raise DomainError(f"Метрика модели '{model.metric}' не совпадает с многообразием '{sample.target.kind}'")
        roi = rois[sample.roi_id]
        params, sim_fading = _baseline_params(sim_dir, sample.roi_id, gamma_db)
        if sim_fading != sgmodels.PPP_FADING:
            logger.warning(f"⚠️ {sample.roi_id}: симуляция с замираниями {sim_fading}, базовая модель PPP предполагает {sgmodels.PPP_FADING}")
        ppp = sgmodels.ppp_baseline_manifold(roi.image, roi.spec, params, kind=kind)
        best = sgmodels.constant_manifold(sgmodels.best_fit_value(sample.target), kind=kind)
        loss_ppp = cnnae.l1_loss(ppp, sample.target)
        loss_best = cnnae.l1_loss(best, sample.target)
        rows.append({
            'gamma_db': gamma_db,
            'roi_id': sample.roi_id,
            'loss_nn': loss_nn,
            'loss_ppp': loss_ppp,
            'loss_bestfit': loss_best,
            'reduction_vs_ppp': cnnae.loss_reduction(loss_ppp, loss_nn) if loss_ppp > 0 else float('nan'),
            'reduction_vs_bestfit': cnnae.loss_reduction(loss_best, loss_nn) if loss_best > 0 else float('nan'),
            'sim_fading': sim_fading,
        })
    return rows


def summarize_compare(frame: pd.DataFrame) -> pd.DataFrame:
    """Средние потери по каждому порогу и снижения потерь по средним"""
    summary = frame.groupby('gamma_db', dropna=False, sort=True)[['loss_nn', 'loss_ppp', 'loss_bestfit']].mean().reset_index()
    summary['reduction_vs_ppp'] = [cnnae.loss_reduction(b, n) for b, n in zip(summary['loss_ppp'], summary['loss_nn'])]
    summary['reduction_vs_bestfit'] = [cnnae.loss_reduction(b, n) for b, n in zip(summary['loss_bestfit'], summary['loss_nn'])]
    summary.insert(1, 'rois', frame.groupby('gamma_db', dropna=False, sort=True).size().to_numpy())
    return summary


def cmd_compare(args: argparse.Namespace, config: ToolkitConfig, display: DisplayUtils) -> int:
    """Сравнение с PPP и лучшей константой; несколько моделей -> развертка по γ"""
    rois = {roi.roi_id: roi for roi in artifacts.read_rois(Path(args.roi_dir))}
    rows: List[Dict[str, Any]] = []
    for model_path in args.model:
        model_dir = Path(model_path)
        model = cnnae.load_model(model_dir)
        rows.extend(compare_rows(model, _model_samples(model_dir, model, args), rois, Path(args.sim_dir)))

    frame = pd.DataFrame(rows)
    out = Path(args.out)
    artifacts.write_frame_csv(out, frame)
    summary = summarize_compare(frame)
    artifacts.write_frame_csv(out.with_name(f"{out.stem}_summary.csv"), summary)
    display.display_frame("📊 Сравнение с базовыми моделями", summary)
    return EXIT_OK


def _cov_threshold(text: str, args: argparse.Namespace, roe_n: int):
    try:
        value = float(text)
    except ValueError:
        value = artifacts.read_threshold_csv(Path(text))
    if args.zone:
        bounds = [int(v) for v in args.zone.split(",")]
        if len(bounds) != 4:
            raise ConfigurationError(f"Зона задается как r0,r1,c0,c1, получено {args.zone!r}")
        zone = planner.rectangle_zone(roe_n, (bounds[0], bounds[1]), (bounds[2], bounds[3]))
        value = planner.zoned_thresholds(zone, high=args.zone_high, low=args.zone_low)
    return value


def cmd_plan(args: argparse.Namespace, config: ToolkitConfig, display: DisplayUtils) -> int:
    """Размещение новых БС; результат none - штатный исход с кодом 0"""
    roi = artifacts.read_roi(Path(args.roi))
    plan_config = planner.PlanConfig.with_grid(
        _cov_threshold(str(_pick(args.cov_th, config.cov_th)), args, geodata.ROE_N),
        max_bs=_pick(args.max_bs, config.max_bs),
        frac_th=_pick(args.frac_th, config.frac_th),
        seed=_pick(args.seed, config.seed),
    )
    if args.simulator:
        params, fading, mc, _ = _sim_setup(args, config)
        predictor = planner.SimulatorPredictor(roi.spec, params, fading, mc, workers=_threads(args, config))
        source = {'predictor': 'simulator', 'simulation': simcore.simulation_manifest(params, fading, mc, [params.gamma_db], roi.spec)}
    elif args.model:
        model = cnnae.load_model(Path(args.model))
        predictor = cnnae.CnnAePredictor(model)
        source = {'predictor': 'cnnae', 'model_manifest': model.manifest}
    else:
        raise ConfigurationError("Нужна обученная модель (--model) или --simulator")

    design = planner.design_scenario(roi.image, predictor, plan_config, spec=roi.spec)
    outcome = design.outcome
    out = Path(args.out)
    before_name, after_name = f"{out.stem}_before.csv", f"{out.stem}_after.csv"
    artifacts.write_manifold_csv(out.with_name(before_name), design.before)
    artifacts.write_manifold_csv(out.with_name(after_name), design.after)
    artifacts.write_json(out, {
        'roi_id': roi.roi_id,
        'config': plan_config.echo(),
        'result': outcome.result,
        'deployment': design.deployment(),
        'best_locations': [list(loc) for loc in outcome.best_locations],
        'achieved_frac': outcome.achieved_frac,
        'cycles_used': outcome.cycles_used,
        'predictor_calls': outcome.predictor_calls,
        'stages_run': outcome.stages_run,
        'max_frac_sequence': outcome.max_frac_sequence(),
        'before_csv': before_name,
        'after_csv': after_name,
        'source': source,
    })
    display.display_plan(outcome.result, outcome.achieved_frac, outcome.cycles_used,
                         outcome.predictor_calls, outcome.locations or [])
    return EXIT_OK


def cmd_heatmap(args: argparse.Namespace, config: ToolkitConfig, display: DisplayUtils) -> int:
    """PGM-тепловая карта многообразия и JSON со шкалой"""
    path = Path(args.manifold)
    kind = args.kind or artifacts.manifold_kind_from_manifest(path)
    manifold = artifacts.read_manifold_csv(path, kind)
    artifacts.write_heatmap(manifold, Path(args.out), png=Path(args.png) if args.png else None, source=path.name)
    display.display_success(f"Тепловая карта записана в {args.out}")
    return EXIT_OK


def _add_sim_flags(parser: argparse.ArgumentParser, gamma_list: bool) -> None:
    parser.add_argument("--alpha", type=float, help="Показатель затухания (> 2)")
    parser.add_argument("--fading", help="rayleigh или nakagami:M")
    if gamma_list:
        parser.add_argument("--gamma-db", type=float, nargs="+", help="Пороги SINR в дБ")
    else:
        parser.add_argument("--gamma-db", type=float, help="Порог SINR в дБ")
    parser.add_argument("--noise-ratio", type=float, help="σ²/P")
    parser.add_argument("--mc", type=int, help="Число реализаций замираний")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coverage-manifold",
        description="Многообразия покрытия и скорости сотовой сети: симуляция, обучение, планирование",
    )
    parser.add_argument("--config", default="config.json", help="Файл конфигурации")
    parser.add_argument("--log-level", help="Уровень логирования")
    parser.add_argument("--log-file", help="Файл логов ('' - без файла)")
    parser.add_argument("--threads", type=int, help="Число потоков (по умолчанию COVMAN_THREADS)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="Разбор вышек и построение RoI")
    p.add_argument("--cells", required=True)
    p.add_argument("--bounds", required=True, help="S,W,N,E в градусах")
    p.add_argument("--side-km", type=float)
    p.add_argument("--lat-column")
    p.add_argument("--lon-column")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_ingest)

    p = sub.add_parser("synthesize", help="Синтетические RoI")
    p.add_argument("--process", choices=["ppp", "cluster"], default="ppp")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="Плотность PPP, БС/км²")
    p.add_argument("--parents", type=int, default=10)
    p.add_argument("--daughters", type=float, default=10.0)
    p.add_argument("--spread-km", type=float, default=0.5)
    p.add_argument("--side-km", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_synthesize)

    p = sub.add_parser("simulate", help="Монте-Карло многообразия")
    p.add_argument("--roi-dir", required=True)
    _add_sim_flags(p, gamma_list=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("train", help="Обучение CNN-AE")
    p.add_argument("--roi-dir", required=True)
    p.add_argument("--sim-dir", required=True)
    p.add_argument("--metric", choices=["coverage", "rate"], default="coverage")
    p.add_argument("--gamma-db", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--split", type=float)
    p.add_argument("--ff-hidden", type=int)
    p.add_argument("--latent-dim", type=int)
    p.add_argument("--rate-scale", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="Потери модели по RoI")
    p.add_argument("--model", required=True)
    p.add_argument("--roi-dir", required=True)
    p.add_argument("--sim-dir", required=True)
    p.add_argument("--subset", choices=["all", "test"], default="all")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("compare", help="Сравнение с базовыми моделями стохастической геометрии")
    p.add_argument("--model", required=True, nargs="+", help="Одна или несколько моделей (развертка по γ)")
    p.add_argument("--roi-dir", required=True)
    p.add_argument("--sim-dir", required=True)
    p.add_argument("--subset", choices=["all", "test"], default="test")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_compare)

    p = sub.add_parser("plan", help="Размещение новых БС")
    p.add_argument("--roi", required=True)
    p.add_argument("--model")
    p.add_argument("--simulator", action="store_true", help="Симулятор вместо CNN-AE")
    _add_sim_flags(p, gamma_list=False)
    p.add_argument("--cov-th", help="Скаляр или CSV 32×32")
    p.add_argument("--zone", help="Зона высокой нагрузки r0,r1,c0,c1 на сетке RoE")
    p.add_argument("--zone-high", type=float, default=0.9)
    p.add_argument("--zone-low", type=float, default=0.8)
    p.add_argument("--frac-th", type=float)
    p.add_argument("--max-bs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_plan)

    p = sub.add_parser("heatmap", help="PGM/PNG тепловая карта многообразия")
    p.add_argument("--manifold", required=True)
    p.add_argument("--kind", choices=["coverage", "rate_raw", "rate_scaled"])
    p.add_argument("--png")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_heatmap)
    return parser


def _report_error(error: BaseException, display: DisplayUtils) -> None:
    """Машиночитаемая строка в stderr и панель Rich"""
    sys.stderr.write(json.dumps({'error': type(error).__name__, 'message': str(error)}, ensure_ascii=False) + "\n")
    sys.stderr.flush()
    display.display_error(type(error).__name__, str(error))


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    config = ToolkitConfig.from_file(args.config)
    if args.log_level:
        config.log_level = args.log_level
    if args.log_file is not None:
        config.log_file = args.log_file or None
    setup_logging(level=config.log_level_value, log_file=config.log_file, format_string=config.log_format)

    display = DisplayUtils()
    display.print_header(args.command)
    handler: Callable[..., int] = args.handler
    try:
        return handler(args, config, display)
    except (CoverageToolkitError, ValidationError) as e:
        logger.error(f"❌ {args.command}: {e}")
        _report_error(e, display)
        return EXIT_USAGE
    except Exception as e:
        logger.exception(f"❌ Непредвиденная ошибка в {args.command}")
        _report_error(e, display)
        return EXIT_UNEXPECTED
