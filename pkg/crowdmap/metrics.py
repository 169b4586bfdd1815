"""
crowdmap - Metrics Module
Count-level evaluation: MAE, RMSE, per-image reports, k-fold splits and
method x preset result matrices.
"""

import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.metrics import mean_absolute_error, mean_squared_error
from sklearn.model_selection import KFold

from .annotations import ImageAnnotation
from .density_core import DensityMap, count_from_map
from .exceptions import ValidationError
from .msnn import MultiStreamNetwork, normalize_image
from .utils.helpers import atomic_write_text, format_float, load_dmap, load_pgm, parallel_map
from .utils.logger import LoggerMixin, get_logger

logger = get_logger(__name__)

REPORT_COLUMNS = ['image_id', 'y_true', 'y_pred', 'abs_err']


@dataclass(frozen=True)
class EvalRecord:
    image_id: str
    y_true: float
    y_pred: float

    def __post_init__(self):
        if self.y_true < 0:
            raise ValidationError(f"'{self.image_id}': ground-truth count {self.y_true} is negative")

    @property
    def abs_err(self) -> float:
        return abs(self.y_true - self.y_pred)


def _arrays(records: Sequence[EvalRecord]) -> Tuple[np.ndarray, np.ndarray]:
    if len(records) == 0:
        raise ValidationError("metrics need at least one record")
    y_true = np.array([r.y_true for r in records], dtype=np.float64)
    y_pred = np.array([r.y_pred for r in records], dtype=np.float64)
    return y_true, y_pred


def mae(records: Sequence[EvalRecord]) -> float:
    """Mean absolute count error."""
    y_true, y_pred = _arrays(records)
    return float(mean_absolute_error(y_true, y_pred))


def rmse(records: Sequence[EvalRecord]) -> float:
    """Root mean squared count error."""
    y_true, y_pred = _arrays(records)
    return float(np.sqrt(mean_squared_error(y_true, y_pred)))


class CountPredictor(Protocol):
    def predict(self, ann: ImageAnnotation) -> float: ...


class NetworkPredictor:
    """Counts from a trained network applied to `<images_dir>/<image_id>.pgm`."""

    def __init__(self, network: MultiStreamNetwork, images_dir: Union[str, Path]):
        self.network = network
        self.images_dir = Path(images_dir)

    def predict(self, ann: ImageAnnotation) -> float:
        pixels = load_pgm(self.images_dir / f"{ann.image_id}.pgm")
        return self.network.predict_count(normalize_image(pixels))


class MapPredictor:
    """Counts read from stored maps `<maps_dir>/<image_id>.dmap`."""

    def __init__(self, maps_dir: Union[str, Path]):
        self.maps_dir = Path(maps_dir)

    def predict(self, ann: ImageAnnotation) -> float:
        return count_from_map(load_dmap(self.maps_dir / f"{ann.image_id}.dmap"))


class GroundTruthPredictor:
    """Oracle that predicts the generated ground-truth map itself."""

    def __init__(self, generator: Callable[[ImageAnnotation], DensityMap]):
        self.generator = generator

    def predict(self, ann: ImageAnnotation) -> float:
        return count_from_map(self.generator(ann))


@dataclass
class EvalReport:
    records: List[EvalRecord]
    failures: Dict[str, str] = field(default_factory=dict)
    order: List[str] = field(default_factory=list)
    label: Dict[str, str] = field(default_factory=dict)
    expected: Dict[str, float] = field(default_factory=dict)

    @property
    def mae(self) -> float:
        return mae(self.records)

    @property
    def rmse(self) -> float:
        return rmse(self.records)

    def to_frame(self) -> pd.DataFrame:
        """One row per evaluated image; failed images keep their count but no prediction."""
        by_id = {r.image_id: r for r in self.records}
        rows = []
        for image_id in self.order or list(by_id):
            record = by_id.get(image_id)
            if record is None:
                rows.append({'image_id': image_id, 'y_true': self.expected.get(image_id, np.nan),
                             'y_pred': np.nan, 'abs_err': np.nan})
            else:
                rows.append({'image_id': image_id, 'y_true': record.y_true,
                             'y_pred': record.y_pred, 'abs_err': record.abs_err})
        return pd.DataFrame(rows, columns=REPORT_COLUMNS)

    def to_csv(self) -> str:
        """
        `image_id,y_true,y_pred,abs_err` rows, then `MAE,<v>` and `RMSE,<v>` footers.
        Floats use the shortest round-trip form.
        """
        buffer = io.StringIO()
        self.to_frame().to_csv(buffer, index=False, float_format=format_float, na_rep='', lineterminator='\n')
        buffer.write(f"MAE,{format_float(self.mae)}\n")
        buffer.write(f"RMSE,{format_float(self.rmse)}\n")
        return buffer.getvalue()

    def write(self, path: Union[str, Path]) -> Path:
        return atomic_write_text(path, self.to_csv())

    def summary(self) -> str:
        lines = [
            "=" * 50,
            " CROWD COUNT EVALUATION REPORT",
            "=" * 50,
            f"Images evaluated: {len(self.records)}",
            f"Images failed: {len(self.failures)}",
            f"MAE: {self.mae:.4f}",
            f"RMSE: {self.rmse:.4f}",
        ]
        for key, value in sorted(self.label.items()):
            lines.append(f"{key}: {value}")
        return "\n".join(lines)


def read_report(path: Union[str, Path]) -> Tuple[pd.DataFrame, float, float]:
    """Parse a report written by `EvalReport.write` into (rows, MAE, RMSE)."""
    lines = Path(path).read_text(encoding='utf-8').splitlines()
    footer = dict(line.split(',', 1) for line in lines[-2:])
    rows = pd.read_csv(io.StringIO("\n".join(lines[:-2]) + "\n"), dtype={'image_id': str})
    return rows, float(footer['MAE']), float(footer['RMSE'])


class Evaluator(LoggerMixin):
    def __init__(self, predictor: CountPredictor, workers: int = 1):
        self.predictor = predictor
        self.workers = workers

    def evaluate(self, annotations: Sequence[ImageAnnotation], **label: str) -> EvalReport:
        """
        Predict every image; y_true is the annotated head count.

        Images whose inputs cannot be read become failure entries and the aggregate
        is taken over the rest.
        """
        self.logger.info(f"Starting evaluation of {len(annotations)} images...")

        def run(ann: ImageAnnotation):
            try:
                return ann, self.predictor.predict(ann), None
            except (FileNotFoundError, OSError, ValidationError) as exc:
                return ann, None, str(exc)

        records, failures = [], {}
        for ann, prediction, error in parallel_map(run, annotations, self.workers):
            if error is not None:
                failures[ann.image_id] = error
                self.logger.warning(f"'{ann.image_id}' skipped: {error}")
            else:
                records.append(EvalRecord(ann.image_id, float(ann.count), float(prediction)))
        if not records:
            raise ValidationError("no image could be evaluated")
        report = EvalReport(records, failures, [a.image_id for a in annotations], dict(label),
                            {a.image_id: float(a.count) for a in annotations})
        self.logger.info(f"Evaluation completed: MAE {report.mae:.4f}, RMSE {report.rmse:.4f}")
        return report


def evaluate(predictor: CountPredictor, annotations: Sequence[ImageAnnotation],
             workers: int = 1, **label: str) -> EvalReport:
    return Evaluator(predictor, workers).evaluate(annotations, **label)


def kfold_splits(n_items: int, folds: int = 5, seed: Optional[int] = 0) -> List[Tuple[np.ndarray, np.ndarray]]:
    """
    Deterministic (train_indices, test_indices) pairs for k-fold cross-validation.
    """
    if folds < 2 or folds > n_items:
        raise ValidationError(f"cannot split {n_items} items into {folds} folds")
    splitter = KFold(n_splits=folds, shuffle=seed is not None, random_state=seed)
    return [(train, test) for train, test in splitter.split(np.arange(n_items))]


def results_matrix(entries: Sequence[Tuple[str, str, float, float]]) -> pd.DataFrame:
    """
    Method x preset table of MAE and RMSE with averages.

    Args:
        entries: (method, preset, mae, rmse) tuples

    Returns:
        DataFrame indexed by preset plus 'Average', columns (method, metric) plus averages
    """
    frame = pd.DataFrame(entries, columns=['method', 'preset', 'MAE', 'RMSE'])
    table = frame.pivot_table(index='preset', columns='method', values=['MAE', 'RMSE'], aggfunc='mean')
    table = table.swaplevel(0, 1, axis=1).sort_index(axis=1)
    for metric in ('MAE', 'RMSE'):
        table[('Average', metric)] = table.xs(metric, axis=1, level=1).mean(axis=1)
    table.loc['Average'] = table.mean(axis=0)
    table.loc['Average', ('Average', 'MAE')] = np.nan
    table.loc['Average', ('Average', 'RMSE')] = np.nan
    return table
