"""
crowdmap - Annotation Module
Head-point annotations and external face detections: data model and file ingestion.

Coordinates are (row, col), zero-indexed from the top-left corner; fractional values
are allowed. Duplicate head points are legal and accumulate in every density map.
"""

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .exceptions import AnnotationParseError, ValidationError
from .utils.helpers import atomic_write_text
from .utils.logger import get_logger

logger = get_logger(__name__)

Shape = Tuple[int, int]


@dataclass(frozen=True)
class Point2D:
    row: float
    col: float

    def __post_init__(self):
        if not (math.isfinite(self.row) and math.isfinite(self.col)):
            raise ValidationError(f"point ({self.row}, {self.col}) is not finite")

    def inside(self, shape: Shape) -> bool:
        rows, cols = shape
        return 0 <= self.row < rows and 0 <= self.col < cols

    def distance(self, other: "Point2D") -> float:
        return math.hypot(self.row - other.row, self.col - other.col)


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box given by its centre, height and width (pixels)."""

    center: Point2D
    height: float
    width: float

    def __post_init__(self):
        if not (self.height > 0 and self.width > 0):
            raise ValidationError(
                f"box at ({self.center.row}, {self.center.col}) has non-positive size "
                f"{self.height} x {self.width}"
            )

    @property
    def top(self) -> float:
        return self.center.row - self.height / 2.0

    @property
    def bottom(self) -> float:
        return self.center.row + self.height / 2.0

    @property
    def left(self) -> float:
        return self.center.col - self.width / 2.0

    @property
    def right(self) -> float:
        return self.center.col + self.width / 2.0


@dataclass(frozen=True)
class ImageAnnotation:
    image_id: str
    shape: Shape
    heads: Tuple[Point2D, ...] = field(default_factory=tuple)

    def __post_init__(self):
        rows, cols = self.shape
        if rows <= 0 or cols <= 0:
            raise ValidationError(f"image '{self.image_id}' has invalid shape {self.shape}")
        object.__setattr__(self, 'shape', (int(rows), int(cols)))
        object.__setattr__(self, 'heads', tuple(self.heads))
        for index, head in enumerate(self.heads):
            if not head.inside(self.shape):
                raise ValidationError(
                    f"image '{self.image_id}': head {index} at ({head.row}, {head.col}) "
                    f"lies outside shape {self.shape}"
                )

    @property
    def count(self) -> int:
        """Person count P."""
        return len(self.heads)


@dataclass(frozen=True)
class DetectionSet:
    image_id: str
    boxes: Tuple[BBox, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, 'boxes', tuple(self.boxes))

    def __len__(self) -> int:
        return len(self.boxes)

    def validate_against(self, shape: Shape) -> "DetectionSet":
        """Check every box centre lies inside the owning image; boxes may overhang."""
        for index, box in enumerate(self.boxes):
            if not box.center.inside(shape):
                raise ValidationError(
                    f"detections for '{self.image_id}': box {index} centre "
                    f"({box.center.row}, {box.center.col}) lies outside shape {tuple(shape)}"
                )
        return self


def _load_json_list(path: Union[str, Path]) -> List[Any]:
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as exc:
        raise AnnotationParseError(path, f"line {exc.lineno}", exc.msg) from exc
    except OSError as exc:
        raise AnnotationParseError(path, "-", f"cannot read file: {exc.strerror}") from exc
    if not isinstance(document, list):
        raise AnnotationParseError(path, 0, "top level must be a list")
    return document


def _number(value: Any, path: Path, index: int, what: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise AnnotationParseError(path, index, f"{what} must be a number, got {value!r}")
    return float(value)


def _parse_annotation_record(record: Any, path: Path, index: int) -> ImageAnnotation:
    if not isinstance(record, dict):
        raise AnnotationParseError(path, index, "record must be an object")
    missing = {'image', 'shape', 'heads'} - set(record)
    if missing:
        raise AnnotationParseError(path, index, f"missing fields {sorted(missing)}")
    image_id = record['image']
    if not isinstance(image_id, str):
        raise AnnotationParseError(path, index, "'image' must be a string")
    shape = record['shape']
    if (not isinstance(shape, list) or len(shape) != 2
            or not all(isinstance(v, int) and not isinstance(v, bool) for v in shape)):
        raise AnnotationParseError(path, index, f"'shape' must be [rows, cols] integers, got {shape!r}")
    heads_raw = record['heads']
    if not isinstance(heads_raw, list):
        raise AnnotationParseError(path, index, "'heads' must be a list")
    heads = []
    for head in heads_raw:
        if not isinstance(head, list) or len(head) != 2:
            raise AnnotationParseError(path, index, f"head must be [row, col], got {head!r}")
        heads.append(Point2D(_number(head[0], path, index, 'row'), _number(head[1], path, index, 'col')))
    return ImageAnnotation(image_id=image_id, shape=(shape[0], shape[1]), heads=tuple(heads))


def parse_annotations(path: Union[str, Path]) -> List[ImageAnnotation]:
    """
    Parse an annotation file.

    Args:
        path: JSON file holding a list of {"image", "shape": [rows, cols], "heads": [[row, col], ...]}

    Returns:
        One ImageAnnotation per record, in file order, head order preserved

    Raises:
        AnnotationParseError: malformed record
        ValidationError: head outside its image
    """
    path = Path(path)
    records = _load_json_list(path)
    annotations = [_parse_annotation_record(record, path, index) for index, record in enumerate(records)]
    logger.debug(f"Parsed {len(annotations)} annotations from {path}")
    return annotations


def _parse_box(raw: Any, path: Path, index: int) -> BBox:
    if not isinstance(raw, dict) or not {'cy', 'cx', 'h', 'w'} <= set(raw):
        raise AnnotationParseError(path, index, f"box must hold cy, cx, h, w; got {raw!r}")
    center = Point2D(_number(raw['cy'], path, index, 'cy'), _number(raw['cx'], path, index, 'cx'))
    if center.row < 0 or center.col < 0:
        raise ValidationError(f"{path}: record {index}: box centre ({center.row}, {center.col}) is negative")
    return BBox(center, _number(raw['h'], path, index, 'h'), _number(raw['w'], path, index, 'w'))


def parse_detection_file(path: Union[str, Path]) -> Dict[str, DetectionSet]:
    """
    Parse a detection file holding one or more images.

    Returns:
        DetectionSet per image id, in file order
    """
    path = Path(path)
    detections: Dict[str, DetectionSet] = {}
    for index, record in enumerate(_load_json_list(path)):
        if not isinstance(record, dict) or 'image' not in record or 'boxes' not in record:
            raise AnnotationParseError(path, index, "record must hold 'image' and 'boxes'")
        if not isinstance(record['boxes'], list):
            raise AnnotationParseError(path, index, "'boxes' must be a list")
        image_id = str(record['image'])
        if image_id in detections:
            raise AnnotationParseError(path, index, f"duplicate image '{image_id}'")
        detections[image_id] = DetectionSet(image_id, tuple(_parse_box(b, path, index) for b in record['boxes']))
    return detections


def parse_detections(path: Union[str, Path], image_id: Optional[str] = None,
                     shape: Optional[Shape] = None) -> DetectionSet:
    """
    Parse the detections of one image.

    Args:
        path: Detection JSON file
        image_id: Image to pick; may be omitted when the file holds a single record
        shape: Owning image shape; when given, box centres are validated against it

    Returns:
        DetectionSet (possibly empty)
    """
    detections = parse_detection_file(path)
    if image_id is None:
        if len(detections) != 1:
            raise ValidationError(f"{path}: holds {len(detections)} images; name the one to read")
        result = next(iter(detections.values()))
    else:
        result = detections.get(image_id, DetectionSet(image_id))
    if shape is not None:
        result.validate_against(shape)
    return result


def annotations_to_records(annotations: Iterable[ImageAnnotation]) -> List[Dict[str, Any]]:
    return [
        {
            'image': ann.image_id,
            'shape': [ann.shape[0], ann.shape[1]],
            'heads': [[head.row, head.col] for head in ann.heads],
        }
        for ann in annotations
    ]


def serialize_annotations(annotations: Iterable[ImageAnnotation]) -> str:
    """Render annotations in the file format read by `parse_annotations`."""
    return json.dumps(annotations_to_records(annotations), indent=1) + '\n'


def write_annotations(path: Union[str, Path], annotations: Iterable[ImageAnnotation]) -> Path:
    return atomic_write_text(path, serialize_annotations(annotations))


def detections_to_records(detection_sets: Iterable[DetectionSet],
                          crowded: Optional[Dict[str, Sequence[bool]]] = None) -> List[Dict[str, Any]]:
    """
    Detection-file records; with `crowded`, each box also carries a "crowded" flag.
    """
    records = []
    for detection_set in detection_sets:
        flags = crowded.get(detection_set.image_id) if crowded else None
        boxes = []
        for index, box in enumerate(detection_set.boxes):
            entry = {'cy': box.center.row, 'cx': box.center.col, 'h': box.height, 'w': box.width}
            if flags is not None:
                entry['crowded'] = bool(flags[index])
            boxes.append(entry)
        records.append({'image': detection_set.image_id, 'boxes': boxes})
    return records


def serialize_detections(detection_sets: Iterable[DetectionSet],
                         crowded: Optional[Dict[str, Sequence[bool]]] = None) -> str:
    return json.dumps(detections_to_records(detection_sets, crowded), indent=1) + '\n'


def parse_boxes_sidecar(path: Union[str, Path]) -> Dict[str, List[Tuple[BBox, bool]]]:
    """Read a boxes sidecar: detection format plus a "crowded" flag per box."""
    path = Path(path)
    result: Dict[str, List[Tuple[BBox, bool]]] = {}
    for index, record in enumerate(_load_json_list(path)):
        if not isinstance(record, dict) or 'image' not in record or 'boxes' not in record:
            raise AnnotationParseError(path, index, "record must hold 'image' and 'boxes'")
        result[str(record['image'])] = [
            (_parse_box(raw, path, index), bool(raw.get('crowded', False))) for raw in record['boxes']
        ]
    return result
