"""
Dataset records: samples, images and task units

One JSON object per line (format version 1):

    {"id": "s0",
     "tokens": {"ref": "matrices/s0.tokens.bin"}   or   [[...], [...]],
     "images": [{"image_id": "img0",
                 "global": [...]  or  {"ref": "globals.bin", "row": 3},
                 "regions": {"ref": "matrices/s0.img0.regions.bin"} or [[...]] or null}],
     "units": [{"unit_id": "u0", "kind": "span", "span": [0, 1], "gold": 2},
               {"unit_id": "u1", "kind": "pair", "head_span": [0, 0],
                "tail_span": [3, 4], "gold": 1}]}

Refs are resolved relative to the dataset file's directory. Token and
global matrices are loaded eagerly; region files are only checked for
existence here and read on demand.
"""
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from errors import ContractError, DanglingReferenceError, DatasetParseError
from .embedding_io import EmbeddingMatrix, read_matrix, write_matrix

logger = logging.getLogger(__name__)

DATASET_VERSION = 1

Span = Tuple[int, int]


@dataclass(frozen=True)
class MatrixRef:
    """Matrix stored either in a sidecar file or inline in the record"""
    path: Optional[Path] = None
    inline: Optional[EmbeddingMatrix] = None

    def __post_init__(self):
        if (self.path is None) == (self.inline is None):
            raise ContractError("MatrixRef needs exactly one of path or inline")

    @classmethod
    def from_matrix(cls, matrix: EmbeddingMatrix) -> 'MatrixRef':
        return cls(inline=matrix)

    @property
    def is_file(self) -> bool:
        return self.path is not None

    def load(self) -> EmbeddingMatrix:
        if self.inline is not None:
            return self.inline
        return read_matrix(self.path)


@dataclass(frozen=True, eq=False)
class ImageEntry:
    """One image of a sample: its global vector and optional region matrix"""
    image_id: str
    global_vec: np.ndarray
    regions: Optional[MatrixRef] = None

    @property
    def dim(self) -> int:
        return int(self.global_vec.shape[0])


@dataclass(frozen=True)
class UnitSpec:
    """
    A task unit: a candidate span (MNER) or a marked entity pair (MRE)

    For span units gold is the entity type id, or None for a non-entity.
    For pair units gold is the relation id and is always present.
    """
    unit_id: str
    kind: str
    span: Optional[Span] = None
    head_span: Optional[Span] = None
    tail_span: Optional[Span] = None
    gold: Optional[int] = None

    @property
    def is_pair(self) -> bool:
        return self.kind == 'pair'

    def spans(self) -> List[Span]:
        if self.is_pair:
            return [self.head_span, self.tail_span]
        return [self.span]


@dataclass
class Sample:
    """Text tokens, the images that come with it and the units to decide"""
    id: str
    tokens: EmbeddingMatrix
    images: List[ImageEntry] = field(default_factory=list)
    units: List[UnitSpec] = field(default_factory=list)

    @property
    def n_tokens(self) -> int:
        return self.tokens.rows

    def global_matrix(self) -> np.ndarray:
        """Global image vectors stacked as float64, shape (N, d)"""
        if not self.images:
            return np.zeros((0, 0), dtype=np.float64)
        return np.vstack([img.global_vec for img in self.images]).astype(np.float64)

    def unit(self, unit_id: str) -> UnitSpec:
        for u in self.units:
            if u.unit_id == unit_id:
                return u
        raise ContractError(f"Sample {self.id!r} has no unit {unit_id!r}")


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _parse_span(value, n_tokens: int, what: str, line_number: int) -> Span:
    if not isinstance(value, (list, tuple)) or len(value) != 2:
        raise DatasetParseError(f"{what} must be [a, b], got {value!r}", line_number)
    a, b = value
    if not all(isinstance(x, int) and not isinstance(x, bool) for x in (a, b)):
        raise DatasetParseError(f"{what} indices must be integers, got {value!r}", line_number)
    if not (0 <= a <= b < n_tokens):
        raise DatasetParseError(
            f"{what} ({a},{b}) outside token range [0, {n_tokens})", line_number
        )
    return (a, b)


def _resolve(ref: str, base_dir: Path, line_number: int) -> Path:
    path = Path(ref)
    if not path.is_absolute():
        path = base_dir / path
    if not path.is_file():
        raise DanglingReferenceError(f"line {line_number}: matrix file not found: {path}")
    return path


def _matrix_field(value, base_dir: Path, what: str, line_number: int) -> MatrixRef:
    if isinstance(value, dict):
        if 'ref' not in value:
            raise DatasetParseError(f"{what} object needs a 'ref' key", line_number)
        return MatrixRef(path=_resolve(value['ref'], base_dir, line_number))
    if isinstance(value, list):
        try:
            return MatrixRef(inline=EmbeddingMatrix(np.asarray(value, dtype=np.float64)))
        except (ValueError, TypeError) as e:
            raise DatasetParseError(f"{what}: {e}", line_number) from e
    raise DatasetParseError(f"{what} must be a ref object or inline rows", line_number)


def _parse_global(value, base_dir: Path, line_number: int,
                  matrix_cache: Dict[Path, EmbeddingMatrix]) -> np.ndarray:
    if isinstance(value, dict):
        if 'ref' not in value:
            raise DatasetParseError("global object needs a 'ref' key", line_number)
        path = _resolve(value['ref'], base_dir, line_number)
        if path not in matrix_cache:
            matrix_cache[path] = read_matrix(path)
        matrix = matrix_cache[path]
        row = value.get('row', 0)
        if not isinstance(row, int) or not (0 <= row < matrix.rows):
            raise DatasetParseError(f"global row {row!r} outside [0, {matrix.rows})", line_number)
        return matrix.data[row]
    if isinstance(value, list):
        try:
            vec = EmbeddingMatrix(np.asarray([value], dtype=np.float64))
        except (ValueError, TypeError) as e:
            raise DatasetParseError(f"global: {e}", line_number) from e
        return vec.data[0]
    raise DatasetParseError("global must be an inline vector or a ref object", line_number)


def _parse_unit(raw, index: int, n_tokens: int, line_number: int) -> UnitSpec:
    if not isinstance(raw, dict):
        raise DatasetParseError("unit must be an object", line_number)
    kind = raw.get('kind')
    unit_id = str(raw.get('unit_id', f"u{index}"))
    gold = raw.get('gold')
    if gold is not None and (not isinstance(gold, int) or isinstance(gold, bool)):
        raise DatasetParseError(f"unit {unit_id}: gold must be an integer or null", line_number)

    if kind == 'span':
        span = _parse_span(raw.get('span'), n_tokens, f"unit {unit_id} span", line_number)
        return UnitSpec(unit_id=unit_id, kind='span', span=span, gold=gold)
    if kind == 'pair':
        head = _parse_span(raw.get('head_span'), n_tokens, f"unit {unit_id} head_span", line_number)
        tail = _parse_span(raw.get('tail_span'), n_tokens, f"unit {unit_id} tail_span", line_number)
        if gold is None:
            raise DatasetParseError(f"pair unit {unit_id} needs a gold relation id", line_number)
        return UnitSpec(unit_id=unit_id, kind='pair', head_span=head, tail_span=tail, gold=gold)
    raise DatasetParseError(f"unit {unit_id}: kind must be 'span' or 'pair', got {kind!r}", line_number)


def parse_record(record: dict, base_dir: Path, line_number: int,
                 matrix_cache: Optional[Dict[Path, EmbeddingMatrix]] = None) -> Sample:
    """Validate one decoded JSON record and build a Sample"""
    matrix_cache = {} if matrix_cache is None else matrix_cache
    if not isinstance(record, dict):
        raise DatasetParseError("record must be a JSON object", line_number)
    if record.get('version', DATASET_VERSION) != DATASET_VERSION:
        raise DatasetParseError(f"unsupported dataset version {record.get('version')!r}", line_number)
    for key in ('id', 'tokens'):
        if key not in record:
            raise DatasetParseError(f"missing required field '{key}'", line_number)

    tokens = _matrix_field(record['tokens'], base_dir, 'tokens', line_number).load()

    raw_images = record.get('images') or []
    if not isinstance(raw_images, list):
        raise DatasetParseError("'images' must be a list", line_number)
    raw_units = record.get('units') or []
    if not isinstance(raw_units, list):
        raise DatasetParseError("'units' must be a list", line_number)

    images = []
    seen = set()
    for raw in raw_images:
        if not isinstance(raw, dict) or 'image_id' not in raw or 'global' not in raw:
            raise DatasetParseError("image needs 'image_id' and 'global'", line_number)
        image_id = str(raw['image_id'])
        if image_id in seen:
            raise DatasetParseError(f"duplicate image id {image_id!r}", line_number)
        seen.add(image_id)

        global_vec = _parse_global(raw['global'], base_dir, line_number, matrix_cache)
        regions = None
        if raw.get('regions') is not None:
            regions = _matrix_field(raw['regions'], base_dir, f"image {image_id} regions", line_number)
            if regions.inline is not None and regions.inline.dim != global_vec.shape[0]:
                raise DatasetParseError(
                    f"image {image_id}: region dim {regions.inline.dim} != global dim {global_vec.shape[0]}",
                    line_number,
                )
        images.append(ImageEntry(image_id=image_id, global_vec=global_vec, regions=regions))

    dims = {img.dim for img in images}
    if len(dims) > 1:
        raise DatasetParseError(f"global vectors have mixed dims {sorted(dims)}", line_number)

    units = [_parse_unit(raw, i, tokens.rows, line_number)
             for i, raw in enumerate(raw_units)]
    unit_ids = [u.unit_id for u in units]
    if len(set(unit_ids)) != len(unit_ids):
        raise DatasetParseError("duplicate unit ids", line_number)

    return Sample(id=str(record['id']), tokens=tokens, images=images, units=units)


def load_dataset(path: Union[str, Path]) -> List[Sample]:
    """
    Load a JSONL dataset

    Args:
        path: Dataset file, one record per line

    Returns:
        List of samples in file order

    Raises:
        DatasetParseError: malformed JSON or schema violation (with line number)
        DanglingReferenceError: a referenced matrix file does not exist
    """
    path = Path(path)
    base_dir = path.parent
    matrix_cache: Dict[Path, EmbeddingMatrix] = {}
    samples = []

    with open(path, 'rb') as f:
        for line_number, raw_line in enumerate(f, start=1):
            try:
                line = raw_line.decode('utf-8')
            except UnicodeDecodeError as e:
                raise DatasetParseError(f"invalid UTF-8 at byte {e.start}", line_number) from e
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetParseError(f"invalid JSON: {e.msg}", line_number) from e
            samples.append(parse_record(record, base_dir, line_number, matrix_cache))

    logger.info("Loaded %d samples from %s", len(samples), path)
    return samples


# ---------------------------------------------------------------------------
# Writing
# ---------------------------------------------------------------------------

def _span_list(span: Span) -> List[int]:
    return [int(span[0]), int(span[1])]


def _unit_record(unit: UnitSpec) -> dict:
    record = {'unit_id': unit.unit_id, 'kind': unit.kind}
    if unit.is_pair:
        record['head_span'] = _span_list(unit.head_span)
        record['tail_span'] = _span_list(unit.tail_span)
    else:
        record['span'] = _span_list(unit.span)
    record['gold'] = unit.gold
    return record


def write_dataset(samples: List[Sample], path: Union[str, Path],
                  matrix_dir: Optional[Union[str, Path]] = None) -> Path:
    """
    Write samples as JSONL with sidecar matrix files

    Token and region matrices go to binary files under matrix_dir
    (default: "<dataset stem>_matrices" next to the dataset); global
    vectors are written inline.

    Returns:
        Path of the dataset file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    matrix_dir = Path(matrix_dir) if matrix_dir is not None else path.parent / f"{path.stem}_matrices"
    matrix_dir.mkdir(parents=True, exist_ok=True)

    def rel(p: Path) -> str:
        return Path(os.path.relpath(p, path.parent)).as_posix()

    with open(path, 'w') as f:
        for i, sample in enumerate(samples):
            token_path = matrix_dir / f"{i:06d}.tokens.bin"
            write_matrix(sample.tokens, token_path)

            images = []
            for j, img in enumerate(sample.images):
                entry = {
                    'image_id': img.image_id,
                    'global': [float(x) for x in img.global_vec],
                    'regions': None,
                }
                if img.regions is not None:
                    region_path = matrix_dir / f"{i:06d}.{j:03d}.regions.bin"
                    write_matrix(img.regions.load(), region_path)
                    entry['regions'] = {'ref': rel(region_path)}
                images.append(entry)

            record = {
                'version': DATASET_VERSION,
                'id': sample.id,
                'tokens': {'ref': rel(token_path)},
                'images': images,
                'units': [_unit_record(u) for u in sample.units],
            }
            f.write(json.dumps(record) + '\n')

    logger.info("Wrote %d samples to %s", len(samples), path)
    return path
