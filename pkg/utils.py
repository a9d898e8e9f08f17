"""
Utility functions for trend summarization: file formats, seeding and id aliases
"""
import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from models import DataFormatError, DatasetRecord, TimeSeries

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

GREEK_ALIASES = {
    "π": "pi",
    "₀": "0", "₁": "1", "₂": "2", "₃": "3", "₄": "4",
    "₅": "5", "₆": "6", "₇": "7", "₈": "8", "₉": "9",
    "′": "",
}


def normalize_policy_id(identifier: str) -> str:
    """
    Map Greek / subscript spellings ("π₁", "exp1-π₅", "p′₃") to the ASCII ids
    used internally ("pi1", "exp1-pi5", "p3").
    """
    for alias, ascii_form in GREEK_ALIASES.items():
        identifier = identifier.replace(alias, ascii_form)
    return identifier.strip()


def derive_seed(master_seed: int, *parts: Any) -> int:
    """
    Stable 64-bit seed derived from a master seed and a tag path.
    Independent of Python's hash randomization and of scheduling order.
    """
    key = ":".join(str(part) for part in (master_seed,) + parts)
    digest = hashlib.blake2b(key.encode('utf-8'), digest_size=8).digest()
    return int.from_bytes(digest, 'little')


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def canonical_json(payload: Any) -> str:
    """Serialize with sorted keys and fixed separators for byte-stable artifacts"""
    return json.dumps(payload, sort_keys=True, separators=(',', ':'), ensure_ascii=False)


def write_json(path: PathLike, payload: Union[BaseModel, Dict[str, Any]], force: bool = True) -> None:
    path = Path(path)
    check_writable(path, force)
    if isinstance(payload, BaseModel):
        payload = payload.model_dump(mode='json')
    path.write_text(canonical_json(payload) + "\n", encoding='utf-8')


def read_json(path: PathLike) -> Dict[str, Any]:
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from e


def check_writable(path: Path, force: bool) -> None:
    """Refuse to overwrite an existing artifact unless forced"""
    if path.exists() and not force:
        raise FileExistsError(f"{path} already exists (use --force to overwrite)")


def read_series_csv(path: PathLike, series_id: str = None) -> TimeSeries:
    """
    Read a two-column CSV (header: t,value) into a TimeSeries.
    Errors carry the offending line number.
    """
    path = Path(path)
    points = []
    with open(path, 'r', encoding='utf-8', newline='') as f:
        reader = csv.reader(f)
        for row in reader:
            line_num = reader.line_num
            if not row or all(not cell.strip() for cell in row):
                continue
            if line_num == 1 and [cell.strip().lower() for cell in row] == ["t", "value"]:
                continue
            if len(row) != 2:
                raise DataFormatError(f"{path}:{line_num}: expected 2 columns, got {len(row)}")
            try:
                points.append((float(row[0]), float(row[1])))
            except ValueError:
                raise DataFormatError(f"{path}:{line_num}: non-numeric value in {row}") from None
    try:
        return TimeSeries(id=series_id or path.stem, points=points)
    except ValidationError as e:
        raise DataFormatError(f"{path}: {e.errors()[0]['msg']}") from e


def write_dataset(path: PathLike, records: Iterable[DatasetRecord], force: bool = False) -> int:
    """Write dataset records as JSON lines; returns the number of lines"""
    path = Path(path)
    check_writable(path, force)
    count = 0
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for record in records:
            f.write(canonical_json(record.model_dump(mode='json')) + "\n")
            count += 1
    logger.info(f"Wrote {count} series to {path}")
    return count


def read_dataset(path: PathLike) -> List[DatasetRecord]:
    """
    Parse a dataset JSON-lines file.
    Unlike best-effort log parsing, any bad line is an error naming its line number.
    """
    path = Path(path)
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_num, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                entry = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataFormatError(f"{path}:{line_num}: invalid JSON: {e.msg}") from e
            if entry.get('version') != "v1":
                raise DataFormatError(
                    f"{path}:{line_num}: unsupported dataset version {entry.get('version')!r}"
                )
            try:
                records.append(DatasetRecord.model_validate(entry))
            except ValidationError as e:
                raise DataFormatError(f"{path}:{line_num}: {e.errors()[0]['msg']}") from e
    logger.debug(f"Read {len(records)} series from {path}")
    return records
