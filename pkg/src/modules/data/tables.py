"""
CSV tables with provenance comment lines
"""

import logging
from pathlib import Path
from typing import Dict, List, Sequence, Union

import pandas as pd

logger = logging.getLogger(__name__)


def write_table(rows: Union[pd.DataFrame, List[Dict]], path: Union[str, Path],
                header: Union[str, Sequence[str]], columns: Sequence[str] = None) -> Path:
    """
    Write a CSV preceded by '# ' comment lines

    Args:
        rows: DataFrame or list of row dicts
        path: Output file
        header: Provenance line(s), typically RunConfig.header()
        columns: Column order; required when rows is empty

    Returns:
        The path written
    """
    frame = rows if isinstance(rows, pd.DataFrame) else pd.DataFrame(rows, columns=columns)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [header] if isinstance(header, str) else list(header)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for line in lines:
            f.write(f"# {line}\n")
        frame.to_csv(f, index=False)
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def read_table(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def read_header(path: Union[str, Path]) -> Dict[str, str]:
    """key=value pairs of the comment lines"""
    fields = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            if not line.startswith("#"):
                break
            for token in line[1:].split():
                key, _, value = token.partition("=")
                fields[key] = value
    return fields
