# Copyright © 2023-2024 Apple Inc.
# Copyright © 2025 mlx-popcast contributors.

import enum
import json
import re
from pathlib import Path
from typing import Any, Dict, Iterable, List, Union

import numpy as np
import yaml

yaml_loader = yaml.SafeLoader
yaml_loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(
        """^(?:
     [-+]?(?:[0-9][0-9_]*)\\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\\.[0-9_]+(?:[eE][-+][0-9]+)?
    |[-+]?[0-9][0-9_]*(?::[0-5]?[0-9])+\\.[0-9_]*
    |[-+]?\\.(?:inf|Inf|INF)
    |\\.(?:nan|NaN|NAN))$""",
        re.X,
    ),
    list("-+0123456789."),
)


def tabulate(rows: List[List[Union[str, int]]], headers: List[str]) -> str:
    """
    Inspired by:
    - stackoverflow.com/a/8356620/593036
    - stackoverflow.com/questions/9535954/printing-lists-as-tabular-data
    """
    col_widths = [max(len(str(x)) for x in col) for col in zip(*rows, headers)]
    row_format = ("{{:{}}} " * len(headers)).format(*col_widths)
    lines = []
    lines.append(row_format.format(*headers))
    lines.append(row_format.format(*["-" * w for w in col_widths]))
    for row in rows:
        lines.append(row_format.format(*[str(x) for x in row]))
    return "\n".join(lines)


def _to_builtin(obj: Any):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def write_json(path: Union[str, Path], obj: Any):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fid:
        json.dump(obj, fid, indent=4, sort_keys=True, default=_to_builtin)
        fid.write("\n")


def read_json(path: Union[str, Path]) -> Any:
    with open(path, "r") as fid:
        return json.load(fid)


def write_jsonl(path: Union[str, Path], rows: Iterable[Dict]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fid:
        for row in rows:
            fid.write(json.dumps(row, sort_keys=True, default=_to_builtin) + "\n")


def read_jsonl(path: Union[str, Path]) -> List[Dict]:
    with open(path, "r") as fid:
        return [json.loads(l) for l in fid if l.strip()]


def write_text(path: Union[str, Path], text: str):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fid:
        fid.write(text)


def load_config_file(path: Union[str, Path]) -> Dict:
    with open(path, "r") as file:
        config = yaml.load(file, yaml_loader)
    return config or {}


def save_config(config: dict, config_path: Union[str, Path]) -> None:
    """Save a run configuration as JSON, keys sorted for readability."""
    write_json(config_path, dict(sorted(config.items())))
