"""Scenario files and deterministic table output."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .costs import CostSpec, Producer
from .errors import InputError
from .network import LineSpec, NetworkModel, build_network, network_from_matrix


@dataclass
class Scenario:
    network: NetworkModel
    producers: list[Producer]
    node_ids: list[Any]
    options: dict = field(default_factory=dict)

    def node_label(self, i: int) -> str:
        return str(self.node_ids[i])


def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise InputError(f"{where}: expected an object")
    if key not in obj:
        raise InputError(f"{where}.{key}: missing field")
    return obj[key]


def _number(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InputError(f"{where}: expected a number, got {value!r}")
    return float(value)


def parse_scenario(data: dict) -> Scenario:
    """Build a scenario from its JSON object form."""
    if not isinstance(data, dict):
        raise InputError("scenario: expected a JSON object")
    net_spec = _require(data, "network", "scenario")
    if "H" in net_spec:
        demand = [_number(v, f"network.demand[{k}]")
                  for k, v in enumerate(_require(net_spec, "demand", "network"))]
        net = network_from_matrix(_require(net_spec, "H", "network"),
                                  _require(net_spec, "c", "network"), demand)
        node_ids = list(net_spec.get("node_ids", range(net.node_count)))
    else:
        nodes = _require(net_spec, "nodes", "network")
        if not isinstance(nodes, list) or not nodes:
            raise InputError("network.nodes: expected a nonempty list")
        node_ids, demand = [], []
        for k, node in enumerate(nodes):
            node_ids.append(_require(node, "id", f"network.nodes[{k}]"))
            demand.append(_number(node.get("demand", 0.0), f"network.nodes[{k}].demand"))
        if len(set(map(str, node_ids))) != len(node_ids):
            raise InputError("network.nodes: duplicate node id")
        index = {str(v): k for k, v in enumerate(node_ids)}
        lines = []
        for k, ln in enumerate(net_spec.get("lines", [])):
            where = f"network.lines[{k}]"
            ends = []
            for key in ("from", "to"):
                ref = str(_require(ln, key, where))
                if ref not in index:
                    raise InputError(f"{where}.{key}: unknown node {ref!r}")
                ends.append(index[ref])
            cap = _number(_require(ln, "capacity", where), f"{where}.capacity")
            react = ln.get("reactance")
            react = None if react is None else _number(react, f"{where}.reactance")
            try:
                lines.append(LineSpec(ends[0], ends[1], cap, react))
            except InputError as exc:
                raise InputError(f"{where}: {exc}") from exc
        slack = str(net_spec.get("slack", node_ids[0]))
        if slack not in index:
            raise InputError(f"network.slack: unknown node {slack!r}")
        net = build_network(lines, demand, index[slack])
    index = {str(v): k for k, v in enumerate(node_ids)}
    producers = []
    for k, prod in enumerate(_require(data, "producers", "scenario")):
        where = f"producers[{k}]"
        ref = str(_require(prod, "node", where))
        if ref not in index:
            raise InputError(f"{where}.node: unknown node {ref!r}")
        cap = _number(_require(prod, "capacity", where), f"{where}.capacity")
        cost_spec = _require(prod, "cost", where)
        try:
            cost = CostSpec.from_dict(cost_spec)
            producers.append(Producer(index[ref], cap, cost, prod.get("name", f"g{k}")))
        except InputError as exc:
            raise InputError(f"{where}: {exc}") from exc
    return Scenario(net, producers, node_ids, dict(data.get("options", {})))


def load_scenario(path: str | Path) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    return parse_scenario(data)


def scenario_to_dict(s: Scenario) -> dict:
    net = s.network
    return {
        "network": {
            "H": net.shift_factor.tolist(),
            "c": net.line_capacity.tolist(),
            "demand": net.demand.tolist(),
            "node_ids": list(s.node_ids),
        },
        "producers": [
            {"name": p.label, "node": s.node_ids[p.node], "capacity": p.capacity,
             "cost": p.cost.to_dict()}
            for p in s.producers
        ],
    }


# -- tables ------------------------------------------------------------------


@dataclass
class Table:
    columns: list[str]
    rows: list[list[Any]]
    meta: dict = field(default_factory=dict)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Table):
            return NotImplemented
        return (self.columns == other.columns and self.meta == other.meta
                and len(self.rows) == len(other.rows)
                and all(_row_equal(a, b) for a, b in zip(self.rows, other.rows)))


def _row_equal(a, b) -> bool:
    if len(a) != len(b):
        return False
    for u, v in zip(a, b):
        if isinstance(u, float) and isinstance(v, float) and math.isnan(u) and math.isnan(v):
            continue
        if u != v:
            return False
    return True


def format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        text = format(value, ".9g")
        return "0" if text == "-0" else text
    return str(value)


def _json_cell(value):
    if isinstance(value, float):
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
    if hasattr(value, "item"):
        return _json_cell(value.item())
    return value


def emit(table: Table, fmt: str = "csv") -> bytes:
    """Serialise a table; identical tables give identical bytes."""
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(table.columns)
        for row in table.rows:
            writer.writerow([format_cell(_json_cell(v)) for v in row])
        return buf.getvalue().encode()
    if fmt == "json":
        doc = {"columns": table.columns,
               "rows": [[_json_cell(v) for v in row] for row in table.rows],
               "meta": {k: _json_cell(v) for k, v in table.meta.items()}}
        return (json.dumps(doc, indent=1, allow_nan=False) + "\n").encode()
    raise InputError(f"unknown output format {fmt!r}")


def _from_json_cell(value):
    if value is None:
        return math.nan
    if value == "inf":
        return math.inf
    if value == "-inf":
        return -math.inf
    return value


def parse_json_table(data: bytes | str) -> Table:
    doc = json.loads(data)
    return Table(list(doc["columns"]),
                 [[_from_json_cell(v) for v in row] for row in doc["rows"]],
                 {k: _from_json_cell(v) for k, v in doc.get("meta", {}).items()})


def read_csv_rows(path: str | Path) -> list[dict[str, str]]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise InputError(f"{path}: empty file")
            return [dict(row) for row in reader]
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc


def write_atomic(path: str | Path, payload: bytes) -> None:
    """Write through a temporary file in the target directory, then rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cells(values: Sequence) -> list:
    """Convert numpy scalars to plain Python values."""
    return [v.item() if hasattr(v, "item") else v for v in values]
