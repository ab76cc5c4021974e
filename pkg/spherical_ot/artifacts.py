"""Deterministic run artifacts: JSON, CSV and OBJ files tagged with the config hash."""

import csv
import io
import json
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence

import numpy as np
import structlog

from .config import settings
from .reflector import CellDecomposition, Reflector
from .solver import DualPotentials, KantorovichSolution
from .recovery import RecoveredMap
from .sphere import DiscreteMeasure

logger = structlog.get_logger()


def _plain(value: Any) -> Any:
    """Convert numpy scalars and arrays so json can encode them."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        # json has no infinities; keep them readable
        if value != value or value in (float("inf"), float("-inf")):
            return repr(value)
        return value
    return value


def _num(x: float) -> str:
    return repr(float(x))


class ArtifactWriter:
    """Writes every artifact of one run into ``output_dir``.

    Files carry the config hash and the active tolerances and never a
    timestamp, so reruns of the same config produce identical bytes.
    """

    def __init__(self, output_dir: Path, config_hash: str, tolerances: Optional[Dict[str, float]] = None):
        self.output_dir = Path(output_dir)
        self.config_hash = config_hash
        self.tolerances = settings.tolerances() if tolerances is None else dict(tolerances)
        self.log = logger.bind(output_dir=str(self.output_dir))
        self.written: list = []

    def _path(self, name: str) -> Path:
        self.output_dir.mkdir(parents=True, exist_ok=True)
        path = self.output_dir / name
        self.written.append(path)
        return path

    def _header_lines(self) -> list:
        return [f"config_hash={self.config_hash}",
                "tolerances=" + json.dumps(self.tolerances, sort_keys=True, separators=(",", ":"))]

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        document = {"config_hash": self.config_hash, "tolerances": self.tolerances}
        document.update(_plain(payload))
        path = self._path(name)
        path.write_text(json.dumps(document, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        self.log.debug("Wrote artifact", file=name)
        return path

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        buffer = io.StringIO()
        for line in self._header_lines():
            buffer.write(f"# {line}\n")
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])
        path = self._path(name)
        path.write_text(buffer.getvalue(), encoding="utf-8")
        self.log.debug("Wrote artifact", file=name)
        return path

    def write_obj(self, name: str, vertices: np.ndarray, faces: np.ndarray) -> Path:
        """Wavefront OBJ; two-column faces are written as polyline segments."""
        lines = [f"# {line}" for line in self._header_lines()]
        lines += ["v " + " ".join(_num(c) for c in v) for v in vertices]
        keyword = "l" if faces.shape[1] == 2 else "f"
        lines += [f"{keyword} " + " ".join(str(int(k) + 1) for k in face) for face in faces]
        path = self._path(name)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        self.log.debug("Wrote artifact", file=name, vertices=len(vertices), faces=len(faces))
        return path

    # Domain-specific dumps

    def write_plan(self, solution: KantorovichSolution, name: str = "plan.json", **extra: Any) -> Path:
        payload = {
            "pairs": [[i, j, w] for i, j, w in solution.plan.pairs],
            "cost": solution.total_cost,
            "dual_u": solution.duals.u,
            "dual_v": solution.duals.v,
            "backend": solution.backend,
            "pivots": solution.pivots,
        }
        payload.update(extra)
        return self.write_json(name, payload)

    def write_duals(self, duals: DualPotentials, name: str = "duals.csv") -> Path:
        rows = [("u", i, float(x)) for i, x in enumerate(duals.u)]
        rows += [("v", j, float(x)) for j, x in enumerate(duals.v)]
        return self.write_csv(name, ("side", "index", "value"), rows)

    def write_cells(self, reflector: Reflector, cells: CellDecomposition, targets: DiscreteMeasure,
                    name: str = "cells.csv") -> Path:
        nu = targets.weights
        rel = (cells.masses - nu) / nu
        rows = [(i, float(reflector.focal_params[i]), float(cells.masses[i]), float(nu[i]), float(rel[i]))
                for i in range(len(reflector))]
        return self.write_csv(name, ("i", "p_i", "G_i", "nu_i", "rel_err"), rows)

    def write_map(self, recovered: RecoveredMap, name: str = "map.csv") -> Path:
        d = recovered.points.shape[1]
        header = [f"x{k}" for k in range(d)] + [f"Tx{k}" for k in range(d)] + ["index", "differentiable"]
        rows = []
        for x, tx, idx, ok in zip(recovered.points, recovered.images, recovered.index, recovered.valid):
            rows.append([float(c) for c in x] + [float(c) for c in tx] + [int(idx), int(bool(ok))])
        return self.write_csv(name, header, rows)
