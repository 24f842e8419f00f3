"""File formats: dataset CSV, scenario and design configs, result writers, run manifest."""

from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from progfs import __version__
from progfs.errors import DataFormatError
from progfs.groupseq import GsDesign
from progfs.profs import ExaminationSchedule, quantile_schedule
from progfs.simulation import (
    CopulaSpec,
    PiecewiseHazard,
    ScenarioConfig,
    constant_effect_scenario,
    short_term_scenario,
)
from progfs.winstat import TrialDataset

__all__ = [
    "read_dataset_csv",
    "write_dataset_csv",
    "load_scenarios",
    "load_design",
    "write_json",
    "write_csv",
    "RunManifest",
]

_TRUE = {"1", "true", "yes"}
_FALSE = {"0", "false", "no"}


def _header_layers(header: list[str], path) -> int:
    fixed = ["id", "arm", "stratum"]
    cols = [h.strip() for h in header]
    if cols[:3] != fixed:
        raise DataFormatError(f"{path}: header must start with id,arm,stratum; got {','.join(cols[:3])}")
    rest = cols[3:]
    if not rest or len(rest) % 2:
        raise DataFormatError(f"{path}: expected time_k,censored_k column pairs after stratum")
    for k in range(len(rest) // 2):
        want = [f"time_{k + 1}", f"censored_{k + 1}"]
        if rest[2 * k : 2 * k + 2] != want:
            raise DataFormatError(
                f"{path}: columns {3 + 2 * k + 1}-{3 + 2 * k + 2} must be {','.join(want)}, "
                f"got {','.join(rest[2 * k : 2 * k + 2])}"
            )
    return len(rest) // 2


def read_dataset_csv(path: str | Path) -> TrialDataset:
    """Parse ``id,arm,stratum,time_1,censored_1,...``; errors name the row and column."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8-sig")
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read ({exc.strerror})") from exc
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise DataFormatError(f"{path}: file is empty")
    header = rows[0]
    n_layers = _header_layers(header, path)
    names = [h.strip() for h in header]
    ids, arms, strata = [], [], []
    times = np.empty((len(rows) - 1, n_layers))
    censored = np.empty((len(rows) - 1, n_layers), dtype=bool)
    for r_i, row in enumerate(rows[1:]):
        line = r_i + 2
        if len(row) != len(names):
            raise DataFormatError(f"{path}: row {line} has {len(row)} fields, expected {len(names)}")
        ids.append(row[0].strip())
        arm = row[1].strip()
        if arm not in ("0", "1"):
            raise DataFormatError(f"{path}: row {line}, column 'arm': expected 0 or 1, got {arm!r}")
        arms.append(int(arm))
        strata.append(row[2].strip())
        for k in range(n_layers):
            tcol, ccol = 3 + 2 * k, 4 + 2 * k
            raw_t = row[tcol].strip()
            try:
                t = float(raw_t)
            except ValueError:
                raise DataFormatError(
                    f"{path}: row {line}, column '{names[tcol]}': cannot parse {raw_t!r} as a number"
                ) from None
            if not math.isfinite(t) or t < 0:
                raise DataFormatError(f"{path}: row {line}, column '{names[tcol]}': time must be finite and >= 0")
            raw_c = row[ccol].strip().lower()
            if raw_c in _TRUE:
                c = True
            elif raw_c in _FALSE:
                c = False
            else:
                raise DataFormatError(
                    f"{path}: row {line}, column '{names[ccol]}': expected 0 or 1, got {row[ccol]!r}"
                )
            times[r_i, k] = t
            censored[r_i, k] = c
    if not arms:
        raise DataFormatError(f"{path}: no data rows")
    has_strata = any(strata)
    return TrialDataset(
        np.array(arms), times, censored, np.array(strata) if has_strata else None, tuple(ids)
    )


def write_dataset_csv(data: TrialDataset, path: str | Path) -> None:
    header = ["id", "arm", "stratum"]
    for k in range(data.layer_count):
        header += [f"time_{k + 1}", f"censored_{k + 1}"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(data.N):
            row = [
                data.ids[i] if data.ids is not None else str(i + 1),
                int(data.arm[i]),
                "" if data.strata is None else data.strata[i],
            ]
            for k in range(data.layer_count):
                row += [repr(float(data.times[i, k])), int(data.censored[i, k])]
            w.writerow(row)


def _floats(value: Any) -> list[float]:
    if value is None:
        return []
    if isinstance(value, (int, float)):
        return [float(value)]
    if isinstance(value, str):
        return [float(v) for v in value.replace(";", ",").split(",") if v.strip()]
    return [float(v) for v in value]


def _read_config(path: Path) -> dict[str, dict[str, Any]]:
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataFormatError(f"{path}: cannot read ({exc.strerror})") from exc
    if path.suffix.lower() == ".json":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(doc, dict):
            raise DataFormatError(f"{path}: top level must be an object")
        return {k: v for k, v in doc.items() if isinstance(v, dict)} | {
            "": {k: v for k, v in doc.items() if not isinstance(v, dict)}
        }
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise DataFormatError(f"{path}: {exc}".replace("\n", " ")) from None
    return {s: dict(parser[s]) for s in parser.sections()}


def _arm_hazards(section: dict[str, Any], layer: str) -> PiecewiseHazard | None:
    rates = _floats(section.get(f"{layer}_rates"))
    if not rates:
        return None
    return PiecewiseHazard(tuple(_floats(section.get(f"{layer}_cuts"))), tuple(rates))


def _number(section: dict, key: str, kind=float, default=None):
    if key not in section or section[key] in ("", None):
        return default
    try:
        return kind(section[key])
    except (TypeError, ValueError):
        raise DataFormatError(f"key {key!r}: cannot parse {section[key]!r}") from None


def load_scenarios(path: str | Path, default_seed: int = 20240101) -> list[ScenarioConfig]:
    """Scenario file (INI ``[scenario]``/``[treatment]``/``[control]`` or the same keys in JSON).

    ``follow_up`` may list several values, giving one scenario per value.
    """
    path = Path(path)
    doc = _read_config(path)
    sc = doc.get("scenario") or doc.get("")
    if not sc:
        raise DataFormatError(f"{path}: missing [scenario] section")
    follow_ups = _floats(sc.get("follow_up"))
    if not follow_ups:
        raise DataFormatError(f"{path}: scenario needs follow_up")
    common = dict(
        n_total=_number(sc, "n_total", int, 2000),
        allocation=_number(sc, "allocation", float, 0.5),
        s_inf=_number(sc, "s_inf", float, 0.0),
        alpha=_number(sc, "alpha", float, 0.05),
        seed=_number(sc, "seed", int, default_seed),
    )
    replicates = _number(sc, "replicates", int, None)
    if "beta" in sc:
        beta = _number(sc, "beta")
        w = 1.0 - 1.0 / beta if beta and beta >= 1 else -1.0
    else:
        w = _number(sc, "kendall_w", float, 0.0)
    name = str(sc.get("name") or path.stem)
    out = []
    for s in follow_ups:
        if sc.get("short_term"):
            cfg = short_term_scenario(
                str(sc["short_term"]), w, s, replicates,
                hazards=str(sc.get("short_term_reading") or "converging"), **common,
            )
        else:
            cfg = constant_effect_scenario(
                _number(sc, "alpha_d", float, 0.0), _number(sc, "alpha_h", float, 0.0), w, s, replicates, **common
            )
        treat, ctrl = cfg.treatment, cfg.control
        beta = treat.beta
        for key, current in (("treatment", treat), ("control", ctrl)):
            section = doc.get(key)
            if not section:
                continue
            death = _arm_hazards(section, "death") or current.death
            hosp = _arm_hazards(section, "hosp") or current.hosp
            if key == "treatment":
                treat = CopulaSpec(beta, death, hosp)
            else:
                ctrl = CopulaSpec(beta, death, hosp)
        family = name if len(follow_ups) > 1 else cfg.family
        cfg_name = f"{name}_S{s:g}" if len(follow_ups) > 1 else name
        out.append(
            ScenarioConfig(
                name=cfg_name, treatment=treat, control=ctrl, follow_up=s,
                replicates=cfg.replicates, family=family, meta=cfg.meta | {"kendall_w": w}, **common,
            )
        )
    return out


def load_design(path: str | Path, default_draws: int = 10_000, default_seed: int = 0) -> GsDesign:
    """Group-sequential design file (INI ``[design]`` or JSON)."""
    path = Path(path)
    doc = _read_config(path)
    d = doc.get("design") or doc.get("")
    if not d:
        raise DataFormatError(f"{path}: missing [design] section")
    looks = _number(d, "looks", int)
    l = _number(d, "per_arm_increment", int)
    if looks is None or l is None:
        raise DataFormatError(f"{path}: design needs looks and per_arm_increment")
    taus = tuple(_floats(d.get("stop_probs")))
    horizon = _number(d, "horizon", float)
    if horizon is None:
        raise DataFormatError(f"{path}: design needs horizon")
    if d.get("schedule"):
        schedule = ExaminationSchedule(tuple(_floats(d["schedule"])), horizon, _number(d, "s_inf", float, 0.0))
    else:
        schedule = quantile_schedule(horizon, _number(d, "quantile", int, 4), _number(d, "s_inf", float, 0.0))
    return GsDesign(
        looks=looks,
        per_arm_increment=l,
        stop_probs=taus,
        schedule=schedule,
        draws=_number(d, "draws", int, default_draws),
        seed=_number(d, "seed", int, default_seed),
    )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_json(obj, path: str | Path) -> None:
    Path(path).write_text(dumps(obj))


def write_csv(rows: Sequence[Sequence], header: Sequence[str], path: str | Path, manifest_hash: str | None = None):
    """CSV with an optional leading ``# manifest_sha256=...`` comment line."""
    with open(path, "w", newline="") as fh:
        if manifest_hash:
            fh.write(f"# manifest_sha256={manifest_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_csv_cell(v) for v in row])


def _csv_cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class RunManifest:
    """Provenance of one CLI run.

    ``digest`` covers only deterministic fields (command, input contents,
    options, seed, version), so identical invocations share it; timestamps
    and output paths are recorded alongside but excluded.
    """

    command: str
    inputs: list[str]
    options: dict
    seed: int
    version: str = __version__
    started: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished: str | None = None
    outputs: list[str] = field(default_factory=list)

    def digest(self) -> str:
        core = {
            "command": self.command,
            "inputs": {str(p): file_digest(p) for p in self.inputs},
            "options": _jsonable(self.options),
            "seed": self.seed,
            "version": self.version,
        }
        return hashlib.sha256(json.dumps(core, sort_keys=True).encode()).hexdigest()

    def finish(self, outputs: Iterable[str | Path]) -> None:
        self.outputs = [str(p) for p in outputs]
        self.finished = datetime.now(timezone.utc).isoformat()

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "inputs": self.inputs,
            "options": self.options,
            "seed": self.seed,
            "version": self.version,
            "started": self.started,
            "finished": self.finished,
            "outputs": self.outputs,
            "manifest_sha256": self.digest(),
        }
