"""Input parsing and deterministic report emission.

Files use 1-based hours; everything in memory is 0-based.  Floats are
written with ``repr`` (shortest string that round-trips to the same
double), so emitted values can be re-read bit for bit.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import io as _io
import json
import math
import os
import re
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (DuplicateHour, MissingHour, MissingUnits, NonNumeric, ParseError,
                     UnknownField)
from .model import (BinaryPolicy, MarketPriceSeries, ScenarioConfig, StationParams,
                    UtilityMode, UtilityParams, validate_config)

PRICE_HEADER = ("hour", "price_usd_per_mwh")
DISPATCH_COLUMNS = ("hour", "soc_mwh", "p_cs_mw", "p_wm_mw", "lambda_usd_per_mwh",
                    "price_usd_per_mwh")
SWEEP_COLUMNS = ("k", "mode", "total", "wholesale", "ev_trading")


def fmt(x) -> str:
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x + 0.0)  # folds -0.0 into 0.0


def data_path(name: str | os.PathLike) -> Path:
    """Resolve ``name`` as a path, falling back to the bundled data files."""
    p = Path(name)
    if p.exists():
        return p
    bundled = resources.files("aggbid") / "data" / p.name
    if bundled.is_file():
        return Path(str(bundled))
    raise FileNotFoundError(f"no such file: {name}")


# prices


def parse_price_csv(source) -> MarketPriceSeries:
    """Read an ``hour,price_usd_per_mwh`` file (path or text stream)."""
    if isinstance(source, (str, os.PathLike)):
        with open(data_path(source), newline="", encoding="utf-8") as fh:
            return _parse_price_rows(fh)
    return _parse_price_rows(source)


def _parse_price_rows(stream) -> MarketPriceSeries:
    reader = csv.reader(stream)
    by_hour: dict[int, float] = {}
    header_seen = False
    for line_no, row in enumerate(reader, start=1):
        cells = [c.strip() for c in row]
        if not cells or all(not c for c in cells):
            continue
        if not header_seen:
            if tuple(cells) != PRICE_HEADER:
                raise ParseError(f"expected header {','.join(PRICE_HEADER)!r}, got {','.join(cells)!r}",
                                 line_no)
            header_seen = True
            continue
        if len(cells) != 2:
            raise ParseError(f"expected 2 columns, got {len(cells)}", line_no)
        try:
            hour = int(cells[0])
        except ValueError:
            raise NonNumeric(f"hour {cells[0]!r} is not an integer", line_no) from None
        try:
            price = float(cells[1])
        except ValueError:
            raise NonNumeric(f"price {cells[1]!r} is not a number", line_no) from None
        if not math.isfinite(price):
            raise NonNumeric(f"price {cells[1]!r} is not finite", line_no)
        if hour < 1:
            raise ParseError(f"hours start at 1, got {hour}", line_no)
        if hour in by_hour:
            raise DuplicateHour(hour, line_no)
        by_hour[hour] = price
    if not header_seen:
        raise ParseError("empty price file")
    if not by_hour:
        raise ParseError("price file has no data rows")
    for h in range(1, max(by_hour) + 1):
        if h not in by_hour:
            raise MissingHour(h)
    return MarketPriceSeries(tuple(by_hour[h] for h in range(1, len(by_hour) + 1)))


def write_price_csv(series: MarketPriceSeries, path) -> Path:
    path = Path(path)
    lines = [",".join(PRICE_HEADER)]
    lines += [f"{t + 1},{fmt(p)}" for t, p in enumerate(series.prices)]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


# config

_ENERGY = {"Wh": 1e-6, "kWh": 1e-3, "MWh": 1.0}
_POWER = {"W": 1e-6, "kW": 1e-3, "MW": 1.0}
_LINEAR_PRICE = {"$/MWh": 1.0, "$/kWh": 1e3}
_QUAD_PRICE = {"$/MW^2h": 1.0, "$/kW^2h": 1e6}

_STATION_FIELDS = {
    "e_max": _ENERGY, "e_initial": _ENERGY, "e_min": _ENERGY,
    "cr_max": _POWER, "dr_max": _POWER, "p_cap": _POWER,
    "eta_ch": None, "eta_di": None, "terminal_soc_fraction": None,
}
_UTILITY_FIELDS = {"a": _LINEAR_PRICE, "b": _QUAD_PRICE, "mode": "enum"}
_SCENARIO_FIELDS = ("prices", "horizon", "binary_policy")
_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(.*?)\s*$")


def _normalize_unit(u: str) -> str:
    u = u.replace(" ", "").replace("usd", "$").replace("USD", "$").replace("²", "^2")
    u = u.replace("(", "").replace(")", "")
    return re.sub(r"([kM]?W)2h$", r"\1^2h", u)


def _quantity(section: str, key: str, raw: str, units) -> float:
    m = _NUMBER.match(raw)
    if not m:
        raise NonNumeric(f"[{section}] {key} = {raw!r} is not a number")
    value, unit = float(m.group(1)), m.group(2)
    if units is None:
        if unit == "%":
            return value / 100.0
        if unit:
            raise ParseError(f"[{section}] {key} is dimensionless, got unit {unit!r}")
        return value
    if not unit:
        raise MissingUnits(f"[{section}] {key} = {raw!r} needs a unit ({', '.join(units)})")
    norm = _normalize_unit(unit)
    if norm not in units:
        raise ParseError(f"[{section}] {key}: unsupported unit {unit!r} ({', '.join(units)})")
    return value * units[norm]


def _section_index(name: str, kind: str):
    m = re.fullmatch(rf"{kind}(?:[.\s]+(\d+))?", name.strip())
    if not m:
        return None
    return int(m.group(1)) if m.group(1) else 0


def parse_config(path, prices: MarketPriceSeries | str | os.PathLike | None = None) -> ScenarioConfig:
    """Load a scenario config file and return the validated config in MW/MWh.

    The file is INI-style with a ``[scenario]`` section and paired
    ``[station]``/``[utility]`` sections (``[station.2]`` etc. for more
    stations).  Every energy, power and price field carries its unit.
    ``prices`` overrides the ``[scenario] prices`` entry.
    """
    path = data_path(path)
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise ParseError(str(exc)) from None

    stations: dict[int, dict] = {}
    utilities: dict[int, dict] = {}
    scenario: dict[str, str] = {}
    for name in cp.sections():
        sec = cp[name]
        if name == "scenario":
            for key in sec:
                if key not in _SCENARIO_FIELDS:
                    raise UnknownField(f"[scenario] has no field {key!r}")
                scenario[key] = sec[key]
            continue
        k = _section_index(name, "station")
        if k is not None:
            fields = {}
            for key in sec:
                if key not in _STATION_FIELDS:
                    raise UnknownField(f"[{name}] has no field {key!r}")
                fields[key] = _quantity(name, key, sec[key], _STATION_FIELDS[key])
            missing = [f for f in _STATION_FIELDS if f not in fields and f != "terminal_soc_fraction"]
            if missing:
                raise ParseError(f"[{name}] is missing {', '.join(missing)}")
            stations[k] = fields
            continue
        k = _section_index(name, "utility")
        if k is not None:
            fields = {}
            for key in sec:
                if key not in _UTILITY_FIELDS:
                    raise UnknownField(f"[{name}] has no field {key!r}")
                if key == "mode":
                    try:
                        fields[key] = UtilityMode(sec[key].strip().lower())
                    except ValueError:
                        raise ParseError(f"[{name}] mode must be hourly or terminal") from None
                else:
                    fields[key] = _quantity(name, key, sec[key], _UTILITY_FIELDS[key])
            for f in ("a", "b"):
                if f not in fields:
                    raise ParseError(f"[{name}] is missing {f}")
            utilities[k] = fields
            continue
        raise UnknownField(f"unknown section [{name}]")

    if sorted(stations) != sorted(utilities):
        raise ParseError(f"station sections {sorted(stations)} and utility sections "
                         f"{sorted(utilities)} do not pair up")

    if prices is None:
        if "prices" not in scenario:
            raise ParseError("no price series: set [scenario] prices or pass one explicitly")
        ref = Path(scenario["prices"].strip())
        if not ref.is_absolute() and (path.parent / ref).exists():
            ref = path.parent / ref
        prices = parse_price_csv(ref)
    elif not isinstance(prices, MarketPriceSeries):
        prices = parse_price_csv(prices)

    horizon = None
    if "horizon" in scenario:
        try:
            horizon = int(scenario["horizon"])
        except ValueError:
            raise NonNumeric(f"[scenario] horizon = {scenario['horizon']!r}") from None
    try:
        policy = BinaryPolicy(scenario.get("binary_policy", "auto").strip().lower())
    except ValueError:
        raise ParseError("[scenario] binary_policy must be relaxed, bnb or auto") from None

    order = sorted(stations)
    config = ScenarioConfig(
        stations=tuple(StationParams(**stations[k]) for k in order),
        utilities=tuple(UtilityParams(**utilities[k]) for k in order),
        prices=prices,
        binary_policy=policy,
        horizon=horizon,
    )
    return validate_config(config)


# manifest and reports


def _canon(obj):
    if isinstance(obj, float):
        return fmt(obj)
    if isinstance(obj, dict):
        return {str(k): _canon(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_canon(v) for v in obj]
    if hasattr(obj, "value"):
        return obj.value
    return obj


def config_hash(config: ScenarioConfig) -> str:
    blob = json.dumps(_canon(asdict(config)), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _timestamp() -> str:
    # Reproducible-build convention; wall-clock time would break byte identity.
    epoch = int(os.environ.get("SOURCE_DATE_EPOCH", "0") or 0)
    return datetime.fromtimestamp(epoch, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class RunManifest:
    tool_version: str
    config_hash: str
    mode: str
    binary_policy: str
    settings: dict = field(default_factory=dict)
    timestamp: str = ""

    @classmethod
    def for_run(cls, config: ScenarioConfig, mode, settings=None) -> "RunManifest":
        if isinstance(mode, (list, tuple)):
            mode_s = ",".join(UtilityMode(m).value for m in mode)
        elif mode is None:
            mode_s = ",".join(sorted({u.mode.value for u in config.utilities}))
        else:
            mode_s = UtilityMode(mode).value
        return cls(__version__, config_hash(config), mode_s, config.binary_policy.value,
                   asdict(settings) if settings is not None else {}, _timestamp())

    def to_dict(self) -> dict:
        return asdict(self)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, float):
        return None if not math.isfinite(obj) else obj + 0.0
    if hasattr(obj, "value"):
        return obj.value
    return obj


def _write_csv(path: Path, header, rows) -> Path:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_bytes(buf.getvalue().encode("utf-8"))
    return path


def _write_json(path: Path, payload) -> Path:
    text = json.dumps(_jsonable(payload), indent=2, allow_nan=False)
    path.write_bytes((text + "\n").encode("utf-8"))
    return path


def dispatch_rows(result, config: ScenarioConfig):
    sol, schedule, _ = result
    pi = config.prices.as_array()
    multi = config.n_stations > 1
    rows = []
    for k in range(config.n_stations):
        for t in range(config.T):
            row = [t + 1, fmt(sol.soc[k, t]), fmt(sol.p_cs[k, t]), fmt(sol.p_wm[t]),
                   fmt(schedule.lam[k, t]), fmt(pi[t])]
            rows.append(([k + 1] if multi else []) + row)
    header = (("station",) if multi else ()) + DISPATCH_COLUMNS
    return header, rows


def emit_report(results, manifest: RunManifest, out_dir, formats=("csv", "json"),
                config: ScenarioConfig | None = None) -> list[Path]:
    """Write a run report (``dispatch.csv``) or sweep report (``sweep.csv``).

    ``results`` is a :class:`~aggbid.scenario.ScenarioResult` (which needs
    ``config`` for the price column) or a
    :class:`~aggbid.scenario.SweepReport`.  JSON output goes to
    ``report.json`` and embeds the manifest.
    """
    from .scenario import SweepReport

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if isinstance(results, SweepReport):
        rows = [[fmt(r.k), r.mode.value, fmt(r.total), fmt(r.wholesale), fmt(r.ev_trading)]
                for r in results.records]
        if "csv" in formats:
            written.append(_write_csv(out / "sweep.csv", SWEEP_COLUMNS, rows))
        if "json" in formats:
            payload = {"manifest": manifest.to_dict(), "kind": "sweep", "records": [
                {"k": r.k, "mode": r.mode, "status": r.status, "total": r.total,
                 "wholesale": r.wholesale, "ev_trading": r.ev_trading,
                 "iterations": r.iterations, "bnb_nodes": r.bnb_nodes,
                 "kkt_residual": r.kkt_residual, "policy": r.policy,
                 "final_soc": list(r.final_soc)}
                for r in results.records]}
            written.append(_write_json(out / "report.json", payload))
        return written

    if config is None:
        raise ValueError("run reports need the scenario config")
    sol, schedule, profit = results
    if "csv" in formats:
        header, rows = dispatch_rows(results, config)
        written.append(_write_csv(out / "dispatch.csv", header, rows))
    if "json" in formats:
        d = sol.diagnostics
        payload = {
            "manifest": manifest.to_dict(),
            "kind": "run",
            "status": sol.status,
            "objective": sol.objective,
            "profit": asdict(profit),
            "prices_usd_per_mwh": list(config.prices.prices),
            "p_wm_mw": sol.p_wm,
            "stations": [{
                "soc_mwh": sol.soc[k], "p_di_mw": sol.p_di[k], "p_ch_mw": sol.p_ch[k],
                "p_cs_mw": sol.p_cs[k], "lambda_usd_per_mwh": schedule.lam[k],
                "utility": {"a": u.a, "b": u.b, "mode": u.mode},
            } for k, u in enumerate(config.utilities)],
            "negative_lambda": schedule.negative,
            "diagnostics": {"iterations": d.iterations, "bnb_nodes": d.bnb_nodes,
                            "kkt_residual": d.kkt_residual, "policy": d.policy},
        }
        written.append(_write_json(out / "report.json", payload))
    return written


def read_dispatch_csv(path) -> dict[str, list]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        cols: dict[str, list] = {name: [] for name in reader.fieldnames}
        for row in reader:
            for name, value in row.items():
                cols[name].append(float(value) if name not in ("hour", "station") else int(value))
    return cols
