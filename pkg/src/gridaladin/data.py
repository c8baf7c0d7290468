"""Scenario ingestion, synthetic profile generation and result persistence.

Config files are JSON; net-consumption profiles are CSV with a header row
``timestamp,house_1,...,house_I`` (timestamps in hours, values in kW).
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ScenarioLoadError
from .model import HouseholdParams

OUT_ENV = "GRIDALADIN_OUT"

#: reference fleet defaults, applied to any unspecified field.
DEFAULTS = {
    "T": 0.5,
    "N": 24,
    "sigma0": 2.4e6,
    "household": dataclasses.asdict(HouseholdParams()),
    "soc_fraction": 0.5,
}


@dataclass
class Scenario:
    T: float
    households: list[HouseholdParams]
    series: np.ndarray  # shape (I, L), kW
    x0: np.ndarray  # initial SoC per household, kWh
    N: int = 24
    sigma0: float = 2.4e6
    seed: int | None = None
    name: str = "scenario"

    def __post_init__(self):
        self.series = np.atleast_2d(np.asarray(self.series, dtype=float))
        self.x0 = np.asarray(self.x0, dtype=float)
        if self.series.shape[0] != len(self.households):
            raise ScenarioLoadError(
                f"{self.series.shape[0]} profiles for {len(self.households)} households"
            )
        if self.x0.shape != (len(self.households),):
            raise ScenarioLoadError("need one initial state of charge per household")
        if not np.all(np.isfinite(self.series)):
            raise ScenarioLoadError("net-consumption series contain non-finite values")
        for h, x in zip(self.households, self.x0):
            if not 0.0 <= x <= h.capacity:
                raise ScenarioLoadError(f"initial SoC {x} outside [0, {h.capacity}]")

    @property
    def I(self) -> int:  # noqa: E743
        return len(self.households)

    @property
    def length(self) -> int:
        return self.series.shape[1]

    def subset(self, count: int) -> "Scenario":
        """First ``count`` households (used by agent-count sweeps)."""
        return dataclasses.replace(
            self,
            households=self.households[:count],
            series=self.series[:count].copy(),
            x0=self.x0[:count].copy(),
        )

    def config_dict(self) -> dict:
        return {
            "name": self.name,
            "T": self.T,
            "N": self.N,
            "sigma0": self.sigma0,
            "seed": self.seed,
            "households": [
                {**dataclasses.asdict(h), "x0": float(x)}
                for h, x in zip(self.households, self.x0)
            ],
        }


def _household_from(record: dict, defaults: dict, where: str) -> tuple[HouseholdParams, float]:
    fields_ = {f.name for f in dataclasses.fields(HouseholdParams)}
    unknown = set(record) - fields_ - {"x0"}
    if unknown:
        raise ScenarioLoadError(f"{where}: unknown household fields {sorted(unknown)}")
    merged = {**defaults, **{k: v for k, v in record.items() if k in fields_}}
    for k, v in merged.items():
        if not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ScenarioLoadError(f"{where}: field {k!r} must be a finite number")
    try:
        params = HouseholdParams(**merged)
    except ValueError as exc:
        raise ScenarioLoadError(f"{where}: {exc}") from exc
    x0 = record.get("x0", DEFAULTS["soc_fraction"] * params.capacity)
    return params, float(x0)


def read_profiles_csv(path_or_text) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(timestamps, series)`` with series shaped ``(I, L)``."""
    if isinstance(path_or_text, (str, Path)) and Path(path_or_text).exists():
        text = Path(path_or_text).read_text()
    else:
        text = str(path_or_text)
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ScenarioLoadError("profile CSV is empty")
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "timestamp":
        raise ScenarioLoadError("profile CSV header must be 'timestamp,house_1,...'")
    width = len(header)
    stamps, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != width:
            raise ScenarioLoadError(
                f"row {lineno}: expected {width} fields, found {len(row)}"
            )
        try:
            nums = [float(x) for x in row]
        except ValueError as exc:
            raise ScenarioLoadError(f"row {lineno}: {exc}") from exc
        if not all(math.isfinite(x) for x in nums):
            raise ScenarioLoadError(f"row {lineno}: non-finite value")
        stamps.append(nums[0])
        values.append(nums[1:])
    if not values:
        raise ScenarioLoadError("profile CSV has no data rows")
    return np.array(stamps), np.array(values).T


def profiles_csv_text(series: np.ndarray, T: float) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["timestamp"] + [f"house_{i + 1}" for i in range(series.shape[0])])
    for j in range(series.shape[1]):
        writer.writerow([repr(j * T)] + [repr(float(x)) for x in series[:, j]])
    return buf.getvalue()


def load_scenario(config, csv_path=None, min_length: int | None = None) -> Scenario:
    """Build a validated :class:`Scenario` from a JSON config and a profile CSV.

    ``config`` is a path or an already-parsed dict.  The CSV location can be
    given explicitly or via the config key ``profiles_csv`` (resolved relative
    to the config file).  A config with a ``synthetic`` block and no CSV is
    expanded with :func:`generate_synthetic`.
    """
    base = Path(".")
    if isinstance(config, (str, Path)):
        base = Path(config).parent
        try:
            config = json.loads(Path(config).read_text())
        except json.JSONDecodeError as exc:
            raise ScenarioLoadError(f"config is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ScenarioLoadError("config must be a JSON object")
    T = float(config.get("T", DEFAULTS["T"]))
    N = int(config.get("N", DEFAULTS["N"]))
    sigma0 = float(config.get("sigma0", DEFAULTS["sigma0"]))
    if T <= 0 or N < 2 or sigma0 <= 0:
        raise ScenarioLoadError("need T > 0, N >= 2 and sigma0 > 0")
    hh_defaults = {**DEFAULTS["household"], **config.get("defaults", {})}

    csv_path = csv_path or config.get("profiles_csv")
    if csv_path is None and "synthetic" in config:
        syn = dict(config["synthetic"])
        scen = generate_synthetic(
            I=int(syn.pop("I")),
            days=float(syn.pop("days", 3)),
            seed=int(config.get("seed", syn.pop("seed", 0))),
            T=T,
            N=N,
            sigma0=sigma0,
            params=HouseholdParams(**{k: v for k, v in hh_defaults.items()}),
            **syn,
        )
        scen.name = config.get("name", scen.name)
        return scen
    if csv_path is None:
        raise ScenarioLoadError("config names neither profiles_csv nor synthetic data")
    csv_path = Path(csv_path)
    if not csv_path.is_absolute() and not csv_path.exists():
        csv_path = base / csv_path
    if not csv_path.exists():
        raise ScenarioLoadError(f"profile CSV {csv_path} not found")
    _, series = read_profiles_csv(csv_path)

    records = config.get("households")
    if records is None:
        records = [{} for _ in range(series.shape[0])]
    if len(records) != series.shape[0]:
        raise ScenarioLoadError(
            f"config lists {len(records)} households but CSV has {series.shape[0]} columns"
        )
    hh, x0 = [], []
    for i, rec in enumerate(records):
        p, x = _household_from(rec, hh_defaults, f"household {i + 1}")
        hh.append(p)
        x0.append(x)
    if min_length is not None and series.shape[1] < min_length:
        raise ScenarioLoadError(
            f"series length {series.shape[1]} shorter than required {min_length}"
        )
    try:
        return Scenario(
            T=T, households=hh, series=series, x0=np.array(x0), N=N, sigma0=sigma0,
            seed=config.get("seed"), name=config.get("name", "scenario"),
        )
    except ScenarioLoadError:
        raise


def write_scenario(scenario: Scenario, directory) -> Path:
    """Persist ``scenario`` as ``scenario.json`` + ``profiles.csv``; returns the config path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cfg = scenario.config_dict()
    cfg["profiles_csv"] = "profiles.csv"
    write_atomic(directory / "profiles.csv", profiles_csv_text(scenario.series, scenario.T))
    write_atomic(directory / "scenario.json", json.dumps(cfg, indent=2))
    return directory / "scenario.json"


def generate_synthetic(
    I: int,
    days: float = 3.0,
    seed: int = 0,
    T: float = 0.5,
    N: int = 24,
    sigma0: float = 2.4e6,
    params: HouseholdParams | None = None,
    base_mean: tuple[float, float] = (0.3, 0.7),
    base_amplitude: tuple[float, float] = (0.05, 0.15),
    pv_peak: tuple[float, float] = (0.1, 0.4),
    noise: float = 0.05,
    soc_range: tuple[float, float] | None = None,
) -> Scenario:
    """Seeded household net-consumption profiles: daily load wave minus a PV bump.

    The default ranges keep the fleet as a whole able to follow the reference
    most of the time while individual batteries still reach their charge or
    rate limits.  Larger ``base_amplitude`` / ``pv_peak`` push the whole fleet
    into saturation.  ``soc_range`` (fractions of capacity) draws the initial
    state of charge per household; otherwise it is half the capacity.
    """
    if I < 1:
        raise ValueError("need at least one household")
    rng = np.random.default_rng(seed)
    params = params or HouseholdParams()
    L = int(round(days * 24 / T))
    hours = np.arange(L) * T
    mean = rng.uniform(*base_mean, size=(I, 1))
    amp = rng.uniform(*base_amplitude, size=(I, 1))
    # evening peak around 19h, household-specific shift of +-2h
    phase = rng.uniform(-2.0, 2.0, size=(I, 1))
    load = mean + amp * np.cos(2 * np.pi * (hours[None, :] - 19.0 - phase) / 24.0)
    pv_scale = rng.uniform(*pv_peak, size=(I, 1))
    daylight = np.clip(np.sin(np.pi * ((hours % 24.0) - 6.0) / 12.0), 0.0, None)
    pv = pv_scale * daylight[None, :] ** 1.5
    series = load - pv + noise * rng.standard_normal((I, L))
    if soc_range is None:
        x0 = np.full(I, DEFAULTS["soc_fraction"] * params.capacity)
    else:
        x0 = rng.uniform(*soc_range, size=I) * params.capacity
    return Scenario(
        T=T,
        households=[params] * I,
        series=series,
        x0=x0,
        N=N,
        sigma0=sigma0,
        seed=seed,
        name=f"synthetic-I{I}-s{seed}",
    )


def write_atomic(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header: list[str], rows) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    write_atomic(path, buf.getvalue())


def write_json(path, obj) -> None:
    write_atomic(path, json.dumps(obj, indent=2, default=_json_default))


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if dataclasses.is_dataclass(obj):
        return dataclasses.asdict(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def output_root(default="runs") -> Path:
    return Path(os.environ.get(OUT_ENV, default))


def run_dir(name: str, root=None) -> Path:
    """``<root>/<name>`` where root defaults to ``$GRIDALADIN_OUT`` or ``runs``."""
    root = Path(root) if root is not None else output_root()
    path = root / name
    path.mkdir(parents=True, exist_ok=True)
    return path


@dataclass
class ResultFiles:
    """Fixed layout of one run directory."""

    root: Path
    history: Path = field(init=False)
    ledger: Path = field(init=False)
    mpc_log: Path = field(init=False)
    summary: Path = field(init=False)

    def __post_init__(self):
        self.root = Path(self.root)
        self.history = self.root / "history.csv"
        self.ledger = self.root / "ledger.csv"
        self.mpc_log = self.root / "mpc_log.csv"
        self.summary = self.root / "summary.json"
