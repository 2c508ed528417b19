"""UJIIndoorLoc ingestion, scaling/encoding, splitting, a synthetic site
generator and a brute-force kNN baseline."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

log = logging.getLogger(__name__)

NOT_DETECTED = 100
UJI_RSSI_MIN = -104
UJI_N_APS = 520
UJI_COUNTS = {"train": 19937, "test": 1111}
META_COLUMNS = (
    "LONGITUDE", "LATITUDE", "FLOOR", "BUILDINGID", "SPACEID",
    "RELATIVEPOSITION", "USERID", "PHONEID", "TIMESTAMP",
)
WAP_COLUMNS = tuple(f"WAP{i:03d}" for i in range(1, UJI_N_APS + 1))
UJI_COLUMNS = WAP_COLUMNS + META_COLUMNS
CACHE_FORMAT = "hstloc-cache/1"
DATA_DIR_ENV = "HSTLOC_DATA_DIR"


@dataclass(frozen=True)
class SitePlan:
    floors_per_building: tuple[int, ...]
    n_aps: int

    def __post_init__(self):
        if not self.floors_per_building or min(self.floors_per_building) < 1 or self.n_aps < 1:
            raise DataError(f"invalid site plan {self}")
        object.__setattr__(self, "floors_per_building", tuple(int(f) for f in self.floors_per_building))

    @property
    def n_buildings(self) -> int:
        return len(self.floors_per_building)

    @property
    def n_floors(self) -> int:
        return max(self.floors_per_building)

    def to_dict(self):
        return {"floors_per_building": list(self.floors_per_building), "n_aps": self.n_aps}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["floors_per_building"]), int(d["n_aps"]))


UJI_SITE = SitePlan((4, 4, 5), UJI_N_APS)


@dataclass
class FingerprintRecord:
    rssi: np.ndarray  # int dBm, NOT_DETECTED where the AP was not heard
    building_id: int
    floor_id: int
    longitude: float
    latitude: float
    space_id: int = 0
    relative_position: int = 0
    user_id: int = 0
    phone_id: int = 0
    timestamp: int = 0


@dataclass(frozen=True)
class ScalerParams:
    coord_min: tuple[float, float]
    coord_max: tuple[float, float]
    rssi_min: float = -110.0
    rssi_max: float = 0.0

    def __post_init__(self):
        if not self.rssi_min < self.rssi_max:
            raise DataError("rssi_min must be below rssi_max")
        if any(hi <= lo for lo, hi in zip(self.coord_min, self.coord_max)):
            raise DataError(f"degenerate coordinate range {self.coord_min}..{self.coord_max}")

    def to_dict(self):
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["coord_min"]), tuple(d["coord_max"]), d["rssi_min"], d["rssi_max"])


def fit_scaler(coords: np.ndarray, rssi_min: float = -110.0) -> ScalerParams:
    coords = np.asarray(coords, dtype=np.float64)
    return ScalerParams(tuple(coords.min(axis=0).tolist()), tuple(coords.max(axis=0).tolist()), rssi_min)


def scale_rssi(raw, params: ScalerParams) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    scaled = (raw - params.rssi_min) / (params.rssi_max - params.rssi_min)
    return np.where(raw == NOT_DETECTED, 0.0, np.clip(scaled, 0.0, 1.0))


def scale_coords(xy, params: ScalerParams) -> np.ndarray:
    lo, hi = np.asarray(params.coord_min), np.asarray(params.coord_max)
    return (np.asarray(xy, dtype=np.float64) - lo) / (hi - lo)


def unscale_coords(xy, params: ScalerParams) -> np.ndarray:
    lo, hi = np.asarray(params.coord_min), np.asarray(params.coord_max)
    return np.asarray(xy, dtype=np.float64) * (hi - lo) + lo


def encode_building_floor(record: FingerprintRecord, plan: SitePlan) -> np.ndarray:
    """Concatenated one-hot vector of length ``N_B + N_F``."""
    return one_hot_bf(np.array([record.building_id]), np.array([record.floor_id]), plan)[0]


def one_hot(ids, width: int) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= width):
        raise DataError(f"label out of range [0, {width}): {ids.min()}..{ids.max()}")
    out = np.zeros((ids.size, width), dtype=np.float32)
    out[np.arange(ids.size), ids] = 1.0
    return out


def one_hot_bf(building, floor, plan: SitePlan) -> np.ndarray:
    return np.concatenate([one_hot(building, plan.n_buildings), one_hot(floor, plan.n_floors)], axis=1)


@dataclass
class Dataset:
    features: np.ndarray  # (n, N) scaled RSSI, float32
    building: np.ndarray  # (n,) int64
    floor: np.ndarray  # (n,) int64
    coords: np.ndarray  # (n, 2) meters, float64
    site: SitePlan
    scaler: ScalerParams
    role: str = "train"

    def __post_init__(self):
        n = len(self.features)
        if not (len(self.building) == len(self.floor) == len(self.coords) == n):
            raise DataError("dataset columns have different lengths")
        if n and (self.features.min() < 0 or self.features.max() > 1):
            raise DataError("features outside [0, 1]")

    def __len__(self):
        return len(self.features)

    @property
    def bf_onehot(self) -> np.ndarray:
        return one_hot_bf(self.building, self.floor, self.site)

    @property
    def building_onehot(self) -> np.ndarray:
        return one_hot(self.building, self.site.n_buildings)

    @property
    def floor_onehot(self) -> np.ndarray:
        return one_hot(self.floor, self.site.n_floors)

    @property
    def coords_scaled(self) -> np.ndarray:
        return scale_coords(self.coords, self.scaler).astype(np.float32)

    @property
    def strata(self) -> np.ndarray:
        return self.building * self.site.n_floors + self.floor

    def subset(self, idx, role: str | None = None) -> "Dataset":
        return Dataset(
            self.features[idx], self.building[idx], self.floor[idx], self.coords[idx],
            self.site, self.scaler, role or self.role,
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        for arr in (self.features, self.building, self.floor, self.coords):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()[:16]


def records_to_dataset(records: list[FingerprintRecord], site: SitePlan, scaler: ScalerParams, role: str) -> Dataset:
    raw = np.stack([r.rssi for r in records]) if records else np.zeros((0, site.n_aps))
    return Dataset(
        features=scale_rssi(raw, scaler).astype(np.float32),
        building=np.array([r.building_id for r in records], dtype=np.int64),
        floor=np.array([r.floor_id for r in records], dtype=np.int64),
        coords=np.array([[r.longitude, r.latitude] for r in records], dtype=np.float64).reshape(-1, 2),
        site=site,
        scaler=scaler,
        role=role,
    )


def infer_site_plan(records: list[FingerprintRecord]) -> SitePlan:
    floors: dict[int, int] = {}
    for r in records:
        floors[r.building_id] = max(floors.get(r.building_id, 0), r.floor_id + 1)
    n_b = max(floors) + 1
    return SitePlan(tuple(floors.get(b, 1) for b in range(n_b)), len(records[0].rssi))


# -- UJIIndoorLoc --------------------------------------------------------------------

def load_ujiindoorloc_csv(path, role: str = "train") -> list[FingerprintRecord]:
    """Parse a UJIIndoorLoc CSV (header row, 529 columns) into records.

    RSSI cells must be ``100`` (not detected) or within [-104, 0] dBm.
    A record count differing from the canonical file is logged, not raised,
    because trimmed forks of the files circulate.
    """
    path = Path(path)
    if not path.is_file():
        raise DataError(f"{path}: no such file")
    records = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = [h.strip().strip('"') for h in next(reader, [])]
        if len(header) != len(UJI_COLUMNS):
            raise DataError(f"{path}:1: expected {len(UJI_COLUMNS)} columns, found {len(header)}")
        missing = set(UJI_COLUMNS) - set(header)
        if missing:
            raise DataError(f"{path}:1: missing columns {sorted(missing)[:5]}")
        wap_idx = [header.index(c) for c in WAP_COLUMNS]
        meta_idx = {c: header.index(c) for c in META_COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields, found {len(row)}")
            try:
                rssi = np.array([int(float(row[i])) for i in wap_idx], dtype=np.int16)
                meta = {c: float(row[i]) for c, i in meta_idx.items()}
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            bad = (rssi != NOT_DETECTED) & ((rssi < UJI_RSSI_MIN) | (rssi > 0))
            if bad.any():
                j = int(np.flatnonzero(bad)[0])
                raise DataError(f"{path}:{lineno}: {WAP_COLUMNS[j]}={rssi[j]} outside [{UJI_RSSI_MIN}, 0] dBm")
            records.append(FingerprintRecord(
                rssi=rssi,
                building_id=int(meta["BUILDINGID"]),
                floor_id=int(meta["FLOOR"]),
                longitude=meta["LONGITUDE"],
                latitude=meta["LATITUDE"],
                space_id=int(meta["SPACEID"]),
                relative_position=int(meta["RELATIVEPOSITION"]),
                user_id=int(meta["USERID"]),
                phone_id=int(meta["PHONEID"]),
                timestamp=int(meta["TIMESTAMP"]),
            ))
    expected = UJI_COUNTS.get(role)
    if expected is not None and len(records) != expected:
        log.warning("%s: %d records, canonical %s file has %d", path, len(records), role, expected)
    if records:
        log.info("%s: %d records, not-detected fraction %.3f", path, len(records), not_detected_fraction(records))
    return records


def not_detected_fraction(records: list[FingerprintRecord]) -> float:
    raw = np.stack([r.rssi for r in records])
    return float(np.mean(raw == NOT_DETECTED))


def records_digest(records: list[FingerprintRecord]) -> str:
    h = hashlib.sha256()
    for r in records:
        h.update(np.asarray(r.rssi, dtype=np.int16).tobytes())
        h.update(repr((r.building_id, r.floor_id, r.longitude, r.latitude, r.space_id,
                       r.relative_position, r.user_id, r.phone_id, r.timestamp)).encode())
    return h.hexdigest()


# -- splitting -----------------------------------------------------------------------

def split_indices(strata: np.ndarray, fraction: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Stratified ``(train_idx, val_idx)``, both sorted.

    Falls back to an unstratified split (with a warning) when some stratum
    would contribute no validation sample.
    """
    if not 0 < fraction < 1:
        raise ValueError(f"fraction must be in (0, 1), got {fraction}")
    strata = np.asarray(strata)
    n = len(strata)
    rng = np.random.default_rng(seed)
    labels, counts = np.unique(strata, return_counts=True)
    take = np.rint(counts * fraction).astype(int)
    if (take < 1).any():
        warnings.warn("stratum too small for a validation sample; using an unstratified split", stacklevel=2)
        n_val = max(1, int(round(n * fraction)))
        val = rng.permutation(n)[:n_val]
    else:
        val = np.concatenate([
            rng.permutation(np.flatnonzero(strata == lab))[:k] for lab, k in zip(labels, take)
        ])
    mask = np.zeros(n, dtype=bool)
    mask[val] = True
    return np.flatnonzero(~mask), np.flatnonzero(mask)


def split_train_val(dataset: Dataset, fraction: float, seed) -> tuple[Dataset, Dataset]:
    tr, va = split_indices(dataset.strata, fraction, seed)
    return dataset.subset(tr, "train"), dataset.subset(va, "validation")


# -- synthetic site --------------------------------------------------------------------

@dataclass
class SyntheticConfig:
    site: SitePlan = field(default_factory=lambda: SitePlan((3, 3), 50))
    path_loss_exponent: float = 4.0
    ref_power: float = -40.0  # dBm at 1 m
    noise_sigma: float = 4.0  # dB
    threshold: float = -100.0  # dBm; weaker readings become not-detected
    train_records: int = 2000
    test_records: int = 200
    floor_height: float = 6.0
    building_size: tuple[float, float] = (20.0, 20.0)
    building_origins: tuple[tuple[float, float], ...] | None = None
    ap_height: float = 1.0
    rx_height: float = 1.0
    placement_seed: int | None = None
    rssi_min: float = -110.0

    def __post_init__(self):
        if isinstance(self.site, dict):
            self.site = SitePlan.from_dict(self.site)
        if self.threshold <= self.rssi_min:
            raise DataError("detection threshold must exceed the RSSI floor")
        if self.noise_sigma < 0:
            raise DataError("noise sigma must be non-negative")
        if self.building_origins is None:
            gap = self.building_size[0] * 2.5
            self.building_origins = tuple((b * gap, 0.0) for b in range(self.site.n_buildings))
        self.building_size = tuple(self.building_size)
        self.building_origins = tuple(tuple(o) for o in self.building_origins)

    def to_dict(self):
        d = asdict(self)
        d["site"] = self.site.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def path_loss(distance, cfg: SyntheticConfig) -> np.ndarray:
    """Log-distance received power; saturates at ``ref_power`` inside 1 m."""
    d = np.maximum(np.asarray(distance, dtype=np.float64), 1.0)
    return cfg.ref_power - 10.0 * cfg.path_loss_exponent * np.log10(d)


def place_aps(cfg: SyntheticConfig, rng) -> np.ndarray:
    slots = [(b, f) for b, nf in enumerate(cfg.site.floors_per_building) for f in range(nf)]
    aps = np.empty((cfg.site.n_aps, 3))
    for i in range(cfg.site.n_aps):
        b, f = slots[i % len(slots)]
        ox, oy = cfg.building_origins[b]
        aps[i] = (
            ox + rng.uniform(0, cfg.building_size[0]),
            oy + rng.uniform(0, cfg.building_size[1]),
            f * cfg.floor_height + cfg.ap_height,
        )
    return aps


def _survey(cfg: SyntheticConfig, aps: np.ndarray, n: int, rng):
    slots = [(b, f) for b, nf in enumerate(cfg.site.floors_per_building) for f in range(nf)]
    bf = np.array([slots[i % len(slots)] for i in range(n)], dtype=np.int64).reshape(-1, 2)
    origins = np.asarray(cfg.building_origins)[bf[:, 0]]
    xy = origins + rng.uniform(0, 1, size=(n, 2)) * np.asarray(cfg.building_size)
    z = bf[:, 1] * cfg.floor_height + cfg.rx_height
    pos = np.column_stack([xy, z])
    dist = np.linalg.norm(pos[:, None, :] - aps[None, :, :], axis=-1)
    rssi = path_loss(dist, cfg) + rng.normal(0.0, cfg.noise_sigma, size=dist.shape)
    rssi = np.minimum(np.rint(rssi), 0.0)
    rssi[rssi < cfg.threshold] = NOT_DETECTED
    return rssi, bf[:, 0], bf[:, 1], xy


def generate_synthetic(cfg: SyntheticConfig, seed) -> tuple[Dataset, Dataset, SitePlan]:
    """Simulated radio map: APs spread evenly over every floor, log-distance
    path loss with Gaussian shadowing, threshold-based detection."""
    if cfg.threshold > cfg.ref_power:
        warnings.warn("detection threshold above reference power: every reading is not-detected", stacklevel=2)
    ap_rng = np.random.default_rng(cfg.placement_seed if cfg.placement_seed is not None else seed)
    aps = place_aps(cfg, ap_rng)
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
    raw_tr, b_tr, f_tr, xy_tr = _survey(cfg, aps, cfg.train_records, rng)
    raw_te, b_te, f_te, xy_te = _survey(cfg, aps, cfg.test_records, rng)
    scaler = fit_scaler(xy_tr, cfg.rssi_min)

    def make(raw, b, f, xy, role):
        return Dataset(scale_rssi(raw, scaler).astype(np.float32), b, f, xy, cfg.site, scaler, role)

    return make(raw_tr, b_tr, f_tr, xy_tr, "train"), make(raw_te, b_te, f_te, xy_te, "test"), cfg.site


# -- kNN baseline ----------------------------------------------------------------------

def knn_oracle(train: Dataset, query: np.ndarray, k: int = 3, chunk: int = 512):
    """Exhaustive Euclidean kNN in scaled-RSSI space.

    Returns ``(building, floor, coords)``: majority votes with ties going to
    the smallest id, and the unweighted mean of the neighbours' coordinates.
    """
    n = len(train)
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    x = train.features.astype(np.float64)
    q = np.asarray(query, dtype=np.float64)
    sq = (x * x).sum(axis=1)
    nn = np.empty((len(q), k), dtype=np.int64)
    for s in range(0, len(q), chunk):
        qc = q[s:s + chunk]
        d2 = sq[None, :] - 2.0 * qc @ x.T + (qc * qc).sum(axis=1)[:, None]
        # stable sort keeps the lower training index on distance ties
        nn[s:s + chunk] = np.argsort(d2, axis=1, kind="stable")[:, :k]

    def vote(labels, width):
        counts = np.zeros((len(labels), width), dtype=np.int64)
        for j in range(labels.shape[1]):
            counts[np.arange(len(labels)), labels[:, j]] += 1
        return counts.argmax(axis=1)

    building = vote(train.building[nn], train.site.n_buildings)
    floor = vote(train.floor[nn], train.site.n_floors)
    coords = train.coords[nn].mean(axis=1)
    return building, floor, coords


# -- cache -----------------------------------------------------------------------------

def _sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_cache(out_dir, splits: dict[str, Dataset], source: dict | None = None) -> Path:
    """Write ``{split}.features.npy`` / ``.labels.npy`` / ``.coords.npy`` plus
    ``manifest.json`` (site plan, scaler, counts, file checksums)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    first = next(iter(splits.values()))
    manifest = {
        "format": CACHE_FORMAT,
        "site": first.site.to_dict(),
        "scaler": first.scaler.to_dict(),
        "source": source or {},
        "splits": {},
    }
    for name, ds in splits.items():
        files = {
            "features": (f"{name}.features.npy", ds.features.astype(np.float32)),
            "labels": (f"{name}.labels.npy", np.column_stack([ds.building, ds.floor]).astype(np.int64)),
            "coords": (f"{name}.coords.npy", ds.coords.astype(np.float64)),
        }
        entry = {"count": len(ds), "files": {}}
        for key, (fname, arr) in files.items():
            np.save(out / fname, arr, allow_pickle=False)
            entry["files"][key] = {"name": fname, "sha256": _sha256_file(out / fname)}
        manifest["splits"][name] = entry
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out / "manifest.json"


def resolve_data_dir(path) -> Path:
    override = os.environ.get(DATA_DIR_ENV)
    return Path(override) if override else Path(path)


def load_cache(cache_dir) -> dict[str, Dataset]:
    root = Path(cache_dir)
    mpath = root / "manifest.json"
    if not mpath.is_file():
        raise DataError(f"{root}: no cache manifest")
    manifest = json.loads(mpath.read_text())
    if manifest.get("format") != CACHE_FORMAT:
        raise DataError(f"{mpath}: unsupported cache format {manifest.get('format')!r}")
    site = SitePlan.from_dict(manifest["site"])
    scaler = ScalerParams.from_dict(manifest["scaler"])
    out = {}
    for name, entry in manifest["splits"].items():
        arrays = {}
        for key, info in entry["files"].items():
            fpath = root / info["name"]
            if _sha256_file(fpath) != info["sha256"]:
                raise DataError(f"{fpath}: checksum mismatch")
            arrays[key] = np.load(fpath, allow_pickle=False)
        labels = arrays["labels"]
        out[name] = Dataset(arrays["features"], labels[:, 0], labels[:, 1], arrays["coords"], site, scaler, name)
    return out
