"""Street-segment aggregation of geotagged per-image people counts.

Segments are densified into sample points no more than ``spacing`` metres
apart, projected with an equirectangular projection about the centroid of all
segment vertices, and stored in a KD-tree. A record belongs to the segment of
its nearest sample point. Distances within a relative 1e-9 of the minimum are
ties; the smallest segment id wins (numeric ids compare numerically).
"""
from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_008.8
TIE_RTOL = 1e-9


class RecordError(ValueError):
    def __init__(self, problems: list[tuple[int, str]]):
        self.problems = problems
        lines = "; ".join(f"line {n}: {msg}" for n, msg in problems[:10])
        more = f" (+{len(problems) - 10} more)" if len(problems) > 10 else ""
        super().__init__(f"{len(problems)} invalid record row(s): {lines}{more}")


@dataclass(frozen=True)
class DetectionRecord:
    record_id: str
    timestamp: datetime
    lon: float
    lat: float
    count: int

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude {self.lat} out of range")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude {self.lon} out of range")
        if self.count < 0:
            raise ValueError(f"negative count {self.count}")
        if self.timestamp.tzinfo is None:
            raise ValueError("timestamp must be timezone-aware")


@dataclass(frozen=True)
class Segment:
    segment_id: str
    polyline: tuple[tuple[float, float], ...]

    def __post_init__(self):
        pts = tuple((float(lon), float(lat)) for lon, lat in self.polyline)
        object.__setattr__(self, "polyline", pts)
        object.__setattr__(self, "segment_id", str(self.segment_id))
        if len(pts) < 2:
            raise ValueError(f"segment {self.segment_id}: needs at least two points")
        for a, b in zip(pts, pts[1:]):
            if a == b:
                raise ValueError(f"segment {self.segment_id}: repeated consecutive point {a}")


@dataclass
class SegmentStats:
    segment_id: str
    n_records: int
    mean_count: float
    sum_count: int


def segment_key(segment_id: str):
    """Sort key: numeric ids first, numerically; others lexicographically."""
    try:
        return (0, int(segment_id), "")
    except ValueError:
        return (1, 0, segment_id)


# -- records ------------------------------------------------------------------------

def parse_timestamp(text: str, utc_offset_hours: float = 0.0) -> datetime:
    """ISO-8601; naive values are local time at ``utc_offset_hours``. Returns UTC."""
    s = text.strip()
    if s.endswith("Z") or s.endswith("z"):
        s = s[:-1] + "+00:00"
    ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone(timedelta(hours=utc_offset_hours)))
    return ts.astimezone(timezone.utc)


RECORD_COLUMNS = ["record_id", "timestamp_iso8601", "lon", "lat", "count"]


def load_records(path, strict: bool = True, utc_offset_hours: float = 0.0,
                 rejected: list | None = None) -> list[DetectionRecord]:
    """Read the records CSV.

    Strict mode raises :class:`RecordError` listing every bad row; lenient mode
    skips them, appending ``(line_number, message)`` to ``rejected`` if given.
    """
    records, problems = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(RECORD_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise RecordError([(1, f"missing columns {sorted(missing)}")])
        for lineno, row in enumerate(reader, start=2):
            try:
                count = float(row["count"])
                if count != int(count):
                    raise ValueError(f"count {row['count']!r} is not an integer")
                records.append(DetectionRecord(
                    record_id=row["record_id"],
                    timestamp=parse_timestamp(row["timestamp_iso8601"], utc_offset_hours),
                    lon=float(row["lon"]),
                    lat=float(row["lat"]),
                    count=int(count),
                ))
            except (TypeError, ValueError) as exc:
                problems.append((lineno, str(exc)))
    if problems:
        if strict:
            raise RecordError(problems)
        log.warning("skipped %d invalid record rows", len(problems))
        if rejected is not None:
            rejected.extend(problems)
    return records


def write_records(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RECORD_COLUMNS)
        for r in records:
            w.writerow([r.record_id, r.timestamp.isoformat(), repr(r.lon), repr(r.lat), r.count])


# -- segments -----------------------------------------------------------------------

def load_segments(path) -> list[Segment]:
    """GeoJSON LineStrings with a ``segment_id`` property, or CSV rows
    ``segment_id,lon1,lat1,lon2,lat2,...``."""
    path = str(path)
    if path.endswith((".geojson", ".json")):
        with open(path) as fh:
            data = json.load(fh)
        segs = []
        for i, feat in enumerate(data.get("features", [])):
            geom = feat.get("geometry") or {}
            if geom.get("type") != "LineString":
                raise ValueError(f"{path}: feature {i} is not a LineString")
            props = feat.get("properties") or {}
            if "segment_id" not in props:
                raise ValueError(f"{path}: feature {i} has no segment_id")
            segs.append(Segment(props["segment_id"], tuple(tuple(c[:2]) for c in geom["coordinates"])))
        return segs
    segs = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (lineno == 1 and row[0].strip() == "segment_id"):
                continue
            vals = row[1:]
            if len(vals) % 2:
                raise ValueError(f"{path}:{lineno}: odd number of coordinates")
            try:
                pts = [(float(vals[i]), float(vals[i + 1])) for i in range(0, len(vals), 2)]
                segs.append(Segment(row[0].strip(), tuple(pts)))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return segs


# -- index ----------------------------------------------------------------------------

class Projection:
    """Equirectangular lon/lat -> metres about a fixed origin."""

    def __init__(self, lon0: float, lat0: float):
        self.lon0 = lon0
        self.lat0 = lat0
        self._kx = EARTH_RADIUS_M * math.cos(math.radians(lat0)) * math.pi / 180
        self._ky = EARTH_RADIUS_M * math.pi / 180

    def forward(self, lon, lat) -> np.ndarray:
        lon = np.asarray(lon, dtype=float)
        lat = np.asarray(lat, dtype=float)
        return np.stack([(lon - self.lon0) * self._kx, (lat - self.lat0) * self._ky], axis=-1)

    def inverse(self, xy) -> np.ndarray:
        xy = np.asarray(xy, dtype=float)
        return np.stack([xy[..., 0] / self._kx + self.lon0, xy[..., 1] / self._ky + self.lat0], axis=-1)


def densify(xy: np.ndarray, spacing: float) -> np.ndarray:
    """Insert evenly spaced points so consecutive points are <= spacing apart."""
    out = [xy[0]]
    for a, b in zip(xy[:-1], xy[1:]):
        length = float(np.hypot(*(b - a)))
        k = max(1, math.ceil(length / spacing * (1 - 1e-9)))
        t = np.arange(1, k + 1)[:, None] / k
        out.extend(a + t * (b - a))
    return np.array(out)


@dataclass
class SegmentIndex:
    tree: cKDTree
    points: np.ndarray
    point_segment: np.ndarray
    segment_ids: list[str]
    projection: Projection
    spacing: float

    def __len__(self):
        return len(self.points)

    def project(self, lon, lat) -> np.ndarray:
        return self.projection.forward(lon, lat)


def build_index(segments, spacing: float = 5.0) -> SegmentIndex:
    segments = list(segments)
    if not segments:
        raise ValueError("need at least one segment")
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    verts = np.array([pt for s in segments for pt in s.polyline])
    proj = Projection(float(verts[:, 0].mean()), float(verts[:, 1].mean()))
    ids = [s.segment_id for s in segments]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate segment ids")
    chunks, owners = [], []
    for i, s in enumerate(segments):
        pts = densify(proj.forward(*np.array(s.polyline).T), spacing)
        chunks.append(pts)
        owners.append(np.full(len(pts), i))
    points = np.concatenate(chunks)
    return SegmentIndex(cKDTree(points), points, np.concatenate(owners), ids, proj, spacing)


def _pick(idx: SegmentIndex, candidates, dists) -> tuple[str, float]:
    dmin = float(np.min(dists))
    tol = dmin * TIE_RTOL + 1e-12
    best = min((idx.segment_ids[idx.point_segment[c]] for c, d in zip(candidates, dists) if d <= dmin + tol),
               key=segment_key)
    return best, dmin


def assign_many(records, idx: SegmentIndex) -> list[tuple[str, float]]:
    """(segment_id, distance in metres) for each record."""
    records = list(records)
    if not records:
        return []
    xy = idx.project([r.lon for r in records], [r.lat for r in records])
    d, _ = idx.tree.query(xy)
    out = []
    for q, dq in zip(xy, d):
        cands = idx.tree.query_ball_point(q, dq * (1 + TIE_RTOL) + 2e-12)
        cd = np.hypot(*(idx.points[cands] - q).T)
        out.append(_pick(idx, cands, cd))
    return out


def assign(rec: DetectionRecord, idx: SegmentIndex) -> str:
    return assign_many([rec], idx)[0][0]


@dataclass
class AggregateResult:
    stats: list[SegmentStats]
    dropped: int
    dropped_ids: list[str]
    total: int


def aggregate(records, idx: SegmentIndex, max_distance: float = 30.0) -> AggregateResult:
    records = list(records)
    groups: dict[str, list[int]] = defaultdict(list)
    dropped = []
    for rec, (seg, dist) in zip(records, assign_many(records, idx)):
        if dist > max_distance:
            dropped.append(rec.record_id)
        else:
            groups[seg].append(rec.count)
    stats = [SegmentStats(seg, len(c), sum(c) / len(c), sum(c))
             for seg, c in sorted(groups.items(), key=lambda kv: segment_key(kv[0]))]
    return AggregateResult(stats, len(dropped), dropped, len(records))


def temporal_histograms(records, utc_offset_hours: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Record counts by hour of day (24) and weekday (7, Monday = 0)."""
    by_hour = np.zeros(24, dtype=np.int64)
    by_weekday = np.zeros(7, dtype=np.int64)
    shift = timedelta(hours=utc_offset_hours)
    for r in records:
        t = r.timestamp.astimezone(timezone.utc) + shift
        by_hour[t.hour] += 1
        by_weekday[t.weekday()] += 1
    return by_hour, by_weekday


# -- export ---------------------------------------------------------------------------

def export_heatmap(stats, segments, geojson_path, csv_path=None) -> None:
    by_id = {s.segment_id: s for s in segments}
    features = []
    for st in stats:
        seg = by_id.get(st.segment_id)
        if seg is None:
            raise KeyError(f"stats reference unknown segment {st.segment_id!r}")
        features.append({
            "type": "Feature",
            "geometry": {"type": "LineString", "coordinates": [list(p) for p in seg.polyline]},
            "properties": {"segment_id": st.segment_id, "n_records": st.n_records,
                           "mean_count": st.mean_count, "sum_count": st.sum_count},
        })
    with open(geojson_path, "w") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh, indent=1)
        fh.write("\n")
    if csv_path is not None:
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["segment_id", "n_records", "mean_count", "sum_count"])
            for st in stats:
                w.writerow([st.segment_id, st.n_records, repr(st.mean_count), st.sum_count])


def read_heatmap(geojson_path) -> list[SegmentStats]:
    with open(geojson_path) as fh:
        data = json.load(fh)
    return [SegmentStats(f["properties"]["segment_id"], int(f["properties"]["n_records"]),
                         float(f["properties"]["mean_count"]), int(f["properties"]["sum_count"]))
            for f in data["features"]]
