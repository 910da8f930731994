"""File formats: dataset CSV, adjacency edge lists, simulation truth
bundles, posterior archives, and fit summaries.

Everything is plain text so outputs stay diffable and oracle-friendly.
Reals are serialized with shortest round-trip decimals; archive loads are
bit-faithful.
"""

from __future__ import annotations

import csv
import json

import numpy as np

from .gibbs import Dataset, PosteriorArchive
from .graph import SpatialGraph
from .inference import FitSummary

ARCHIVE_VERSION = "mrfmfm-arch-1"


class DataError(ValueError):
    """Raised for malformed files, schema violations, or bad identifiers."""


class VersionError(DataError):
    """Raised when an archive file declares an unsupported format version."""


def _fmt(x):
    return repr(float(x))


class LoadedTable:
    """Parsed dataset file: ids, scaled counts, design matrix, coordinates."""

    def __init__(self, site_ids, y, X, coords, scale):
        self.site_ids = list(site_ids)
        self.y = y
        self.X = X
        self.coords = coords
        self.scale = scale

    @property
    def n(self):
        return len(self.site_ids)

    def index_of(self, site_id):
        try:
            return self._index[site_id]
        except AttributeError:
            self._index = {s: i for i, s in enumerate(self.site_ids)}
            return self._index[site_id]


def load_dataset(path, scale=1.0, intercept=False):
    """Read a dataset CSV with header site_id, y, x1..xp, lon, lat.

    Counts are divided by ``scale`` and rounded to the nearest integer
    (scale=100 expresses counts in hundreds). ``intercept`` prepends a
    constant-1 design column. Row order defines the site index.
    """
    if scale <= 0:
        raise DataError(f"scale must be positive, got {scale}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 5 or header[0] != "site_id" or header[1] != "y":
            raise DataError(
                f"{path}: header must start with site_id, y; got {header[:2]}"
            )
        if header[-2] != "lon" or header[-1] != "lat":
            raise DataError(f"{path}: header must end with lon, lat")
        x_names = header[2:-2]
        expected = [f"x{j + 1}" for j in range(len(x_names))]
        if x_names != expected:
            raise DataError(
                f"{path}: covariate columns must be {expected}, got {x_names}"
            )
        p = len(x_names)

        site_ids, ys, xs, cs = [], [], [], []
        seen = set()
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}"
                )
            sid = row[0].strip()
            if sid in seen:
                raise DataError(f"{path}:{lineno}: duplicate site_id {sid!r}")
            seen.add(sid)
            try:
                raw = float(row[1])
                xrow = [float(v) for v in row[2:2 + p]]
                lon, lat = float(row[-2]), float(row[-1])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            if raw < 0:
                raise DataError(f"{path}:{lineno}: negative count {raw}")
            site_ids.append(sid)
            ys.append(raw)
            xs.append(xrow)
            cs.append((lon, lat))

    if not site_ids:
        raise DataError(f"{path}: no data rows")
    y = np.rint(np.asarray(ys) / scale).astype(np.int64)
    X = np.asarray(xs)
    if intercept:
        X = np.hstack([np.ones((X.shape[0], 1)), X])
    coords = np.asarray(cs)
    return LoadedTable(site_ids, y, X, coords, float(scale))


def save_dataset(path, site_ids, y, X, coords):
    """Write a dataset CSV (raw counts, no scaling applied)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["site_id", "y"]
            + [f"x{j + 1}" for j in range(X.shape[1])]
            + ["lon", "lat"]
        )
        for i, sid in enumerate(site_ids):
            writer.writerow(
                [sid, int(y[i])]
                + [_fmt(v) for v in X[i]]
                + [_fmt(coords[i][0]), _fmt(coords[i][1])]
            )


def load_adjacency(path, site_ids):
    """Read whitespace-separated site_id pairs; '#' begins a comment line.

    Unknown identifiers and self-pairs fail loudly; duplicate pairs (in
    either orientation) collapse. Returns index pairs against the given id
    ordering.
    """
    index = {s: i for i, s in enumerate(site_ids)}
    edges = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            parts = text.split()
            if len(parts) != 2:
                raise DataError(
                    f"{path}:{lineno}: expected two site ids, got {parts}"
                )
            a, b = parts
            if a not in index or b not in index:
                missing = a if a not in index else b
                raise DataError(f"{path}:{lineno}: unknown site_id {missing!r}")
            ia, ib = index[a], index[b]
            if ia == ib:
                raise DataError(f"{path}:{lineno}: self-pair {a!r}")
            edges.add((min(ia, ib), max(ia, ib)))
    return sorted(edges)


def save_adjacency(path, edges, site_ids):
    with open(path, "w") as fh:
        fh.write("# adjacency: one edge per line, site_id pairs\n")
        for a, b in sorted((min(e), max(e)) for e in edges):
            fh.write(f"{site_ids[a]} {site_ids[b]}\n")


def build_graph(table, edges):
    """Assemble the spatial graph from a loaded table and index edges."""
    return SpatialGraph(table.n, edges, table.coords)


def build_dataset(table, edges):
    """Assemble a model-ready dataset from a loaded table and index edges."""
    return Dataset(
        y=table.y, X=table.X, graph=build_graph(table, edges), scale=table.scale
    )


def save_truth(path, site_ids, z_true, beta_true, w_true):
    """Write the simulation truth bundle next to a generated dataset."""
    beta_true = np.atleast_2d(np.asarray(beta_true, dtype=float))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["site_id", "z_true"]
            + [f"beta{j + 1}" for j in range(beta_true.shape[1])]
            + ["w_true"]
        )
        for i, sid in enumerate(site_ids):
            writer.writerow(
                [sid, int(z_true[i])]
                + [_fmt(v) for v in beta_true[i]]
                + [_fmt(w_true[i])]
            )


def load_truth(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["site_id", "z_true"] or header[-1] != "w_true":
            raise DataError(f"{path}: unexpected truth header {header}")
        p = len(header) - 3
        ids, zs, betas, ws = [], [], [], []
        for row in reader:
            if not row:
                continue
            ids.append(row[0])
            zs.append(int(row[1]))
            betas.append([float(v) for v in row[2:2 + p]])
            ws.append(float(row[-1]))
    return (ids, np.asarray(zs, dtype=np.int64),
            np.asarray(betas), np.asarray(ws))


def save_archive(path, archive):
    """Write a posterior archive.

    Line 1 is a JSON header carrying the format version, dimensions, and
    the configuration echo. Each following line is one record: n labels,
    the cluster count t, t*p coefficients row-major, then n per-site log
    likelihoods, all space-separated.
    """
    if archive.n_records == 0:
        raise DataError("refusing to save an empty archive")
    header = {
        "version": ARCHIVE_VERSION,
        "n": int(archive.n),
        "p": int(archive.p),
        "records": int(archive.n_records),
        "config": archive.config,
        "diagnostics": archive.diagnostics,
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for k in range(archive.n_records):
            z = archive.z_draws[k]
            betas = np.asarray(archive.beta_draws[k])
            ll = archive.loglik_draws[k]
            parts = [str(int(v)) for v in z]
            parts.append(str(betas.shape[0]))
            parts.extend(_fmt(v) for v in betas.ravel())
            parts.extend(_fmt(v) for v in ll)
            fh.write(" ".join(parts) + "\n")


def load_archive(path):
    """Read an archive written by :func:`save_archive`, validating shape."""
    with open(path) as fh:
        first = fh.readline()
        if not first:
            raise DataError(f"{path}: empty file")
        try:
            header = json.loads(first)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: bad header: {exc}") from None
        version = header.get("version")
        if version != ARCHIVE_VERSION:
            raise VersionError(
                f"{path}: version {version!r}, expected {ARCHIVE_VERSION!r}"
            )
        n = int(header["n"])
        p = int(header["p"])
        expected_records = int(header["records"])

        z_draws, beta_draws, loglik_draws = [], [], []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) < n + 1:
                raise DataError(f"{path}:{lineno}: truncated record")
            z = np.array([int(v) for v in parts[:n]], dtype=np.int64)
            t = int(parts[n])
            want = n + 1 + t * p + n
            if len(parts) != want:
                raise DataError(
                    f"{path}:{lineno}: expected {want} fields for t={t}, "
                    f"got {len(parts)}"
                )
            flat = np.array([float(v) for v in parts[n + 1:n + 1 + t * p]])
            beta_draws.append(flat.reshape(t, p))
            loglik_draws.append(
                np.array([float(v) for v in parts[n + 1 + t * p:]])
            )
            z_draws.append(z)

    if len(z_draws) != expected_records:
        raise DataError(
            f"{path}: header promises {expected_records} records, "
            f"found {len(z_draws)}"
        )
    return PosteriorArchive(
        n=n, p=p, config=header.get("config", {}),
        z_draws=np.asarray(z_draws, dtype=np.int64),
        beta_draws=beta_draws,
        loglik_draws=np.asarray(loglik_draws),
        diagnostics=header.get("diagnostics", {}),
    )


def save_summary(path, summary):
    with open(path, "w") as fh:
        json.dump(summary.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_summary(path):
    with open(path) as fh:
        return FitSummary.from_dict(json.load(fh))
