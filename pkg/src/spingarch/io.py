"""File formats, INI configuration and run manifests.

Every CSV starts with a version comment ``# spingarch-<kind> v<N>``.
Readers reject versions they do not know; a file without the comment is
read as version 1 so hand-written inputs still load.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import json
import platform
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .graph import NeighborhoodGraph, from_edge_list, torus_grid

SCHEMA_VERSIONS = {"counts": 1, "covariates": 1, "chains": 1, "report": 1, "latent": 1,
                   "checks": 1, "edges": 1}
MANIFEST_FORMAT = "spingarch-manifest"
MANIFEST_VERSION = 1
_VERSION_RE = re.compile(r"#\s*spingarch-(\w+)\s+v(\d+)\s*$")


class FormatError(ValueError):
    """Malformed input file; carries the path and line when known."""

    def __init__(self, message: str, path=None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path, self.line = path, line


class ConfigError(FormatError):
    """Bad configuration value, reported with its section, key and line."""


class ManifestError(ValueError):
    """Manifest missing fields or failing its integrity check."""


# -- versioned CSV helpers ----------------------------------------------------

def _version_line(kind: str) -> str:
    return f"# spingarch-{kind} v{SCHEMA_VERSIONS[kind]}\n"


def _read_versioned(path, kind: str):
    """Return ``(header, rows with line numbers)`` after checking the version comment."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    lines = path.read_text().splitlines()
    body = []
    seen_version = False
    for lineno, text in enumerate(lines, start=1):
        stripped = text.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            m = _VERSION_RE.match(stripped)
            if m and not seen_version:
                seen_version = True
                if m.group(1) != kind:
                    raise FormatError(f"expected a {kind} file, found {m.group(1)}", path, lineno)
                if int(m.group(2)) != SCHEMA_VERSIONS[kind]:
                    raise FormatError(f"unsupported {kind} schema version {m.group(2)} "
                                      f"(this build reads v{SCHEMA_VERSIONS[kind]})", path, lineno)
            continue
        body.append((lineno, text))
    if not body:
        raise FormatError("file has no header", path)
    header = [h.strip() for h in next(csv.reader([body[0][1]]))]
    rows = [(lineno, [c.strip() for c in row])
            for lineno, row in ((ln, next(csv.reader([t]))) for ln, t in body[1:])]
    return header, rows


def _write_csv(path, kind: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(_version_line(kind))
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    return repr(float(x))


def _parse_int(text, path, lineno, what):
    try:
        return int(text)
    except ValueError:
        raise FormatError(f"{what} {text!r} is not an integer", path, lineno) from None


def _parse_float(text, path, lineno, what):
    try:
        return float(text)
    except ValueError:
        raise FormatError(f"{what} {text!r} is not a number", path, lineno) from None


# -- edge lists -----------------------------------------------------------------

def read_edges(path) -> NeighborhoodGraph:
    """``n=<sites>`` then one ``i,j`` pair per line; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    n_sites = None
    pairs = []
    for lineno, text in enumerate(path.read_text().splitlines(), start=1):
        text = text.split("#", 1)[0].strip()
        if not text:
            continue
        if n_sites is None:
            if not text.startswith("n="):
                raise FormatError("first entry must be n=<number of sites>", path, lineno)
            n_sites = _parse_int(text[2:].strip(), path, lineno, "site count")
            continue
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 2:
            raise FormatError(f"expected 'i,j', got {text!r}", path, lineno)
        pairs.append((_parse_int(parts[0], path, lineno, "site index"),
                      _parse_int(parts[1], path, lineno, "site index")))
    if n_sites is None:
        raise FormatError("missing n=<number of sites> line", path)
    try:
        return from_edge_list(n_sites, pairs)
    except ValueError as exc:
        raise FormatError(str(exc), path) from exc


def write_edges(path, graph: NeighborhoodGraph) -> None:
    with open(path, "w") as fh:
        fh.write(_version_line("edges"))
        fh.write(f"n={graph.n_sites}\n")
        for i, j in graph.edges:
            fh.write(f"{i},{j}\n")


# -- counts and covariates ----------------------------------------------------

def write_counts(path, counts) -> None:
    """Site-major long format ``site_id,t,count``."""
    counts = np.asarray(counts)
    n, t_total = counts.shape
    rows = ((i, t, int(counts[i, t])) for i in range(n) for t in range(t_total))
    _write_csv(path, "counts", ["site_id", "t", "count"], rows)


def read_counts(path, n_sites: int | None = None) -> np.ndarray:
    """Read ``site_id,t,count`` into an ``n x T`` integer matrix.

    Site ids are graph indices ``0..n-1``; every (site, t) cell must appear once.
    """
    header, rows = _read_versioned(path, "counts")
    if header != ["site_id", "t", "count"]:
        raise FormatError(f"expected header site_id,t,count, got {','.join(header)}", path)
    cells = {}
    for lineno, row in rows:
        if len(row) != 3:
            raise FormatError(f"expected 3 fields, got {len(row)}", path, lineno)
        i = _parse_int(row[0], path, lineno, "site_id")
        t = _parse_int(row[1], path, lineno, "t")
        c = _parse_int(row[2], path, lineno, "count")
        if i < 0 or t < 0:
            raise FormatError("site_id and t must be non-negative", path, lineno)
        if c < 0:
            raise FormatError(f"negative count {c}", path, lineno)
        if (i, t) in cells:
            raise FormatError(f"duplicate cell site_id={i}, t={t}", path, lineno)
        cells[(i, t)] = c
    if not cells:
        raise FormatError("no counts", path)
    n = max(i for i, _ in cells) + 1
    t_total = max(t for _, t in cells) + 1
    if n_sites is not None and n != n_sites:
        raise FormatError(f"counts cover {n} sites but the graph has {n_sites}", path)
    if len(cells) != n * t_total:
        raise FormatError(f"panel is incomplete: {len(cells)} of {n * t_total} cells present", path)
    out = np.empty((n, t_total), dtype=np.int64)
    for (i, t), c in cells.items():
        out[i, t] = c
    return out


def write_covariates(path, covariates, names) -> None:
    x = np.asarray(covariates, dtype=float)
    rows = ([i] + [_fmt(v) for v in x[i]] for i in range(x.shape[0]))
    _write_csv(path, "covariates", ["site_id"] + list(names), rows)


def read_covariates(path, n_sites: int | None = None):
    """Return ``(matrix n x p, names)`` from ``site_id,<name1>,...``."""
    header, rows = _read_versioned(path, "covariates")
    if not header or header[0] != "site_id" or len(header) < 2:
        raise FormatError("expected header site_id,<name1>,...", path)
    names = header[1:]
    values = {}
    for lineno, row in rows:
        if len(row) != len(header):
            raise FormatError(f"expected {len(header)} fields, got {len(row)}", path, lineno)
        i = _parse_int(row[0], path, lineno, "site_id")
        if i in values:
            raise FormatError(f"duplicate site_id {i}", path, lineno)
        values[i] = [_parse_float(v, path, lineno, name) for v, name in zip(row[1:], names)]
    n = len(values)
    if sorted(values) != list(range(n)):
        raise FormatError("site ids must be exactly 0..n-1", path)
    if n_sites is not None and n != n_sites:
        raise FormatError(f"covariates cover {n} sites but the graph has {n_sites}", path)
    return np.array([values[i] for i in range(n)]), names


# -- latent fields ------------------------------------------------------------

def write_latent(path, fields: dict) -> None:
    """``field,site_id,t,value``; time-invariant fields use an empty ``t``."""
    rows = []
    for name, values in fields.items():
        v = np.asarray(values, dtype=float)
        if v.ndim == 1:
            rows += [(name, i, "", _fmt(v[i])) for i in range(v.size)]
        else:
            rows += [(name, i, t, _fmt(v[i, t])) for i in range(v.shape[0]) for t in range(v.shape[1])]
    _write_csv(path, "latent", ["field", "site_id", "t", "value"], rows)


def read_latent(path) -> dict:
    header, rows = _read_versioned(path, "latent")
    if header != ["field", "site_id", "t", "value"]:
        raise FormatError("expected header field,site_id,t,value", path)
    cells: dict = {}
    for lineno, row in rows:
        if len(row) != 4:
            raise FormatError(f"expected 4 fields, got {len(row)}", path, lineno)
        name = row[0]
        i = _parse_int(row[1], path, lineno, "site_id")
        t = None if row[2] == "" else _parse_int(row[2], path, lineno, "t")
        cells.setdefault(name, {})[(i, t)] = _parse_float(row[3], path, lineno, "value")
    out = {}
    for name, vals in cells.items():
        n = max(i for i, _ in vals) + 1
        if all(t is None for _, t in vals):
            out[name] = np.array([vals[(i, None)] for i in range(n)])
        else:
            t_total = max(t for _, t in vals) + 1
            arr = np.empty((n, t_total))
            for (i, t), v in vals.items():
                arr[i, t] = v
            out[name] = arr
    return out


# -- chains, reports, checks --------------------------------------------------

def write_chains(path, chains) -> None:
    """One row per retained draw: ``chain,iter,<parameters>``."""
    d = chains.draws
    rows = ([c, k] + [_fmt(v) for v in d[c, k]]
            for c in range(d.shape[0]) for k in range(d.shape[1]))
    _write_csv(path, "chains", ["chain", "iter"] + list(chains.names), rows)


def read_chains(path):
    from .inference.fit import PosteriorChains

    header, rows = _read_versioned(path, "chains")
    if header[:2] != ["chain", "iter"] or len(header) < 3:
        raise FormatError("expected header chain,iter,<parameters>", path)
    names = header[2:]
    by_chain: dict = {}
    for lineno, row in rows:
        if len(row) != len(header):
            raise FormatError(f"expected {len(header)} fields, got {len(row)}", path, lineno)
        c = _parse_int(row[0], path, lineno, "chain")
        _parse_int(row[1], path, lineno, "iter")
        by_chain.setdefault(c, []).append([_parse_float(v, path, lineno, n)
                                           for v, n in zip(row[2:], names)])
    if not by_chain:
        raise FormatError("no draws", path)
    lengths = {len(v) for v in by_chain.values()}
    if len(lengths) != 1:
        raise FormatError("chains have unequal lengths", path)
    draws = np.array([by_chain[c] for c in sorted(by_chain)])
    return PosteriorChains(names, draws, {"source": str(path)})


def write_report(path, report) -> None:
    header = ["parameter", "mean", "lower", "upper", "rhat", "ess"]
    rows = ([r["parameter"]] + [_fmt(r[k]) for k in header[1:]] for r in report.rows())
    _write_csv(path, "report", header, rows)


def write_checks(path_or_file, report) -> None:
    header = ["statistic", "observed", "p_value", "q025", "q50", "q975", "n_used", "n_excluded"]
    rows = [[r["statistic"]] + [_fmt(r[k]) for k in header[1:6]] + [r["n_used"], r["n_excluded"]]
            for r in report.rows()]
    if hasattr(path_or_file, "write"):
        path_or_file.write(_version_line("checks"))
        w = csv.writer(path_or_file, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    else:
        _write_csv(path_or_file, "checks", header, rows)


# -- INI configuration --------------------------------------------------------

@dataclass
class Config:
    """Parsed INI file that remembers where each key was defined."""

    path: str
    parser: configparser.ConfigParser
    lines: dict

    def _where(self, section, key):
        return self.lines.get((section, key))

    def has(self, section, key) -> bool:
        return self.parser.has_option(section, key)

    def raw(self, section, key, default=None):
        if not self.parser.has_section(section):
            if default is not None:
                return default
            raise ConfigError(f"missing section [{section}]", self.path)
        if not self.parser.has_option(section, key):
            if default is not None:
                return default
            raise ConfigError(f"[{section}] missing required key {key!r}", self.path)
        return self.parser.get(section, key)

    def get_str(self, section, key, default=None, choices=None) -> str:
        value = self.raw(section, key, default)
        if choices is not None and value not in choices:
            raise ConfigError(f"[{section}] {key} = {value!r}: expected one of {list(choices)}",
                              self.path, self._where(section, key))
        return value

    def get_float(self, section, key, default=None) -> float:
        value = self.raw(section, key, None if default is None else str(default))
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {value!r} is not a number",
                              self.path, self._where(section, key)) from None

    def get_int(self, section, key, default=None) -> int:
        value = self.raw(section, key, None if default is None else str(default))
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {value!r} is not an integer",
                              self.path, self._where(section, key)) from None

    def get_floats(self, section, key) -> list[float]:
        value = self.raw(section, key)
        try:
            return [float(v) for v in value.replace(",", " ").split()]
        except ValueError:
            raise ConfigError(f"[{section}] {key} = {value!r} is not a list of numbers",
                              self.path, self._where(section, key)) from None

    def fail(self, section, key, message):
        raise ConfigError(f"[{section}] {key}: {message}", self.path, self._where(section, key))

    def as_dict(self) -> dict:
        return {s: dict(self.parser.items(s)) for s in self.parser.sections()}


def _key_lines(text: str) -> dict:
    out = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if s.startswith("[") and s.endswith("]"):
            section = s[1:-1].strip()
        elif section and s and s[0] not in "#;" and ("=" in s or ":" in s):
            key = re.split(r"[=:]", s, maxsplit=1)[0].strip().lower()
            out[(section, key)] = lineno
    return out


def read_config(path) -> Config:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    text = path.read_text()
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text, source=str(path))
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else None
        raise ConfigError(f"cannot parse line: {exc.errors[0][1].strip() if exc.errors else ''}",
                          str(path), lineno) from None
    except configparser.Error as exc:
        lineno = getattr(exc, "lineno", None)
        raise ConfigError(exc.message if hasattr(exc, "message") else str(exc),
                          str(path), lineno) from None
    return Config(str(path), parser, _key_lines(text))


def graph_from_config(cfg: Config, base_dir=None) -> NeighborhoodGraph:
    """``[graph] torus = RxC`` or ``[graph] edges = <file>``."""
    has_torus, has_edges = cfg.has("graph", "torus"), cfg.has("graph", "edges")
    if has_torus == has_edges:
        raise ConfigError("[graph] needs exactly one of 'torus' or 'edges'", cfg.path)
    if has_torus:
        value = cfg.raw("graph", "torus")
        m = re.fullmatch(r"\s*(\d+)\s*[xX]\s*(\d+)\s*", value)
        if not m:
            cfg.fail("graph", "torus", f"{value!r} is not of the form RxC")
        try:
            return torus_grid(int(m.group(1)), int(m.group(2)))
        except ValueError as exc:
            cfg.fail("graph", "torus", str(exc))
    edges = Path(cfg.raw("graph", "edges"))
    if base_dir is not None and not edges.is_absolute():
        edges = Path(base_dir) / edges
    return read_edges(edges)


# -- manifests ----------------------------------------------------------------

def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)


def config_hash(config: dict) -> str:
    return hashlib.sha256(_canonical(config).encode()).hexdigest()


def software_versions() -> dict:
    import scipy

    from importlib.metadata import PackageNotFoundError, version
    try:
        pkg = version("artifact")
    except PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "artifact": pkg}


def build_manifest(command: str, seed, config: dict, outputs: dict | None = None,
                   extra: dict | None = None) -> dict:
    from .stats import STATISTIC_DEFINITIONS

    body = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "command": command,
        "seed": seed,
        "config": config,
        "config_hash": config_hash(config),
        "versions": software_versions(),
        "statistic_definitions": dict(STATISTIC_DEFINITIONS),
        "outputs": dict(outputs or {}),
    }
    if extra:
        body["extra"] = extra
    body["manifest_hash"] = hashlib.sha256(_canonical(body).encode()).hexdigest()
    return body


def write_manifest(path, manifest: dict) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


def verify_manifest(manifest: dict) -> None:
    for key in ("format", "version", "command", "seed", "config", "config_hash", "manifest_hash"):
        if key not in manifest:
            raise ManifestError(f"manifest lacks {key!r}")
    if manifest["format"] != MANIFEST_FORMAT:
        raise ManifestError(f"not a run manifest (format {manifest['format']!r})")
    if manifest["version"] != MANIFEST_VERSION:
        raise ManifestError(f"unsupported manifest version {manifest['version']!r}")
    body = {k: v for k, v in manifest.items() if k != "manifest_hash"}
    if hashlib.sha256(_canonical(body).encode()).hexdigest() != manifest["manifest_hash"]:
        raise ManifestError("manifest hash mismatch: the file was modified after it was written")
    if config_hash(manifest["config"]) != manifest["config_hash"]:
        raise ManifestError("config hash mismatch")


def read_manifest(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    verify_manifest(manifest)
    return manifest
