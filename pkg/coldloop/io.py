"""
Flat-file codecs: traces, spectra, cross-spectra, chain responses, report
tables and key/value summaries.

Every file is text with '#'-prefixed `key=value` header lines followed by a
'# columns:' line and comma-separated rows. Frequencies are written in Hz,
densities as stored. Writes go to a temporary file in the target directory
and are renamed into place.

Usage:
    from coldloop.io import read_spectrum_csv, write_spectrum_csv

    write_spectrum_csv(out_dir / "s_hom.csv", spectrum, config_hash=digest)
    again = read_spectrum_csv(out_dir / "s_hom.csv")
"""

from __future__ import annotations

import csv
import io
import logging
import os
import tempfile
from collections.abc import Mapping
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import NDArray

from .constants import TWO_PI
from .exceptions import DataFormatError, ReportIOError
from .estimate.spectra import CrossSpectrum
from .filters import FrequencyResponse
from .model import SpectralConvention, Spectrum
from .simulate.traces import TimeTrace, TraceLabel

logger: logging.Logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


# ============================================================
# Low-level helpers
# ============================================================


def atomic_write_text(path: str | os.PathLike[str], text: str) -> Path:
    """
    Write `text` to `path` via a temporary file and rename.

    Raises:
        ReportIOError: On any filesystem failure, naming the path
    """
    target = Path(path)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, target)
        except BaseException:
            Path(tmp).unlink(missing_ok=True)
            raise
    except OSError as e:
        raise ReportIOError(f"cannot write {target}", code="WRITE", context={"path": str(target)}) from e
    logger.debug("File written", extra={"path": str(target), "bytes": len(text)})
    return target


def _render(header: Mapping[str, Any], columns: list[str], data: NDArray[np.float64]) -> str:
    buf = io.StringIO()
    for key, value in header.items():
        buf.write(f"# {key}={value}\n")
    buf.write(f"# columns: {','.join(columns)}\n")
    if data.size:
        np.savetxt(buf, data, delimiter=",", fmt=FLOAT_FORMAT)
    return buf.getvalue()


def _parse(path: str | os.PathLike[str]) -> tuple[dict[str, str], list[str], NDArray[np.float64]]:
    target = Path(path)
    try:
        text = target.read_text(encoding="utf-8")
    except OSError as e:
        raise ReportIOError(f"cannot read {target}", code="READ", context={"path": str(target)}) from e
    header: dict[str, str] = {}
    columns: list[str] = []
    rows: list[str] = []
    for line in text.splitlines():
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("columns:"):
                columns = [c.strip() for c in body.removeprefix("columns:").split(",")]
            elif "=" in body:
                key, _, value = body.partition("=")
                header[key.strip()] = value.strip()
        elif line.strip():
            rows.append(line)
    if not columns:
        raise DataFormatError(f"{target} has no columns line", code="NO_COLUMNS", context={"path": str(target)})
    try:
        data = np.loadtxt(io.StringIO("\n".join(rows)), delimiter=",", ndmin=2) if rows else np.zeros((0, len(columns)))
    except ValueError as e:
        raise DataFormatError(f"{target} has malformed rows", code="ROWS", context={"path": str(target)}) from e
    if data.shape[1] != len(columns):
        raise DataFormatError(
            f"{target} rows do not match columns",
            code="ROWS",
            context={"path": str(target), "columns": columns, "width": data.shape[1]},
        )
    return header, columns, data


def _column(columns: list[str], data: NDArray[np.float64], name: str, path: str | os.PathLike[str]) -> NDArray[np.float64]:
    if name not in columns:
        raise DataFormatError(f"{path} lacks column {name!r}", code="NO_COLUMN", context={"columns": columns})
    return np.asarray(data[:, columns.index(name)], dtype=float)


# ============================================================
# Time traces
# ============================================================


def write_trace_csv(path: str | os.PathLike[str], trace: TimeTrace, config_hash: str = "") -> Path:
    """Columns t_s, re[, im]; header sample_rate_hz, label, units, seed, config_hash, start_time_s."""
    header = {
        "sample_rate_hz": repr(float(trace.sample_rate)),
        "start_time_s": repr(float(trace.start_time)),
        "label": str(trace.label),
        "units": trace.units,
        "seed": trace.metadata.get("seed", ""),
        "config_hash": config_hash or trace.metadata.get("config_hash", ""),
    }
    t = trace.times()
    if trace.is_complex:
        columns = ["t_s", "re", "im"]
        data = np.column_stack([t, trace.samples.real, trace.samples.imag])
    else:
        columns = ["t_s", "re"]
        data = np.column_stack([t, trace.samples.astype(float)])
    return atomic_write_text(path, _render(header, columns, data))


def read_trace_csv(path: str | os.PathLike[str]) -> TimeTrace:
    header, columns, data = _parse(path)
    try:
        rate = float(header["sample_rate_hz"])
    except (KeyError, ValueError) as e:
        raise DataFormatError(f"{path} lacks a valid sample_rate_hz", code="HEADER") from e
    re = _column(columns, data, "re", path)
    samples = re + 1j * _column(columns, data, "im", path) if "im" in columns else re
    metadata: dict[str, Any] = {k: header[k] for k in ("seed", "config_hash") if header.get(k)}
    return TimeTrace(
        sample_rate=rate,
        samples=samples,
        start_time=float(header.get("start_time_s", "0") or 0.0),
        label=TraceLabel(header.get("label", "custom") or "custom"),
        units=header.get("units", ""),
        metadata=metadata,
    )


# ============================================================
# Spectra
# ============================================================


def _hz(grid: NDArray[np.float64], convention: SpectralConvention) -> NDArray[np.float64]:
    return grid / TWO_PI if convention is SpectralConvention.TWO_SIDED_ANGULAR else grid


def write_spectrum_csv(path: str | os.PathLike[str], spectrum: Spectrum, config_hash: str = "") -> Path:
    """Columns freq_hz, value[, sigma]; header convention, n_averages."""
    header = {
        "convention": str(spectrum.convention),
        "n_averages": spectrum.n_averages,
        "config_hash": config_hash,
    }
    freq = _hz(spectrum.grid, spectrum.convention)
    if spectrum.sigma is not None:
        columns, data = ["freq_hz", "value", "sigma"], np.column_stack([freq, spectrum.values, spectrum.sigma])
    else:
        columns, data = ["freq_hz", "value"], np.column_stack([freq, spectrum.values])
    return atomic_write_text(path, _render(header, columns, data))


def read_spectrum_csv(path: str | os.PathLike[str]) -> Spectrum:
    header, columns, data = _parse(path)
    convention = SpectralConvention(header.get("convention", SpectralConvention.TWO_SIDED_ANGULAR))
    freq = _column(columns, data, "freq_hz", path)
    grid = freq * TWO_PI if convention is SpectralConvention.TWO_SIDED_ANGULAR else freq
    return Spectrum(
        grid=grid,
        values=_column(columns, data, "value", path),
        convention=convention,
        sigma=_column(columns, data, "sigma", path) if "sigma" in columns else None,
        n_averages=int(header.get("n_averages", "0") or 0),
    )


def write_cross_spectrum_csv(path: str | os.PathLike[str], cross: CrossSpectrum, config_hash: str = "") -> Path:
    """Columns freq_hz, re, im[, sigma_re, sigma_im]; header convention, n_averages."""
    header = {"convention": str(cross.convention), "n_averages": cross.n_averages, "config_hash": config_hash}
    freq = _hz(cross.grid, cross.convention)
    columns = ["freq_hz", "re", "im"]
    parts = [freq, cross.values.real, cross.values.imag]
    if cross.sigma_re is not None and cross.sigma_im is not None:
        columns += ["sigma_re", "sigma_im"]
        parts += [cross.sigma_re, cross.sigma_im]
    return atomic_write_text(path, _render(header, columns, np.column_stack(parts)))


def read_cross_spectrum_csv(path: str | os.PathLike[str]) -> CrossSpectrum:
    header, columns, data = _parse(path)
    convention = SpectralConvention(header.get("convention", SpectralConvention.TWO_SIDED_ANGULAR))
    freq = _column(columns, data, "freq_hz", path)
    grid = freq * TWO_PI if convention is SpectralConvention.TWO_SIDED_ANGULAR else freq
    has_sigma = "sigma_re" in columns and "sigma_im" in columns
    return CrossSpectrum(
        grid=grid,
        values=_column(columns, data, "re", path) + 1j * _column(columns, data, "im", path),
        n_averages=max(int(header.get("n_averages", "1") or 1), 1),
        convention=convention,
        sigma_re=_column(columns, data, "sigma_re", path) if has_sigma else None,
        sigma_im=_column(columns, data, "sigma_im", path) if has_sigma else None,
    )


# ============================================================
# Chain responses
# ============================================================


def write_response_csv(path: str | os.PathLike[str], response: FrequencyResponse) -> Path:
    """Columns frequency_hz, re, im (engineering convention)."""
    data = np.column_stack([response.grid / TWO_PI, response.values.real, response.values.imag])
    return atomic_write_text(path, _render({"convention": "engineering"}, ["frequency_hz", "re", "im"], data))


def read_response_csv(path: str | os.PathLike[str]) -> FrequencyResponse:
    _, columns, data = _parse(path)
    return FrequencyResponse(
        grid=_column(columns, data, "frequency_hz", path) * TWO_PI,
        values=_column(columns, data, "re", path) + 1j * _column(columns, data, "im", path),
    )


# ============================================================
# Key/value summaries
# ============================================================


def write_key_values(path: str | os.PathLike[str], values: Mapping[str, Any], comment: str = "") -> Path:
    """One `key=value` per line; floats at full precision."""
    lines = [f"# {comment}"] if comment else []
    for key, value in values.items():
        text = repr(float(value)) if isinstance(value, float | np.floating) else str(value)
        lines.append(f"{key}={text}")
    return atomic_write_text(path, "\n".join(lines) + "\n")


def read_key_values(path: str | os.PathLike[str]) -> dict[str, str]:
    target = Path(path)
    try:
        text = target.read_text(encoding="utf-8")
    except OSError as e:
        raise ReportIOError(f"cannot read {target}", code="READ", context={"path": str(target)}) from e
    out: dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip() or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataFormatError(f"{target}: not a key=value line", code="KEY_VALUE", context={"line": line})
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


# ============================================================
# Report tables
# ============================================================


def write_table_csv(
    path: str | os.PathLike[str],
    columns: list[str],
    rows: list[list[Any]],
    header: Mapping[str, Any] | None = None,
) -> Path:
    """Mixed text/number table; floats are written with `repr` so they re-read exactly."""
    buf = io.StringIO()
    for key, value in (header or {}).items():
        buf.write(f"# {key}={value}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, float | np.floating) else v for v in row])
    return atomic_write_text(path, buf.getvalue())


def read_table_csv(path: str | os.PathLike[str]) -> tuple[dict[str, str], list[dict[str, str]]]:
    """Header key/values and one dict per row, keyed by column name."""
    target = Path(path)
    try:
        text = target.read_text(encoding="utf-8")
    except OSError as e:
        raise ReportIOError(f"cannot read {target}", code="READ", context={"path": str(target)}) from e
    header: dict[str, str] = {}
    body: list[str] = []
    for line in text.splitlines():
        if line.startswith("#"):
            key, sep, value = line[1:].strip().partition("=")
            if sep:
                header[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    if not body:
        raise DataFormatError(f"{target} has no column row", code="NO_COLUMNS", context={"path": str(target)})
    reader = csv.reader(body)
    columns = next(reader)
    rows = []
    for values in reader:
        if len(values) != len(columns):
            raise DataFormatError(
                f"{target} rows do not match columns",
                code="ROWS",
                context={"path": str(target), "columns": columns, "width": len(values)},
            )
        rows.append(dict(zip(columns, values, strict=True)))
    return header, rows
