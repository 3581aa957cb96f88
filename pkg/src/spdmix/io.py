"""Quote CSV ingestion, model JSON documents and grid CSV output."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence, Union

from .errors import DomainError, EmptyQuotesError, ModelFormatError, QuoteParseError
from .estimator import FitResult, Quote
from .pricing import MarketContext, MixtureModel

FORMAT_VERSION = 1
QUOTE_COLUMNS = ("strike", "price", "weight", "put_price")
REQUIRED_COLUMNS = ("strike", "price")

Source = Union[str, Path, IO[str]]


@dataclass(frozen=True)
class QuoteFileRow:
    strike: float
    price: float
    weight: float = 1.0
    put_price: float | None = None
    line: int = 0

    def to_quote(self) -> Quote:
        return Quote(self.strike, self.price, self.weight)


def _read_text(source: Source) -> str:
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8", newline="") as fh:
            return fh.read()
    return source.read()


def _number(text: str, column: str, line: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise QuoteParseError(f"column {column!r}: {text.strip()!r} is not a number", line) from None
    if not math.isfinite(value):
        raise QuoteParseError(f"column {column!r} must be finite", line)
    return value


def parse_quote_rows(source: Source) -> list[QuoteFileRow]:
    """Rows of a quote CSV, keeping the optional put prices.

    Blank lines and lines starting with ``#`` are skipped anywhere in the file.
    """
    text = _read_text(source)
    numbered = [
        (k, raw)
        for k, raw in enumerate(text.splitlines(), start=1)
        if raw.strip() and not raw.lstrip().startswith("#")
    ]
    if not numbered:
        raise QuoteParseError("empty file")
    header_line, header_raw = numbered[0]
    header = [h.strip().lower() for h in next(csv.reader([header_raw]))]
    unknown = [h for h in header if h not in QUOTE_COLUMNS]
    if unknown:
        raise QuoteParseError(f"unknown column(s) {', '.join(unknown)}", header_line)
    if len(set(header)) != len(header):
        raise QuoteParseError("duplicate column name", header_line)
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise QuoteParseError(f"missing required column(s) {', '.join(missing)}", header_line)

    rows = []
    for line, raw in numbered[1:]:
        cells = next(csv.reader([raw]))
        if len(cells) != len(header):
            raise QuoteParseError(f"expected {len(header)} fields, found {len(cells)}", line)
        rec = {}
        for name, cell in zip(header, cells):
            if cell.strip() == "" and name in ("weight", "put_price"):
                continue
            rec[name] = _number(cell, name, line)
        if rec["strike"] <= 0:
            raise QuoteParseError("strike must be > 0", line)
        if rec["price"] < 0:
            raise QuoteParseError("price must be >= 0", line)
        if rec.get("weight", 1.0) < 0:
            raise QuoteParseError("weight must be >= 0", line)
        rows.append(QuoteFileRow(line=line, **rec))
    if not rows:
        raise EmptyQuotesError("quote file has a header but no rows")
    return rows


def parse_quotes_csv(source: Source) -> list[Quote]:
    """Quotes from a CSV with a header naming ``strike``, ``price`` and optionally ``weight``/``put_price``."""
    return [r.to_quote() for r in parse_quote_rows(source)]


# ---------------------------------------------------------------------------
# Model documents
# ---------------------------------------------------------------------------


def _finite_or_none(x: float):
    return float(x) if math.isfinite(x) else None


def _none_to_inf(x):
    return math.inf if x is None else float(x)


@dataclass(frozen=True)
class ModelDocument:
    """A fitted mixture with the diagnostics of the fit that produced it.

    ``cv_grid``/``cv_scores`` are present only when the scale was cross-validated;
    an infinite score is stored as ``null``.
    """

    model: MixtureModel
    objective: float | None = None
    kkt_residual: float | None = None
    iterations_used: int | None = None
    weight_mode: str | None = None
    forward_constraint: float | None = None
    cv_grid: tuple[float, ...] | None = None
    cv_scores: tuple[float, ...] | None = None
    extra: dict = field(default_factory=dict)

    @property
    def sigma_floor(self) -> float:
        return float(self.model.components[0].sigma)

    @classmethod
    def from_fit(cls, result: FitResult, cv=None) -> "ModelDocument":
        return cls(
            model=result.model,
            objective=result.objective,
            kkt_residual=result.kkt_residual,
            iterations_used=result.iterations_used,
            weight_mode=result.config.weight_mode,
            forward_constraint=result.config.forward_constraint,
            cv_grid=None if cv is None else tuple(float(s) for s in cv.sigma_grid),
            cv_scores=None if cv is None else tuple(float(s) for s in cv.scores),
        )

    def to_dict(self) -> dict:
        m = self.model
        sigmas = {c.sigma for c in m.components}
        if len(sigmas) != 1:
            raise ModelFormatError("documents store one shared component scale")
        diag = {
            "objective": self.objective,
            "kkt_residual": self.kkt_residual,
            "iterations_used": self.iterations_used,
            "weight_mode": self.weight_mode,
            "forward_constraint": self.forward_constraint,
        }
        if self.cv_grid is not None:
            diag["cv"] = {
                "sigma_grid": list(self.cv_grid),
                "scores": [_finite_or_none(s) for s in self.cv_scores],
            }
        diag.update(self.extra)
        ctx = m.context
        return {
            "format_version": FORMAT_VERSION,
            "context": {"spot": ctx.spot, "rate": ctx.rate, "dividend_yield": ctx.dividend_yield, "tau": ctx.tau},
            "sigma_floor": sigmas.pop(),
            "components": [{"mu": c.mu, "pi": w} for c, w in zip(m.components, m.weights)],
            "diagnostics": diag,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelDocument":
        if not isinstance(doc, dict):
            raise ModelFormatError("model document must be a JSON object")
        version = doc.get("format_version")
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported format_version {version!r}")
        try:
            c = doc["context"]
            ctx = MarketContext(float(c["spot"]), float(c["rate"]), float(c["dividend_yield"]), float(c["tau"]))
            comps = doc["components"]
            model = MixtureModel.from_arrays(
                [float(k["mu"]) for k in comps],
                [float(k["pi"]) for k in comps],
                float(doc["sigma_floor"]),
                ctx,
            )
            diag = dict(doc.get("diagnostics", {}))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DomainError):
                raise ModelFormatError(f"invalid model: {exc}") from None
            raise ModelFormatError(f"malformed model document: {exc!r}") from None
        cv = diag.pop("cv", None)
        known = {k: diag.pop(k, None) for k in ("objective", "kkt_residual", "iterations_used", "weight_mode", "forward_constraint")}
        return cls(
            model=model,
            cv_grid=None if cv is None else tuple(float(s) for s in cv["sigma_grid"]),
            cv_scores=None if cv is None else tuple(_none_to_inf(s) for s in cv["scores"]),
            extra=diag,
            **known,
        )

    @classmethod
    def loads(cls, text: str) -> "ModelDocument":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(f"not valid JSON: {exc}") from None
        return cls.from_dict(doc)


def save_model(path: str | Path, document: ModelDocument) -> None:
    Path(path).write_text(document.dumps(), encoding="utf-8")


def load_model(path: str | Path) -> ModelDocument:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ModelFormatError(f"cannot read {path}: {exc.strerror}") from None
    return ModelDocument.loads(text)


# ---------------------------------------------------------------------------
# Grids and reports
# ---------------------------------------------------------------------------


def parse_grid_spec(spec: str) -> tuple[float, float, int]:
    """``"lo:hi:n"`` to its parts."""
    parts = spec.split(":")
    if len(parts) != 3:
        raise DomainError(f"grid spec {spec!r} must look like lo:hi:n")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise DomainError(f"grid spec {spec!r} must look like lo:hi:n") from None
    if n < 1 or not (math.isfinite(lo) and math.isfinite(hi)) or (n > 1 and not lo < hi):
        raise DomainError(f"grid spec {spec!r} needs lo < hi and n >= 1")
    return lo, hi, n


def format_grid_csv(x: Sequence[float], y: Sequence[float], header: Iterable[str] = ("x", "value")) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(list(header))
    for a, b in zip(x, y):
        writer.writerow([repr(float(a)), repr(float(b))])
    return buf.getvalue()


def write_grid_csv(path: str | Path, x, y, header: Iterable[str] = ("x", "value")) -> None:
    Path(path).write_text(format_grid_csv(x, y, header), encoding="utf-8")


def dumps_report(report: dict) -> str:
    return json.dumps(report, sort_keys=True, indent=2) + "\n"
