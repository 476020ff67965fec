"""Parsing of captured HTTP flow logs into normalized, decoded flow records.

Three input formats are understood:

- ``flowlines``: the native format, one JSON object per line.
- ``har``: an HTTP Archive document (``log.entries[].request``).
- ``recon``: a loose adapter for ReCon-style flow dumps supplied by the user.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, replace
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator
from urllib.parse import unquote_to_bytes, urlsplit

logger = logging.getLogger(__name__)

FORMATS = ("flowlines", "har", "recon")
MALFORMED_LIMIT = 0.5

_ESCAPE = re.compile(r"%[0-9A-Fa-f]{2}")


class IngestError(Exception):
    pass


class UnsupportedFormat(IngestError):
    pass


class TooManyMalformed(IngestError):
    def __init__(self, skipped: int, total: int):
        super().__init__(
            f"{skipped} of {total} records malformed; is the --format right?"
        )
        self.skipped = skipped
        self.total = total


class AppCategory(str, Enum):
    SOCIAL = "Social"
    EDUCATION = "Education"
    ENTERTAINMENT = "Entertainment"
    TRAVEL = "Travel"
    SHOPPING = "Shopping"
    OTHERS = "Others"

    @classmethod
    def parse(cls, value: str) -> "AppCategory":
        for member in cls:
            if member.value.lower() == value.strip().lower():
                return member
        raise ValueError(f"unknown app category {value!r}")


class DeviceOS(str, Enum):
    ANDROID = "android"
    IOS = "ios"
    WINDOWS = "windows"
    UNKNOWN = "unknown"

    @classmethod
    def parse(cls, value: str) -> "DeviceOS":
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ValueError(f"unknown os {value!r}") from None


@dataclass(frozen=True)
class RawFlowRecord:
    source_file: str
    line_no: int
    payload: bytes


@dataclass(frozen=True)
class HttpFlow:
    flow_id: str
    app_name: str
    category: AppCategory
    os: DeviceOS
    domain: str
    timestamp: int
    method: str
    url: str
    headers: tuple[tuple[str, str], ...] = ()
    body: str = ""

    def header_text(self) -> str:
        """Headers rendered as ``Name: value`` lines; finding offsets index into this."""
        return "\n".join(f"{name}: {value}" for name, value in self.headers)

    def field_text(self, name: str) -> str:
        if name == "url":
            return self.url
        if name == "header":
            return self.header_text()
        if name == "body":
            return self.body
        raise KeyError(name)


@dataclass(frozen=True)
class Corpus:
    flows: tuple[HttpFlow, ...] = ()
    provenance: str = ""
    skipped: int = 0

    def __post_init__(self):
        seen = set()
        for flow in self.flows:
            if flow.flow_id in seen:
                raise ValueError(f"duplicate flow_id {flow.flow_id!r}")
            seen.add(flow.flow_id)

    def __len__(self) -> int:
        return len(self.flows)

    def __iter__(self) -> Iterator[HttpFlow]:
        return iter(self.flows)

    @property
    def domains(self) -> list[str]:
        return sorted({f.domain for f in self.flows})


def decode_chain(data: bytes | str) -> str:
    """Percent-decode ``%XX`` escapes, then decode UTF-8 with replacement.

    >>> decode_chain(b"%41%42")
    'AB'
    >>> decode_chain(b"\\xffA")
    '\\ufffdA'
    """
    if isinstance(data, str):
        data = data.encode("utf-8", "surrogatepass")
    return unquote_to_bytes(data).decode("utf-8", "replace")


def decode_text(data: bytes | str) -> str:
    # Repeats decode_chain until no escape survives, so double-encoded
    # payloads are fully resolved and re-decoding a stored field is a no-op.
    text = decode_chain(data)
    while _ESCAPE.search(text):
        text = decode_chain(text)
    return text


def _clean(value) -> str:
    if not isinstance(value, str):
        raise TypeError("expected string field")
    return decode_text(value)


def _headers(value) -> tuple[tuple[str, str], ...]:
    if value is None:
        return ()
    if isinstance(value, dict):
        value = list(value.items())
    out = []
    for pair in value:
        if isinstance(pair, dict):
            pair = (pair.get("name"), pair.get("value"))
        if len(pair) != 2:
            raise ValueError("header must be a (name, value) pair")
        name, val = pair
        out.append((_clean(name), _clean(val if val is not None else "")))
    return tuple(out)


def _flow_from_flowline(obj: dict) -> HttpFlow:
    if not isinstance(obj, dict):
        raise ValueError("record is not an object")
    ts = obj["ts"]
    if isinstance(ts, bool) or not isinstance(ts, (int, str)):
        raise ValueError("bad ts")
    return HttpFlow(
        flow_id=_clean(obj["flow_id"]),
        app_name=_clean(obj["app"]),
        category=AppCategory.parse(obj["category"]),
        os=DeviceOS.parse(obj["os"]),
        domain=_clean(obj["domain"]),
        timestamp=int(ts),
        method=_clean(obj["method"]),
        url=_clean(obj["url"]),
        headers=_headers(obj.get("headers")),
        body=_clean(obj.get("body", "")),
    )


def split_records(data: bytes, source: str = "<bytes>") -> list[RawFlowRecord]:
    """Split line-delimited input into records; blank lines are not records."""
    records = []
    for i, line in enumerate(data.split(b"\n"), start=1):
        line = line.rstrip(b"\r")
        if line.strip():
            records.append(RawFlowRecord(source, i, line))
    return records


def _parse_flowlines(data: bytes, source: str) -> tuple[list[HttpFlow], int, int]:
    flows, skipped, seen = [], 0, set()
    records = split_records(data, source)
    for rec in records:
        try:
            flow = _flow_from_flowline(json.loads(rec.payload.decode("utf-8", "replace")))
            if flow.flow_id in seen:
                raise ValueError("duplicate flow_id")
        except (ValueError, KeyError, TypeError) as exc:
            logger.debug("%s:%d skipped: %s", source, rec.line_no, exc)
            skipped += 1
            continue
        seen.add(flow.flow_id)
        flows.append(flow)
    return flows, skipped, len(records)


def _iso_to_epoch(value: str | None) -> int:
    if not value:
        return 0
    return int(datetime.fromisoformat(value.replace("Z", "+00:00")).timestamp())


def _parse_har(data: bytes, source: str) -> tuple[list[HttpFlow], int, int]:
    if not data.strip():
        return [], 0, 0
    try:
        entries = json.loads(data.decode("utf-8", "replace"))["log"]["entries"]
    except (ValueError, KeyError, TypeError):
        return [], 1, 1
    flows, skipped = [], 0
    for i, entry in enumerate(entries):
        try:
            req = entry["request"]
            url = _clean(req["url"])
            host = urlsplit(url).hostname or ""
            body = ""
            if req.get("postData"):
                body = _clean(req["postData"].get("text", ""))
            flows.append(HttpFlow(
                flow_id=f"har-{i}",
                app_name=_clean(entry.get("_app", host or "unknown")),
                category=AppCategory.parse(entry.get("_category", "Others")),
                os=DeviceOS.parse(entry.get("_os", "unknown")),
                domain=host,
                timestamp=_iso_to_epoch(entry.get("startedDateTime")),
                method=_clean(req.get("method", "GET")),
                url=url,
                headers=_headers(req.get("headers")),
                body=body,
            ))
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            logger.debug("%s entry %d skipped: %s", source, i, exc)
            skipped += 1
    return flows, skipped, len(entries)


_RECON_KEYS = {
    "domain": ("domain", "host", "dst_host"),
    "url": ("uri", "url", "path", "request_uri"),
    "body": ("post_body", "body", "content"),
    "method": ("method", "http_method"),
    "os": ("platform", "os"),
    "app": ("app", "package_name", "app_name"),
    "ts": ("ts", "time", "timestamp"),
    "label": ("label", "pii_label", "is_leak"),
}


def _pick(obj: dict, key: str, default=None):
    for name in _RECON_KEYS[key]:
        if name in obj and obj[name] is not None:
            return obj[name]
    return default


def _recon_objects(data: bytes) -> list:
    text = data.decode("utf-8", "replace").strip()
    if not text:
        return []
    if text[0] in "[{":
        try:
            doc = json.loads(text)
        except ValueError:
            doc = None
        if isinstance(doc, list):
            return doc
        if isinstance(doc, dict):
            # {"flow_id": {...}, ...} keyed dumps
            if all(isinstance(v, dict) for v in doc.values()):
                return [dict(v, _key=k) for k, v in doc.items()]
            return [doc]
    out = []
    for line in text.splitlines():
        if line.strip():
            try:
                out.append(json.loads(line))
            except ValueError:
                out.append(None)
    return out


def read_recon(data: bytes, source: str = "<recon>") -> tuple[Corpus, dict[str, bool]]:
    """Read a ReCon-style dump; returns the corpus and any labels it carries."""
    objs = _recon_objects(data)
    flows, labels, skipped, seen = [], {}, 0, set()
    for i, obj in enumerate(objs):
        try:
            domain = _clean(str(_pick(obj, "domain")))
            url = _clean(str(_pick(obj, "url", "")))
            if not url.startswith(("http://", "https://", domain)):
                url = domain + ("" if url.startswith("/") else "/") + url
            os_name = str(_pick(obj, "os", "unknown")).lower()
            flow_id = str(obj.get("flow_id", obj.get("_key", f"recon-{i}")))
            flow = HttpFlow(
                flow_id=flow_id,
                app_name=_clean(str(_pick(obj, "app", domain))),
                category=AppCategory.OTHERS,
                os=DeviceOS(os_name) if os_name in {o.value for o in DeviceOS} else DeviceOS.UNKNOWN,
                domain=domain,
                timestamp=int(float(_pick(obj, "ts", 0))),
                method=_clean(str(_pick(obj, "method", "GET"))),
                url=url,
                headers=_headers(obj.get("headers")),
                body=_clean(str(_pick(obj, "body", ""))),
            )
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            logger.debug("%s entry %d skipped: %s", source, i, exc)
            skipped += 1
            continue
        if flow.flow_id in seen:
            flow = replace(flow, flow_id=f"{flow.flow_id}#{i}")
        seen.add(flow.flow_id)
        label = _pick(obj, "label")
        if label is not None:
            labels[flow.flow_id] = str(label).strip().lower() in ("1", "true", "yes", "pii")
        flows.append(flow)
    _check_malformed(skipped, len(objs))
    return Corpus(tuple(flows), f"recon:{source}", skipped), labels


def _check_malformed(skipped: int, total: int) -> None:
    if total and skipped / total > MALFORMED_LIMIT:
        raise TooManyMalformed(skipped, total)


def parse_flow_log(data: bytes, format: str = "flowlines", source: str = "<bytes>") -> Corpus:
    """Parse a captured log into a Corpus, skipping and counting malformed records."""
    if format == "flowlines":
        flows, skipped, total = _parse_flowlines(data, source)
    elif format == "har":
        flows, skipped, total = _parse_har(data, source)
    elif format == "recon":
        return read_recon(data, source)[0]
    else:
        raise UnsupportedFormat(f"unsupported format {format!r}; expected one of {FORMATS}")
    _check_malformed(skipped, total)
    return Corpus(tuple(flows), f"{format}:{source}", skipped)


def read_corpus(path: str | Path, format: str = "flowlines") -> Corpus:
    path = Path(path)
    return parse_flow_log(path.read_bytes(), format, source=str(path))


def flow_to_record(flow: HttpFlow) -> dict:
    return {
        "flow_id": flow.flow_id,
        "app": flow.app_name,
        "category": flow.category.value,
        "os": flow.os.value,
        "domain": flow.domain,
        "ts": str(flow.timestamp),
        "method": flow.method,
        "url": flow.url,
        "headers": [list(h) for h in flow.headers],
        "body": flow.body,
    }


def dump_flowlines(flows: Iterable[HttpFlow]) -> bytes:
    lines = [json.dumps(flow_to_record(f), ensure_ascii=False) for f in flows]
    return ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    Path(path).write_bytes(dump_flowlines(corpus.flows))
