"""Locating PII in flows, labeling, randomization and adversary-view reports."""

from __future__ import annotations

import csv
import io
import random
import re
import string
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

from leakhound.ingest import AppCategory, Corpus, DeviceOS, HttpFlow

LOCATION = "location"
USER_IDENTIFIER = "user_identifier"
DEVICE_IDENTIFIER = "device_identifier"
GROUPS = (LOCATION, USER_IDENTIFIER, DEVICE_IDENTIFIER)

FIELDS = ("url", "header", "body")
_FIELD_ORDER = {name: i for i, name in enumerate(FIELDS)}

REPLACEMENT_ALPHABET = string.ascii_lowercase + string.digits


class OverlappingSpans(ValueError):
    """Two findings in one field partially overlap, so replacements would conflict."""


@dataclass(frozen=True, order=True)
class PiiCategory:
    value: str
    subtype: str

    def __post_init__(self):
        if self.value not in GROUPS:
            raise ValueError(f"unknown PII group {self.value!r}")
        if not self.subtype:
            raise ValueError("PII subtype must be non-empty")


@dataclass(frozen=True)
class PiiRule:
    category: PiiCategory
    pattern: str
    description: str = ""
    validator: Callable[[str], bool] | None = field(default=None, compare=False)

    def __post_init__(self):
        compiled = re.compile(self.pattern)
        if compiled.search("") is not None:
            raise ValueError(f"rule {self.category.subtype}: pattern matches the empty string")
        object.__setattr__(self, "_compiled", compiled)

    @property
    def regex(self) -> re.Pattern:
        return self._compiled

    def matches(self, text: str) -> Iterable[tuple[int, int]]:
        group = "value" if "value" in self.regex.groupindex else 0
        for m in self.regex.finditer(text):
            start, end = m.span(group)
            if start < end and (self.validator is None or self.validator(text[start:end])):
                yield start, end


@dataclass(frozen=True)
class PiiFinding:
    flow_id: str
    category: PiiCategory
    field: str
    start: int
    end: int
    value: str

    def sort_key(self):
        return (_FIELD_ORDER[self.field], self.start, self.end, self.category)


@dataclass(frozen=True)
class LabeledFlow:
    flow: HttpFlow
    label: bool
    findings: tuple[PiiFinding, ...] = ()
    provenance: str = "scan"


@dataclass(frozen=True)
class ProfileReport:
    subject: str
    timeline: tuple[tuple[int, str, str, PiiCategory], ...]
    merged_attributes: dict[str, frozenset[str]]


def luhn_valid(digits: str) -> bool:
    if not digits.isdigit():
        return False
    total = 0
    for i, ch in enumerate(reversed(digits)):
        d = int(ch)
        if i % 2 == 1:
            d *= 2
            if d > 9:
                d -= 9
        total += d
    return total % 10 == 0


def luhn_complete(prefix: str) -> str:
    """Append the check digit that makes ``prefix`` Luhn-valid."""
    for d in "0123456789":
        if luhn_valid(prefix + d):
            return prefix + d
    raise AssertionError("unreachable")


VALIDATORS: dict[str, Callable[[str], bool]] = {"imei": luhn_valid}

_NOT_KEY = r"(?<![A-Za-z0-9_-])"


def _kv(keys: str, value: str, end: str) -> str:
    # key=value and "key":"value" forms; only the value is captured.
    return rf'{_NOT_KEY}(?i:{keys})"?\s*[=:]\s*"?(?P<value>{value}){end}'


_TERM = r"(?=$|[&;,\"\s}\]#])"

DEFAULT_RULE_SPECS: tuple[tuple[str, str, str], ...] = (
    (USER_IDENTIFIER, "email",
     r"(?<![A-Za-z0-9._%+-])(?P<value>[A-Za-z0-9._%+-]+@[A-Za-z0-9-]+(?:\.[A-Za-z0-9-]+)*\.[A-Za-z]{2,})(?![A-Za-z0-9-])"),
    (USER_IDENTIFIER, "phone",
     r"(?<![\w+.-])(?P<value>\+?\d(?:[ -]?\d){9,12})(?![\w-]|\.\d)"),
    (USER_IDENTIFIER, "dob",
     r"(?<![\w-])(?P<value>(?:19|20)\d{2}-(?:0[1-9]|1[0-2])-(?:0[1-9]|[12]\d|3[01]))(?![\w-])"),
    (USER_IDENTIFIER, "gender",
     _kv("gender|sex|g", r"(?i:female|male|f|m)", r"(?![A-Za-z0-9])")),
    (USER_IDENTIFIER, "name",
     _kv("name|first_?name|last_?name|full_?name|fname|lname",
         r"[A-Za-z][A-Za-z'.-]*(?: [A-Za-z][A-Za-z'.-]*){0,3}", _TERM)),
    (USER_IDENTIFIER, "user_id",
     _kv("uid|user_?id|userid", r"[A-Za-z0-9_-]{4,64}", r"(?![A-Za-z0-9_-])")),
    (LOCATION, "address",
     _kv("address|addr|street|home_?address", r"[A-Za-z0-9][A-Za-z0-9 .,#'/-]{3,80}",
         r"(?=$|[&;\"\n}])")),
    (LOCATION, "lat_long",
     r"(?<![\w.-])(?P<value>-?\d{1,2}\.\d{3,},\s?-?\d{1,3}\.\d{3,})(?![\w.])"),
    (LOCATION, "lat_long",
     _kv("lat|latitude|lon|lng|longitude", r"-?\d{1,3}\.\d{3,}", r"(?![\w.]|,\s?-?\d)")),
    (DEVICE_IDENTIFIER, "android_id",
     r"(?<![0-9A-Za-z-])(?P<value>[0-9a-f]{16})(?![0-9A-Za-z-])"),
    (DEVICE_IDENTIFIER, "advertising_id",
     r"(?<![0-9A-Za-z-])(?P<value>[0-9a-fA-F]{8}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{4}-[0-9a-fA-F]{12})(?![0-9A-Za-z-])"),
    (DEVICE_IDENTIFIER, "imei",
     r"(?<!\w)(?P<value>\d{15})(?!\w)"),
    (DEVICE_IDENTIFIER, "device_model",
     _kv("model|device_?model|dm", r"[A-Za-z0-9][A-Za-z0-9 _.-]{1,40}", r"(?=$|[&;,\"\n}])")),
)


def make_rules(specs: Iterable[tuple[str, str, str]]) -> list[PiiRule]:
    rules, owner = [], {}
    for group, subtype, pattern in specs:
        if owner.setdefault(subtype, group) != group:
            raise ValueError(f"subtype {subtype!r} assigned to two groups")
        rules.append(PiiRule(PiiCategory(group, subtype), pattern,
                             validator=VALIDATORS.get(subtype)))
    return rules


def default_rules() -> list[PiiRule]:
    return make_rules(DEFAULT_RULE_SPECS)


def load_rules(path: str | Path) -> list[PiiRule]:
    """Load ``category<TAB>subtype<TAB>pattern`` lines; ``#`` starts a comment line."""
    specs = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        parts = line.split("\t", 2)
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 3 tab-separated columns")
        specs.append(tuple(parts))
    return make_rules(specs)


def dump_rules(rules: Sequence[PiiRule]) -> str:
    return "".join(f"{r.category.value}\t{r.category.subtype}\t{r.pattern}\n" for r in rules)


def scan_flow(flow: HttpFlow, rules: Sequence[PiiRule]) -> list[PiiFinding]:
    if not rules:
        raise ValueError("scan_flow needs at least one rule")
    found = set()
    for name in FIELDS:
        text = flow.field_text(name)
        if not text:
            continue
        for rule in rules:
            for start, end in rule.matches(text):
                found.add(PiiFinding(flow.flow_id, rule.category, name, start, end, text[start:end]))
    return sorted(found, key=PiiFinding.sort_key)


def label_flow(flow: HttpFlow, rules: Sequence[PiiRule]) -> LabeledFlow:
    findings = tuple(scan_flow(flow, rules))
    return LabeledFlow(flow, bool(findings), findings, "scan")


def label_corpus(corpus: Corpus | Iterable[HttpFlow], rules: Sequence[PiiRule] | None = None) -> list[LabeledFlow]:
    rules = rules or default_rules()
    return [label_flow(f, rules) for f in corpus]


def apply_external_labels(labeled: Sequence[LabeledFlow], labels: dict[str, bool]) -> list[LabeledFlow]:
    """Override scan labels with user-supplied ones; overridden flows are flagged external."""
    out = []
    for lf in labeled:
        if lf.flow.flow_id in labels:
            lf = replace(lf, label=labels[lf.flow.flow_id], provenance="external")
        out.append(lf)
    return out



# --- label files ---------------------------------------------------------------

_LABEL_HEADER = ("flow_id", "label", "provenance")
_FINDING_HEADER = ("flow_id", "group", "subtype", "field", "start", "end", "value")


def _tsv(rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    csv.writer(buf, delimiter="\t", lineterminator="\n").writerows(rows)
    return buf.getvalue()


def dump_labels(labeled: Iterable[LabeledFlow]) -> tuple[str, str]:
    """(labels.tsv, findings.tsv) text."""
    labeled = list(labeled)
    labels = [_LABEL_HEADER] + [(lf.flow.flow_id, int(lf.label), lf.provenance) for lf in labeled]
    findings = [_FINDING_HEADER] + [
        (f.flow_id, f.category.value, f.category.subtype, f.field, f.start, f.end, f.value)
        for lf in labeled for f in lf.findings]
    return _tsv(labels), _tsv(findings)


def parse_labels(corpus: Corpus | Iterable[HttpFlow], labels_text: str, findings_text: str = "") -> list[LabeledFlow]:
    """Rebuild LabeledFlows in corpus order; every flow must have a label row."""
    labels = {}
    for row in list(csv.reader(io.StringIO(labels_text), delimiter="\t"))[1:]:
        flow_id, label, provenance = row
        labels[flow_id] = (label == "1", provenance)
    findings: dict[str, list[PiiFinding]] = defaultdict(list)
    for row in list(csv.reader(io.StringIO(findings_text), delimiter="\t"))[1:]:
        flow_id, group, subtype, fld, start, end, value = row
        findings[flow_id].append(PiiFinding(flow_id, PiiCategory(group, subtype), fld, int(start), int(end), value))
    out = []
    for flow in corpus:
        if flow.flow_id not in labels:
            raise ValueError(f"no label for flow {flow.flow_id!r}")
        label, provenance = labels[flow.flow_id]
        out.append(LabeledFlow(flow, label, tuple(sorted(findings.get(flow.flow_id, ()), key=PiiFinding.sort_key)),
                               provenance))
    return out

def _distinct_spans(findings: Sequence[PiiFinding]) -> dict[str, list[tuple[int, int]]]:
    spans: dict[str, set[tuple[int, int]]] = defaultdict(set)
    for f in findings:
        spans[f.field].add((f.start, f.end))
    ordered = {}
    for name, group in spans.items():
        group = sorted(group)
        for (s1, e1), (s2, e2) in zip(group, group[1:]):
            if s2 < e1:
                raise OverlappingSpans(f"{name}: spans {(s1, e1)} and {(s2, e2)} overlap")
        ordered[name] = group
    return ordered


def _split_headers(flow: HttpFlow, text: str) -> tuple[tuple[str, str], ...]:
    out, pos = [], 0
    for name, value in flow.headers:
        n0 = pos
        v0 = n0 + len(name) + 2
        v1 = v0 + len(value)
        out.append((text[n0:n0 + len(name)], text[v0:v1]))
        pos = v1 + 1
    return tuple(out)


def randomize_pii(labeled: LabeledFlow, seed: int, max_attempts: int = 1000) -> HttpFlow:
    """Replace every PII span with random ``[a-z0-9]`` text of the same length.

    Replacements never reproduce any of the flow's original PII values where
    they touch a replaced span. Deterministic for a given seed and flow id.
    """
    flow = labeled.flow
    if not labeled.findings:
        return flow
    spans = _distinct_spans(labeled.findings)
    originals = {f.value for f in labeled.findings}
    rng = random.Random(f"{seed}:{flow.flow_id}")
    texts = {name: flow.field_text(name) for name in spans}

    for _ in range(max_attempts):
        new = {}
        for name, group in spans.items():
            chars = list(texts[name])
            for start, end in group:
                chars[start:end] = rng.choices(REPLACEMENT_ALPHABET, k=end - start)
            new[name] = "".join(chars)
        if not any(_reintroduces(new[n], spans[n], originals) for n in new):
            break
    else:
        raise RuntimeError(f"could not randomize flow {flow.flow_id!r}")

    changes = {}
    if "url" in new:
        changes["url"] = new["url"]
    if "body" in new:
        changes["body"] = new["body"]
    if "header" in new:
        changes["headers"] = _split_headers(flow, new["header"])
    return replace(flow, **changes)


def _reintroduces(text: str, spans: Sequence[tuple[int, int]], originals: set[str]) -> bool:
    for value in originals:
        start = text.find(value)
        while start != -1:
            end = start + len(value)
            if any(start < e and s < end for s, e in spans):
                return True
            start = text.find(value, start + 1)
    return False


# --- synthetic corpora -------------------------------------------------------

DEFAULT_APP_MIX: tuple[tuple[str, str, tuple[str, ...]], ...] = (
    ("Pinterest", "Social", ("api.pinterest.com", "trk.pinimg.com")),
    ("Skype", "Social", ("api.skype.com", "edge.skype.com")),
    ("Reddit", "Social", ("gql.reddit.com", "events.redditmedia.com")),
    ("Gradeup", "Education", ("api.gradeup.co", "cdn.gradeup.co")),
    ("Voot", "Entertainment", ("api.voot.com", "analytics.voot.com")),
    ("Zee5", "Entertainment", ("gwapi.zee5.com", "logs.zee5.com")),
    ("Cleartrip", "Travel", ("www.cleartrip.com", "tracking.cleartrip.com")),
    ("OYO", "Travel", ("api.oyorooms.com", "metrics.oyorooms.com")),
    ("Myntra", "Shopping", ("api.myntra.com", "beacon.myntra.com")),
    ("eBay", "Shopping", ("api.ebay.com", "svcs.ebay.com")),
    ("Truecaller", "Others", ("search5.truecaller.com", "batch.truecaller.com")),
    ("Adobe Reader", "Others", ("cc-api.adobe.io", "dc.adobe.io")),
)
THIRD_PARTY_DOMAINS = ("ads.adnet-demo.net", "collector.trackr-demo.io", "sdk.crashlog-demo.io")

# Keys appearing next to planted PII; kept disjoint from the boilerplate keys.
PII_KEYS: dict[str, tuple[str, ...]] = {
    "email": ("email", "mail", "em"),
    "phone": ("phone", "mobile", "msisdn"),
    "name": ("name", "first_name", "last_name", "fname"),
    "gender": ("gender", "g", "sex"),
    "dob": ("dob", "birthdate", "bday"),
    "user_id": ("uid", "user_id", "userid"),
    "address": ("address", "addr"),
    "lat_long": ("ll", "loc", "geo"),
    "android_id": ("android_id", "aid", "did"),
    "advertising_id": ("adid", "gaid", "ifa"),
    "imei": ("imei", "dev_imei"),
    "device_model": ("model", "device_model", "dm"),
}
SUBTYPE_GROUP = {
    "email": USER_IDENTIFIER, "phone": USER_IDENTIFIER, "name": USER_IDENTIFIER,
    "gender": USER_IDENTIFIER, "dob": USER_IDENTIFIER, "user_id": USER_IDENTIFIER,
    "address": LOCATION, "lat_long": LOCATION,
    "android_id": DEVICE_IDENTIFIER, "advertising_id": DEVICE_IDENTIFIER,
    "imei": DEVICE_IDENTIFIER, "device_model": DEVICE_IDENTIFIER,
}
HEADER_PII = {"android_id": "X-Device-Id", "advertising_id": "X-Ad-Id", "imei": "X-Imei"}

_BOILER_PARAMS = {
    "v": ("1", "2", "3", "4.2"), "sdk": ("21", "26", "29", "31"),
    "lang": ("en", "hi", "en_IN"), "page": ("1", "2", "3", "4", "5"),
    "ref": ("home", "feed", "push", "search"), "format": ("json", "proto"),
    "locale": ("en_US", "hi_IN"), "build": ("release", "beta"),
    "platform": ("android", "mobile"), "screen": ("1080x2340", "720x1600"),
    "net": ("wifi", "4g", "5g"), "tz": ("Asia-Kolkata", "UTC"),
    "sort": ("recent", "popular", "price"), "limit": ("10", "20", "50"),
    "theme": ("dark", "light"), "mode": ("full", "lite"),
    "event": ("impression", "click", "view", "scroll", "open"),
    "cat": ("deals", "fashion", "news", "music", "flights"),
}
# Asset and config fetches, which never carry PII in generated corpora.
_STATIC_PARAMS = {
    "w": ("320", "640", "1080"), "h": ("240", "480", "720"), "quality": ("70", "80", "90"),
    "fmt": ("webp", "jpg", "png"), "ttl": ("60", "300", "3600"), "rev": ("a1", "b2", "c3"),
}
_STATIC_PATHS = ("static", "assets", "img", "fonts", "manifest", "remote-config", "thumbs")
_PATH_PARTS = ("v1", "v2", "api", "track", "events", "config", "feed", "search",
               "cart", "profile", "login", "ads", "collect", "sync", "home", "batch")
# Content slugs give the long tail of rare path tokens seen in real traffic.
_SLUG_WORDS = ("red", "blue", "summer", "winter", "cotton", "denim", "travel", "budget", "live", "daily",
               "top", "best", "new", "classic", "cricket", "movie", "song", "hotel", "beach", "city",
               "kurta", "saree", "sneaker", "watch", "phone-case", "tee", "jacket", "bag", "quiz", "exam",
               "recipe", "trailer", "episode", "season", "deal", "combo", "pack", "mini", "pro", "max")
_SLUGS = tuple(f"{a}-{b}" for a in _SLUG_WORDS for b in _SLUG_WORDS if a != b)
_USER_AGENTS = (
    "Dalvik/2.1.0 (Linux; U; Android 11; Pixel 4a Build/RQ3A)",
    "okhttp/4.9.3",
    "Mozilla/5.0 (Linux; Android 10; SM-G973F) AppleWebKit/537.36",
)
_FIRST = ("Rishika", "Aarav", "Priya", "Rahul", "Ananya", "Vikram", "Meera", "Karan", "Sneha", "Arjun")
_LAST = ("Sharma", "Gupta", "Kohli", "Singh", "Patel", "Iyer", "Reddy", "Nair", "Das", "Mehta")
_MAIL = ("gmail.com", "yahoo.co.in", "outlook.com", "mail.example.org")
_STREETS = ("MG Road", "Residency Road", "Link Road", "Canal Road", "Gandhi Nagar")
_CITIES = ("Jammu", "Delhi", "Pune", "Chennai", "Bengaluru")
_MODELS = ("Pixel 4a", "SM-G973F", "Redmi Note 9", "OnePlus 8T", "moto g52")


@dataclass(frozen=True)
class SyntheticSpec:
    n_flows: int
    pii_rate: float = 0.3
    seed: int = 0
    app_mix: tuple[tuple[str, str, tuple[str, ...]], ...] = DEFAULT_APP_MIX
    decoy_rate: float = 0.02
    third_party_rate: float = 0.15
    static_rate: float = 0.35
    slug_rate: float = 0.6

    def __post_init__(self):
        if self.n_flows < 0:
            raise ValueError("n_flows must be >= 0")
        if not 0.0 <= self.pii_rate <= 1.0:
            raise ValueError("pii_rate must lie in [0, 1]")


class _TextBuilder:
    def __init__(self):
        self.parts: list[str] = []
        self.length = 0
        self.spans: list[tuple[int, int, str]] = []

    def add(self, text: str, subtype: str | None = None):
        if subtype is not None:
            self.spans.append((self.length, self.length + len(text), subtype))
        self.parts.append(text)
        self.length += len(text)

    def text(self) -> str:
        return "".join(self.parts)


def _rand_alnum(rng: random.Random, k: int) -> str:
    return "".join(rng.choices(string.ascii_lowercase + string.digits, k=k))


def _pii_value(rng: random.Random, subtype: str) -> str:
    if subtype == "email":
        return f"{rng.choice(_FIRST).lower()}.{rng.choice(_LAST).lower()}{rng.randint(1, 99)}@{rng.choice(_MAIL)}"
    if subtype == "phone":
        number = str(rng.randint(6, 9)) + "".join(rng.choices(string.digits, k=9))
        return rng.choice(("+91-", "+91", "")) + number
    if subtype == "name":
        return rng.choice(_FIRST)
    if subtype == "gender":
        return rng.choice(("male", "female", "M", "F"))
    if subtype == "dob":
        return f"{rng.randint(1960, 2005)}-{rng.randint(1, 12):02d}-{rng.randint(1, 28):02d}"
    if subtype == "user_id":
        return "u" + _rand_alnum(rng, 9)
    if subtype == "address":
        return f"{rng.randint(1, 250)} {rng.choice(_STREETS)} {rng.choice(_CITIES)}"
    if subtype == "lat_long":
        return f"{rng.uniform(8, 35):.4f},{rng.uniform(68, 97):.4f}"
    if subtype == "android_id":
        return "".join(rng.choices("0123456789abcdef", k=16))
    if subtype == "advertising_id":
        h = "".join(rng.choices("0123456789abcdef", k=32))
        return f"{h[:8]}-{h[8:12]}-{h[12:16]}-{h[16:20]}-{h[20:]}"
    if subtype == "imei":
        return luhn_complete("35" + "".join(rng.choices(string.digits, k=12)))
    if subtype == "device_model":
        return rng.choice(_MODELS)
    raise KeyError(subtype)


def _boiler(rng: random.Random, k: int) -> list[tuple[str, str]]:
    keys = rng.sample(sorted(_BOILER_PARAMS), k)
    return [(key, rng.choice(_BOILER_PARAMS[key])) for key in keys]


def _emit_params(builder: _TextBuilder, params: list[tuple[str, str, str | None]]):
    for i, (key, value, subtype) in enumerate(params):
        if i:
            builder.add("&")
        builder.add(f"{key}=")
        builder.add(value, subtype)


def _synthetic_flow(rng: random.Random, index: int, spec: SyntheticSpec, positive: bool):
    app, cat, own_domains = spec.app_mix[rng.randrange(len(spec.app_mix))]
    if rng.random() < spec.third_party_rate:
        domain = rng.choice(THIRD_PARTY_DOMAINS)
    else:
        domain = rng.choice(own_domains)
    static = not positive and rng.random() < spec.static_rate
    method = "POST" if not static and rng.random() < 0.35 else "GET"

    if static:
        keys = rng.sample(sorted(_STATIC_PARAMS), rng.randint(2, 4))
        params = [(k, rng.choice(_STATIC_PARAMS[k]), None) for k in keys]
    else:
        params = [(k, v, None) for k, v in _boiler(rng, rng.randint(2, 5))]
    header_plants: list[tuple[str, str, str]] = []
    if positive:
        for subtype in rng.sample(sorted(PII_KEYS), rng.randint(1, 3)):
            value = _pii_value(rng, subtype)
            if subtype in HEADER_PII and rng.random() < 0.3:
                header_plants.append((HEADER_PII[subtype], value, subtype))
            else:
                params.append((rng.choice(PII_KEYS[subtype]), value, subtype))
    elif rng.random() < spec.decoy_rate:
        subtype = rng.choice(sorted(PII_KEYS))
        params.append((rng.choice(PII_KEYS[subtype]), "", None))
    rng.shuffle(params)
    params.append(("cb", str(rng.randint(100000, 999999)), None))

    url = _TextBuilder()
    parts = _STATIC_PATHS if static else _PATH_PARTS
    path = rng.sample(parts, rng.randint(1, 3))
    if not static and rng.random() < spec.slug_rate:
        path.append(_SLUGS[int(len(_SLUGS) * rng.random() ** 3)])
    url.add(f"https://{domain}/" + "/".join(path))
    body = _TextBuilder()
    if method == "GET":
        url.add("?")
        _emit_params(url, params)
    else:
        _emit_params(body, params)

    headers = [("Host", domain), ("User-Agent", rng.choice(_USER_AGENTS)),
               ("Accept-Language", "en-US"), ("Connection", "keep-alive")]
    if method == "POST":
        headers.append(("Content-Type", "application/x-www-form-urlencoded"))
    headers.append(("X-Request-Id", _rand_alnum(rng, 12)))
    head = _TextBuilder()
    all_headers = headers + [(n, v) for n, v, _ in header_plants]
    subtypes = [None] * len(headers) + [s for _, _, s in header_plants]
    for i, ((name, value), subtype) in enumerate(zip(all_headers, subtypes)):
        if i:
            head.add("\n")
        head.add(f"{name}: ")
        head.add(value, subtype)

    flow = HttpFlow(
        flow_id=f"syn-{spec.seed}-{index:06d}",
        app_name=app,
        category=AppCategory.parse(cat),
        os=DeviceOS.ANDROID,
        domain=domain,
        timestamp=1665000000 + index * 37 + rng.randint(0, 30),
        method=method,
        url=url.text(),
        headers=tuple(all_headers),
        body=body.text(),
    )
    findings = []
    for name, builder in (("url", url), ("header", head), ("body", body)):
        text = flow.field_text(name)
        for start, end, subtype in builder.spans:
            findings.append(PiiFinding(flow.flow_id, PiiCategory(SUBTYPE_GROUP[subtype], subtype),
                                       name, start, end, text[start:end]))
    findings.sort(key=PiiFinding.sort_key)
    return flow, LabeledFlow(flow, positive, tuple(findings), "generator")


def generate_synthetic_corpus(spec: SyntheticSpec) -> tuple[Corpus, list[LabeledFlow]]:
    """Generate a labeled corpus with exactly ``round(pii_rate * n_flows)`` leaking flows."""
    rng = random.Random(spec.seed)
    n_pos = round(spec.pii_rate * spec.n_flows)
    positives = set(rng.sample(range(spec.n_flows), n_pos))
    flows, truth = [], []
    for i in range(spec.n_flows):
        flow, lf = _synthetic_flow(rng, i, spec, i in positives)
        flows.append(flow)
        truth.append(lf)
    provenance = f"synthetic n={spec.n_flows} pii_rate={spec.pii_rate} seed={spec.seed}"
    return Corpus(tuple(flows), provenance), truth


# --- reports -----------------------------------------------------------------

def flows_for_subject(labeled: Iterable[LabeledFlow], subject_key: str) -> list[LabeledFlow]:
    """Flows whose text carries ``subject_key`` (e.g. a shared device id)."""
    out = []
    for lf in labeled:
        if any(subject_key in lf.flow.field_text(name) for name in FIELDS):
            out.append(lf)
    return out


def aggregate_profile(labeled: Iterable[LabeledFlow], subject_key: str) -> ProfileReport:
    timeline = []
    merged: dict[str, set[str]] = defaultdict(set)
    for lf in labeled:
        for f in lf.findings:
            timeline.append((lf.flow.timestamp, lf.flow.app_name, lf.flow.category.value, f.category))
            merged[f.category.subtype].add(f.value)
    timeline.sort()
    return ProfileReport(subject_key, tuple(timeline),
                         {k: frozenset(v) for k, v in sorted(merged.items())})


def format_profile(report: ProfileReport) -> str:
    lines = [f"subject: {report.subject}", "", "timeline:"]
    for ts, app, cat, pc in report.timeline:
        lines.append(f"  {ts}\t{app}\t{cat}\t{pc.value}/{pc.subtype}")
    lines += ["", "merged attributes:"]
    for subtype, values in report.merged_attributes.items():
        lines.append(f"  {subtype}: {', '.join(sorted(values))}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class LeakRow:
    category: str
    app: str
    location: tuple[str, ...]
    user_identifiers: tuple[str, ...]
    device_identifiers: tuple[str, ...]

    @property
    def n_leaks(self) -> int:
        return len(self.location) + len(self.user_identifiers) + len(self.device_identifiers)


@dataclass(frozen=True)
class LeakTable:
    rows: tuple[LeakRow, ...]

    COLUMNS = ("Category", "App", "Location", "User Identifiers", "Device Identifiers")

    def cells(self) -> list[list[str]]:
        return [[r.category, r.app, ", ".join(r.location) or "-",
                 ", ".join(r.user_identifiers) or "-", ", ".join(r.device_identifiers) or "-"]
                for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.COLUMNS)
        writer.writerows(self.cells())
        return buf.getvalue()

    def to_text(self) -> str:
        table = [list(self.COLUMNS)] + self.cells()
        widths = [max(len(row[i]) for row in table) for i in range(len(self.COLUMNS))]
        lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table]
        lines.insert(1, "  ".join("-" * w for w in widths))
        return "\n".join(lines) + "\n"


_CATEGORY_ORDER = {c.value: i for i, c in enumerate(AppCategory)}


def emit_leak_table(labeled: Iterable[LabeledFlow]) -> LeakTable:
    cells: dict[tuple[str, str], dict[str, set[str]]] = {}
    for lf in labeled:
        key = (lf.flow.category.value, lf.flow.app_name)
        groups = cells.setdefault(key, {g: set() for g in GROUPS})
        if lf.label:
            for f in lf.findings:
                groups[f.category.value].add(f.category.subtype)
    rows = [LeakRow(cat, app, tuple(sorted(g[LOCATION])), tuple(sorted(g[USER_IDENTIFIER])),
                    tuple(sorted(g[DEVICE_IDENTIFIER])))
            for (cat, app), g in sorted(cells.items(), key=lambda kv: (_CATEGORY_ORDER[kv[0][0]], kv[0][1]))]
    return LeakTable(tuple(rows))
