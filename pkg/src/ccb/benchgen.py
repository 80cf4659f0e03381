"""Seeded synthetic benchmark generation.

Statement values are sampled as integer cents with ``random.Random`` and
combined with integer arithmetic only, so every accounting identity holds
exactly.  Rendering turns a :class:`StatementSet` into text tables whose
labels and number formats are perturbed according to a
:class:`NoiseProfile`; :func:`read_document` inverts the rendering.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
import re
from dataclasses import asdict, dataclass, field
from decimal import Decimal

from .errors import InvalidRange, SchemaViolation
from .indicators import (
    INDICATORS,
    CCBTags,
    IndicatorId,
    IndicatorValue,
    Unit,
    classify,
    compute_indicator,
)
from .numtext import DECIMAL_CONTEXT, SCALE_WORDS, parse_plain_decimal, plain_text
from .schema import normalize_magnitude
from .statements import (
    DISTRACTOR_KEYS,
    KEY_KIND,
    AliasTable,
    AliasTier,
    LineItem,
    LineItemKey,
    Scope,
    Statement,
    StatementKind,
    StatementSet,
    default_alias_table,
    parse_statement_set,
    resolve_statement_set,
    statement_set_to_json_obj,
)

logger = logging.getLogger(__name__)

GENERATOR_VERSION = "ccb-gen/1"
INSTANCE_FORMAT = "ccb-instance/1"

MAGNITUDE_STYLES = ("plain", "thousand", "million", "billion", "万", "亿")
_TIERS = (AliasTier.EXPLICIT, AliasTier.IMPLICIT, AliasTier.AMBIGUOUS)
_K = LineItemKey


@dataclass(frozen=True)
class NoiseProfile:
    """How a statement set is disguised when rendered.

    ``alias_tier_mix`` is (explicit, implicit, ambiguous).  ``magnitude_style``
    maps each of :data:`MAGNITUDE_STYLES` to a probability; missing styles
    get zero.
    """

    alias_tier_mix: tuple[float, float, float] = (1.0, 0.0, 0.0)
    magnitude_style: dict[str, float] = field(default_factory=lambda: {"plain": 1.0})
    distractor_items: int = 0
    commas: bool = False
    paren_negatives: bool = False
    seed: int = 0

    def __post_init__(self):
        mix = tuple(float(p) for p in self.alias_tier_mix)
        if len(mix) != 3 or any(p < 0 for p in mix) or abs(sum(mix) - 1) > 1e-9:
            raise ValueError(f"alias_tier_mix must be three non-negative weights summing to 1, got {mix}")
        object.__setattr__(self, "alias_tier_mix", mix)
        styles = {str(k): float(v) for k, v in dict(self.magnitude_style).items()}
        unknown = set(styles) - set(MAGNITUDE_STYLES)
        if unknown:
            raise ValueError(f"unknown magnitude styles: {sorted(unknown)}")
        if any(p < 0 for p in styles.values()) or abs(sum(styles.values()) - 1) > 1e-9:
            raise ValueError("magnitude_style weights must be non-negative and sum to 1")
        object.__setattr__(self, "magnitude_style", styles)
        if self.distractor_items < 0:
            raise ValueError("distractor_items must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    def to_json_obj(self) -> dict:
        d = asdict(self)
        d["alias_tier_mix"] = list(self.alias_tier_mix)
        d["magnitude_style"] = {k: self.magnitude_style[k] for k in MAGNITUDE_STYLES if k in self.magnitude_style}
        return d

    @classmethod
    def from_json_obj(cls, obj: dict) -> NoiseProfile:
        return cls(
            alias_tier_mix=tuple(obj["alias_tier_mix"]),
            magnitude_style=dict(obj["magnitude_style"]),
            distractor_items=int(obj["distractor_items"]),
            commas=bool(obj["commas"]),
            paren_negatives=bool(obj["paren_negatives"]),
            seed=int(obj["seed"]),
        )


PROFILES: dict[str, NoiseProfile] = {
    "clean": NoiseProfile(),
    "standard": NoiseProfile(
        alias_tier_mix=(0.6, 0.3, 0.1),
        magnitude_style={"plain": 0.6, "thousand": 0.1, "million": 0.1, "万": 0.1, "亿": 0.1},
        distractor_items=3,
        commas=True,
    ),
    "ocr": NoiseProfile(
        alias_tier_mix=(0.2, 0.4, 0.4),
        magnitude_style={"plain": 0.2, "thousand": 0.15, "million": 0.15, "billion": 0.1, "万": 0.2, "亿": 0.2},
        distractor_items=6,
        commas=True,
        paren_negatives=True,
    ),
    "cjk": NoiseProfile(
        alias_tier_mix=(0.5, 0.3, 0.2),
        magnitude_style={"万": 0.5, "亿": 0.5},
        distractor_items=2,
        commas=True,
        paren_negatives=True,
    ),
}


def get_profile(name: str, seed: int | None = None) -> NoiseProfile:
    try:
        profile = PROFILES[name]
    except KeyError:
        raise ValueError(f"unknown profile {name!r}; choose from {', '.join(PROFILES)}") from None
    if seed is not None:
        profile = NoiseProfile(**{**profile.__dict__, "seed": seed})
    return profile


# --- statement synthesis --------------------------------------------------


def _frac(rng: random.Random, amount: int, lo: int, hi: int) -> int:
    """``amount * u`` for ``u`` drawn in permille from [lo, hi], in integer cents."""
    return amount * rng.randint(lo, hi) // 1000


def _cents(c: int) -> Decimal:
    return Decimal(c).scaleb(-2)


def _sample_year(rng: random.Random, revenue: int, scope: Scope, loss_rate: float) -> dict[LineItemKey, int]:
    v: dict[LineItemKey, int] = {_K.REVENUE: revenue}
    v[_K.COGS] = _frac(rng, revenue, 150, 800)
    loss = rng.random() < loss_rate
    v[_K.NET_INCOME] = _frac(rng, revenue, -250, -10) if loss else _frac(rng, revenue, 20, 350)
    if scope is Scope.CONSOLIDATED:
        v[_K.NET_INCOME_PARENT] = _frac(rng, v[_K.NET_INCOME], 850, 1000)
    ta = _frac(rng, revenue, 900, 3500)
    tl = _frac(rng, ta, 150, 750)
    te = ta - tl
    v[_K.TOTAL_ASSETS], v[_K.TOTAL_LIABILITIES], v[_K.TOTAL_EQUITY] = ta, tl, te
    v[_K.PARENT_EQUITY] = _frac(rng, te, 850, 1000) if scope is Scope.CONSOLIDATED else te
    ca = _frac(rng, ta, 300, 850)
    v[_K.CURRENT_ASSETS] = ca
    v[_K.INVENTORY] = _frac(rng, ca, 50, 450)
    v[_K.ACCOUNTS_RECEIVABLE] = _frac(rng, ca, 20, 350)
    v[_K.CURRENT_LIABILITIES] = _frac(rng, tl, 300, 950)
    v[_K.OCF] = _frac(rng, revenue, 10, 350)
    v[_K.CAPEX] = _frac(rng, revenue, 5, 200)
    return v


def generate_statement_set(
    seed: int,
    years: range | tuple[int, int],
    scopes=(Scope.CONSOLIDATED,),
    *,
    company_id: str = "C001",
    loss_rate: float = 0.1,
    aliases: AliasTable | None = None,
) -> StatementSet:
    """A keyed statement set covering ``years`` (inclusive range or ``range``).

    Items carry canonical labels.  Every balance sheet satisfies
    assets = liabilities + equity exactly.
    """
    if isinstance(years, tuple):
        years = range(years[0], years[1] + 1)
    years = list(years)
    if len(years) < 2 or years != list(range(years[0], years[0] + len(years))):
        raise InvalidRange(f"need at least two consecutive years, got {years}")
    if not 0 <= loss_rate <= 1:
        raise ValueError("loss_rate must lie in [0, 1]")
    aliases = aliases or default_alias_table()
    rng = random.Random(f"ccb-statements:{seed}:{company_id}")
    statements = []
    for scope in (Scope(s) for s in scopes):
        # revenue in cents: roughly 0.5 to 50 billion yuan
        revenue = rng.randint(5 * 10**10, 5 * 10**12)
        for year in years:
            values = _sample_year(rng, revenue, scope, loss_rate)
            for kind in StatementKind:
                items = tuple(
                    LineItem(aliases.canonical_label(k), _cents(c), year, k)
                    for k, c in values.items()
                    if KEY_KIND[k] is kind
                )
                statements.append(Statement(kind, scope, year, items))
            revenue = _frac(rng, revenue, 750, 1450)
    return StatementSet.from_statements(company_id, statements)


# --- rendering ------------------------------------------------------------

_TITLES = {
    StatementKind.BALANCE_SHEET: "Balance Sheet",
    StatementKind.INCOME_STATEMENT: "Income Statement",
    StatementKind.CASH_FLOW: "Cash Flow Statement",
}
_TITLE_KIND = {v: k for k, v in _TITLES.items()}
_HEADER_RE = re.compile(r"^### (?P<title>[A-Za-z ]+) \| (?P<scope>\w+) \| FY(?P<year>\d{4}) \| (?P<unit>\w+)$")


@dataclass(frozen=True)
class RenderedItem:
    kind: StatementKind
    scope: Scope
    fiscal_year: int
    label: str
    text: str
    value: Decimal
    key: LineItemKey


def format_amount(value: Decimal, style: str = "plain", *, commas: bool = False, paren_negatives: bool = False) -> str:
    """Render ``value`` so that :func:`normalize_magnitude` returns it exactly."""
    exponent = 0 if style == "plain" else SCALE_WORDS[style]
    mantissa = value.copy_abs().scaleb(-exponent, DECIMAL_CONTEXT)
    text = plain_text(mantissa)
    if "." in text:
        text = text.rstrip("0").rstrip(".")
    if commas:
        whole, dot, frac = text.partition(".")
        text = f"{int(whole):,}" + dot + frac
    if value < 0:
        text = f"({text})" if paren_negatives else f"-{text}"
    if style == "plain":
        return text
    return f"{text}{style}" if style in ("万", "亿") else f"{text} {style}"


def _pick(rng: random.Random, weights: dict[str, float]) -> str:
    names = [k for k in MAGNITUDE_STYLES if weights.get(k, 0) > 0]
    return rng.choices(names, [weights[k] for k in names])[0]


def _label_for(rng: random.Random, key: LineItemKey, profile: NoiseProfile, aliases: AliasTable) -> str:
    tier = rng.choices(_TIERS, profile.alias_tier_mix)[0]
    if tier is AliasTier.EXPLICIT:
        return aliases.canonical_label(key)
    options = aliases.labels_for(key, tier)
    if not options:
        return aliases.canonical_label(key)
    return rng.choice(options)


def render_items(
    sset: StatementSet, profile: NoiseProfile = PROFILES["clean"], aliases: AliasTable | None = None
) -> list[tuple[Statement, list[RenderedItem]]]:
    """Per statement, the rows that :func:`render_document` prints, with their true values."""
    aliases = aliases or default_alias_table()
    out = []
    for st in sset.ordered():
        rng = random.Random(
            f"ccb-render:{profile.seed}:{sset.company_id}:{st.kind.value}:{st.scope.value}:{st.fiscal_year}"
        )
        rows: list[RenderedItem] = []
        for item in st.items:
            if item.key is None:
                raise SchemaViolation(f"cannot render unkeyed item {item.raw_label!r}")
            label = _label_for(rng, item.key, profile, aliases)
            text = format_amount(
                item.value, _pick(rng, profile.magnitude_style), commas=profile.commas, paren_negatives=profile.paren_negatives
            )
            rows.append(RenderedItem(st.kind, st.scope, st.fiscal_year, label, text, item.value, item.key))
        pool = [k for k in DISTRACTOR_KEYS if KEY_KIND[k] is st.kind and st.get(k) is None]
        chosen = rng.sample(pool, min(profile.distractor_items, len(pool)))
        scale = max((abs(r.value) for r in rows), default=Decimal(10**8))
        for key in chosen:
            cents = int(scale * 100) * rng.randint(5, 400) // 1000
            value = _cents(cents)
            label = aliases.canonical_label(key)
            text = format_amount(
                value, _pick(rng, profile.magnitude_style), commas=profile.commas, paren_negatives=profile.paren_negatives
            )
            rows.insert(rng.randint(0, len(rows)), RenderedItem(st.kind, st.scope, st.fiscal_year, label, text, value, key))
        out.append((st, rows))
    return out


def render_document(
    sset: StatementSet, profile: NoiseProfile = PROFILES["clean"], aliases: AliasTable | None = None
) -> str:
    """Text tables, one per statement: a ``###`` header then ``label | amount`` rows."""
    lines = [f"Company: {sset.company_id}", ""]
    for st, rows in render_items(sset, profile, aliases):
        lines.append(f"### {_TITLES[st.kind]} | {st.scope.value} | FY{st.fiscal_year} | {st.currency_unit}")
        lines.extend(f"{r.label} | {r.text}" for r in rows)
        lines.append("")
    return "\n".join(lines)


@dataclass(frozen=True)
class DocumentRow:
    kind: StatementKind
    scope: Scope
    fiscal_year: int
    label: str
    text: str


def document_rows(text: str) -> list[DocumentRow]:
    """Every ``label | amount`` row of a rendered document, with its table header."""
    rows = []
    header = None
    for line in text.splitlines():
        m = _HEADER_RE.match(line.strip())
        if m:
            header = (_TITLE_KIND[m.group("title")], Scope(m.group("scope")), int(m.group("year")))
            continue
        if header is None or " | " not in line:
            continue
        label, _, amount = line.rpartition(" | ")
        rows.append(DocumentRow(*header, label.strip(), amount.strip()))
    return rows


def read_document(text: str, company_id: str = "", aliases: AliasTable | None = None) -> StatementSet:
    """Parse a rendered document back into a keyed statement set."""
    aliases = aliases or default_alias_table()
    grouped: dict[tuple, list[LineItem]] = {}
    for row in document_rows(text):
        value = normalize_magnitude(row.text).value
        grouped.setdefault((row.kind, row.scope, row.fiscal_year), []).append(
            LineItem(row.label, value, row.fiscal_year)
        )
    if not company_id:
        m = re.search(r"^Company: (\S+)", text, re.MULTILINE)
        company_id = m.group(1) if m else ""
    sset = StatementSet.from_statements(
        company_id, [Statement(k, s, y, tuple(items)) for (k, s, y), items in grouped.items()]
    )
    return resolve_statement_set(sset, aliases)


# --- benchmark instances --------------------------------------------------


@dataclass(frozen=True)
class BenchmarkQuery:
    query_id: str
    company_id: str
    fiscal_year: int
    scope: Scope
    indicator: IndicatorId
    truth: IndicatorValue
    tags: CCBTags


@dataclass
class BenchmarkInstance:
    manifest: dict
    statement_sets: list[StatementSet]
    documents: dict[str, str]
    queries: list[BenchmarkQuery]

    def statement_set(self, company_id: str) -> StatementSet:
        for s in self.statement_sets:
            if s.company_id == company_id:
                return s
        raise KeyError(company_id)

    def context(self, query: BenchmarkQuery):
        from .potloop.loop import QueryContext

        return QueryContext(
            self.documents[query.company_id], (query.indicator,), query.company_id, query.fiscal_year, query.scope
        )

    def verify(self) -> None:
        """Raise :class:`SchemaViolation` if any stored truth or tag disagrees with the oracle."""
        for q in self.queries:
            got = compute_indicator(q.indicator, self.statement_set(q.company_id), q.fiscal_year, q.scope)
            if got != q.truth:
                raise SchemaViolation(f"{q.query_id}: stored truth {q.truth.value} but oracle gives {got}")
            if classify(q.indicator) != q.tags:
                raise SchemaViolation(f"{q.query_id}: tags disagree with classify")

    def to_json_obj(self) -> dict:
        return {
            "format": INSTANCE_FORMAT,
            "manifest": self.manifest,
            "companies": [
                {
                    "company_id": s.company_id,
                    "statements": statement_set_to_json_obj(s, include_keys=True)["statements"],
                    "document": self.documents[s.company_id],
                }
                for s in self.statement_sets
            ],
            "queries": [
                {
                    "id": q.query_id,
                    "company_id": q.company_id,
                    "fiscal_year": q.fiscal_year,
                    "scope": q.scope.value,
                    "indicator": q.indicator.value,
                    "truth": plain_text(q.truth.value),
                    "unit": q.truth.unit.value,
                    "tags": {
                        "source": q.tags.source.value,
                        "difficulty": q.tags.difficulty.value,
                        "unit": q.tags.unit.value,
                    },
                }
                for q in self.queries
            ],
        }

    def to_bytes(self) -> bytes:
        text = json.dumps(self.to_json_obj(), ensure_ascii=False, indent=1, sort_keys=True)
        return (text + "\n").encode("utf-8")

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def save(self, path) -> str:
        data = self.to_bytes()
        with open(path, "wb") as fh:
            fh.write(data)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def from_json_obj(cls, obj: dict) -> BenchmarkInstance:
        if obj.get("format") != INSTANCE_FORMAT:
            raise SchemaViolation(f"not a {INSTANCE_FORMAT} file (format={obj.get('format')!r})")
        sets, docs = [], {}
        for c in obj["companies"]:
            sset = parse_statement_set({"company_id": c["company_id"], "statements": c["statements"]})
            sets.append(sset)
            docs[c["company_id"]] = c["document"]
        queries = []
        for q in obj["queries"]:
            ind = IndicatorId(q["indicator"])
            unit = Unit(q["unit"])
            queries.append(
                BenchmarkQuery(
                    q["id"],
                    q["company_id"],
                    int(q["fiscal_year"]),
                    Scope(q["scope"]),
                    ind,
                    IndicatorValue(parse_plain_decimal(q["truth"]), unit, int(q["fiscal_year"])),
                    classify(ind),
                )
            )
        return cls(obj["manifest"], sets, docs, queries)

    @classmethod
    def load(cls, path) -> BenchmarkInstance:
        with open(path, encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"{path}: not JSON: {exc}") from exc
        return cls.from_json_obj(obj)


def generate_benchmark(
    seed: int,
    n_companies: int,
    years: range | tuple[int, int] = (2022, 2023),
    profile: NoiseProfile | str = "standard",
    *,
    scopes=(Scope.CONSOLIDATED, Scope.PARENT),
    query_scope: Scope = Scope.CONSOLIDATED,
    loss_rate: float = 0.1,
) -> BenchmarkInstance:
    """``n_companies`` companies, one query per indicator for the latest year."""
    if n_companies < 1:
        raise InvalidRange("n_companies must be >= 1")
    if isinstance(profile, str):
        profile = get_profile(profile)
    if isinstance(years, tuple):
        years = range(years[0], years[1] + 1)
    latest = max(years)
    sets, docs, queries = [], {}, []
    for n in range(1, n_companies + 1):
        cid = f"C{n:03d}"
        sset = generate_statement_set(seed, years, scopes, company_id=cid, loss_rate=loss_rate)
        sets.append(sset)
        docs[cid] = render_document(sset, profile)
        for ind in INDICATORS:
            truth = compute_indicator(ind, sset, latest, query_scope)
            if not isinstance(truth, IndicatorValue):
                raise SchemaViolation(f"generator produced an undefined {ind.value} for {cid}: {truth}")
            queries.append(
                BenchmarkQuery(f"{cid}/{latest}/{ind.value}", cid, latest, query_scope, ind, truth, classify(ind))
            )
    manifest = {
        "generator": GENERATOR_VERSION,
        "seed": seed,
        "n_companies": n_companies,
        "years": [min(years), latest],
        "scopes": [Scope(s).value for s in scopes],
        "query_scope": query_scope.value,
        "loss_rate": loss_rate,
        "profile": profile.to_json_obj(),
    }
    return BenchmarkInstance(manifest, sets, docs, queries)
