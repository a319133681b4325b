"""Cell traces, trace-file parsing, relay-trace derivation, and fold splits.

A trace is an ordered sequence of timestamped cells observed at one circuit
endpoint (client or relay). Cells are either real ("nonpadding") or dummies
("padding"), sent or received. Times are integer nanoseconds from the first
event of the trace.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np

# Canonical event tokens in trace files.
NONPADDING_SENT = "snp"
NONPADDING_RECV = "rnp"
PADDING_SENT = "sp"
PADDING_RECV = "rp"

CELL_KINDS = (NONPADDING_SENT, NONPADDING_RECV, PADDING_SENT, PADDING_RECV)

# circpad-log alias substrings. Nonpadding entries MUST be checked before the
# padding ones: "nonpadding_sent" contains "padding_sent".
_ALIAS_SUBSTRINGS = (
    ("nonpadding_sent", NONPADDING_SENT),
    ("nonpadding_received", NONPADDING_RECV),
    ("padding_sent", PADDING_SENT),
    ("padding_received", PADDING_RECV),
)

SENT_KINDS = frozenset((NONPADDING_SENT, PADDING_SENT))
RECV_KINDS = frozenset((NONPADDING_RECV, PADDING_RECV))
PADDING_KINDS = frozenset((PADDING_SENT, PADDING_RECV))

# Dataset-form traces carry at most this many events per circuit.
MAX_TRACE_EVENTS = 10_000

NUM_SITES = 50
PAGES_PER_SITE = 10
SAMPLES_PER_PAGE = 20
UNMONITORED_CLASS = NUM_SITES  # label column value for unmonitored samples

CLIENT = "client"
RELAY = "relay"

# Default one-way client<->middle-relay delay used when deriving relay traces
# and when forwarding relay padding into the client view.
DEFAULT_ONE_WAY_DELAY_NS = 40_000_000


class TraceParseError(ValueError):
    """Raised for malformed trace files; carries the 1-based line number."""

    def __init__(self, lineno, message):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class CellEvent(NamedTuple):
    time_ns: int
    kind: str


class Label(NamedTuple):
    """Sample identity: monitored (site, page, sample) or unmonitored index.

    Unmonitored labels use site == page == -1 and store the index in
    ``sample``.
    """

    site: int
    page: int
    sample: int

    @classmethod
    def monitored(cls, site, page, sample):
        return cls(site, page, sample)

    @classmethod
    def unmonitored(cls, index):
        return cls(-1, -1, index)

    @property
    def is_monitored(self):
        return self.site >= 0

    @property
    def class_index(self):
        return self.site if self.is_monitored else UNMONITORED_CLASS

    def token(self):
        if self.is_monitored:
            return f"s{self.site}-p{self.page}-{self.sample}"
        return f"u{self.sample}"


_MON_TOKEN = re.compile(r"^s(\d+)-p(\d+)-(\d+)$")
_UNM_TOKEN = re.compile(r"^u(\d+)$")


def parse_label_token(token):
    """Inverse of Label.token(); raises ValueError on anything else."""
    m = _MON_TOKEN.match(token)
    if m:
        return Label.monitored(int(m.group(1)), int(m.group(2)), int(m.group(3)))
    m = _UNM_TOKEN.match(token)
    if m:
        return Label.unmonitored(int(m.group(1)))
    raise ValueError(f"bad label token: {token!r}")


@dataclass(frozen=True)
class Trace:
    events: tuple
    endpoint: str = CLIENT
    label: Label | None = None

    def __len__(self):
        return len(self.events)

    def counts(self):
        """Event tally as a dict keyed by canonical kind."""
        out = {k: 0 for k in CELL_KINDS}
        for ev in self.events:
            out[ev.kind] += 1
        return out


def parse_trace(text, endpoint=CLIENT, label=None):
    """Parse trace-file content into a Trace.

    Records are "time_ns<TAB>event" lines. The event field is a canonical
    token (snp/rnp/sp/rp) or any string containing a circpad-log alias
    substring. Events are sorted by time and shifted so the first one is at
    time 0. Empty input yields an empty trace.
    """
    events = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise TraceParseError(lineno, "expected time_ns<TAB>event")
        try:
            t = int(parts[0])
        except ValueError:
            raise TraceParseError(lineno, f"non-integer time {parts[0]!r}") from None
        kind = _classify_event(parts[1])
        if kind is None:
            raise TraceParseError(lineno, f"unknown event {parts[1]!r}")
        events.append((t, kind))
    if not events:
        return Trace(events=(), endpoint=endpoint, label=label)
    events.sort(key=lambda e: e[0])
    origin = events[0][0]
    return Trace(
        events=tuple(CellEvent(t - origin, kind) for t, kind in events),
        endpoint=endpoint,
        label=label,
    )


def _classify_event(token):
    if token in CELL_KINDS:
        return token
    for substring, kind in _ALIAS_SUBSTRINGS:
        if substring in token:
            return kind
    return None


def serialize_trace(trace):
    """Render a Trace in the canonical file format (LF-terminated lines)."""
    return "".join(f"{ev.time_ns}\t{ev.kind}\n" for ev in trace.events)


def extract_direction_cells(trace, length=5000):
    """First `length` cells as +1 (sent) / -1 (received), zero-padded.

    Padding cells count like nonpadding cells: the attacker observes both.
    """
    out = np.zeros(length, dtype=np.int8)
    for i, ev in enumerate(trace.events[:length]):
        out[i] = 1 if ev.kind in SENT_KINDS else -1
    return out


def apply_zero_mask(seq, keep):
    """Zero every cell outside the half-open index range `keep`.

    keep=(0, len) is the identity; keep=(0, n) keeps an increasing prefix,
    keep=(n, len) drops an increasing prefix.
    """
    start, end = keep
    n = len(seq)
    if not (0 <= start <= end <= n):
        raise ValueError(f"keep range ({start}, {end}) out of bounds for length {n}")
    out = np.zeros_like(seq)
    out[start:end] = seq[start:end]
    return out


def derive_relay_trace(client, one_way_delay_ns=DEFAULT_ONE_WAY_DELAY_NS):
    """Simulate the middle-relay view of a client trace.

    Client sent cells arrive at the relay one delay later as received cells;
    client received cells left the relay one delay earlier as sent cells
    (clamped at time 0). Padding-ness is preserved.
    """
    if one_way_delay_ns < 0:
        raise ValueError("one_way_delay_ns must be >= 0")
    flip = {
        NONPADDING_SENT: NONPADDING_RECV,
        NONPADDING_RECV: NONPADDING_SENT,
        PADDING_SENT: PADDING_RECV,
        PADDING_RECV: PADDING_SENT,
    }
    shifted = []
    for ev in client.events:
        if ev.kind in SENT_KINDS:
            t = ev.time_ns + one_way_delay_ns
        else:
            t = max(0, ev.time_ns - one_way_delay_ns)
        shifted.append((t, flip[ev.kind]))
    shifted.sort(key=lambda e: e[0])
    return Trace(
        events=tuple(CellEvent(t, kind) for t, kind in shifted),
        endpoint=RELAY,
        label=client.label,
    )


TRAIN = "train"
VALIDATION = "validation"
TEST = "test"


@dataclass(frozen=True)
class FoldPlan:
    """Deterministic role assignment for one cross-validation fold.

    For fold f, webpage (8+f) mod 10 validates and (9+f) mod 10 tests, for
    every site; the remaining eight pages train. Unmonitored samples follow
    the same rotation on index mod 10.
    """

    fold: int

    @property
    def validation_page(self):
        return (8 + self.fold) % PAGES_PER_SITE

    @property
    def test_page(self):
        return (9 + self.fold) % PAGES_PER_SITE

    def role(self, label):
        residue = label.page if label.is_monitored else label.sample % PAGES_PER_SITE
        if residue == self.validation_page:
            return VALIDATION
        if residue == self.test_page:
            return TEST
        return TRAIN


def make_folds(k=10):
    """The first k fold plans; k may not exceed the 10 pages per site."""
    if k > PAGES_PER_SITE:
        raise ValueError(f"at most {PAGES_PER_SITE} folds, got {k}")
    return [FoldPlan(f) for f in range(k)]


# --- dataset ingestion -------------------------------------------------------

SECURITY_LEVELS = ("standard", "safer", "safest")


def trace_relpath(label):
    sub = "monitored" if label.is_monitored else "unmonitored"
    name = label.token() if label.is_monitored else str(label.sample)
    return os.path.join(sub, f"{name}.trace")


def load_dataset(root, level=None, max_events=MAX_TRACE_EVENTS):
    """Load client traces labelled per the on-disk layout.

    Layout: <root>[/<level>]/monitored/s<site>-p<page>-<sample>.trace and
    <root>[/<level>]/unmonitored/<index>.trace. If a manifest.txt is present
    it lists "<label-token>\\t<relative path>" lines and wins over scanning.
    Returns a list of (Label, Trace) sorted by label.
    """
    base = os.path.join(root, level) if level else root
    if not os.path.isdir(base):
        raise FileNotFoundError(f"dataset directory not found: {base}")
    manifest = os.path.join(base, "manifest.txt")
    entries = []
    if os.path.isfile(manifest):
        with open(manifest, encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 2:
                    raise TraceParseError(lineno, "manifest lines are token<TAB>path")
                entries.append((parse_label_token(parts[0]), os.path.join(base, parts[1])))
    else:
        mon = os.path.join(base, "monitored")
        unm = os.path.join(base, "unmonitored")
        if os.path.isdir(mon):
            for name in os.listdir(mon):
                if name.endswith(".trace"):
                    entries.append((parse_label_token(name[:-6]), os.path.join(mon, name)))
        if os.path.isdir(unm):
            for name in os.listdir(unm):
                if name.endswith(".trace"):
                    label = Label.unmonitored(int(name[:-6]))
                    entries.append((label, os.path.join(unm, name)))
    entries.sort(key=lambda e: e[0])
    samples = []
    for label, path in entries:
        with open(path, encoding="utf-8") as f:
            trace = parse_trace(f.read(), endpoint=CLIENT, label=label)
        if len(trace) > max_events:
            trace = Trace(trace.events[:max_events], trace.endpoint, trace.label)
        samples.append((label, trace))
    return samples


def write_dataset(samples, root, with_manifest=True):
    """Write (Label, Trace) pairs in the canonical layout under root."""
    os.makedirs(os.path.join(root, "monitored"), exist_ok=True)
    os.makedirs(os.path.join(root, "unmonitored"), exist_ok=True)
    lines = []
    for label, trace in samples:
        rel = trace_relpath(label)
        with open(os.path.join(root, rel), "w", encoding="utf-8") as f:
            f.write(serialize_trace(trace))
        lines.append(f"{label.token()}\t{rel}\n")
    if with_manifest:
        with open(os.path.join(root, "manifest.txt"), "w", encoding="utf-8") as f:
            f.writelines(lines)
