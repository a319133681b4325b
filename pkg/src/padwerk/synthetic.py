"""Seeded synthetic dataset so the whole pipeline runs without real captures.

Every monitored site gets a signature sequence of bursts (mostly incoming,
as for web traffic); pages of a site perturb the signature mildly and
samples add noise on top, mirroring the webpage-to-website structure the
fold splits rely on. Unmonitored traces are drawn from a wider unstructured
generator.
"""

from __future__ import annotations

import random

from .trace import (
    CLIENT,
    NONPADDING_RECV,
    NONPADDING_SENT,
    CellEvent,
    Label,
    Trace,
)


def _site_signature(rng):
    bursts = []
    for _ in range(rng.randint(8, 16)):
        incoming = rng.random() < 0.8
        size = rng.randint(10, 60) if incoming else rng.randint(2, 10)
        gap_usec = rng.randint(5_000, 60_000)
        bursts.append((incoming, size, gap_usec))
    return bursts


def _build_trace(bursts, label, rng):
    events = []
    t = 0
    for _ in range(rng.randint(2, 4)):  # initial outgoing request cells
        events.append(CellEvent(t, NONPADDING_SENT))
        t += rng.randint(50, 200) * 1000
    for incoming, size, gap_usec in bursts:
        t += int(gap_usec * rng.uniform(0.8, 1.2)) * 1000
        size = max(1, round(size * rng.uniform(0.9, 1.1)))
        kind = NONPADDING_RECV if incoming else NONPADDING_SENT
        for _ in range(size):
            events.append(CellEvent(t, kind))
            t += rng.randint(50, 500) * 1000
    return Trace(events=tuple(events), endpoint=CLIENT, label=label)


def generate_synthetic_dataset(sites=10, pages=10, samples=2, unmonitored=200, seed=0):
    """Labelled client traces: sites x pages x samples monitored + unmonitored."""
    out = []
    for s in range(sites):
        signature = _site_signature(random.Random(f"synth|{seed}|site{s}"))
        for p in range(pages):
            page_rng = random.Random(f"synth|{seed}|site{s}|page{p}")
            page_bursts = [
                (inc, max(1, round(size * page_rng.uniform(0.85, 1.15))), gap)
                for inc, size, gap in signature
            ]
            for q in range(samples):
                label = Label.monitored(s, p, q)
                rng = random.Random(f"synth|{seed}|{label.token()}")
                out.append((label, _build_trace(page_bursts, label, rng)))
    for u in range(unmonitored):
        label = Label.unmonitored(u)
        rng = random.Random(f"synth|{seed}|{label.token()}")
        bursts = []
        for _ in range(rng.randint(4, 24)):
            incoming = rng.random() < rng.uniform(0.4, 0.95)
            size = rng.randint(1, 80)
            bursts.append((incoming, size, rng.randint(2_000, 120_000)))
        out.append((label, _build_trace(bursts, label, rng)))
    out.sort(key=lambda e: e[0])
    return out
