"""Discrete-event simulation of a machine pair over a client/relay trace pair.

Each endpoint runs its machine against the input events observed at that
endpoint. Machines wake on the first event they observe, transition on
events, and schedule padding cells from sampled delays. Padding emitted by
the relay machine reaches the client view (and the client machine) one
one-way delay later, and vice versa for client padding reaching the relay
machine. The output is the defended client view.

Documented scheduling contract (the upstream simulator internals are not
specified anywhere, so these rules are fixed here for reproducibility):

* At equal timestamps, input-trace events are processed before
  machine-generated ones (padding timers and padding arrivals), which are
  processed in creation order.
* Entering a state (including re-entering the current one via a transition)
  cancels any pending padding timer and resamples length then iat. An event
  with no transition entry leaves state, counters, and timers untouched.
* A state whose length distribution is "none" pads without a length cap; a
  sampled length of zero raises length-reached immediately on entry.
* After an emitted padding cell, the machine observes padding-sent; if that
  causes no transition and length remains, only the iat is resampled.
* A sampled delay equal to the distribution cap raises delay-infinite; if
  that causes no transition, the machine stays quiet until a later event
  transitions it into a state again. A padding cell denied by the budget is
  suppressed the same (silent) way.
* Chains of immediate internal transitions are bounded per wake-up, and the
  total number of emitted padding cells is bounded so that the defended
  view never exceeds max_events; both are safety valves against degenerate
  (e.g. randomly evolved) machines.
"""

from __future__ import annotations

import heapq
import itertools
import random
from dataclasses import dataclass

from .machine import (
    EV_DELAY_INFINITE,
    EV_LENGTH_REACHED,
    EV_NONPADDING_RECV,
    EV_NONPADDING_SENT,
    EV_PADDING_RECV,
    EV_PADDING_SENT,
    DIST_NONE,
    InterspaceTemplate,
    instantiate_interspace,
    sample_distribution,
)
from .trace import (
    CLIENT,
    DEFAULT_ONE_WAY_DELAY_NS,
    NONPADDING_RECV,
    NONPADDING_SENT,
    PADDING_RECV,
    PADDING_SENT,
    RELAY,
    CellEvent,
    Trace,
    derive_relay_trace,
)

DEFAULT_MAX_EVENTS = 10_000

# Bound on same-instant internal transition chains (delay-infinite /
# length-reached loops); beyond it the machine goes quiet until re-armed.
_MAX_CHAIN = 16

_EVENT_FOR_KIND = {
    NONPADDING_SENT: EV_NONPADDING_SENT,
    NONPADDING_RECV: EV_NONPADDING_RECV,
    PADDING_SENT: EV_PADDING_SENT,
    PADDING_RECV: EV_PADDING_RECV,
}


def check_budget(budget, padding_so_far, total_so_far):
    """Decide whether one more padding cell may be sent.

    Padding below the absolute allowance is always allowed; past it, the
    cell is allowed only if the post-emission padding share of total traffic
    stays within the relative cap.
    """
    if padding_so_far < budget.allowed_padding_count:
        return True
    return (padding_so_far + 1) * 100 <= budget.max_padding_percent * (total_so_far + 1)


@dataclass
class DefendedTrace:
    trace: Trace
    padding_sent: int
    padding_received: int
    nonpadding_sent: int
    nonpadding_received: int
    audit: list | None = None

    @property
    def total_cells(self):
        return (
            self.padding_sent
            + self.padding_received
            + self.nonpadding_sent
            + self.nonpadding_received
        )


class _MachineRun:
    """Mutable per-simulation machine instance, confined to one simulate()."""

    __slots__ = (
        "spec",
        "rng",
        "role",
        "started",
        "state",
        "epoch",
        "remaining",
        "padding_sent",
        "total_cells",
    )

    def __init__(self, spec, rng, role):
        self.spec = spec
        self.rng = rng
        self.role = role
        self.started = False
        self.state = spec.start_state
        self.epoch = 0
        self.remaining = 0
        self.padding_sent = 0
        self.total_cells = 0


class _Simulation:
    def __init__(self, pair, client, relay, seed, one_way_delay_ns, max_events, audit):
        self.delay_ns = one_way_delay_ns
        self.view = []
        self.audit = [] if audit else None
        self.runs = {
            CLIENT: _MachineRun(pair.client, random.Random(f"{seed}|client"), CLIENT),
            RELAY: _MachineRun(pair.relay, random.Random(f"{seed}|relay"), RELAY),
        }
        self.queue = []
        self.seq = itertools.count()
        self.emission_budget = max(0, max_events - len(client.events))
        for ev in client.events:
            heapq.heappush(self.queue, (ev.time_ns, 0, next(self.seq), "input", CLIENT, ev.kind))
        for ev in relay.events:
            heapq.heappush(self.queue, (ev.time_ns, 0, next(self.seq), "input", RELAY, ev.kind))

    def run(self):
        while self.queue:
            time_ns, _, _, tag, role, extra = heapq.heappop(self.queue)
            machine = self.runs[role]
            if tag == "input":
                if role == CLIENT:
                    self.view.append(CellEvent(time_ns, extra))
                self._observe_cell(machine, _EVENT_FOR_KIND[extra], time_ns)
            elif tag == "arrival":
                if role == CLIENT:
                    self.view.append(CellEvent(time_ns, PADDING_RECV))
                self._observe_cell(machine, EV_PADDING_RECV, time_ns)
            elif tag == "timer":
                if extra == machine.epoch:
                    self._fire_timer(machine, time_ns)

    def _observe_cell(self, machine, event, now):
        machine.total_cells += 1
        if not machine.started:
            machine.started = True
            self._enter(machine, machine.spec.start_state, now, 0)
        else:
            self._apply_event(machine, event, now, 0)

    def _apply_event(self, machine, event, now, depth):
        target = machine.spec.states[machine.state].transitions.get(event)
        if target is not None:
            self._enter(machine, target, now, depth)

    def _enter(self, machine, state_idx, now, depth):
        machine.state = state_idx
        machine.epoch += 1  # cancels any pending timer
        if depth > _MAX_CHAIN:
            return
        state = machine.spec.states[state_idx]
        if state.length.family == DIST_NONE:
            machine.remaining = None
        else:
            machine.remaining = sample_distribution(
                state.length, "length", machine.rng, state.max_length
            )
            if machine.remaining == 0:
                self._apply_event(machine, EV_LENGTH_REACHED, now, depth + 1)
                return
        self._arm(machine, now, depth)

    def _arm(self, machine, now, depth):
        iat = machine.spec.states[machine.state].iat
        if iat.family == DIST_NONE:
            return
        delay_usec = sample_distribution(iat, "delay", machine.rng)
        if delay_usec >= iat.cap_usec:
            self._apply_event(machine, EV_DELAY_INFINITE, now, depth + 1)
            return
        fire_at = now + delay_usec * 1000
        heapq.heappush(
            self.queue, (fire_at, 1, next(self.seq), "timer", machine.role, machine.epoch)
        )

    def _fire_timer(self, machine, now):
        if self.emission_budget <= 0:
            return
        if not check_budget(machine.spec.budget, machine.padding_sent, machine.total_cells):
            return  # silently suppressed; a later transition may re-arm
        self.emission_budget -= 1
        machine.padding_sent += 1
        machine.total_cells += 1
        if self.audit is not None:
            self.audit.append((machine.role, machine.padding_sent, machine.total_cells))
        if machine.role == CLIENT:
            self.view.append(CellEvent(now, PADDING_SENT))
            peer, arrive = RELAY, now + self.delay_ns
        else:
            peer, arrive = CLIENT, now + self.delay_ns
        heapq.heappush(self.queue, (arrive, 1, next(self.seq), "arrival", peer, None))
        if machine.remaining is not None:
            machine.remaining -= 1
        transitions = machine.spec.states[machine.state].transitions
        if EV_PADDING_SENT in transitions:
            self._enter(machine, transitions[EV_PADDING_SENT], now, 0)
        elif machine.remaining == 0:
            self._apply_event(machine, EV_LENGTH_REACHED, now, 0)
        else:
            self._arm(machine, now, 0)


def simulate(
    pair,
    client,
    relay,
    seed,
    one_way_delay_ns=DEFAULT_ONE_WAY_DELAY_NS,
    max_events=DEFAULT_MAX_EVENTS,
    audit=False,
):
    """Apply a machine pair to one (client, relay) trace pair.

    Returns the defended client view. Deterministic in (pair, traces, seed).
    """
    sim = _Simulation(pair, client, relay, seed, one_way_delay_ns, max_events, audit)
    sim.run()
    trace = Trace(events=tuple(sim.view), endpoint=CLIENT, label=client.label)
    counts = trace.counts()
    return DefendedTrace(
        trace=trace,
        padding_sent=counts[PADDING_SENT],
        padding_received=counts[PADDING_RECV],
        nonpadding_sent=counts[NONPADDING_SENT],
        nonpadding_received=counts[NONPADDING_RECV],
        audit=sim.audit,
    )


def machine_for(machine, instance_seed):
    """Resolve a fixed pair or a probabilistic template to a concrete pair."""
    if isinstance(machine, InterspaceTemplate):
        return instantiate_interspace(machine, instance_seed)
    return machine


def simulate_dataset(
    machine,
    samples,
    seed,
    factor=1,
    one_way_delay_ns=DEFAULT_ONE_WAY_DELAY_NS,
    max_events=DEFAULT_MAX_EVENTS,
    allowed_padding_override=None,
):
    """Simulate every (Label, Trace) sample `factor` times.

    `machine` is a MachinePair or an InterspaceTemplate; templates are
    instantiated per copy, mirroring one machine definition per circuit.
    Copy seeds derive from (seed, label, copy index), so runs are
    reproducible and copies of probabilistic machines differ. The budget
    override sets allowed_padding_count symmetrically on both endpoints.
    """
    if factor < 1:
        raise ValueError("factor must be >= 1")
    out = []
    for label, trace in samples:
        relay = derive_relay_trace(trace, one_way_delay_ns)
        for copy in range(factor):
            copy_seed = f"{seed}|{label.token()}|{copy}"
            pair = machine_for(machine, copy_seed)
            if allowed_padding_override is not None:
                pair = pair.with_allowed_padding(allowed_padding_override)
            defended = simulate(
                pair,
                trace,
                relay,
                copy_seed,
                one_way_delay_ns=one_way_delay_ns,
                max_events=max_events,
            )
            out.append((label, defended))
    return out


def undefended(samples):
    """Wrap raw (Label, Trace) samples as DefendedTraces with zero padding."""
    out = []
    for label, trace in samples:
        counts = trace.counts()
        out.append(
            (
                label,
                DefendedTrace(
                    trace=trace,
                    padding_sent=counts[PADDING_SENT],
                    padding_received=counts[PADDING_RECV],
                    nonpadding_sent=counts[NONPADDING_SENT],
                    nonpadding_received=counts[NONPADDING_RECV],
                ),
            )
        )
    return out


@dataclass
class OverheadReport:
    """Bandwidth overheads in percent, where 100 means no padding at all."""

    total_bw_percent: float
    sent_bw_percent: float | None
    recv_bw_percent: float | None
    sent_share_of_total: float
    recv_share_of_total: float

    def lines(self):
        def fmt(v):
            return "absent" if v is None else f"{v:.1f}%"

        return [
            f"total_bw {fmt(self.total_bw_percent)}",
            f"sent_bw {fmt(self.sent_bw_percent)}",
            f"recv_bw {fmt(self.recv_bw_percent)}",
            f"sent_share {fmt(self.sent_share_of_total)}",
            f"recv_share {fmt(self.recv_share_of_total)}",
        ]


def overhead(defended):
    """Per-trace bandwidth overhead accounting (totals and per direction)."""
    np_sent = defended.nonpadding_sent
    np_recv = defended.nonpadding_received
    sent = np_sent + defended.padding_sent
    recv = np_recv + defended.padding_received
    nonpadding = np_sent + np_recv
    total = sent + recv
    if nonpadding == 0:
        raise ValueError("overhead undefined for a trace without nonpadding cells")
    return OverheadReport(
        total_bw_percent=100.0 * total / nonpadding,
        sent_bw_percent=100.0 * sent / np_sent if np_sent else None,
        recv_bw_percent=100.0 * recv / np_recv if np_recv else None,
        sent_share_of_total=100.0 * sent / total,
        recv_share_of_total=100.0 * recv / total,
    )


def mean_overhead(reports):
    """Dataset-level summary: the mean of the per-trace percentages."""
    if not reports:
        raise ValueError("no overhead reports to aggregate")

    def mean(values):
        values = [v for v in values if v is not None]
        return sum(values) / len(values) if values else None

    return OverheadReport(
        total_bw_percent=mean([r.total_bw_percent for r in reports]),
        sent_bw_percent=mean([r.sent_bw_percent for r in reports]),
        recv_bw_percent=mean([r.recv_bw_percent for r in reports]),
        sent_share_of_total=mean([r.sent_share_of_total for r in reports]),
        recv_share_of_total=mean([r.recv_share_of_total for r in reports]),
    )
