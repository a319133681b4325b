"""Padding-machine specifications and the tuned machine constructions.

A machine is at most four states; each state samples a padding inter-arrival
delay (iat) and a padding-cell count (length) from parametric distributions,
and maps observed events to target states. A machine pair deploys one machine
at the client and an entirely independent one at the middle relay, each under
its own padding budget.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace

# Distribution families. "none" admits no sampling.
DIST_NONE = "none"
DIST_UNIFORM = "uniform"
DIST_LOGISTIC = "logistic"
DIST_LOG_LOGISTIC = "log-logistic"
DIST_GEOMETRIC = "geometric"
DIST_WEIBULL = "weibull"
DIST_PARETO = "pareto"

DIST_FAMILIES = (
    DIST_NONE,
    DIST_UNIFORM,
    DIST_LOGISTIC,
    DIST_LOG_LOGISTIC,
    DIST_GEOMETRIC,
    DIST_WEIBULL,
    DIST_PARETO,
)

# Events a machine can transition on. The four cell events mirror the trace
# kinds; length-reached and delay-infinite are raised internally.
EV_NONPADDING_SENT = "nonpadding-sent"
EV_NONPADDING_RECV = "nonpadding-received"
EV_PADDING_SENT = "padding-sent"
EV_PADDING_RECV = "padding-received"
EV_LENGTH_REACHED = "length-reached"
EV_DELAY_INFINITE = "delay-infinite"

EVENTS = (
    EV_NONPADDING_SENT,
    EV_NONPADDING_RECV,
    EV_PADDING_SENT,
    EV_PADDING_RECV,
    EV_LENGTH_REACHED,
    EV_DELAY_INFINITE,
)

# Sampled delays are capped here; a sample that reaches the cap means
# "infinite" (no padding until the machine is re-armed by a transition).
DELAY_INFINITE_USEC = 2**32 - 1

MAX_STATES = 4

CLIENT = "client"
RELAY = "relay"


class MachineSpecError(ValueError):
    pass


@dataclass(frozen=True)
class DistSpec:
    family: str
    param1: float = 0.0
    param2: float = 0.0
    added_shift_usec: int = 0
    cap_usec: int = DELAY_INFINITE_USEC

    def __post_init__(self):
        if self.family not in DIST_FAMILIES:
            raise MachineSpecError(f"unknown distribution family {self.family!r}")
        if self.added_shift_usec < 0:
            raise MachineSpecError("added_shift_usec must be >= 0")
        if self.cap_usec < 0:
            raise MachineSpecError("cap_usec must be >= 0")
        p1, p2 = self.param1, self.param2
        if not (math.isfinite(p1) and math.isfinite(p2)):
            raise MachineSpecError("distribution parameters must be finite")
        if self.family == DIST_UNIFORM and p2 < p1:
            raise MachineSpecError("uniform needs param1 <= param2")
        if self.family == DIST_LOGISTIC and p2 <= 0:
            raise MachineSpecError("logistic needs scale param2 > 0")
        if self.family == DIST_LOG_LOGISTIC and (p1 <= 0 or p2 <= 0):
            raise MachineSpecError("log-logistic needs scale and shape > 0")
        if self.family == DIST_GEOMETRIC and not 0 < p1 <= 1:
            raise MachineSpecError("geometric needs success probability in (0, 1]")
        if self.family == DIST_WEIBULL and (p1 <= 0 or p2 <= 0):
            raise MachineSpecError("weibull needs scale and shape > 0")
        if self.family == DIST_PARETO and (p1 <= 0 or p2 <= 0):
            raise MachineSpecError("pareto needs scale and shape > 0")


NO_DIST = DistSpec(DIST_NONE)


def quantile(dist, u):
    """Inverse CDF of the family at u in [0, 1), before shift and cap."""
    p1, p2 = dist.param1, dist.param2
    if dist.family == DIST_UNIFORM:
        return p1 + u * (p2 - p1)
    if dist.family == DIST_LOGISTIC:
        if u <= 0.0:
            return -math.inf
        return p1 + p2 * math.log(u / (1.0 - u))
    if dist.family == DIST_LOG_LOGISTIC:
        if u <= 0.0:
            return 0.0
        return p1 * (u / (1.0 - u)) ** (1.0 / p2)
    if dist.family == DIST_GEOMETRIC:
        if p1 >= 1.0 or u <= 0.0:
            return 1.0
        return max(1.0, math.ceil(math.log(1.0 - u) / math.log(1.0 - p1)))
    if dist.family == DIST_WEIBULL:
        return p1 * (-math.log(1.0 - u)) ** (1.0 / p2)
    if dist.family == DIST_PARETO:
        return p1 * (1.0 - u) ** (-1.0 / p2)
    raise MachineSpecError(f"cannot sample family {dist.family!r}")


def sample_distribution(dist, purpose, rng, max_length=None):
    """Draw one value: integer microseconds (delay) or cell count (length).

    Delay purpose adds the shift and clamps to [0, cap_usec]; a result equal
    to cap_usec signals an infinite delay. Length purpose rounds to the
    nearest non-negative integer and honours max_length when given.
    """
    if dist.family == DIST_NONE:
        raise MachineSpecError("cannot sample from a none-family distribution")
    value = quantile(dist, rng.random())
    if purpose == "delay":
        value = value + dist.added_shift_usec
        if value != value:  # NaN can't happen with validated params, be safe
            value = dist.cap_usec
        return int(min(max(0, round(value)), dist.cap_usec))
    if purpose == "length":
        n = max(0, round(value))
        if max_length is not None:
            n = min(n, max_length)
        return int(n)
    raise ValueError(f"unknown purpose {purpose!r}")


@dataclass(frozen=True)
class StateSpec:
    iat: DistSpec = NO_DIST
    length: DistSpec = NO_DIST
    max_length: int | None = None
    transitions: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.max_length is not None and self.max_length < 0:
            raise MachineSpecError("max_length must be >= 0")
        for event, target in self.transitions.items():
            if event not in EVENTS:
                raise MachineSpecError(f"unknown event {event!r}")
            if not isinstance(target, int):
                raise MachineSpecError(f"transition target {target!r} not an index")

    def __eq__(self, other):
        if not isinstance(other, StateSpec):
            return NotImplemented
        return (
            self.iat == other.iat
            and self.length == other.length
            and self.max_length == other.max_length
            and self.transitions == other.transitions
        )

    def __hash__(self):
        return hash(
            (self.iat, self.length, self.max_length, tuple(sorted(self.transitions.items())))
        )


@dataclass(frozen=True)
class PaddingBudget:
    allowed_padding_count: int
    max_padding_percent: int

    def __post_init__(self):
        if self.allowed_padding_count < 0:
            raise MachineSpecError("allowed_padding_count must be >= 0")
        if not 0 <= self.max_padding_percent <= 100:
            raise MachineSpecError("max_padding_percent must be in 0..100")


@dataclass(frozen=True)
class MachineSpec:
    states: tuple
    budget: PaddingBudget
    endpoint_role: str
    start_state: int = 0

    def __post_init__(self):
        if not 1 <= len(self.states) <= MAX_STATES:
            raise MachineSpecError(f"machines have 1..{MAX_STATES} states")
        if not 0 <= self.start_state < len(self.states):
            raise MachineSpecError(f"start state {self.start_state} out of range")
        if self.endpoint_role not in (CLIENT, RELAY):
            raise MachineSpecError(f"bad endpoint role {self.endpoint_role!r}")
        for i, state in enumerate(self.states):
            for event, target in state.transitions.items():
                if not 0 <= target < len(self.states):
                    raise MachineSpecError(
                        f"state {i}: transition on {event} targets missing state {target}"
                    )


@dataclass(frozen=True)
class MachinePair:
    client: MachineSpec
    relay: MachineSpec

    def __post_init__(self):
        if self.client.endpoint_role != CLIENT or self.relay.endpoint_role != RELAY:
            raise MachineSpecError("pair roles must be (client, relay)")

    def with_allowed_padding(self, allowed):
        """Copy with allowed_padding_count set symmetrically on both ends."""
        return MachinePair(
            client=replace(
                self.client, budget=replace(self.client.budget, allowed_padding_count=allowed)
            ),
            relay=replace(
                self.relay, budget=replace(self.relay.budget, allowed_padding_count=allowed)
            ),
        )


# --- Spring ------------------------------------------------------------------
#
# Reconstructed from the published change list: padding limit 1500 with the
# 50% relative cap on both endpoints, no max_length anywhere, and no
# reachable state without an iat distribution. The concrete distribution
# parameters below are this repo's frozen tuning.

SPRING_BUDGET = PaddingBudget(allowed_padding_count=1500, max_padding_percent=50)


def build_spring():
    client = MachineSpec(
        states=(
            StateSpec(
                iat=DistSpec(DIST_LOG_LOGISTIC, 100.0, 1.5),
                length=DistSpec(DIST_PARETO, 3.0, 2.0),
                transitions={EV_NONPADDING_SENT: 0, EV_LENGTH_REACHED: 1},
            ),
            StateSpec(
                iat=DistSpec(DIST_WEIBULL, 30_000.0, 1.2, added_shift_usec=100),
                length=DistSpec(DIST_UNIFORM, 1.0, 4.0),
                transitions={EV_NONPADDING_SENT: 0, EV_LENGTH_REACHED: 0},
            ),
        ),
        budget=SPRING_BUDGET,
        endpoint_role=CLIENT,
    )
    relay = MachineSpec(
        states=(
            StateSpec(
                iat=DistSpec(DIST_LOGISTIC, 500.0, 100.0),
                length=DistSpec(DIST_PARETO, 4.0, 1.5),
                transitions={EV_NONPADDING_SENT: 0, EV_LENGTH_REACHED: 1},
            ),
            StateSpec(
                iat=DistSpec(DIST_LOG_LOGISTIC, 150_000.0, 2.0, added_shift_usec=1000),
                length=DistSpec(DIST_UNIFORM, 2.0, 8.0),
                transitions={EV_NONPADDING_SENT: 0, EV_LENGTH_REACHED: 0},
            ),
        ),
        budget=SPRING_BUDGET,
        endpoint_role=RELAY,
    )
    return MachinePair(client=client, relay=relay)


# --- Interspace --------------------------------------------------------------

EXTEND_BURSTS = "extend-bursts"
FAKE_BURSTS = "fake-bursts"


@dataclass(frozen=True)
class InterspaceTemplate:
    """Seeded generator description for the probabilistically defined machine.

    The client is the Spring client plus, with an independent coin each, a
    transition pair between its two padding states acting on received padding
    and on received nonpadding. The relay is the Spring relay or a
    hand-crafted burst machine whose log-logistic wait and pareto
    length/intra-burst-iat parameters are jittered multiplicatively.
    """

    client_padding_coin: float = 0.5
    client_nonpadding_coin: float = 0.5
    relay_spring_prob: float = 0.5
    # hand-crafted relay base parameters: (scale, shape)
    wait_log_logistic: tuple = (120_000.0, 2.0)
    burst_length_pareto: tuple = (3.0, 1.5)
    burst_iat_pareto: tuple = (300.0, 2.0)
    jitter: float = 0.5  # multiplicative +-50% around the base parameters

    def __post_init__(self):
        for p in (self.client_padding_coin, self.client_nonpadding_coin, self.relay_spring_prob):
            if not 0.0 <= p <= 1.0:
                raise MachineSpecError("probabilities must be in [0, 1]")
        if not 0.0 <= self.jitter < 1.0:
            raise MachineSpecError("jitter must be in [0, 1)")


def _jittered(rng, base, jitter):
    return base * rng.uniform(1.0 - jitter, 1.0 + jitter)


def instantiate_interspace(template, seed):
    """Draw one concrete MachinePair from the template; pure in (template, seed).

    All coins and jitters are drawn in a fixed order regardless of which
    branches are taken, so instantiations across seeds stay aligned.
    """
    rng = random.Random(f"interspace|{seed}")
    spring = build_spring()

    add_padding = rng.random() < template.client_padding_coin
    add_nonpadding = rng.random() < template.client_nonpadding_coin
    use_spring_relay = rng.random() < template.relay_spring_prob
    tactic = EXTEND_BURSTS if rng.random() < 0.5 else FAKE_BURSTS
    wait = tuple(_jittered(rng, b, template.jitter) for b in template.wait_log_logistic)
    length = tuple(_jittered(rng, b, template.jitter) for b in template.burst_length_pareto)
    burst_iat = tuple(_jittered(rng, b, template.jitter) for b in template.burst_iat_pareto)

    client = spring.client
    extra = {}
    if add_padding:
        extra[EV_PADDING_RECV] = True
    if add_nonpadding:
        extra[EV_NONPADDING_RECV] = True
    if extra:
        # wire the new events as transitions between the two padding states
        states = list(client.states)
        for idx, other in ((0, 1), (1, 0)):
            trans = dict(states[idx].transitions)
            for event in extra:
                trans[event] = other
            states[idx] = replace(states[idx], transitions=trans)
        client = replace(client, states=tuple(states))

    if use_spring_relay:
        relay = spring.relay
    else:
        wait_state = StateSpec(
            iat=DistSpec(DIST_LOG_LOGISTIC, wait[0], wait[1]),
            length=DistSpec(DIST_UNIFORM, 1.0, 1.0),
            transitions={EV_LENGTH_REACHED: 1},
        )
        burst_state = StateSpec(
            iat=DistSpec(DIST_PARETO, burst_iat[0], burst_iat[1]),
            length=DistSpec(DIST_PARETO, length[0], length[1]),
            transitions={EV_LENGTH_REACHED: 0},
        )
        if tactic == EXTEND_BURSTS:
            # real sent cells pull the machine into (and keep re-arming) the
            # burst state, so padding rides on the tail of real bursts
            wait_state = replace(
                wait_state, transitions={**wait_state.transitions, EV_NONPADDING_SENT: 1}
            )
            burst_state = replace(
                burst_state, transitions={**burst_state.transitions, EV_NONPADDING_SENT: 1}
            )
        relay = MachineSpec(
            states=(wait_state, burst_state),
            budget=SPRING_BUDGET,
            endpoint_role=RELAY,
        )
    return MachinePair(client=client, relay=relay)


# --- spec file format (padmachine/1) -----------------------------------------

FORMAT_HEADER = "padmachine/1"


def _format_dist(dist):
    if dist.family == DIST_NONE:
        return DIST_NONE
    return (
        f"{dist.family} {dist.param1!r} {dist.param2!r}"
        f" shift={dist.added_shift_usec} cap={dist.cap_usec}"
    )


def serialize_machine_spec(pair):
    lines = [FORMAT_HEADER]
    for role, spec in ((CLIENT, pair.client), (RELAY, pair.relay)):
        lines.append(f"machine {role}")
        lines.append(
            f"  budget allowed={spec.budget.allowed_padding_count}"
            f" percent={spec.budget.max_padding_percent}"
        )
        lines.append(f"  start {spec.start_state}")
        for i, state in enumerate(spec.states):
            lines.append(f"  state {i}:")
            lines.append(f"    iat {_format_dist(state.iat)}")
            lines.append(f"    length {_format_dist(state.length)}")
            if state.max_length is not None:
                lines.append(f"    max_length {state.max_length}")
            if state.transitions:
                parts = " ".join(
                    f"{event}->{state.transitions[event]}"
                    for event in EVENTS
                    if event in state.transitions
                )
                lines.append(f"    transitions {parts}")
    return "\n".join(lines) + "\n"


def _parse_dist(rest, lineno):
    fields = rest.split()
    if not fields:
        raise MachineSpecError(f"line {lineno}: missing distribution")
    family = fields[0]
    if family == DIST_NONE:
        return NO_DIST
    kwargs = {"added_shift_usec": 0, "cap_usec": DELAY_INFINITE_USEC}
    params = []
    for tok in fields[1:]:
        if tok.startswith("shift="):
            kwargs["added_shift_usec"] = int(tok[6:])
        elif tok.startswith("cap="):
            kwargs["cap_usec"] = int(tok[4:])
        else:
            params.append(float(tok))
    if len(params) != 2:
        raise MachineSpecError(f"line {lineno}: expected two distribution parameters")
    try:
        return DistSpec(family, params[0], params[1], **kwargs)
    except MachineSpecError as e:
        raise MachineSpecError(f"line {lineno}: {e}") from None


def parse_machine_spec(text):
    """Parse the padmachine/1 format; validates every machine invariant."""
    lines = text.split("\n")
    if not lines or lines[0].strip() != FORMAT_HEADER:
        raise MachineSpecError(f"expected header {FORMAT_HEADER!r}")
    machines = {}
    role = None
    budget = None
    start = 0
    states = []
    current = None  # mutable [iat, length, max_length, transitions]

    def close_state():
        if current is not None:
            states.append(
                StateSpec(
                    iat=current[0],
                    length=current[1],
                    max_length=current[2],
                    transitions=current[3],
                )
            )

    def close_machine(lineno):
        if role is None:
            return
        close_state()
        if budget is None:
            raise MachineSpecError(f"line {lineno}: machine {role} has no budget")
        if not states:
            raise MachineSpecError(f"line {lineno}: machine {role} has no states")
        machines[role] = MachineSpec(
            states=tuple(states), budget=budget, endpoint_role=role, start_state=start
        )

    for lineno, raw in enumerate(lines[1:], start=2):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split(None, 1)
        key, rest = fields[0], fields[1] if len(fields) > 1 else ""
        if key == "machine":
            close_machine(lineno)
            if rest not in (CLIENT, RELAY):
                raise MachineSpecError(f"line {lineno}: machine role must be client or relay")
            role, budget, start, states, current = rest, None, 0, [], None
        elif role is None:
            raise MachineSpecError(f"line {lineno}: {key!r} outside a machine block")
        elif key == "budget":
            vals = dict(tok.split("=", 1) for tok in rest.split())
            try:
                budget = PaddingBudget(int(vals["allowed"]), int(vals["percent"]))
            except (KeyError, ValueError):
                raise MachineSpecError(f"line {lineno}: bad budget line") from None
        elif key == "start":
            start = int(rest)
        elif key == "state":
            close_state()
            current = [NO_DIST, NO_DIST, None, {}]
        elif current is None:
            raise MachineSpecError(f"line {lineno}: {key!r} outside a state section")
        elif key == "iat":
            current[0] = _parse_dist(rest, lineno)
        elif key == "length":
            current[1] = _parse_dist(rest, lineno)
        elif key == "max_length":
            current[2] = int(rest)
        elif key == "transitions":
            for tok in rest.split():
                if "->" not in tok:
                    raise MachineSpecError(f"line {lineno}: bad transition {tok!r}")
                event, target = tok.split("->", 1)
                current[3][event] = int(target)
        else:
            raise MachineSpecError(f"line {lineno}: unknown directive {key!r}")
    close_machine(len(lines))
    if set(machines) != {CLIENT, RELAY}:
        raise MachineSpecError("spec must define exactly one client and one relay machine")
    return MachinePair(client=machines[CLIENT], relay=machines[RELAY])


# --- framework-style source export --------------------------------------------

_DIST_ENUM = {
    DIST_NONE: "CIRCPAD_DIST_NONE",
    DIST_UNIFORM: "CIRCPAD_DIST_UNIFORM",
    DIST_LOGISTIC: "CIRCPAD_DIST_LOGISTIC",
    DIST_LOG_LOGISTIC: "CIRCPAD_DIST_LOG_LOGISTIC",
    DIST_GEOMETRIC: "CIRCPAD_DIST_GEOMETRIC",
    DIST_WEIBULL: "CIRCPAD_DIST_WEIBULL",
    DIST_PARETO: "CIRCPAD_DIST_PARETO",
}

_EVENT_ENUM = {
    EV_NONPADDING_SENT: "CIRCPAD_EVENT_NONPADDING_SENT",
    EV_NONPADDING_RECV: "CIRCPAD_EVENT_NONPADDING_RECV",
    EV_PADDING_SENT: "CIRCPAD_EVENT_PADDING_SENT",
    EV_PADDING_RECV: "CIRCPAD_EVENT_PADDING_RECV",
    EV_LENGTH_REACHED: "CIRCPAD_EVENT_LENGTH_COUNT",
    EV_DELAY_INFINITE: "CIRCPAD_EVENT_INFINITY",
}


def export_framework_source(pair):
    """Render a deterministic C-style machine-init skeleton for the pair."""
    out = ["/* generated machine pair; edit the spec file, not this text */", ""]
    out.append("void")
    out.append("circpad_machines_init(void)")
    out.append("{")
    for var, spec in (("client", pair.client), ("relay", pair.relay)):
        out.append(f"  circpad_machine_spec_t *{var} = circpad_machine_spec_new();")
        out.append(f"  {var}->is_origin_side = {1 if var == 'client' else 0};")
        out.append(f"  {var}->allowed_padding_count = {spec.budget.allowed_padding_count};")
        out.append(f"  {var}->max_padding_percent = {spec.budget.max_padding_percent};")
        out.append(f"  circpad_machine_states_init({var}, {len(spec.states)});")
        out.append(f"  {var}->start_state = {spec.start_state};")
        for i, state in enumerate(spec.states):
            st = f"{var}->states[{i}]"
            for slot, dist in (("iat", state.iat), ("length", state.length)):
                out.append(f"  {st}.{slot}_dist.type = {_DIST_ENUM[dist.family]};")
                if dist.family != DIST_NONE:
                    out.append(f"  {st}.{slot}_dist.param1 = {dist.param1};")
                    out.append(f"  {st}.{slot}_dist.param2 = {dist.param2};")
                    if slot == "iat":
                        out.append(f"  {st}.dist_added_shift_usec = {dist.added_shift_usec};")
                        out.append(f"  {st}.dist_max_sample_usec = {dist.cap_usec};")
            if state.max_length is not None:
                out.append(f"  {st}.max_length = {state.max_length};")
            for event in EVENTS:
                if event in state.transitions:
                    out.append(
                        f"  {st}.next_state[{_EVENT_ENUM[event]}] ="
                        f" {state.transitions[event]};"
                    )
        out.append(f"  circpad_register_padding_machine({var});")
        out.append("")
    out.append("}")
    return "\n".join(out) + "\n"
