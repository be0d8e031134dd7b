"""Network description: populations, projections, stimuli and dense layers.

Values on the membrane scale (potentials, thresholds) are stored as raw
membrane-format integers and synaptic weights as raw weight-format integers,
so a parsed network is exact and re-serialises losslessly. Probabilistic
connectivity is kept symbolic here; it is expanded in ``placement``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .config import _Reader, load_json
from .errors import ValidationError
from .fixedpoint import S8_8, S16_15, FixedFormat


@dataclass(frozen=True)
class NeuronParams:
    v_rest: int = 0
    v_reset: int = 0
    v_threshold: int = S16_15.one
    tau_m_us: int = 20_000


@dataclass(frozen=True)
class Population:
    name: str
    size: int
    params: NeuronParams = field(default_factory=NeuronParams)


@dataclass(frozen=True)
class Projection:
    source: str
    target: str
    weight: int  # raw weight-format
    probability: float | None = None
    pairs: tuple[tuple[int, int], ...] | None = None


@dataclass(frozen=True)
class Stimulus:
    target: str
    rate_hz: float
    weight: int  # raw weight-format


@dataclass(frozen=True)
class DenseLayer:
    name: str
    weights: tuple[tuple[int, ...], ...]  # raw 8-bit MAC operands, M x N
    core: tuple[int, int, int]  # chip x, chip y, core
    input_population: str | None = None
    input_constant: tuple[int, ...] | None = None

    @property
    def rows(self) -> int:
        return len(self.weights)

    @property
    def cols(self) -> int:
        return len(self.weights[0])


@dataclass(frozen=True)
class NetworkDesc:
    populations: tuple[Population, ...]
    projections: tuple[Projection, ...] = ()
    stimuli: tuple[Stimulus, ...] = ()
    dense_layers: tuple[DenseLayer, ...] = ()
    membrane_format: FixedFormat = S16_15
    weight_format: FixedFormat = S8_8

    def __post_init__(self) -> None:
        validate_network(self)

    @property
    def n_neurons(self) -> int:
        return sum(p.size for p in self.populations)

    def population(self, name: str) -> Population:
        for p in self.populations:
            if p.name == name:
                return p
        raise KeyError(name)

    def offsets(self) -> dict[str, int]:
        """Global index of each population's first neuron."""
        out, acc = {}, 0
        for p in self.populations:
            out[p.name] = acc
            acc += p.size
        return out

    def to_dict(self) -> dict[str, Any]:
        vm, wf = self.membrane_format, self.weight_format
        pops = []
        for p in self.populations:
            pops.append({
                "name": p.name,
                "size": p.size,
                "params": {
                    "v_rest": vm.to_float(p.params.v_rest),
                    "v_reset": vm.to_float(p.params.v_reset),
                    "v_threshold": vm.to_float(p.params.v_threshold),
                    "tau_m_ms": p.params.tau_m_us / 1000,
                },
            })
        projs = []
        for pr in self.projections:
            conn: dict[str, Any]
            if pr.pairs is not None:
                conn = {"pairs": [list(x) for x in pr.pairs]}
            else:
                conn = {"probability": pr.probability}
            projs.append({
                "source": pr.source,
                "target": pr.target,
                "connectivity": conn,
                "weight": wf.to_float(pr.weight),
                "delay": 1,
            })
        stims = [
            {"target": s.target, "rate_hz": s.rate_hz, "weight": wf.to_float(s.weight)}
            for s in self.stimuli
        ]
        layers = []
        for d in self.dense_layers:
            inp = (
                {"population": d.input_population}
                if d.input_population is not None
                else {"constant": list(d.input_constant or ())}
            )
            layers.append({
                "name": d.name,
                "rows": d.rows,
                "cols": d.cols,
                "weights": [list(row) for row in d.weights],
                "input": inp,
                "core": list(d.core),
            })
        return {"populations": pops, "projections": projs, "stimuli": stims, "dense_layers": layers}


def validate_network(net: NetworkDesc) -> None:
    names: set[str] = set()
    sizes: dict[str, int] = {}
    if not net.populations:
        raise ValidationError("network needs at least one population")
    for p in net.populations:
        if not p.name:
            raise ValidationError("population name must be non-empty")
        if p.name in names:
            raise ValidationError(f"duplicate population name {p.name!r}")
        if not isinstance(p.size, int) or p.size < 1:
            raise ValidationError(f"population {p.name!r} size must be >= 1")
        if p.params.tau_m_us <= 0:
            raise ValidationError(f"population {p.name!r} tau_m must be > 0")
        names.add(p.name)
        sizes[p.name] = p.size

    def ref(name: str, what: str) -> int:
        if name not in sizes:
            raise ValidationError(f"{what} references unknown population {name!r}")
        return sizes[name]

    for i, pr in enumerate(net.projections):
        ns, nt = ref(pr.source, f"projection {i}"), ref(pr.target, f"projection {i}")
        if (pr.pairs is None) == (pr.probability is None):
            raise ValidationError(f"projection {i} needs exactly one of pairs or probability")
        if pr.probability is not None and not 0.0 <= pr.probability <= 1.0:
            raise ValidationError(f"projection {i} invalid probability {pr.probability}")
        for s, t in pr.pairs or ():
            if not (0 <= s < ns and 0 <= t < nt):
                raise ValidationError(f"projection {i} pair ({s}, {t}) out of range")
        _check_raw(pr.weight, net.weight_format, f"projection {i} weight")
    for i, st in enumerate(net.stimuli):
        ref(st.target, f"stimulus {i}")
        if not st.rate_hz >= 0:
            raise ValidationError(f"stimulus {i} rate must be >= 0, got {st.rate_hz}")
        _check_raw(st.weight, net.weight_format, f"stimulus {i} weight")
    layer_names: set[str] = set()
    for d in net.dense_layers:
        if d.name in layer_names:
            raise ValidationError(f"duplicate dense layer name {d.name!r}")
        layer_names.add(d.name)
        if not d.weights or not d.weights[0]:
            raise ValidationError(f"dense layer {d.name!r} needs rows and cols >= 1")
        n = len(d.weights[0])
        for row in d.weights:
            if len(row) != n:
                raise ValidationError(f"dense layer {d.name!r} weight rows have unequal length")
            if any(not -128 <= w <= 127 for w in row):
                raise ValidationError(f"dense layer {d.name!r} weights outside 8-bit signed range")
        if (d.input_population is None) == (d.input_constant is None):
            raise ValidationError(f"dense layer {d.name!r} needs exactly one input source")
        if d.input_population is not None:
            size = ref(d.input_population, f"dense layer {d.name!r}")
            if size != n:
                raise ValidationError(
                    f"dense layer {d.name!r} has {n} cols but population {d.input_population!r} has {size} neurons"
                )
        else:
            if len(d.input_constant) != n:
                raise ValidationError(f"dense layer {d.name!r} constant input length != cols")
            if any(not -128 <= x <= 127 for x in d.input_constant):
                raise ValidationError(f"dense layer {d.name!r} constant input outside 8-bit signed range")


def _check_raw(raw: int, fmt: FixedFormat, what: str) -> None:
    if not fmt.min_raw <= raw <= fmt.max_raw:
        raise ValidationError(f"{what} not representable in {fmt}")


def parse_network(
    text: str,
    source: str | None = None,
    membrane_format: FixedFormat = S16_15,
    weight_format: FixedFormat = S8_8,
) -> NetworkDesc:
    """Parse and validate a network document."""
    return network_from_dict(load_json(text, source), membrane_format, weight_format)


def _fixed(r: _Reader, key: str, fmt: FixedFormat, default: float | None = None) -> int:
    value = r.number(key) if default is None else r.number(key, default)
    if not fmt.representable(value):
        raise ValidationError(f"{r._name(key)}={value} not representable in {fmt}")
    return fmt.from_float(value)


def _int_list(v: Any, what: str) -> tuple[int, ...]:
    if not isinstance(v, list) or any(isinstance(x, bool) or not isinstance(x, int) for x in v):
        raise ValidationError(f"{what} must be an array of integers")
    return tuple(v)


def network_from_dict(
    doc: Any, membrane_format: FixedFormat = S16_15, weight_format: FixedFormat = S8_8
) -> NetworkDesc:
    vm, wf = membrane_format, weight_format
    r = _Reader(doc, "")

    pops = []
    for i, item in enumerate(r.list("populations")):
        pr = _Reader(item, f"populations[{i}]")
        name = pr.str("name")
        size = pr.int("size")
        par = pr.sub("params")
        v_rest = _fixed(par, "v_rest", vm, 0.0)
        params = NeuronParams(
            v_rest=v_rest,
            v_reset=_fixed(par, "v_reset", vm, vm.to_float(v_rest)),
            v_threshold=_fixed(par, "v_threshold", vm, 1.0),
            tau_m_us=_tau_us(par.number("tau_m_ms", 20.0), f"populations[{i}].params.tau_m_ms"),
        )
        par.done()
        pr.done()
        pops.append(Population(name, size, params))

    projs = []
    for i, item in enumerate(r.list("projections", [])):
        jr = _Reader(item, f"projections[{i}]")
        source, target = jr.str("source"), jr.str("target")
        cr = jr.sub("connectivity")
        prob = pairs = None
        if cr.has("probability"):
            prob = cr.number("probability")
        if cr.has("pairs"):
            raw_pairs = cr.list("pairs")
            pairs = tuple(_int_list(p, f"projections[{i}].connectivity.pairs") for p in raw_pairs)
            if any(len(p) != 2 for p in pairs):
                raise ValidationError(f"projections[{i}].connectivity.pairs entries must be [source, target]")
        cr.done()
        weight = _fixed(jr, "weight", wf)
        delay = jr.int("delay", 1)
        if delay != 1:
            raise ValidationError(f"projections[{i}].delay must be 1 timestep, got {delay}")
        jr.done()
        projs.append(Projection(source, target, weight, prob, pairs))

    stims = []
    for i, item in enumerate(r.list("stimuli", [])):
        sr = _Reader(item, f"stimuli[{i}]")
        stims.append(Stimulus(sr.str("target"), sr.number("rate_hz"), _fixed(sr, "weight", wf, 1.0)))
        sr.done()

    layers = []
    for i, item in enumerate(r.list("dense_layers", [])):
        dr = _Reader(item, f"dense_layers[{i}]")
        name = dr.str("name")
        rows, cols = dr.int("rows"), dr.int("cols")
        weights = tuple(_int_list(row, f"dense_layers[{i}].weights") for row in dr.list("weights"))
        if len(weights) != rows or any(len(row) != cols for row in weights):
            raise ValidationError(f"dense_layers[{i}].weights shape does not match rows x cols")
        core = _int_list(dr.raw("core"), f"dense_layers[{i}].core")
        if len(core) != 3:
            raise ValidationError(f"dense_layers[{i}].core must be [chip_x, chip_y, core]")
        ir = dr.sub("input")
        inp_pop = ir.str("population") if ir.has("population") else None
        inp_const = _int_list(ir.raw("constant"), f"dense_layers[{i}].input.constant") if ir.has("constant") else None
        ir.done()
        dr.done()
        layers.append(DenseLayer(name, weights, tuple(core), inp_pop, inp_const))
    r.done()

    return NetworkDesc(tuple(pops), tuple(projs), tuple(stims), tuple(layers), vm, wf)


def _tau_us(ms: float, what: str) -> int:
    us = round(ms * 1000)
    if us <= 0:
        raise ValidationError(f"{what} must be > 0")
    return us


def dump_network(net: NetworkDesc) -> str:
    return json.dumps(net.to_dict(), indent=2) + "\n"
