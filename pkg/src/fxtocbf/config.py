"""Scenario documents: JSON validated against ``schema/scenario.schema.json``.

``serialize`` writes every field with defaults filled in a fixed key order, so
``serialize(parse_scenario(serialize(cfg)))`` is byte-identical to
``serialize(cfg)``.
"""

from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources

import jsonschema

from .constraints import ConstraintGains, FxTParams, SafetyParams
from .dynamics import VehicleState
from .qp import QpWeights
from .simulator import DisturbanceSpec, ScenarioConfig, ScenarioError, Terminal, VehicleSpec

_TOP = ("t0", "dt", "lane_width", "wheelbase", "margin", "t_end", "robust")
_SECTIONS = {
    "safety": (SafetyParams, ("phi_rt", "eps", "v_min", "v_max", "u_min", "u_max", "phi_min", "phi_max")),
    "fxt": (FxTParams, ("mu", "T_min", "p1")),
    "gains": (ConstraintGains, ("eps_vref", "eps_theta", "eps_ydes", "p_lat", "delta_max")),
    "weights": (QpWeights, ("du", "phi", "delta", "delta_xf", "slack", "delta_nominal", "reg")),
}


@lru_cache(maxsize=1)
def schema() -> dict:
    text = resources.files("fxtocbf").joinpath("schema/scenario.schema.json").read_text()
    return json.loads(text)


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<document>"


def _num(x):
    return None if x is None else float(x)


def from_dict(doc: dict) -> ScenarioConfig:
    validator = jsonschema.Draft202012Validator(schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        e = errors[0]
        raise ScenarioError(_path(e.absolute_path), e.message)
    defaults = ScenarioConfig.__dataclass_fields__
    top = {}
    for k in _TOP:
        if k in doc:
            v = doc[k]
            top[k] = v if k == "robust" else _num(v)
    for name, (cls, keys) in _SECTIONS.items():
        sub = doc.get(name, {})
        try:
            top[name] = cls(**{k: _num(sub[k]) for k in keys if k in sub})
        except ValueError as exc:
            raise ScenarioError(name, str(exc)) from None
    d = doc.get("disturbance", {})
    dist = DisturbanceSpec()
    top["disturbance"] = DisturbanceSpec(
        d.get("policy", dist.policy),
        tuple(d.get("channels", dist.channels)),
        tuple(float(q) for q in d.get("lo", dist.lo)),
        tuple(float(q) for q in d.get("hi", dist.hi)),
        int(d.get("seed", dist.seed)),
    )
    lane_width = top.get("lane_width", defaults["lane_width"].default)
    vehicles = []
    for i, v in enumerate(doc["vehicles"]):
        st = v["state"]
        y = st.get("y")
        state = VehicleState(float(st["x"]), float(y) if y is not None else v["lane"] * lane_width,
                             float(st.get("theta", 0.0)), float(st["v"]))
        term = v.get("terminal")
        terminal = None if term is None else Terminal(float(term["tf_star"]), float(term["x"]), float(term["v"]))
        vehicles.append(VehicleSpec(
            v["id"], v["role"], v["lane"], state, terminal, v.get("adjacent"), v.get("target_lane"),
            tuple((float(a), float(b)) for a, b in v.get("profile", [])),
        ))
    return ScenarioConfig(tuple(vehicles), **top)


def parse_scenario(text: str) -> ScenarioConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"line {exc.lineno} column {exc.colno}", exc.msg) from None
    if not isinstance(doc, dict):
        raise ScenarioError("<document>", "top level must be an object")
    return from_dict(doc)


def load_scenario(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())


def to_dict(cfg: ScenarioConfig) -> dict:
    doc = {k: getattr(cfg, k) for k in _TOP}
    d = cfg.disturbance
    doc["disturbance"] = {"policy": d.policy, "channels": list(d.channels), "lo": list(d.lo),
                          "hi": list(d.hi), "seed": d.seed}
    for name, (_, keys) in _SECTIONS.items():
        sec = getattr(cfg, name)
        doc[name] = {k: getattr(sec, k) for k in keys}
    vs = []
    for v in cfg.vehicles:
        t = v.terminal
        vs.append({
            "id": v.id,
            "role": v.role,
            "lane": v.lane,
            "state": {"x": v.state.x, "y": v.state.y, "theta": v.state.theta, "v": v.state.v},
            "terminal": None if t is None else {"tf_star": t.tf_star, "x": t.x, "v": t.v},
            "adjacent": v.adjacent,
            "target_lane": v.target_lane,
            "profile": [list(k) for k in v.profile],
        })
    doc["vehicles"] = vs
    return doc


def serialize(cfg: ScenarioConfig) -> str:
    return json.dumps(to_dict(cfg), indent=2) + "\n"
