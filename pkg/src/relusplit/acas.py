"""ACAS Xu properties phi_1 .. phi_10 and their compilation to (boxes, forbidden set).

Properties are stated in physical units over (rho, theta, psi, v_own, v_int);
they are clipped to the network's declared input range and normalized with
the ``.nnet`` header constants before verification. Advisories follow the
minimal-score convention: the advised action is the output with the lowest
score.
"""

from __future__ import annotations

import itertools
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .network import InputBox, ReluNetwork, load_nnet
from .verifier import OutputSpec, Verdict

INPUTS = ("rho", "theta", "psi", "v_own", "v_int")
OUTPUTS = ("COC", "weak_left", "weak_right", "strong_left", "strong_right")
PI = 3.141592

ALL_NETWORKS = tuple((x, y) for x in range(1, 6) for y in range(1, 10))
NETWORK_FILE = "ACASXU_run2a_{x}_{y}_batch_2000.nnet"
ENV_DIR = "RELUSPLIT_ACAS_DIR"


class PropertyError(ValueError):
    pass


@dataclass(frozen=True)
class Desired:
    """What the network should do.

    ``kind`` is one of ``at_most`` (score of ``outputs[0]`` at most
    ``threshold``), ``minimal``, ``not_minimal``, ``not_maximal``,
    ``never_minimal`` (none of ``outputs`` is minimal) or ``any_minimal``
    (at least one of ``outputs`` is minimal).
    """

    kind: str
    outputs: tuple
    threshold: Optional[float] = None


@dataclass(frozen=True)
class AcasProperty:
    id: int
    boxes: tuple          # each a dict: input name -> (lo or None, hi or None)
    networks: tuple
    desired: Desired
    description: str = ""

    def tests_network(self, x: int, y: int) -> bool:
        return (x, y) in self.networks


def _box(**kw):
    return {k: tuple(v) for k, v in kw.items()}


def property_catalog() -> list:
    far = _box(rho=(55947.691, None), v_own=(1145, None), v_int=(None, 60))
    head_on = dict(rho=(1500, 1800), theta=(-0.06, 0.06))
    no_17_19 = tuple(n for n in ALL_NETWORKS if n not in ((1, 7), (1, 8), (1, 9)))
    return [
        AcasProperty(1, (far,), ALL_NETWORKS, Desired("at_most", ("COC",), 1500.0),
                     "distant, slower intruder: COC score stays below a fixed threshold"),
        AcasProperty(2, (far,),
                     tuple(n for n in ALL_NETWORKS if n[0] >= 2 and n not in ((4, 2), (5, 3))),
                     Desired("not_maximal", ("COC",)),
                     "distant, slower intruder: COC score is never maximal"),
        AcasProperty(3, (_box(psi=(3.10, None), v_own=(980, None), v_int=(960, None), **head_on),),
                     no_17_19, Desired("not_minimal", ("COC",)),
                     "intruder directly ahead and approaching: COC is not minimal"),
        AcasProperty(4, (_box(psi=(0, 0), v_own=(1000, None), v_int=(700, 800), **head_on),),
                     no_17_19, Desired("not_minimal", ("COC",)),
                     "intruder ahead, moving away more slowly: COC is not minimal"),
        AcasProperty(5, (_box(rho=(250, 400), theta=(0.2, 0.4), psi=(-PI, -PI + 0.005),
                              v_own=(100, 400), v_int=(0, 400)),),
                     ((1, 1),), Desired("minimal", ("strong_right",)),
                     "near intruder approaching from the left: advise strong right"),
        AcasProperty(6, tuple(_box(rho=(12000, 62000), theta=th, psi=(-PI, -PI + 0.005),
                                   v_own=(100, 1200), v_int=(0, 1200))
                              for th in ((0.7, PI), (-PI, -0.7))),
                     ((1, 1),), Desired("minimal", ("COC",)),
                     "sufficiently far intruder: advise COC"),
        AcasProperty(7, (_box(rho=(0, 60760), theta=(-PI, PI), psi=(-PI, PI),
                              v_own=(100, 1200), v_int=(0, 1200)),),
                     ((1, 9),), Desired("never_minimal", ("strong_left", "strong_right")),
                     "large vertical separation: never advise a strong turn"),
        AcasProperty(8, (_box(rho=(0, 60760), theta=(-PI, -0.75 * PI), psi=(-0.1, 0.1),
                              v_own=(600, 1200), v_int=(600, 1200)),),
                     ((2, 9),), Desired("any_minimal", ("weak_left", "COC")),
                     "previous weak left: output COC or keep weak left"),
        AcasProperty(9, (_box(rho=(2000, 7000), theta=(-0.4, -0.14), psi=(-PI, -PI + 0.01),
                              v_own=(100, 150), v_int=(0, 150)),),
                     ((3, 3),), Desired("minimal", ("strong_left",)),
                     "nearby intruder overrides weak right: advise strong left"),
        AcasProperty(10, (_box(rho=(36000, 60760), theta=(0.7, PI), psi=(-PI, -PI + 0.01),
                               v_own=(900, 1200), v_int=(600, 1200)),),
                     ((4, 5),), Desired("minimal", ("COC",)),
                     "far away intruder: advise COC"),
    ]


def get_property(pid: int, catalog=None) -> AcasProperty:
    for p in catalog or property_catalog():
        if p.id == pid:
            return p
    raise PropertyError(f"no property with id {pid}")


# -- compilation --------------------------------------------------------------


def _index(name) -> int:
    if isinstance(name, int):
        return name
    try:
        return OUTPUTS.index(name)
    except ValueError:
        raise PropertyError(f"unknown output {name!r}") from None


def _rows_le(o: int, others, n: int) -> np.ndarray:
    """Rows of ``y_o <= y_i`` for each ``i`` in ``others``."""
    A = np.zeros((len(others), n))
    for r, i in enumerate(others):
        A[r, o] = 1.0
        A[r, i] = -1.0
    return A


def forbidden_set(desired: Desired, n_outputs: int, output_norm=None) -> OutputSpec:
    """The set of raw network outputs that violate ``desired``."""
    outs = [_index(o) for o in desired.outputs]
    n = n_outputs
    kind = desired.kind
    disjuncts = []
    if kind == "at_most":
        (o,) = outs
        t = desired.threshold
        if output_norm is not None:
            t = float(output_norm.normalize(t))
        row = np.zeros((1, n))
        row[0, o] = -1.0
        disjuncts.append((row, np.array([-t])))
    elif kind == "minimal":
        (o,) = outs
        for i in range(n):
            if i != o:
                disjuncts.append((-_rows_le(o, [i], n), np.zeros(1)))
    elif kind == "not_minimal":
        (o,) = outs
        others = [i for i in range(n) if i != o]
        disjuncts.append((_rows_le(o, others, n), np.zeros(n - 1)))
    elif kind == "not_maximal":
        (o,) = outs
        others = [i for i in range(n) if i != o]
        disjuncts.append((-_rows_le(o, others, n), np.zeros(n - 1)))
    elif kind == "never_minimal":
        for o in outs:
            others = [i for i in range(n) if i != o]
            disjuncts.append((_rows_le(o, others, n), np.zeros(n - 1)))
    elif kind == "any_minimal":
        # every listed output is beaten by some other output
        choices = [[(o, i) for i in range(n) if i != o] for o in outs]
        for combo in itertools.product(*choices):
            A = np.vstack([-_rows_le(o, [i], n) for o, i in combo])
            disjuncts.append((A, np.zeros(len(combo))))
    else:
        raise PropertyError(f"unknown desired-output kind {kind!r}")
    return OutputSpec(tuple(disjuncts), name=kind)


def normalized_box(bounds: dict, net: ReluNetwork) -> InputBox:
    norm = net.input_normalization
    if norm is None:
        raise PropertyError("network carries no input normalization constants")
    lo = np.array(norm.mins, dtype=float)
    hi = np.array(norm.maxes, dtype=float)
    for name, (a, b) in bounds.items():
        i = INPUTS.index(name)
        if a is not None:
            lo[i] = a
        if b is not None:
            hi[i] = b
    lo = np.clip(lo, norm.mins, norm.maxes)
    hi = np.clip(hi, norm.mins, norm.maxes)
    return InputBox(norm.normalize(lo), norm.normalize(hi))


def compile_forbidden_set(prop: AcasProperty, net: ReluNetwork,
                          network_id: Optional[tuple] = None):
    """Return ``(boxes, spec)`` in the network's normalized coordinates."""
    if network_id is not None and tuple(network_id) not in prop.networks:
        raise PropertyError(f"property {prop.id} is not tested on N_{network_id[0]},{network_id[1]}")
    boxes = [normalized_box(b, net) for b in prop.boxes]
    spec = forbidden_set(prop.desired, net.n_outputs, net.output_normalization)
    return boxes, OutputSpec(spec.disjuncts, name=f"phi{prop.id}")


def acas_label(verdict: Verdict) -> str:
    """ACAS naming: the safe outcome is called 'unsatisfied'."""
    return {Verdict.INTERSECTS: "satisfied", Verdict.DOES_NOT_INTERSECT: "unsatisfied",
            Verdict.TIMEOUT: "timeout"}[verdict]


# -- catalog documents and network lookup -------------------------------------


def property_to_dict(p: AcasProperty) -> dict:
    desired = {"kind": p.desired.kind, "output": list(p.desired.outputs)}
    if p.desired.threshold is not None:
        desired["threshold"] = p.desired.threshold
    return {
        "id": p.id,
        "description": p.description,
        "boxes": [{k: list(v) for k, v in b.items()} for b in p.boxes],
        "networks": [list(n) for n in p.networks],
        "desired": desired,
    }


def property_from_dict(d: dict) -> AcasProperty:
    des = d["desired"]
    outs = des.get("output", des.get("outputs"))
    if isinstance(outs, (str, int)):
        outs = [outs]
    return AcasProperty(
        int(d["id"]),
        tuple({k: (v[0], v[1]) for k, v in b.items()} for b in d["boxes"]),
        tuple(tuple(int(i) for i in n) for n in d.get("networks", [])),
        Desired(des["kind"], tuple(outs), des.get("threshold")),
        d.get("description", ""),
    )


def dump_catalog(path, catalog=None) -> None:
    data = [property_to_dict(p) for p in catalog or property_catalog()]
    Path(path).write_text(json.dumps(data, indent=2) + "\n")


def load_properties(path) -> list:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = [data]
    return [property_from_dict(d) for d in data]


def load_manifest(path) -> dict:
    """Manifest JSON: ``{"1_1": "path/to/file.nnet", ...}`` (paths relative to the file)."""
    path = Path(path)
    raw = json.loads(path.read_text())
    out = {}
    for key, value in raw.items():
        x, y = (int(v) for v in key.replace(",", "_").split("_"))
        p = Path(value)
        out[(x, y)] = p if p.is_absolute() else path.parent / p
    return out


def network_path(x: int, y: int, manifest: Optional[dict] = None,
                 directory=None) -> Optional[Path]:
    """Locate ``N_{x,y}`` via a manifest, a directory, or ``$RELUSPLIT_ACAS_DIR``."""
    if manifest and (x, y) in manifest:
        return Path(manifest[(x, y)])
    for d in (directory, os.environ.get(ENV_DIR)):
        if d:
            p = Path(d) / NETWORK_FILE.format(x=x, y=y)
            if p.exists():
                return p
    return None


def load_acas_network(x: int, y: int, manifest=None, directory=None) -> ReluNetwork:
    p = network_path(x, y, manifest, directory)
    if p is None or not p.exists():
        raise FileNotFoundError(
            f"ACAS Xu network N_{x},{y} not found; pass a manifest/directory or set ${ENV_DIR}")
    return load_nnet(p)


def synthetic_network_path() -> Path:
    """Tiny ACAS-shaped network shipped with the package for smoke tests."""
    return Path(__file__).with_name("data") / "synthetic_acas.nnet"
