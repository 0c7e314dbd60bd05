"""JSON file formats and flag parsing shared by the command-line tools.

System files carry row-major nested arrays; per-channel lists are positional
(entry 0 is channel 1) while the vertex labels inside neighbor lists are
1-indexed.
"""

from __future__ import annotations

import json
from importlib import resources

import numpy as np

from .errors import ValidationError
from .model import MultiChannelSystem, NeighborGraph, as_matrix, as_vector
from .synth import ObserverGains, SpectrumSpec
from .setpoint import SetpointProblem
from .delay import DelaySpec

GAINS_FORMAT = "distobs-gains-v1"


def _read_json(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ValidationError(f"{path}: expected a JSON object at top level")
    return doc


def _require(doc: dict, key: str, where: str):
    if key not in doc:
        raise ValidationError(f"{where}: missing key '{key}'")
    return doc[key]


def _system_from_doc(doc: dict, where: str) -> tuple[MultiChannelSystem, NeighborGraph]:
    n = int(_require(doc, "n", where))
    m = int(_require(doc, "m", where))
    A = as_matrix(_require(doc, "A", where), rows=n, cols=n, name=f"{where}: A")
    B_raw = _require(doc, "B", where)
    C_raw = _require(doc, "C", where)
    nbr_raw = _require(doc, "neighbors", where)
    for key, val in (("B", B_raw), ("C", C_raw), ("neighbors", nbr_raw)):
        if not isinstance(val, list) or len(val) != m:
            raise ValidationError(f"{where}: '{key}' must list {m} channel entries")
    B = tuple(as_matrix(Bi, rows=n, name=f"{where}: B[{i}]")
              for i, Bi in enumerate(B_raw))
    C = tuple(as_matrix(Ci, cols=n, name=f"{where}: C[{i}]")
              for i, Ci in enumerate(C_raw))
    sys = MultiChannelSystem(A=A, B=B, C=C)
    graph = NeighborGraph.from_lists(nbr_raw)
    return sys, graph


def load_system(path) -> tuple[MultiChannelSystem, NeighborGraph]:
    """Read a system file: {"n", "m", "A", "B", "C", "neighbors"}."""
    return _system_from_doc(_read_json(path), str(path))


def parse_spectrum(text: str) -> SpectrumSpec:
    """Comma-separated eigenvalues; complex entries written like -1+2i."""
    tokens = [t.strip() for t in text.split(",") if t.strip()]
    if not tokens:
        raise ValidationError("spectrum string is empty")
    vals = []
    for tok in tokens:
        try:
            vals.append(complex(tok.replace("i", "j").replace("I", "j")))
        except ValueError:
            raise ValidationError(f"cannot parse eigenvalue '{tok}'") from None
    return SpectrumSpec(tuple(vals))


def parse_vector(text: str, name: str = "vector") -> np.ndarray:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise ValidationError(f"cannot parse {name} '{text}'") from None
    if not vals:
        raise ValidationError(f"{name} string is empty")
    return np.array(vals)


def zero_feedback(sys: MultiChannelSystem) -> tuple[np.ndarray, ...]:
    return tuple(np.zeros((mi, sys.n)) for mi in sys.input_widths)


def load_feedback(path, sys: MultiChannelSystem) -> tuple[np.ndarray, ...]:
    """Feedback file: {"F": [per-channel matrices]} shaped m_i x n."""
    doc = _read_json(path)
    F_raw = _require(doc, "F", str(path))
    if not isinstance(F_raw, list) or len(F_raw) != sys.m:
        raise ValidationError(f"{path}: 'F' must list {sys.m} channel gains")
    return tuple(as_matrix(Fi, rows=sys.input_widths[i], cols=sys.n,
                           name=f"{path}: F[{i}]")
                 for i, Fi in enumerate(F_raw))


def save_gains(path, sys: MultiChannelSystem, gains: ObserverGains, F) -> None:
    doc = {
        "format": GAINS_FORMAT,
        "n": sys.n,
        "m": sys.m,
        "q": gains.q,
        "mode": gains.mode,
        "order": gains.order,
        "q_neighbors": list(gains.q_neighbors),
        "y_widths": list(gains.y_widths),
        "K": [Ki.tolist() for Ki in gains.K],
        "H": [{str(j): blk.tolist() for j, blk in sorted(Hi.items())}
              for Hi in gains.H],
        "Abar": gains.Abar.tolist(),
        "Bbar": gains.Bbar.tolist(),
        "Cbar": gains.Cbar.tolist(),
        "Dbar": gains.Dbar.tolist(),
        "F": [np.asarray(Fi, dtype=float).tolist() for Fi in F],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_gains(path) -> tuple[ObserverGains, tuple[np.ndarray, ...]]:
    doc = _read_json(path)
    where = str(path)
    if doc.get("format") != GAINS_FORMAT:
        raise ValidationError(f"{where}: not a gains file (format tag missing)")
    K = tuple(as_matrix(Ki, name=f"{where}: K[{i}]")
              for i, Ki in enumerate(_require(doc, "K", where)))
    H = tuple({int(j): as_matrix(blk, name=f"{where}: H[{i}][{j}]")
               for j, blk in Hi.items()}
              for i, Hi in enumerate(_require(doc, "H", where)))
    gains = ObserverGains(
        q=int(_require(doc, "q", where)),
        mode=str(_require(doc, "mode", where)),
        K=K,
        H=H,
        Abar=as_matrix(_require(doc, "Abar", where), name=f"{where}: Abar"),
        Bbar=as_matrix(_require(doc, "Bbar", where), name=f"{where}: Bbar"),
        Cbar=as_matrix(_require(doc, "Cbar", where), name=f"{where}: Cbar"),
        Dbar=as_matrix(_require(doc, "Dbar", where), name=f"{where}: Dbar"),
        q_neighbors=tuple(int(j) for j in _require(doc, "q_neighbors", where)),
        y_widths=tuple(int(v) for v in _require(doc, "y_widths", where)),
    )
    F = tuple(as_matrix(Fi, name=f"{where}: F[{i}]")
              for i, Fi in enumerate(_require(doc, "F", where)))
    return gains, F


def save_json(path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_setpoint_scenario(path) -> tuple[SetpointProblem, float]:
    """Scenario file: a system file plus "r" (reference) and optional "rate"."""
    doc = _read_json(path)
    where = str(path)
    sys, graph = _system_from_doc(doc, where)
    r = as_vector(_require(doc, "r", where), name=f"{where}: r")
    rate = float(doc.get("rate", 1.0))
    return SetpointProblem(sys=sys, graph=graph, r=r), rate


def load_delay_scenario(path=None) -> tuple[NeighborGraph, DelaySpec]:
    """Delay scenario: {"m", "neighbors", "delays": [[from, to, steps], ...]}.

    With no path, loads the packaged three-channel scenario.
    """
    if path is None:
        text = resources.files("distobs").joinpath("data/delay_demo.json").read_text()
        doc = json.loads(text)
        where = "bundled delay scenario"
    else:
        doc = _read_json(path)
        where = str(path)
    graph = NeighborGraph.from_lists(_require(doc, "neighbors", where))
    delays = {}
    for entry in _require(doc, "delays", where):
        if not (isinstance(entry, list) and len(entry) == 3):
            raise ValidationError(f"{where}: delay entries are [from, to, steps]")
        j, i, d = entry
        delays[(int(j), int(i))] = int(d)
    dspec = DelaySpec(delays)
    dspec.check_against(graph)
    return graph, dspec
