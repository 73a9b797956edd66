"""File formats: plant description files, response/trace/field CSVs, and
report JSON.

All numeric output uses 17-significant-digit scientific notation so runs
can be diffed across platforms and languages.
"""

import json
import os

import numpy as np

from .errors import ParseError, ValidationError
from .lti import FirTransferMatrix, Plant
from .locality import SystemGraph

FMT = "%.17g"

PLANT_MATRICES = ("A", "B1", "B2", "C1", "D11", "D12", "C2", "D21", "D22")


def write_plant(plant, path):
    """Structured-text plant file: named dense matrices plus the graph."""
    lines = []
    for name in PLANT_MATRICES:
        M = getattr(plant, name)
        lines.append(f"matrix {name} {M.shape[0]} {M.shape[1]}")
        for row in M:
            lines.append(" ".join(FMT % v for v in row))
    g = plant.graph
    lines.append(f"graph nodes {g.n_nodes}")
    for dst in range(g.n_nodes):
        for src in np.nonzero(g.adj[dst])[0]:
            lines.append(f"graph edge {src} {dst}")
    for node in range(g.n_nodes):
        if len(g.node_states[node]):
            lines.append(f"node {node} states " + " ".join(map(str, g.node_states[node])))
        if len(g.node_inputs[node]):
            lines.append(f"node {node} inputs " + " ".join(map(str, g.node_inputs[node])))
        if len(g.node_outputs[node]):
            lines.append(f"node {node} outputs " + " ".join(map(str, g.node_outputs[node])))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_plant(path):
    """Parse a plant file; missing matrices fall back to documented
    defaults (B1 = I, C2 = I, [C1; D12] the unit state/input stack, zero
    feedthroughs)."""
    matrices = {}
    n_nodes = None
    edges = []
    node_states, node_inputs, node_outputs = {}, {}, {}
    with open(path) as fh:
        lines = fh.readlines()
    i = 0

    def err(msg, ln):
        return ParseError(f"{path}:{ln + 1}: {msg}")

    while i < len(lines):
        raw = lines[i].strip()
        i += 1
        if not raw or raw.startswith("#"):
            continue
        parts = raw.split()
        if parts[0] == "matrix":
            if len(parts) != 4:
                raise err("matrix header needs: matrix NAME ROWS COLS", i - 1)
            name = parts[1]
            if name not in PLANT_MATRICES:
                raise err(f"unknown matrix name {name!r}", i - 1)
            rows, cols = int(parts[2]), int(parts[3])
            data = np.zeros((rows, cols))
            for r in range(rows):
                if i >= len(lines):
                    raise err(f"matrix {name}: missing row {r}", i - 1)
                vals = lines[i].split()
                i += 1
                if len(vals) != cols:
                    raise err(f"matrix {name} row {r}: expected {cols} values", i - 1)
                try:
                    data[r] = [float(v) for v in vals]
                except ValueError as exc:
                    raise err(f"matrix {name} row {r}: {exc}", i - 1)
            matrices[name] = data
        elif parts[0] == "graph" and len(parts) >= 2 and parts[1] == "nodes":
            n_nodes = int(parts[2])
        elif parts[0] == "graph" and len(parts) >= 2 and parts[1] == "edge":
            edges.append((int(parts[2]), int(parts[3])))
        elif parts[0] == "node":
            node = int(parts[1])
            target = {"states": node_states, "inputs": node_inputs,
                      "outputs": node_outputs}.get(parts[2])
            if target is None:
                raise err(f"unknown node list {parts[2]!r}", i - 1)
            target[node] = [int(v) for v in parts[3:]]
        else:
            raise err(f"unrecognized directive {parts[0]!r}", i - 1)

    if "A" not in matrices or "B2" not in matrices:
        raise ValidationError("plant file must define matrices A and B2")
    A, B2 = matrices["A"], matrices["B2"]
    n, nu = A.shape[0], B2.shape[1]
    B1 = matrices.get("B1", np.eye(n))
    C2 = matrices.get("C2", np.eye(n))
    ny, nw = C2.shape[0], B1.shape[1]
    C1 = matrices.get("C1")
    D12 = matrices.get("D12")
    if C1 is None and D12 is None:
        C1 = np.vstack([np.eye(n), np.zeros((nu, n))])
        D12 = np.vstack([np.zeros((n, nu)), np.eye(nu)])
    nz = C1.shape[0]
    D11 = matrices.get("D11", np.zeros((nz, nw)))
    D21 = matrices.get("D21", np.zeros((ny, nw)))
    D22 = matrices.get("D22", np.zeros((ny, nu)))
    graph = None
    if n_nodes is not None:
        graph = SystemGraph(
            n_nodes, edges,
            [node_states.get(k, []) for k in range(n_nodes)],
            [node_inputs.get(k, []) for k in range(n_nodes)],
            [node_outputs.get(k, []) for k in range(n_nodes)])
    return Plant(A, B1, B2, C1, D11, D12, C2, D21, D22, graph)


# ---------------------------------------------------------------------------
# Response CSVs


def write_fir_csv(G, path, name):
    """Sparse triplet CSV (k, row, col, value) with a dimension header."""
    with open(path, "w") as fh:
        fh.write(f"# block={name} rows={G.shape[0]} cols={G.shape[1]} "
                 f"T={G.T} strictly_proper={int(G.strictly_proper)}\n")
        fh.write("k,row,col,value\n")
        for k, comp in enumerate(G.components):
            for r, c in zip(*np.nonzero(comp)):
                fh.write(f"{k},{r},{c},{FMT % comp[r, c]}\n")


def read_fir_csv(path):
    with open(path) as fh:
        header = fh.readline().strip()
        if not header.startswith("#"):
            raise ParseError(f"{path}: missing dimension header")
        meta = dict(tok.split("=") for tok in header[1:].split() if "=" in tok)
        rows, cols = int(meta["rows"]), int(meta["cols"])
        T = int(meta["T"])
        sp = bool(int(meta.get("strictly_proper", 0)))
        comps = [np.zeros((rows, cols)) for _ in range(T + 1)]
        colhdr = fh.readline()
        if not colhdr.startswith("k,"):
            raise ParseError(f"{path}: missing column header")
        for ln, line in enumerate(fh):
            if not line.strip():
                continue
            k, r, c, v = line.split(",")
            comps[int(k)][int(r), int(c)] = float(v)
    return FirTransferMatrix(comps, sp)


def write_sf_response(resp, outdir):
    os.makedirs(outdir, exist_ok=True)
    write_fir_csv(resp.phi_x, os.path.join(outdir, "phi_x.csv"), "phi_x")
    write_fir_csv(resp.phi_u, os.path.join(outdir, "phi_u.csv"), "phi_u")


def read_sf_response(outdir):
    from .sf import SfResponse
    return SfResponse(read_fir_csv(os.path.join(outdir, "phi_x.csv")),
                      read_fir_csv(os.path.join(outdir, "phi_u.csv")))


OF_BLOCKS = ("phi_xx", "phi_ux", "phi_xy", "phi_uy")


def write_of_response(resp, outdir):
    os.makedirs(outdir, exist_ok=True)
    for name in OF_BLOCKS:
        write_fir_csv(getattr(resp, name), os.path.join(outdir, name + ".csv"), name)


def read_of_response(outdir):
    from .of import OfResponse
    return OfResponse(*(read_fir_csv(os.path.join(outdir, name + ".csv"))
                        for name in OF_BLOCKS))


# ---------------------------------------------------------------------------
# Traces, fields, sweeps, reports


def write_trace_csv(trace, path):
    """Long-form trace: t, signal name, component index, value."""
    with open(path, "w") as fh:
        fh.write("t,signal,index,value\n")
        for name in ("x", "u", "y"):
            data = getattr(trace, name)
            for t in range(data.shape[0]):
                for i in range(data.shape[1]):
                    fh.write(f"{t},{name},{i},{FMT % data[t, i]}\n")


def write_field_csv(field, path):
    """Node-by-time matrix of log10 magnitudes."""
    with open(path, "w") as fh:
        fh.write("node," + ",".join(f"t{t}" for t in range(field.shape[1])) + "\n")
        for node in range(field.shape[0]):
            fh.write(str(node) + "," + ",".join(FMT % v for v in field[node]) + "\n")


def read_field_csv(path):
    with open(path) as fh:
        fh.readline()
        rows = [[float(v) for v in line.split(",")[1:]] for line in fh if line.strip()]
    return np.array(rows)


def write_sweep_csv(points, path, normalizers=(1.0, 1.0)):
    """Trade-off sweep table (gamma, h2_normalized, l1_normalized, iters,
    feasible); h2 points are norms normalized by the first normalizer."""
    h2_ref, l1_ref = normalizers
    with open(path, "w") as fh:
        fh.write("gamma,h2_normalized,l1_normalized,iters,feasible\n")
        for p in points:
            h2 = np.sqrt(p["h2_sq"]) / h2_ref if p["feasible"] else float("nan")
            l1 = p["l1"] / l1_ref if p["feasible"] else float("nan")
            fh.write(f"{FMT % p['gamma']},{FMT % h2},{FMT % l1},"
                     f"{p['iters']},{int(p['feasible'])}\n")


def write_report(report, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj)}")
