"""File formats: CSV tables, key = value config/manifest files, raw FIM dump.

Element, gear, measurement and antenna numbers are 1-based in every file.
Floats are written with 17 significant digits so a round trip is exact.
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .model import ChannelSet, MeasurementSet, PhaseTable
from .schedule import GearSchedule


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".17g")
    return str(x)


def write_rows(path, fieldnames, rows):
    """Write dict rows to CSV with a fixed column order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(fieldnames)
        for row in rows:
            w.writerow([fmt(row[k]) for k in fieldnames])


def read_rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def write_phase_table(path, table: PhaseTable):
    rows = (
        {"element": m + 1, "gear": l + 1, "phase_rad": table.phases[m, l]}
        for m in range(table.m_ris) for l in range(table.l_gears)
    )
    write_rows(path, ["element", "gear", "phase_rad"], rows)


def read_phase_table(path) -> PhaseTable:
    rows = read_rows(path)
    m_ris = max(int(r["element"]) for r in rows)
    L = max(int(r["gear"]) for r in rows)
    if len(rows) != m_ris * L:
        raise ValueError(f"{path}: expected {m_ris * L} rows, found {len(rows)}")
    p = np.full((m_ris, L), np.nan)
    for r in rows:
        p[int(r["element"]) - 1, int(r["gear"]) - 1] = float(r["phase_rad"])
    if np.isnan(p).any():
        raise ValueError(f"{path}: missing (element, gear) entries")
    return PhaseTable(p)


def write_schedule(path, sched: GearSchedule):
    rows = (
        {"q": q + 1, "element": m + 1, "gear": int(sched.gears[q, m]) + 1}
        for q in range(sched.q_total) for m in range(sched.m_ris)
    )
    write_rows(path, ["q", "element", "gear"], rows)


def read_schedule(path, l_gears: int) -> GearSchedule:
    rows = read_rows(path)
    n_q = max(int(r["q"]) for r in rows)
    m_ris = max(int(r["element"]) for r in rows)
    g = np.zeros((n_q, m_ris), dtype=np.int64)
    for r in rows:
        g[int(r["q"]) - 1, int(r["element"]) - 1] = int(r["gear"]) - 1
    return GearSchedule(g, l_gears)


def write_measurements(path, meas: MeasurementSet):
    rows = (
        {"q": q + 1, "rx_antenna": i + 1, "re": meas.h_hat[q, i].real, "im": meas.h_hat[q, i].imag}
        for q in range(meas.q_total) for i in range(meas.m_r)
    )
    write_rows(path, ["q", "rx_antenna", "re", "im"], rows)


def read_measurements(path, sched: GearSchedule, noise_var_eff: float = float("nan")) -> MeasurementSet:
    rows = read_rows(path)
    n_q = max(int(r["q"]) for r in rows)
    m_r = max(int(r["rx_antenna"]) for r in rows)
    h = np.zeros((n_q, m_r), dtype=complex)
    for r in rows:
        h[int(r["q"]) - 1, int(r["rx_antenna"]) - 1] = complex(float(r["re"]), float(r["im"]))
    return MeasurementSet(h, sched, noise_var_eff)


def write_channels(path, ch: ChannelSet):
    rows = []
    for name, a in (("h_brbt", ch.h_br_bt[:, None]), ("h_rbt", ch.h_r_bt[:, None]), ("h_brr", ch.h_brr)):
        for i in range(a.shape[0]):
            for j in range(a.shape[1]):
                rows.append({"matrix": name, "row": i + 1, "col": j + 1, "re": a[i, j].real, "im": a[i, j].imag})
    write_rows(path, ["matrix", "row", "col", "re", "im"], rows)


def read_channels(path) -> ChannelSet:
    rows = read_rows(path)
    parts = {}
    for name in ("h_brbt", "h_rbt", "h_brr"):
        sel = [r for r in rows if r["matrix"] == name]
        if not sel:
            raise ValueError(f"{path}: no entries for {name}")
        n_row = max(int(r["row"]) for r in sel)
        n_col = max(int(r["col"]) for r in sel)
        a = np.zeros((n_row, n_col), dtype=complex)
        for r in sel:
            a[int(r["row"]) - 1, int(r["col"]) - 1] = complex(float(r["re"]), float(r["im"]))
        parts[name] = a
    return ChannelSet(parts["h_brbt"][:, 0], parts["h_rbt"][:, 0], parts["h_brr"])


def write_crb(path, crb_deg_table: np.ndarray):
    """Per-phase bound in degrees; input shape (M_ris, L-1) for gears 2..L."""
    m_ris, lm1 = crb_deg_table.shape
    rows = (
        {"element": m + 1, "gear": l + 2, "crb_deg": crb_deg_table[m, l]}
        for m in range(m_ris) for l in range(lm1)
    )
    write_rows(path, ["element", "gear", "crb_deg"], rows)


def write_history(path, history):
    write_rows(path, ["epoch", "c_ave"], ({"epoch": k + 1, "c_ave": c} for k, c in enumerate(history)))


def write_fim(path, fim: np.ndarray):
    """Raw dump: two little-endian int64 dims, then row-major little-endian float64."""
    fim = np.asarray(fim, dtype="<f8")
    with open(path, "wb") as f:
        f.write(struct.pack("<qq", *fim.shape))
        f.write(np.ascontiguousarray(fim).tobytes(order="C"))


def read_fim(path) -> np.ndarray:
    with open(path, "rb") as f:
        rows, cols = struct.unpack("<qq", f.read(16))
        data = np.frombuffer(f.read(), dtype="<f8")
    if data.size != rows * cols:
        raise ValueError(f"{path}: header says {rows}x{cols}, payload has {data.size} values")
    return data.reshape(rows, cols).astype(float)


def parse_keyvalue(text: str) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment. Values stay strings."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


def read_keyvalue(path) -> dict:
    return parse_keyvalue(Path(path).read_text())


def write_keyvalue(path, items: dict, header: str | None = None):
    lines = []
    if header:
        lines += [f"# {h}" for h in header.splitlines()]
    lines += [f"{k} = {fmt(v)}" for k, v in items.items()]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("\n".join(lines) + "\n")
