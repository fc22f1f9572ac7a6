"""Text formats: scenes, set-cover instances, episode records and bench reports.

Scene and instance files are line oriented ``key value...`` text.  Floats are
written with ``repr`` so a save/load round trip is bit exact.
"""
from __future__ import annotations

import csv
import io as _io
import json
from pathlib import Path
from typing import Iterator

import numpy as np

from .raster import GridMeta
from .scene import Garment, GarmentShape, Scene
from .setcover import MilpInstance, build_milp

SCENE_HEADER = "declutter-scene 1"


class ParseError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.lineno = lineno


def _lines(text: str) -> Iterator[tuple[int, list[str]]]:
    for no, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if line:
            yield no, line.split()


def _floats(tokens, path, no) -> list[float]:
    try:
        return [float(t) for t in tokens]
    except ValueError as e:
        raise ParseError(path, no, str(e)) from None


def _int(tok, path, no) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ParseError(path, no, f"expected an integer, got {tok!r}") from None


# ---------------------------------------------------------------------------
# scenes


def dumps_scene(scene: Scene) -> str:
    m = scene.meta
    out = [SCENE_HEADER,
           f"grid {m.width} {m.height} {m.cell_size!r} {m.origin[0]!r} {m.origin[1]!r}",
           f"basket {scene.basket[0]!r} {scene.basket[1]!r}",
           f"rng_seed {scene.rng_seed}"]
    for g in scene.stack:
        out.append(f"garment {g.id} x={g.x!r} y={g.y!r} rotation={g.rotation!r} "
                   f"scale={g.scale!r} thickness={g.thickness!r}")
        out.append("polygon " + " ".join(f"{x!r} {y!r}" for x, y in g.shape.polygon))
        for cx, cy, r in g.shape.discs:
            out.append(f"disc {cx!r} {cy!r} {r!r}")
    return "\n".join(out) + "\n"


def loads_scene(text: str, path="<scene>") -> Scene:
    meta = basket = None
    seed = 0
    garments: list[dict] = []
    lines = list(_lines(text))
    if not lines or " ".join(lines[0][1]) != SCENE_HEADER:
        raise ParseError(path, lines[0][0] if lines else 1, f"expected header {SCENE_HEADER!r}")
    for no, tok in lines[1:]:
        key, args = tok[0], tok[1:]
        if key == "grid":
            if len(args) != 5:
                raise ParseError(path, no, "grid needs width height cell_size ox oy")
            w, h = _int(args[0], path, no), _int(args[1], path, no)
            cs, ox, oy = _floats(args[2:], path, no)
            try:
                meta = GridMeta(w, h, cs, (ox, oy))
            except ValueError as e:
                raise ParseError(path, no, str(e)) from None
        elif key == "basket":
            vals = _floats(args, path, no)
            if len(vals) != 2:
                raise ParseError(path, no, "basket needs x y")
            basket = (vals[0], vals[1])
        elif key == "rng_seed":
            seed = _int(args[0], path, no) if args else 0
        elif key == "garment":
            if not args:
                raise ParseError(path, no, "garment needs an id")
            fields = {"id": _int(args[0], path, no), "line": no, "polygon": None, "discs": []}
            for kv in args[1:]:
                k, sep, v = kv.partition("=")
                if not sep or k not in ("x", "y", "rotation", "scale", "thickness"):
                    raise ParseError(path, no, f"bad garment field {kv!r}")
                fields[k] = _floats([v], path, no)[0]
            garments.append(fields)
        elif key in ("polygon", "disc"):
            if not garments:
                raise ParseError(path, no, f"{key} before any garment")
            vals = _floats(args, path, no)
            if key == "polygon":
                if len(vals) < 6 or len(vals) % 2:
                    raise ParseError(path, no, "polygon needs at least three x y pairs")
                garments[-1]["polygon"] = tuple(zip(vals[0::2], vals[1::2]))
            else:
                if len(vals) != 3:
                    raise ParseError(path, no, "disc needs cx cy r")
                garments[-1]["discs"].append(tuple(vals))
        else:
            raise ParseError(path, no, f"unknown key {key!r}")
    if meta is None:
        raise ParseError(path, lines[-1][0], "missing grid line")
    stack = []
    for f in garments:
        if f["polygon"] is None:
            raise ParseError(path, f["line"], f"garment {f['id']} has no polygon")
        missing = {"x", "y", "thickness"} - set(f)
        if missing:
            raise ParseError(path, f["line"], f"garment {f['id']} missing {sorted(missing)}")
        try:
            stack.append(Garment(f["id"], GarmentShape(f["polygon"], tuple(f["discs"])),
                                 f["x"], f["y"], f.get("rotation", 0.0), f["thickness"],
                                 f.get("scale", 1.0)))
        except ValueError as e:
            raise ParseError(path, f["line"], str(e)) from None
    try:
        return Scene(meta, tuple(stack), basket or (-0.25, 0.3), seed)
    except ValueError as e:
        raise ParseError(path, lines[0][0], str(e)) from None


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(dumps_scene(scene))


def load_scene(path) -> Scene:
    return loads_scene(Path(path).read_text(), path)


# ---------------------------------------------------------------------------
# set-cover instances


def dumps_instance(p: np.ndarray, q, conflicts) -> str:
    p = np.asarray(p, dtype=float)
    n, m = p.shape
    qs = np.broadcast_to(np.asarray(q, dtype=float), (m,))
    out = [f"n {n}", f"m {m}", "q " + " ".join(repr(float(v)) for v in qs), "p"]
    out += [" ".join(repr(float(v)) for v in row) for row in p]
    out.append("conflicts")
    out += [f"{i} {k}" for i, k in sorted(conflicts)]
    return "\n".join(out) + "\n"


def loads_instance(text: str, path="<instance>"):
    """Parse an instance file; returns ``(p, q, conflicts)``."""
    n = m = None
    q = None
    rows: list[list[float]] = []
    pairs: list[tuple[int, int]] = []
    section = None
    last = 1
    for no, tok in _lines(text):
        last = no
        head = tok[0]
        if head in ("n", "m") and section is None:
            val = _int(tok[1], path, no) if len(tok) == 2 else None
            if val is None or val < 0:
                raise ParseError(path, no, f"{head} needs one non-negative integer")
            n, m = (val, m) if head == "n" else (n, val)
        elif head == "q" and section is None:
            q = _floats(tok[1:], path, no)
            if not q:
                raise ParseError(path, no, "q needs a value")
        elif head == "p" and len(tok) == 1:
            section = "p"
        elif head == "conflicts" and len(tok) == 1:
            section = "conflicts"
        elif section == "p":
            vals = _floats(tok, path, no)
            if m is not None and len(vals) != m:
                raise ParseError(path, no, f"expected {m} probabilities, got {len(vals)}")
            if any(v < 0 or v >= 1 for v in vals):
                raise ParseError(path, no, "probabilities must lie in [0, 1)")
            rows.append(vals)
        elif section == "conflicts":
            if len(tok) != 2:
                raise ParseError(path, no, "conflict line needs two indices")
            i, k = _int(tok[0], path, no), _int(tok[1], path, no)
            if n is not None and not (0 <= i < n and 0 <= k < n and i != k):
                raise ParseError(path, no, f"bad conflict pair {i} {k}")
            pairs.append((i, k))
        else:
            raise ParseError(path, no, f"unexpected line starting with {head!r}")
    if n is None or m is None or q is None:
        raise ParseError(path, last, "instance needs n, m and q")
    if len(rows) != n:
        raise ParseError(path, last, f"expected {n} probability rows, got {len(rows)}")
    if len(q) not in (1, m):
        raise ParseError(path, last, f"q needs 1 or {m} values")
    if any(not 0 < v < 1 for v in q):
        raise ParseError(path, last, "q must lie in (0, 1)")
    p = np.array(rows, dtype=float).reshape(n, m)
    return p, (q[0] if len(q) == 1 else np.array(q)), pairs


def load_instance(path):
    p, q, pairs = loads_instance(Path(path).read_text(), path)
    return p, q, pairs


def instance_from_file(path) -> tuple[np.ndarray, MilpInstance]:
    p, q, pairs = load_instance(path)
    return p, build_milp(p, q, pairs)


# ---------------------------------------------------------------------------
# records and reports

EPISODE_FIELDS = ["seed", "policy", "transports", "moves", "removed", "opt", "completed", "steps"]


def save_record(record, path) -> None:
    Path(path).write_text(json.dumps(record.to_dict(), indent=1) + "\n")


def episodes_csv(records) -> str:
    buf = _io.StringIO()
    w = csv.DictWriter(buf, EPISODE_FIELDS, lineterminator="\n")
    w.writeheader()
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def summary_csv(report) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["policy", "mean_opt", "ci95", "episodes", "mean_transports", "mean_moves",
                "completion_rate"])
    for s in report.summaries:
        w.writerow([s.policy, f"{s.mean_opt:.6f}", f"{s.ci95:.6f}", s.episodes,
                    f"{s.mean_transports:.4f}", f"{s.mean_moves:.4f}", f"{s.completion_rate:.4f}"])
    return buf.getvalue()


def report_table(report) -> str:
    lines = [f"config {report.config_hash}  seed base {report.seed_base}", "",
             f"{'policy':<15} {'OpT':>7} {'±95%':>7} {'N':>5} {'transports':>11} "
             f"{'moves':>7} {'complete':>9}"]
    for s in report.summaries:
        lines.append(f"{s.policy:<15} {s.mean_opt:7.3f} {s.ci95:7.3f} {s.episodes:5d} "
                     f"{s.mean_transports:11.2f} {s.mean_moves:7.2f} {s.completion_rate:9.3f}")
    incomplete = [r for r in report.records if not r.completed]
    if incomplete:
        lines += ["", f"incomplete episodes: {len(incomplete)}"]
        lines += [f"  {r.policy} seed={r.seed}" for r in incomplete]
    return "\n".join(lines) + "\n"


def save_report(report, out_dir, figures: bool = True) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"table": out / "report.txt", "episodes": out / "episodes.csv",
             "summary": out / "summary.csv"}
    paths["table"].write_text(report_table(report))
    paths["episodes"].write_text(episodes_csv(report.records))
    paths["summary"].write_text(summary_csv(report))
    if figures and report.summaries:
        from .plotting import plot_opt
        paths["figure"] = out / "opt.png"
        plot_opt(report, paths["figure"])
    return paths


SCALING_FIELDS = ["n_garments", "n_segments_observed", "candidate_gen_time", "milp_solve_time",
                  "plan_size", "n_candidates", "status"]


def scaling_csv(rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SCALING_FIELDS)
    for r in rows:
        w.writerow([r.n_garments, r.n_segments_observed, f"{r.candidate_gen_time:.6f}",
                    f"{r.milp_solve_time:.6f}", r.plan_size, r.n_candidates, r.status])
    return buf.getvalue()
