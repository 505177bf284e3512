"""Scope: list, export and plot signals from stored shots.

    scope list   --store DIR --shot N [--pattern GLOB]
    scope export --store DIR --shot N --path P [--path P ...]
                 [--format csv|svg] --out DIR
    scope watch  --store DIR --broker HOST:PORT --path P [--path P ...]
                 [--format csv|svg] --out DIR [--max-shots K]

Between one and sixty-four signals go into an export.  CSV writes one
file per signal (header ``t_us,<path>``) with shortest round-trip float
formatting, so re-parsing reproduces the stored samples bit for bit.
SVG writes a single panel grid, ceil(sqrt(k)) columns of 240x160 px.

Watch subscribes to ``SHOT_DONE`` and re-exports the requested paths for
every completed shot, skipping paths a shot does not carry.  Interrupt it
with Ctrl-C; that is a clean exit.

Exit codes: 0 ok, 1 usage, 2 not found, 3 I/O trouble.
"""

import argparse
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

from pulselab import eventbus
from pulselab.shottree import (
    NoData,
    NoSuchNode,
    NoSuchShot,
    ShotStore,
    ShotTreeError,
    normalize_path,
    path_slug,
)

MAX_PANELS = 64


@dataclass(frozen=True)
class Panel:
    """One X-Y plot slot: a signal path, optional label and y-range."""

    path: str
    label: Optional[str] = None
    y_range: Optional[Tuple[float, float]] = None


def as_panel(item: Union[str, Panel]) -> Panel:
    return item if isinstance(item, Panel) else Panel(item)

PANEL_W = 240
PANEL_H = 160
PAD_LEFT = 42
PAD_BOTTOM = 26
PAD_TOP = 20
PAD_RIGHT = 8


class ScopeError(Exception):
    pass


class TooManyPanels(ScopeError):
    pass


class UsageError(ScopeError):
    pass


def _check_panel_count(n: int):
    if not 1 <= n <= MAX_PANELS:
        raise TooManyPanels(f"need 1..{MAX_PANELS} signals, got {n}")


def format_float(v: float) -> str:
    """Shortest decimal that parses back to the same float64."""
    return repr(float(v))


def export_csv(tree, path: str, out_file: Path):
    sig = tree.get_signal(path)
    canon = normalize_path(path)
    lines = [f"t_us,{canon}"]
    for t, v in zip(sig.times_us(), sig.samples):
        lines.append(f"{int(t)},{format_float(v)}")
    out_file.write_text("\n".join(lines) + "\n")


def parse_csv(path: Path):
    """Inverse of export_csv: (times list, values list)."""
    lines = path.read_text().strip().split("\n")
    times, values = [], []
    for line in lines[1:]:
        t, _, v = line.partition(",")
        times.append(int(t))
        values.append(float(v))
    return times, values


def _svg_panel(x0, y0, title, times, values, y_range=None):
    lo = min(values) if y_range is None else y_range[0]
    hi = max(values) if y_range is None else y_range[1]
    if hi <= lo:
        lo, hi = lo - 1.0, hi + 1.0
    t_lo, t_hi = times[0], times[-1]
    if t_hi <= t_lo:
        t_hi = t_lo + 1
    inner_w = PANEL_W - PAD_LEFT - PAD_RIGHT
    inner_h = PANEL_H - PAD_TOP - PAD_BOTTOM
    pts = []
    for t, v in zip(times, values):
        px = x0 + PAD_LEFT + inner_w * (t - t_lo) / (t_hi - t_lo)
        py = y0 + PAD_TOP + inner_h * (1.0 - (v - lo) / (hi - lo))
        pts.append(f"{px:.2f},{py:.2f}")
    frame_x = x0 + PAD_LEFT
    frame_y = y0 + PAD_TOP
    parts = [
        f'<rect x="{frame_x}" y="{frame_y}" width="{inner_w}" '
        f'height="{inner_h}" fill="none" stroke="#888"/>',
        f'<text x="{x0 + PANEL_W / 2:.0f}" y="{y0 + 14}" font-size="10" '
        f'text-anchor="middle" font-family="monospace">{title}</text>',
        f'<text x="{frame_x - 4}" y="{frame_y + 8}" font-size="8" '
        f'text-anchor="end" font-family="monospace">{lo:.4g}/{hi:.4g}</text>',
        f'<text x="{frame_x}" y="{y0 + PANEL_H - 8}" font-size="8" '
        f'font-family="monospace">{t_lo}..{t_hi} us</text>',
        f'<polyline points="{" ".join(pts)}" fill="none" stroke="#06c" '
        f'stroke-width="1"/>',
    ]
    return "\n".join(parts)


def export_svg(tree, panels, out_file: Path):
    """One grid image, ceil(sqrt(k)) columns, fixed-size panels.

    Accepts bare paths or Panel objects (label and y-range honored).
    """
    panels = [as_panel(p) for p in panels]
    _check_panel_count(len(panels))
    cols = math.ceil(math.sqrt(len(panels)))
    rows = math.ceil(len(panels) / cols)
    width, height = cols * PANEL_W, rows * PANEL_H
    body = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
            f'height="{height}" viewBox="0 0 {width} {height}">',
            f'<rect width="{width}" height="{height}" fill="white"/>']
    for i, panel in enumerate(panels):
        sig = tree.get_signal(panel.path)
        x0 = (i % cols) * PANEL_W
        y0 = (i // cols) * PANEL_H
        body.append(_svg_panel(x0, y0,
                               panel.label or normalize_path(panel.path),
                               [int(t) for t in sig.times_us()],
                               [float(v) for v in sig.samples],
                               y_range=panel.y_range))
    body.append("</svg>")
    out_file.write_text("\n".join(body) + "\n")


def export_shot(store: ShotStore, shot: int, paths, fmt: str, out_dir,
                *, skip_missing: bool = False) -> list:
    """Export the given signals (paths or Panels) of one shot; returns the
    files written."""
    panels = [as_panel(p) for p in paths]
    _check_panel_count(len(panels))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tree = store.open_shot(shot)
    present = []
    for panel in panels:
        try:
            tree.get_signal(panel.path)
            present.append(panel)
        except (NoSuchNode, NoData) as e:
            if not skip_missing:
                raise
            print(f"scope: shot {shot}: skipping {panel.path}: {e}",
                  file=sys.stderr)
    written = []
    if fmt == "csv":
        for panel in present:
            slug = path_slug(normalize_path(panel.path))
            out = out_dir / f"{shot:06d}-{slug}.csv"
            export_csv(tree, panel.path, out)
            written.append(out)
    elif fmt == "svg":
        if present:
            out = out_dir / f"{shot:06d}.svg"
            export_svg(tree, present, out)
            written.append(out)
    else:
        raise UsageError(f"unknown format {fmt!r}")
    return written


def list_signals(store: ShotStore, shot: int, pattern: str = "**") -> list:
    tree = store.open_shot(shot)
    return tree.walk(pattern)


def watch(store: ShotStore, broker_address, paths, fmt: str, out_dir,
          *, max_shots=None, timeout_us=None) -> int:
    """Re-export after every completed shot; returns the number exported."""
    _check_panel_count(len(paths))
    conn = eventbus.connect(broker_address)
    exported = 0
    try:
        conn.subscribe(eventbus.EVENT_SHOT_DONE)
        while max_shots is None or exported < max_shots:
            try:
                _, payload = conn.next_event(timeout_us=timeout_us)
            except eventbus.Timeout:
                break
            shot = int(payload.decode())
            files = export_shot(store, shot, paths, fmt, out_dir,
                                skip_missing=True)
            exported += 1
            print(f"scope: shot {shot}: wrote {len(files)} file(s)",
                  file=sys.stderr)
    finally:
        conn.close()
    return exported


# --------------------------------------------------------------------------
# Command line
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="scope", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_list = sub.add_parser("list", help="print node paths of a shot")
    p_list.add_argument("--store", required=True)
    p_list.add_argument("--shot", type=int, required=True)
    p_list.add_argument("--pattern", default="**")

    p_export = sub.add_parser("export", help="write signals to csv or svg")
    p_export.add_argument("--store", required=True)
    p_export.add_argument("--shot", type=int, required=True)
    p_export.add_argument("--path", action="append", required=True)
    p_export.add_argument("--format", choices=("csv", "svg"), default="csv")
    p_export.add_argument("--out", required=True)

    p_watch = sub.add_parser("watch", help="export every new shot")
    p_watch.add_argument("--store", required=True)
    p_watch.add_argument("--broker", required=True, help="HOST:PORT")
    p_watch.add_argument("--path", action="append", required=True)
    p_watch.add_argument("--format", choices=("csv", "svg"), default="csv")
    p_watch.add_argument("--out", required=True)
    p_watch.add_argument("--max-shots", type=int, default=None)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "list":
            store = ShotStore(args.store)
            for path in list_signals(store, args.shot, args.pattern):
                print(path)
        elif args.command == "export":
            store = ShotStore(args.store)
            for f in export_shot(store, args.shot, args.path, args.format,
                                 args.out):
                print(f)
        elif args.command == "watch":
            store = ShotStore(args.store)
            watch(store, args.broker, args.path, args.format, args.out,
                  max_shots=args.max_shots)
    except (UsageError, TooManyPanels) as e:
        print(f"scope: {e}", file=sys.stderr)
        return 1
    except (NoSuchShot, NoSuchNode, NoData) as e:
        print(f"scope: {e}", file=sys.stderr)
        return 2
    except (OSError, ShotTreeError, eventbus.BusError) as e:
        print(f"scope: {e}", file=sys.stderr)
        return 3
    except KeyboardInterrupt:
        return 0
    return 0


if __name__ == "__main__":
    sys.exit(main())
