#!/usr/bin/env python3
"""Cut the bundled level corpus out of the VGLC Super Mario Bros. text shipped
inside the mario-gpt wheel (MIT licensed, data from the Video Game Level Corpus).

The wheel stores every level concatenated into one 14-row string with the A*
agent path drawn as 'x'. This script removes the path overlay, cuts fifteen
202-column windows at evenly spaced anchors (snapped so no pipe or cannon is
split at a window edge), and pads two sky rows on top so each level is 16 rows
tall.

    pip download mario-gpt==0.1.3 --no-deps -d /tmp/wheel
    python3 scripts/extract_vglc_levels.py /tmp/wheel/mario_gpt-0.1.3-py3-none-any.whl data/levels
"""
import pathlib
import re
import sys
import zipfile

WIDTH = 202
COUNT = 15
SNAP = 40
SPLIT_CHARS = set("<>[]Bb")


def load_rows(wheel):
    src = zipfile.ZipFile(wheel).read("mario_gpt/level.py").decode()
    block = re.search(r'FULL_LEVEL_STR_WITH_PATHS\s*=\s*"""(.*?)"""', src, re.S).group(1)
    return [list(r) for r in block.strip("\n").split("\n")]


def strip_path(rows):
    h, w = len(rows), len(rows[0])
    out = [r[:] for r in rows]
    for r in range(h):
        for c in range(w):
            if rows[r][c] != "x":
                continue
            left = rows[r][c - 1] if c > 0 else "-"
            right = rows[r][c + 1] if c + 1 < w else "-"
            # the path occasionally overwrites a single solid cell
            out[r][c] = left if left == right and left not in "-x" else "-"
    return out


def clean_edge(rows, c):
    cols = [k for k in (c - 1, c) if 0 <= k < len(rows[0])]
    return all(rows[r][k] not in SPLIT_CHARS for r in range(len(rows)) for k in cols)


def main():
    wheel, out_dir = sys.argv[1], pathlib.Path(sys.argv[2])
    rows = strip_path(load_rows(wheel))
    total = len(rows[0])
    out_dir.mkdir(parents=True, exist_ok=True)
    for k in range(COUNT):
        anchor = round(k * (total - WIDTH) / (COUNT - 1))
        start = None
        for d in sorted(range(-SNAP, SNAP + 1), key=abs):
            s = anchor + d
            if 0 <= s <= total - WIDTH and clean_edge(rows, s) and clean_edge(rows, s + WIDTH):
                start = s
                break
        if start is None:
            start = min(max(anchor, 0), total - WIDTH)
        lines = ["-" * WIDTH, "-" * WIDTH] + ["".join(r[start:start + WIDTH]) for r in rows]
        (out_dir / f"vglc-{k + 1:02d}.txt").write_text("\n".join(lines) + "\n")
        print(f"vglc-{k + 1:02d}: columns {start}..{start + WIDTH - 1}")


if __name__ == "__main__":
    main()
