"""Hand-rolled SVG line charts (stdlib XML only)."""

from __future__ import annotations

import xml.etree.ElementTree as ET

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo: float, hi: float, n: int = 5) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    step = (hi - lo) / (n - 1)
    return [lo + i * step for i in range(n)]


def line_chart(series: dict[str, list[tuple[float, float]]], xlabel: str, ylabel: str,
               title: str = "", width: int = 640, height: int = 420) -> str:
    """Render named (x, y) series as one ``<polyline>`` each, with axes and a legend.

    Returns the serialized ``<svg>`` document.  Series are drawn in insertion
    order with a fixed color palette.
    """
    if not series:
        raise ValueError("line_chart needs at least one series")
    pts = [p for ps in series.values() for p in ps]
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad_y = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad_y, y_hi + pad_y
    ml, mr, mt, mb = 64, 150, 36, 48     # margins; right one holds the legend

    def sx(x: float) -> float:
        return ml + (x - x_lo) / (x_hi - x_lo) * (width - ml - mr)

    def sy(y: float) -> float:
        return height - mb - (y - y_lo) / (y_hi - y_lo) * (height - mt - mb)

    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg",
                     width=str(width), height=str(height),
                     viewBox=f"0 0 {width} {height}")
    ET.SubElement(svg, "rect", x="0", y="0", width=str(width), height=str(height), fill="white")
    if title:
        t = ET.SubElement(svg, "text", x=str(width // 2), y="20")
        t.set("text-anchor", "middle")
        t.set("font-family", "sans-serif")
        t.set("font-size", "14")
        t.text = title
    axis = {"stroke": "black", "stroke-width": "1"}
    ET.SubElement(svg, "line", x1=str(ml), y1=str(height - mb),
                  x2=str(width - mr), y2=str(height - mb), **axis)
    ET.SubElement(svg, "line", x1=str(ml), y1=str(mt), x2=str(ml), y2=str(height - mb), **axis)
    for xv in _ticks(x_lo, x_hi):
        px = sx(xv)
        ET.SubElement(svg, "line", x1=f"{px:.1f}", y1=str(height - mb),
                      x2=f"{px:.1f}", y2=str(height - mb + 5), **axis)
        t = ET.SubElement(svg, "text", x=f"{px:.1f}", y=str(height - mb + 18))
        t.set("text-anchor", "middle")
        t.set("font-family", "sans-serif")
        t.set("font-size", "11")
        t.text = f"{xv:g}"
    for yv in _ticks(y_lo, y_hi):
        py = sy(yv)
        ET.SubElement(svg, "line", x1=str(ml - 5), y1=f"{py:.1f}", x2=str(ml), y2=f"{py:.1f}", **axis)
        t = ET.SubElement(svg, "text", x=str(ml - 8), y=f"{py + 4:.1f}")
        t.set("text-anchor", "end")
        t.set("font-family", "sans-serif")
        t.set("font-size", "11")
        t.text = f"{yv:.3g}"
    xl = ET.SubElement(svg, "text", x=str((ml + width - mr) // 2), y=str(height - 10))
    xl.set("text-anchor", "middle")
    xl.set("font-family", "sans-serif")
    xl.set("font-size", "12")
    xl.text = xlabel
    yl = ET.SubElement(svg, "text", x="16", y=str((mt + height - mb) // 2))
    yl.set("text-anchor", "middle")
    yl.set("font-family", "sans-serif")
    yl.set("font-size", "12")
    yl.set("transform", f"rotate(-90 16 {(mt + height - mb) // 2})")
    yl.text = ylabel
    for i, (name, points) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        ordered = sorted(points)
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in ordered)
        pl = ET.SubElement(svg, "polyline", points=coords, fill="none", stroke=color)
        pl.set("stroke-width", "2")
        for x, y in ordered:
            ET.SubElement(svg, "circle", cx=f"{sx(x):.1f}", cy=f"{sy(y):.1f}", r="3",
                          fill=color)
        ly = mt + 16 + 20 * i
        lx = width - mr + 12
        ET.SubElement(svg, "line", x1=str(lx), y1=str(ly - 4), x2=str(lx + 22), y2=str(ly - 4),
                      stroke=color, **{"stroke-width": "2"})
        t = ET.SubElement(svg, "text", x=str(lx + 28), y=str(ly))
        t.set("font-family", "sans-serif")
        t.set("font-size", "12")
        t.text = name
    return ET.tostring(svg, encoding="unicode")
