"""Section definition files and the shape library used by the experiment configs.

File format (YAML)::

    name: pentagon
    segments:
      - {type: line, start: [x0, y0], end: [x1, y1]}
      - {type: arc, center: [cx, cy], radius: r, start_angle: phi0, sweep: dphi}

Coordinates in millimetres, angles in radians, boundary counterclockwise.
A config may also name a library shape instead of listing segments, e.g.
``{shape: regular_polygon, n: 5, circumradius: 7.14}``.
"""
from __future__ import annotations

from pathlib import Path

import yaml

from . import geometry as geo
from .geometry import Arc, CrossSection, Line


def section_to_dict(section: CrossSection) -> dict:
    segs = []
    for seg in section.segments:
        if isinstance(seg, Line):
            segs.append({"type": "line", "start": [float(c) for c in seg.start],
                         "end": [float(c) for c in seg.end]})
        else:
            segs.append({"type": "arc", "center": [float(c) for c in seg.center],
                         "radius": float(seg.radius), "start_angle": float(seg.start_angle),
                         "sweep": float(seg.sweep)})
    return {"name": section.name, "segments": segs}


def section_from_dict(d: dict) -> CrossSection:
    if "shape" in d:
        return library_shape(d)
    unknown = set(d) - {"name", "segments"}
    if unknown:
        raise ValueError(f"unknown section keys: {sorted(unknown)}")
    segs = []
    for s in d["segments"]:
        kind = s.get("type")
        if kind == "line":
            segs.append(Line(tuple(map(float, s["start"])), tuple(map(float, s["end"]))))
        elif kind == "arc":
            segs.append(Arc(tuple(map(float, s["center"])), float(s["radius"]),
                            float(s["start_angle"]), float(s["sweep"])))
        else:
            raise ValueError(f"unknown segment type {kind!r}")
    return CrossSection(tuple(segs), str(d.get("name", "section")))


def write_section(section: CrossSection, path) -> None:
    Path(path).write_text(yaml.safe_dump(section_to_dict(section), sort_keys=False))


def read_section(path) -> CrossSection:
    return section_from_dict(yaml.safe_load(Path(path).read_text()))


_BUILDERS = {
    "circle": lambda p: geo.circle(p["radius"], p.get("name", "cylinder")),
    "rectangle": lambda p: geo.rectangle(p["width"], p["height"], p.get("name", "cuboid")),
    "regular_polygon": lambda p: geo.regular_polygon(p["n"], p["circumradius"], p.get("name"),
                                                     p.get("rotation", 0.0)),
    "stadium": lambda p: geo.stadium(p["length"], p["radius"], p.get("name", "stadium")),
    "d_shape": lambda p: geo.d_shape(p["radius"], p["flat"], p.get("name", "d-shape")),
    "double_circle": lambda p: geo.double_circle(p["radius"], p["separation"],
                                                 p.get("name", "dual-cylinder")),
    "polygon": lambda p: geo.polygon([tuple(v) for v in p["vertices"]], p.get("name", "polygon")),
}


def library_shape(params: dict) -> CrossSection:
    kind = params["shape"]
    if kind not in _BUILDERS:
        raise ValueError(f"unknown library shape {kind!r}; choose from {sorted(_BUILDERS)}")
    sec = _BUILDERS[kind](params)
    # the peg axis runs through the area centroid
    return sec.centered()


# Inferred stand-ins for the two object groups.  Only the largest radius and
# the hole depth are known for each label; the outlines are plausible guesses
# (cuboids, cylinders, a triangle and pentagonal prism, compound shapes).
GROUP_A = {
    1: ({"shape": "circle", "radius": 7.5, "name": "A1-cylinder"}, 30.0),
    2: ({"shape": "d_shape", "radius": 7.0, "flat": 4.81, "name": "A2-d-shape"}, 20.0),
    3: ({"shape": "rectangle", "width": 15.0, "height": 15.0, "name": "A3-cuboid"}, 30.0),
    4: ({"shape": "regular_polygon", "n": 3, "circumradius": 5.77, "name": "A4-triangle"}, 20.0),
    5: ({"shape": "regular_polygon", "n": 5, "circumradius": 7.14, "name": "A5-pentagon"}, 20.0),
}

GROUP_B = {
    1: ({"shape": "double_circle", "radius": 7.0, "separation": 12.12, "name": "B1-dual-cylinder"}, 20.0),
    2: ({"shape": "circle", "radius": 5.0, "name": "B2-cylinder"}, 20.0),
    3: ({"shape": "rectangle", "width": 20.0, "height": 13.5, "name": "B3-dual-cuboid"}, 20.0),
    4: ({"shape": "rectangle", "width": 10.0, "height": 10.0, "name": "B4-cuboid"}, 20.0),
    5: ({"shape": "stadium", "length": 16.12, "radius": 5.0, "name": "B5-compound"}, 20.0),
}
