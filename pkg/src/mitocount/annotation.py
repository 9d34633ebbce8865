"""Annotation document model and its XML serialization.

The schema is a small flat format consumed by viewers and the validation
CLI: a root ``<annotation>`` element carrying the slide id and scan
resolution, one ``<figure>`` element per mitotic figure with center
coordinates, micron width and a contour polygon, and an optional ``<hpf>``
element for the best counting region with one ``<member>`` reference per
contained figure.

Coordinates are held at fixed 3-decimal precision: documents quantize on
construction, so ``read(write(doc)) == doc`` holds exactly for every valid
document.
"""

from __future__ import annotations

import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path


class AnnotationError(ValueError):
    """Schema or invariant violation; the message names the offending element."""


def _q3(value: float) -> float:
    """Quantize to the 3-decimal grid used on the wire."""
    v = float(value)
    if not math.isfinite(v):
        raise AnnotationError(f"coordinates must be finite, got {v!r}")
    return float(f"{v:.3f}")


@dataclass
class AnnotationFigure:
    figure_id: int
    x: float
    y: float
    width_um: float
    contour: list[tuple[float, float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.figure_id = int(self.figure_id)
        self.x = _q3(self.x)
        self.y = _q3(self.y)
        self.width_um = _q3(self.width_um)
        self.contour = [(_q3(px), _q3(py)) for px, py in self.contour]


@dataclass
class AnnotationHpf:
    x: float
    y: float
    side_px: float
    count: int
    member_ids: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.x = _q3(self.x)
        self.y = _q3(self.y)
        self.side_px = _q3(self.side_px)
        self.count = int(self.count)
        self.member_ids = [int(m) for m in self.member_ids]
        if self.count != len(self.member_ids):
            raise AnnotationError(
                f"hpf count {self.count} does not match its {len(self.member_ids)} members"
            )


@dataclass
class AnnotationDoc:
    slide_id: str
    mpp: float
    figures: list[AnnotationFigure] = field(default_factory=list)
    hpf: AnnotationHpf | None = None

    def __post_init__(self) -> None:
        self.mpp = float(f"{float(self.mpp):.6f}")
        self.validate()

    def validate(self) -> None:
        ids = [f.figure_id for f in self.figures]
        if len(set(ids)) != len(ids):
            raise AnnotationError("figure ids must be unique")
        if self.hpf is not None:
            known = set(ids)
            for m in self.hpf.member_ids:
                if m not in known:
                    raise AnnotationError(f"hpf member ref {m} is not a figure id")


def write_annotation_xml(doc: AnnotationDoc, path: Path | str) -> None:
    """Serialize a document; coordinates are written with 3 decimals."""
    doc.validate()
    root = ET.Element("annotation", slide_id=doc.slide_id, mpp=f"{doc.mpp:.6f}")
    for fig in doc.figures:
        el = ET.SubElement(
            root,
            "figure",
            id=str(fig.figure_id),
            x=f"{fig.x:.3f}",
            y=f"{fig.y:.3f}",
            width_um=f"{fig.width_um:.3f}",
        )
        contour = ET.SubElement(el, "contour")
        contour.set("points", " ".join(f"{px:.3f},{py:.3f}" for px, py in fig.contour))
    if doc.hpf is not None:
        hpf_el = ET.SubElement(
            root,
            "hpf",
            x=f"{doc.hpf.x:.3f}",
            y=f"{doc.hpf.y:.3f}",
            side_px=f"{doc.hpf.side_px:.3f}",
            count=str(doc.hpf.count),
        )
        for m in doc.hpf.member_ids:
            ET.SubElement(hpf_el, "member", ref=str(m))
    tree = ET.ElementTree(root)
    ET.indent(tree)
    tree.write(path, encoding="unicode", xml_declaration=True)


def _attr(el: ET.Element, name: str) -> str:
    value = el.get(name)
    if value is None:
        raise AnnotationError(f"element <{el.tag}> is missing attribute {name!r}")
    return value


def _float_attr(el: ET.Element, name: str) -> float:
    raw = _attr(el, name)
    try:
        return float(raw)
    except ValueError as exc:
        raise AnnotationError(f"element <{el.tag}> attribute {name!r} is not a number: {raw!r}") from exc


def read_annotation_xml(path: Path | str) -> AnnotationDoc:
    """Parse and validate an annotation file.

    Raises:
        AnnotationError: malformed XML, unknown elements, missing attributes,
            or invariant violations (duplicate ids, dangling hpf members,
            count/member mismatch), naming the offending element.
    """
    try:
        tree = ET.parse(path)
    except ET.ParseError as exc:
        raise AnnotationError(f"malformed XML: {exc}") from exc
    root = tree.getroot()
    if root.tag != "annotation":
        raise AnnotationError(f"root element must be <annotation>, got <{root.tag}>")

    figures: list[AnnotationFigure] = []
    hpf: AnnotationHpf | None = None
    for el in root:
        if el.tag == "figure":
            contour: list[tuple[float, float]] = []
            for child in el:
                if child.tag != "contour":
                    raise AnnotationError(f"unexpected element <{child.tag}> inside <figure>")
                points = child.get("points", "")
                for token in points.split():
                    try:
                        px, py = token.split(",")
                        contour.append((float(px), float(py)))
                    except ValueError as exc:
                        raise AnnotationError(
                            f"bad contour point {token!r} in figure {el.get('id')}"
                        ) from exc
            try:
                figure_id = int(_attr(el, "id"))
            except ValueError as exc:
                raise AnnotationError(f"figure id {el.get('id')!r} is not an integer") from exc
            figures.append(
                AnnotationFigure(
                    figure_id=figure_id,
                    x=_float_attr(el, "x"),
                    y=_float_attr(el, "y"),
                    width_um=_float_attr(el, "width_um"),
                    contour=contour,
                )
            )
        elif el.tag == "hpf":
            if hpf is not None:
                raise AnnotationError("document contains more than one <hpf> element")
            members = []
            for child in el:
                if child.tag != "member":
                    raise AnnotationError(f"unexpected element <{child.tag}> inside <hpf>")
                try:
                    members.append(int(_attr(child, "ref")))
                except ValueError as exc:
                    raise AnnotationError(f"hpf member ref {child.get('ref')!r} is not an integer") from exc
            try:
                count = int(_attr(el, "count"))
            except ValueError as exc:
                raise AnnotationError(f"hpf count {el.get('count')!r} is not an integer") from exc
            hpf = AnnotationHpf(
                x=_float_attr(el, "x"),
                y=_float_attr(el, "y"),
                side_px=_float_attr(el, "side_px"),
                count=count,
                member_ids=members,
            )
        else:
            raise AnnotationError(f"unexpected element <{el.tag}> under <annotation>")

    return AnnotationDoc(
        slide_id=_attr(root, "slide_id"),
        mpp=_float_attr(root, "mpp"),
        figures=figures,
        hpf=hpf,
    )


def validate_annotation_xml(path: Path | str) -> list[str]:
    """Validate a file; returns a list of error messages (empty when valid)."""
    try:
        read_annotation_xml(path)
    except AnnotationError as exc:
        return [str(exc)]
    except OSError as exc:
        return [f"cannot read {path}: {exc}"]
    return []
