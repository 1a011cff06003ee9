"""Programmatic construction of the bundled descriptors.

``yolov4_voc()`` follows the darknet ``yolov4.cfg`` layer list (162 layers,
20 classes). ``tiny_det()`` is a 41-layer, 3-scale toy with the same block
families, sized for CPU training on 64x64 synthetic images.
"""
from __future__ import annotations


class DescriptorBuilder:
    """Emits descriptor lines while tracking darknet-style layer indices."""

    def __init__(self):
        self.lines: list[str] = []
        self.next_id = 0
        self.layer = 0
        self.part = "backbone"
        self.extra: dict[str, object] = {}
        self.layer_out: dict[int, int] = {}

    def _node(self, kind: str, inputs, **attrs) -> int:
        nid = self.next_id
        self.next_id += 1
        txt = " ".join(f"{k}={v}" for k, v in attrs.items())
        ins = ",".join(str(i) for i in inputs)
        self.lines.append(f"{nid} {kind} {txt} inputs=[{ins}]".replace("  ", " "))
        return nid

    def _tags(self) -> dict[str, object]:
        return {"part": self.part, "layer": self.layer, **self.extra}

    def _close(self, out: int) -> int:
        self.layer_out[self.layer] = out
        self.layer += 1
        return out

    def conv(self, src: int | None, out: int, k: int, s: int = 1, act: str = "mish",
             cin: int | None = None) -> int:
        attrs = {"out": out, "k": k, "s": s}
        if src is None:
            attrs["cin"] = cin
        tags = self._tags()
        c = self._node("conv", [] if src is None else [src], **attrs, **tags)
        b = self._node("bn", [c], layer=tags["layer"])
        a = self._node("act", [b], fn=act, layer=tags["layer"])
        return self._close(a)

    def head(self, src: int, anchors: int, classes: int) -> int:
        tags = self._tags()
        c = self._node("conv", [src], out=anchors * (5 + classes), k=1, s=1, bias=1, **tags)
        self._close(c)
        d = self._node("detect_head", [c], anchors=anchors, classes=classes, **self._tags())
        return self._close(d)

    def add(self, a: int, b: int) -> int:
        return self._close(self._node("add", [a, b], **self._tags()))

    def concat(self, *xs: int) -> int:
        return self._close(self._node("concat", list(xs), **self._tags()))

    def route(self, x: int) -> int:
        """Single-input route, expressed as a one-input concat (identity)."""
        return self._close(self._node("concat", [x], **self._tags()))

    def upsample(self, x: int) -> int:
        return self._close(self._node("upsample", [x], factor=2, **self._tags()))

    def maxpool(self, x: int, k: int) -> int:
        return self._close(self._node("maxpool", [x], k=k, s=1, **self._tags()))

    def text(self, title: str) -> str:
        return f"# {title}\n" + "\n".join(self.lines) + "\n"


def _csp_stage(b: DescriptorBuilder, x: int, width: int, n_res: int, first: bool = False) -> int:
    """Down-sampling CBM plus a CSP block with ``n_res`` residual units."""
    half = width if first else width // 2
    down = b.conv(x, width, 3, 2)
    split = b.conv(down, half, 1)
    y = b.conv(b.route(down), half, 1)
    for _ in range(n_res):
        h = b.conv(y, half // 2 if first else half, 1)
        h = b.conv(h, half, 3)
        y = b.add(h, y)
    y = b.conv(y, half, 1)
    y = b.concat(y, split)
    return b.conv(y, width, 1)


def yolov4_voc(classes: int = 20, anchors: int = 3) -> str:
    b = DescriptorBuilder()
    x = b.conv(None, 32, 3, 1, cin=3)                      # 0
    x = _csp_stage(b, x, 64, 1, first=True)                 # 1-10
    x = _csp_stage(b, x, 128, 2)                            # 11-23
    c3 = _csp_stage(b, x, 256, 8)                           # 24-54
    b.extra = {"group": 1}   # the stride-2 CBM into 26x26 (layer 55) stays with group 1
    down = b.conv(c3, 512, 3, 2)
    b.extra = {}
    split = b.conv(down, 256, 1)
    y = b.conv(b.route(down), 256, 1)
    for _ in range(8):
        h = b.conv(y, 256, 1)
        h = b.conv(h, 256, 3)
        y = b.add(h, y)
    y = b.conv(y, 256, 1)
    y = b.concat(y, split)
    c4 = b.conv(y, 512, 1)                                  # 85
    c5 = _csp_stage(b, c4, 1024, 4)                         # 86-104
    L = "leaky"
    x = b.conv(c5, 512, 1, act=L)
    x = b.conv(x, 1024, 3, act=L)
    spp_in = b.conv(x, 512, 1, act=L)                       # 107
    m5 = b.maxpool(spp_in, 5)
    m9 = b.maxpool(b.route(spp_in), 9)
    m13 = b.maxpool(b.route(spp_in), 13)
    x = b.concat(m13, m9, m5, spp_in)                       # 113
    x = b.conv(x, 512, 1, act=L)
    x = b.conv(x, 1024, 3, act=L)
    p5 = b.conv(x, 512, 1, act=L)                           # 116

    b.part = "neck"
    x = b.conv(p5, 256, 1, act=L)
    up = b.upsample(x)
    lat = b.conv(b.route(c4), 256, 1, act=L)
    x = b.concat(lat, up)
    for w, k in ((256, 1), (512, 3), (256, 1), (512, 3), (256, 1)):
        x = b.conv(x, w, k, act=L)
    p4 = x                                                  # 126
    x = b.conv(p4, 128, 1, act=L)
    up = b.upsample(x)
    lat = b.conv(b.route(c3), 128, 1, act=L)
    x = b.concat(lat, up)
    for w, k in ((128, 1), (256, 3), (128, 1), (256, 3), (128, 1)):
        x = b.conv(x, w, k, act=L)
    p3 = x                                                  # 136

    b.part = "head"
    x = b.conv(p3, 256, 3, act=L)
    b.head(x, anchors, classes)                             # 138-139
    x = b.conv(b.route(p3), 256, 3, 2, act=L)
    x = b.concat(x, p4)
    for w, k in ((256, 1), (512, 3), (256, 1), (512, 3), (256, 1)):
        x = b.conv(x, w, k, act=L)
    n4 = x                                                  # 147
    x = b.conv(n4, 512, 3, act=L)
    b.head(x, anchors, classes)                             # 149-150
    x = b.conv(b.route(n4), 512, 3, 2, act=L)
    x = b.concat(x, p5)
    for w, k in ((512, 1), (1024, 3), (512, 1), (1024, 3), (512, 1)):
        x = b.conv(x, w, k, act=L)
    x = b.conv(x, 1024, 3, act=L)
    b.head(x, anchors, classes)                             # 160-161
    assert b.layer == 162, b.layer
    return b.text(f"YOLOv4 (CSPDarknet53 + SPP + PAN), {classes} classes, 162 darknet layers")


def tiny_det(classes: int = 3, anchors: int = 3) -> str:
    b = DescriptorBuilder()
    x = b.conv(None, 8, 3, 1, cin=3)                        # 0   stride 1
    x = b.conv(x, 16, 3, 2)                                 # 1   stride 2
    x = b.conv(x, 16, 3, 2)                                 # 2   stride 4
    x = b.conv(x, 24, 3, 2)                                 # 3   stride 8
    for _ in range(2):                                      # 4-9 residual units
        h = b.conv(x, 12, 1)
        h = b.conv(h, 24, 3)
        x = b.add(h, x)
    c3 = x
    x = b.conv(c3, 32, 3, 2)                                # 10  stride 16
    h = b.conv(x, 16, 1)
    h = b.conv(h, 32, 3)
    c4 = b.add(h, x)                                        # 13
    x = b.conv(c4, 48, 3, 2)                                # 14  stride 32
    L = "leaky"
    s = b.conv(x, 24, 1, act=L)                             # 15
    m5 = b.maxpool(s, 5)
    m9 = b.maxpool(s, 9)
    x = b.concat(m9, m5, s)                                 # 18
    p5 = b.conv(x, 48, 1, act=L)                            # 19

    b.part = "neck"
    x = b.conv(p5, 24, 1, act=L)
    up = b.upsample(x)
    x = b.concat(up, c4)
    p4 = b.conv(x, 32, 1, act=L)                            # 23
    x = b.conv(p4, 16, 1, act=L)
    up = b.upsample(x)
    x = b.concat(up, c3)
    p3 = b.conv(x, 24, 3, act=L)                            # 27

    b.part = "head"
    x = b.conv(p3, 32, 3, act=L)
    b.head(x, anchors, classes)                             # 29-30
    x = b.conv(p3, 32, 3, 2, act=L)
    x = b.concat(x, p4)
    n4 = b.conv(x, 32, 1, act=L)                            # 33
    b.head(n4, anchors, classes)                            # 34-35
    x = b.conv(n4, 48, 3, 2, act=L)
    x = b.concat(x, p5)
    x = b.conv(x, 48, 1, act=L)                             # 38
    b.head(x, anchors, classes)                             # 39-40
    return b.text(f"tiny-det: 3-scale toy detector, {classes} classes, {b.layer} layers")


def linear_chain(depth: int = 4, width: int = 8) -> str:
    """Single-scale CBM chain without heads (degenerate grouping fixture)."""
    b = DescriptorBuilder()
    x = b.conv(None, width, 3, 1, cin=3)
    for _ in range(depth - 1):
        x = b.conv(x, width, 3, 1)
    return b.text("linear chain")


BUNDLED = {"yolov4-voc.graph": yolov4_voc, "tiny-det.graph": tiny_det}
