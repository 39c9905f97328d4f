"""Finite-difference checks for every differentiable operator and block.

Each case builds random inputs, returns a scalar loss closure and the
parameters to perturb. Inputs that feed kinks (relu, max) are drawn so that
no value sits within the perturbation step of a kink.
"""

from __future__ import annotations

import time
from dataclasses import replace
from typing import Callable

import numpy as np

from . import ops
from .backbone import ESE, FPN, OSA, SE, OsaConfig
from .config import tiny_config
from .gradcheck import backward_and_check
from .head import FCOSHead, HeadConfig
from .mask import MaskConfig, MaskHead, MaskIoUHead, SpatialAttention
from .model import CenterMask
from .synth import generate_sample
from .tensor import Tensor, parameter

UNIT_TOL = 1e-3
MODEL_TOL = 1e-2


def _spread(rng, shape, gap=0.01):
    """Random values with pairwise gaps and no entry near zero."""
    n = int(np.prod(shape))
    vals = (np.arange(n) - n / 2 + 0.5) * gap * 3
    vals = vals + rng.uniform(-gap, gap, size=n)
    return rng.permutation(vals).reshape(shape)


def _probe(rng, f: Callable[[], Tensor]) -> Callable[[], Tensor]:
    """Scalar loss <f(), r> for a fixed random r, so every output entry gets its own weight."""
    r = Tensor(rng.normal(size=(1, int(np.prod(f().shape)))))

    def loss():
        return ops.total(ops.fully_connected(ops.reshape(f(), (1, -1)), r))

    return loss


Case = tuple  # (loss closure, [params])


def _generic(module, rng, std=0.05):
    """Jitter every bias so no unit sits exactly on a relu kink at initialization.

    Zero biases fed by all-zero activations land precisely on relu(0), where
    the derivative is one-sided and central differences disagree with it.
    """
    for _, p in module.named_parameters():
        if p.data.ndim == 1:
            p.data = (p.data + rng.normal(scale=std, size=p.shape)).astype(p.data.dtype)
    return module


def unit_cases(seed: int = 0) -> dict:
    rng = np.random.default_rng(seed)
    P = lambda shape, s=1.0: parameter(rng.normal(size=shape) * s)  # noqa: E731
    cases: dict = {}

    x = P((2, 3, 5, 5))
    w = P((4, 3, 3, 3), 0.3)
    b = P((4,))
    cases["conv2d"] = (_probe(rng, lambda: ops.conv2d(x, w, b, 1, 1)), [x, w, b])
    xs = P((1, 2, 7, 7))
    ws = P((3, 2, 3, 3), 0.3)
    cases["conv2d_stride2"] = (_probe(rng, lambda: ops.conv2d(xs, ws, None, 2, 1)), [xs, ws])
    x1 = P((2, 3, 4, 4))
    w1 = P((2, 3, 1, 1))
    b1 = P((2,))
    cases["conv2d_1x1"] = (_probe(rng, lambda: ops.conv2d(x1, w1, b1)), [x1, w1, b1])

    xd = P((2, 3, 3, 3))
    wd = P((3, 2, 2, 2))
    bd = P((2,))
    cases["deconv2d_2x2"] = (_probe(rng, lambda: ops.deconv2d_2x2(xd, wd, bd)), [xd, wd, bd])

    xr = parameter(_spread(rng, (2, 4, 3, 3)))
    cases["reduce_channel_max"] = (_probe(rng, lambda: ops.reduce_channel(xr, "max")), [xr])
    xa = P((2, 4, 3, 3))
    cases["reduce_channel_avg"] = (_probe(rng, lambda: ops.reduce_channel(xa, "avg")), [xa])
    xg = P((2, 3, 4, 5))
    cases["global_avg_pool"] = (_probe(rng, lambda: ops.global_avg_pool(xg)), [xg])

    xf, wf, bf = P((3, 5)), P((4, 5)), P((4,))
    cases["fully_connected"] = (_probe(rng, lambda: ops.fully_connected(xf, wf, bf)), [xf, wf, bf])
    xs_ = P((3, 4), 2.0)
    cases["sigmoid"] = (_probe(rng, lambda: ops.sigmoid(xs_)), [xs_])
    xrl = parameter(_spread(rng, (3, 4)))
    cases["relu"] = (_probe(rng, lambda: ops.relu(xrl)), [xrl])
    xe = P((3, 4), 0.5)
    cases["exp"] = (_probe(rng, lambda: ops.exp(xe)), [xe])

    ca, cb = P((2, 2, 3, 3)), P((2, 3, 3, 3))
    cases["concat_channels"] = (_probe(rng, lambda: ops.concat_channels([ca, cb])), [ca, cb])
    ra, rb = P((2, 3)), P((4, 3))
    cases["concat_rows"] = (_probe(rng, lambda: ops.concat_rows([ra, rb])), [ra, rb])
    tr = P((5, 3))
    cases["take_rows"] = (_probe(rng, lambda: ops.take_rows(tr, [4, 0, 4, 2])), [tr])
    sc = P((3, 4, 2, 2))
    cases["select_channel"] = (_probe(rng, lambda: ops.select_channel(sc, [1, 3, 0])), [sc])
    aa, ab = P((2, 3)), P((2, 3))
    cases["add"] = (_probe(rng, lambda: ops.add(aa, ab)), [aa, ab])
    al = [P((2, 2)) for _ in range(3)]
    cases["add_all"] = (_probe(rng, lambda: ops.add_all(al)), al)
    sx = P((2, 3))
    cases["scale"] = (_probe(rng, lambda: ops.scale(sx, -1.7)), [sx])
    mx, ms = P((2, 3, 2, 2)), P((1,))
    cases["mul_scalar"] = (_probe(rng, lambda: ops.mul_scalar(mx, ms)), [mx, ms])
    gx, gg = P((2, 3, 2, 2)), P((2, 3, 1, 1))
    cases["scale_channels"] = (_probe(rng, lambda: ops.scale_channels(gx, gg)), [gx, gg])
    hx, hg = P((2, 3, 2, 2)), P((2, 1, 2, 2))
    cases["scale_spatial"] = (_probe(rng, lambda: ops.scale_spatial(hx, hg)), [hx, hg])
    mp = parameter(_spread(rng, (1, 2, 6, 6)))
    cases["max_pool2d_3x3_s2"] = (_probe(rng, lambda: ops.max_pool2d(mp, 3, 2, 1)), [mp])
    mp2 = parameter(_spread(rng, (2, 1, 4, 4)))
    cases["max_pool2d_2x2"] = (_probe(rng, lambda: ops.max_pool2d(mp2, 2, 2)), [mp2])
    up = P((1, 2, 3, 3))
    cases["upsample_nearest2x"] = (_probe(rng, lambda: ops.upsample_nearest2x(up)), [up])
    cr = P((1, 2, 4, 4))
    cases["crop"] = (_probe(rng, lambda: ops.crop(cr, 3, 2)), [cr])
    rs = P((2, 3, 2))
    cases["reshape"] = (_probe(rng, lambda: ops.reshape(rs, (3, 4))), [rs])
    tw = P((2, 3, 2, 2))
    cases["to_rows"] = (_probe(rng, lambda: ops.to_rows(tw)), [tw])
    tt = P((3, 3))
    cases["total"] = (lambda: ops.total(tt), [tt])

    bs = P((1, 3, 4, 5))
    cases["bilinear_sample"] = (_probe(rng, lambda: ops.bilinear_sample(bs, 1.3, 2.6)), [bs])
    rf = P((2, 3, 6, 6))
    boxes = np.array([[0.3, 0.7, 4.2, 3.9], [1.1, 0.2, 5.5, 5.8], [-0.4, 2.0, 2.5, 4.1]])
    cases["roi_align"] = (_probe(rng, lambda: ops.roi_align(rf, boxes, [0, 1, 1], 3, 2)), [rf])

    fl = P((6, 3), 1.5)
    labels = np.array([-1, 0, 2, -1, 1, -1])
    cases["sigmoid_focal_loss"] = (lambda: ops.sigmoid_focal_loss(fl, labels, 0.25, 2.0, 3.0), [fl])
    bl = P((4, 5), 2.0)
    bt = rng.uniform(0, 1, size=(4, 5))
    cases["bce_with_logits"] = (lambda: ops.bce_with_logits(bl, bt), [bl])
    # offsets well away from the min() switch points
    il = parameter(rng.uniform(1.0, 3.0, size=(5, 4)))
    it = il.data + rng.choice([-1, 1], size=(5, 4)) * rng.uniform(0.3, 0.6, size=(5, 4))
    iw = rng.uniform(0.2, 1.0, size=5)
    cases["iou_loss"] = (lambda: ops.iou_loss(il, it, iw), [il])
    mq = P((6,))
    mt = rng.uniform(0, 1, size=6)
    cases["mse"] = (lambda: ops.mse(mq, mt), [mq])
    return cases


def block_cases(seed: int = 0) -> dict:
    """eSE, SE, OSA (residual), SAM, mask head, mask-IoU head, FPN and detection head."""
    rng = np.random.default_rng(seed)
    cases: dict = {}

    def named(module):
        _generic(module, rng)
        names, params = zip(*module.named_parameters())
        return list(params), list(names)

    x = Tensor(rng.normal(size=(2, 8, 4, 4)))
    ese = ESE(rng, 8)
    cases["ese"] = (_probe(rng, lambda: ese(x)), *named(ese))
    se = SE(rng, 8, 4)
    cases["se"] = (_probe(rng, lambda: se(x)), *named(se))
    osa = OSA(rng, 6, OsaConfig(conv_count=2, conv_channels=4, out_channels=6, residual=True, attention="ese"))
    xo = Tensor(rng.normal(size=(1, 6, 5, 5)))
    cases["osa_residual_ese"] = (_probe(rng, lambda: osa(xo)), *named(osa))

    sam = SpatialAttention(rng)
    xs = Tensor(_spread(rng, (2, 3, 5, 5)))
    cases["sam"] = (_probe(rng, lambda: sam(xs)), *named(sam))
    mcfg = MaskConfig(conv_depth=1, conv_channels=3, maskiou_convs=1, maskiou_fc=6)
    mh = MaskHead(rng, 4, 2, mcfg)
    xm = Tensor(rng.normal(size=(2, 4, 4, 4)))
    cases["mask_head"] = (_probe(rng, lambda: mh(xm)), *named(mh))
    mi = MaskIoUHead(rng, 4, 2, mcfg, roi_size=4)
    prob = Tensor(_spread(rng, (2, 1, 8, 8)) * 0.1 + 0.5)
    cases["maskiou_head"] = (_probe(rng, lambda: mi(xm, prob)), *named(mi))

    fpn = FPN(rng, (3, 4, 5), 4)
    cs = {3: Tensor(rng.normal(size=(1, 3, 4, 4))), 4: Tensor(rng.normal(size=(1, 4, 2, 2))),
          5: Tensor(rng.normal(size=(1, 5, 1, 1)))}

    def fpn_out():
        p = fpn(cs)
        return ops.concat_rows([ops.reshape(p[k], (-1, 1)) for k in sorted(p)])

    cases["fpn"] = (_probe(rng, fpn_out), *named(fpn))
    head = FCOSHead(rng, 4, HeadConfig(tower_depth=1, tower_channels=3, class_count=2))
    ph = Tensor(rng.normal(size=(1, 4, 3, 3)))

    def head_out():
        c, t, o = head(ph, 4)
        return ops.concat_channels([c, t, ops.scale(o, 1 / 16)])

    cases["fcos_head"] = (_probe(rng, head_out), *named(head))
    return cases


def model_case(seed: int = 0):
    """Whole-model loss on a 2-class 32x32 scene with ground-truth RoIs only."""
    cfg = tiny_config(2)
    cfg = replace(cfg, train=replace(cfg.train, detection_rois=False))
    model = _generic(CenterMask(cfg, seed), np.random.default_rng(seed))
    sample = generate_sample(seed + 11, 32, 32, 2)
    labels = sample.labels % 2
    images = Tensor(sample.image[None])

    def loss():
        return model.loss(images, [sample.boxes], [labels], [sample.masks])["total"]

    names, params = zip(*model.named_parameters())
    return loss, list(params), list(names)


MAX_DRAWS = 8


def _check_case(build, seed: int, max_entries=None, hold_branches=False):
    """Check a case at its first randomly drawn point where the finite differences are valid.

    A draw is accepted when no perturbation crosses a relu or max switch, or
    unconditionally when the perturbed passes hold the base point's branches.
    """
    for draw in range(MAX_DRAWS):
        case = build(seed + 7919 * draw)
        fn, params = case[0], case[1]
        names = case[2] if len(case) > 2 else None
        report = backward_and_check(fn, params, names=names, max_entries=max_entries, seed=seed,
                                    hold_branches=hold_branches)
        if hold_branches or report.straddle_count == 0:
            break
    return report, draw + 1


def run_suite(seed: int = 0, model_entries: int = 3, include_model: bool = True, log=print) -> dict:
    """Run every case; returns name -> (GradReport, tolerance, seconds, draws)."""
    out = {}
    makers = {name: maker for maker in (unit_cases, block_cases) for name in maker(seed)}
    for name, maker in makers.items():
        t0 = time.perf_counter()
        report, draws = _check_case(lambda s, m=maker, n=name: m(s)[n], seed)
        out[name] = (report, UNIT_TOL, time.perf_counter() - t0, draws)
        if log:
            log(f"{'PASS' if report.passed(UNIT_TOL) else 'FAIL'}  {name:24s} max rel err "
                f"{report.max_error:.2e}  draws {draws}")
    if include_model:
        t0 = time.perf_counter()
        # a stem weight moves thousands of pre-activations, so perturbations of the
        # composite nearly always cross some kink; hold the base point's branches instead
        report, draws = _check_case(model_case, seed, model_entries, hold_branches=True)
        out["full_model"] = (report, MODEL_TOL, time.perf_counter() - t0, draws)
        if log:
            log(f"{'PASS' if report.passed(MODEL_TOL) else 'FAIL'}  {'full_model':24s} "
                f"max rel err {report.max_error:.2e}  draws {draws}  ({len(report.errors)} tensors)")
    return out
