"""Acceptance criteria, one test each; a PASS/FAIL line per criterion is printed
in the pytest terminal summary (or directly when run as a script)."""
import math
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import numpy as np  # noqa: E402
import torch  # noqa: E402

import _report  # noqa: E402
from _oracles import ce_log_dice_scalar, ctu_flags_bruteforce  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"


def criterion(name):
    """Run the check, record PASS/FAIL with its detail string, then assert."""
    def wrap(fn):
        def test():
            try:
                ok, detail = fn()
            except Exception as exc:  # recorded, then re-raised for pytest
                _report.record(name, False, f"{type(exc).__name__}: {exc}")
                raise
            _report.record(name, ok, detail)
            assert ok, detail
        test.__name__ = fn.__name__
        test.__doc__ = fn.__doc__
        return test
    return wrap


def run_property(fn):
    """Call a hypothesis-decorated (or plain) test function; returns None or the failure text."""
    try:
        fn()
    except AssertionError as exc:
        return f"{fn.__name__}: {exc}"
    return None


# --------------------------------------------------------------------------
# structural and arithmetic reproductions
# --------------------------------------------------------------------------

@criterion("ReCal complexity")
def test_recal_complexity():
    from cataractkit.blocks import ReCal
    from cataractkit.networks import count_parameters, recal_delta

    widths = (32, 64, 128, 256, 512)
    per = {c: count_parameters(ReCal(c), bias_free=True) for c in widths}
    formula = {c: c * c + 22 * c + 4 for c in widths}
    network_delta = recal_delta()
    ok = per == formula and sum(formula.values()) == 371_028 and network_delta == 371_028
    return ok, f"per-module {per == formula}, formula total {sum(formula.values()):,}, network delta {network_delta:,}"


@criterion("Parameter budgets")
def test_parameter_budgets():
    from cataractkit.networks import REFERENCE_PARAMS, NetworkSpec, inspect_network

    parts, ok = [], True
    for nid in ("deeppyram", "recalnet", "drnet"):
        rep = inspect_network(NetworkSpec(nid))
        ref = REFERENCE_PARAMS[nid] * 1e6
        rel = rep["total"] / ref - 1
        itemized = sum(rep["modules"].values()) == rep["total"]
        ok &= abs(rel) <= 0.05 and itemized
        parts.append(f"{nid} {rep['total'] / 1e6:.3f} M ({rel:+.2%})")
    return ok, ", ".join(parts)


@criterion("Loss oracles")
def test_loss_oracles():
    from cataractkit.losses import contrastive_loss, ce_log_dice, pyramid_loss
    import cataractkit.losses as L

    half = torch.full((2, 2), 0.5, dtype=torch.float64)
    ones = torch.ones(2, 2, dtype=torch.float64)
    got = ce_log_dice(half, ones).item()
    oracle = ce_log_dice_scalar([0.5] * 4, [1] * 4)

    original = L.ce_log_dice
    L.ce_log_dice = lambda out, t, w: torch.tensor(1.0)
    try:
        outs = [torch.zeros(1, 2, 16 // 2 ** i, 16 // 2 ** i) for i in range(4)]
        pyr = pyramid_loss(outs, torch.zeros(1, 16, 16, dtype=torch.long)).item()
    finally:
        L.ce_log_dice = original

    eye = torch.eye(4, dtype=torch.float64)
    ctr = contrastive_loss(eye[0], eye[1], eye[2], eye[3]).item()
    ok = abs(got - oracle) <= 1e-5 and abs(pyr - 2.5) <= 1e-12 and abs(ctr - math.log(4)) <= 1e-6
    return ok, f"ce_log_dice {got:.6f} vs oracle {oracle:.6f}; pyramid {pyr}; contrastive {ctr:.7f} vs ln4"


@criterion("Gradient checks")
def test_gradient_checks():
    import test_blocks as B
    import test_losses as LS

    errs = {name: B.block_gradient_error(name) for name in sorted(B._gradcheck_cases())}
    errs.update(LS.loss_gradient_errors())
    worst = max(errs, key=errs.get)
    return errs[worst] <= 1e-3, f"{len(errs)} checks, worst {worst} rel err {errs[worst]:.2e}"


@criterion("QP planner golden files")
def test_qp_golden_files():
    sys.path.insert(0, str(FIXTURES))
    from make_golden import CASES, golden_name
    from cataractkit.cli import load_relevance_input
    from cataractkit.qpplan import allocate_qp, dumps_binary, dumps_text, relevant_ctus

    exact = 0
    for case in CASES:
        maps = allocate_qp(load_relevance_input(FIXTURES / case[0], *case[1:]))
        name = golden_name(*case)
        exact += (dumps_text(maps).encode() == (FIXTURES / f"{name}.txt").read_bytes()
                  and dumps_binary(maps) == (FIXTURES / f"{name}.qpb").read_bytes())

    inp = load_relevance_input(FIXTURES / "relevance_720x540.yaml", "III", 22, 5, 0)
    rel_qp, irr_qp = {}, {}
    for m in allocate_qp(inp):
        flags = relevant_ctus(inp, m.frame_index)
        key = "I" if m.frame_type == "I" else m.gop_pos
        if flags.any():
            rel_qp.setdefault(key, set()).update(m.luma[flags].tolist())
        irr_qp.setdefault(key, set()).update(m.luma[~flags].tolist())
    rel_i = rel_qp["I"]
    rel_p = [sorted(rel_qp[p]) for p in range(4)]
    irr_p = [sorted(irr_qp[p]) for p in range(4)]
    ok = (exact == len(CASES) and rel_i == {21} and rel_p == [[27], [26], [27], [23]]
          and irr_p == [[32], [31], [32], [28]])
    return ok, f"{exact}/{len(CASES)} byte-exact; I {sorted(rel_i)}, relevant P {rel_p}, irrelevant P {irr_p}"


@criterion("Relevance rasterization")
def test_relevance_rasterization():
    import test_qpplan as Q
    from cataractkit.qpplan import GOP_OFFSETS, I_OFFSET, allocate_qp, relevant_ctus, relevant_region

    violations, frames, pixels = 0, 0, 0
    for seed in range(100):
        inp = Q.random_relevance(seed, ("I", "II", "III", "IV", "V")[seed % 5])
        for t, m in enumerate(allocate_qp(inp)):
            # only action frames carry relevant pixels
            region = relevant_region(inp, t) if inp.labels[t] == 1 else np.zeros((inp.height, inp.width), bool)
            oracle = ctu_flags_bruteforce(region)
            offset = I_OFFSET if m.frame_type == "I" else GOP_OFFSETS[m.gop_pos]
            expected_qp = min(51, max(0, inp.qp_r + offset))
            bad = (oracle & ~relevant_ctus(inp, t)).any() or (m.luma[oracle] != expected_qp).any()
            violations += int(bad)
            frames += 1
            pixels += int(region.sum())
    return violations == 0, (f"100 fixtures, {frames} frames, {pixels:,} relevant pixels; "
                             f"{violations} frames with a relevant pixel in an irrelevant CTU")


# --------------------------------------------------------------------------
# overfit smoke tests
# --------------------------------------------------------------------------

def overfit_segmenter(network_id, size=128, max_steps=200, target=0.95):
    from cataractkit.harness import synthetic_pair
    from cataractkit.harness.train import compute_loss
    from cataractkit.losses import LossWeights
    from cataractkit.networks import NetworkSpec, build_network

    torch.manual_seed(0)
    img, mask = synthetic_pair(size, seed=0)
    x = torch.from_numpy(img.transpose(2, 0, 1).copy())[None]
    y = torch.from_numpy(mask)[None]
    net = build_network(NetworkSpec(network_id, input_shape=(3, size, size))).train()
    opt = torch.optim.Adam(net.parameters(), 1e-3)
    dice = 0.0
    for step in range(1, max_steps + 1):
        loss, master = compute_loss(net, (x, y), LossWeights())
        opt.zero_grad()
        loss.backward()
        opt.step()
        pred = master.detach().argmax(1)
        inter = ((pred == 1) & (y == 1)).sum().item()
        dice = 2 * inter / max((pred == 1).sum().item() + (y == 1).sum().item(), 1)
        if dice >= target:
            return step, dice
    return None, dice


def overfit_drnet(count=10, size=32, max_steps=300, target_db=3.0):
    from cataractkit.deblursim import make_pairs, psnr, shapes_image
    from cataractkit.harness.train import deblur_loss
    from cataractkit.networks import DRNet

    torch.manual_seed(0)
    pairs = make_pairs([shapes_image(size, seed=100 + i) for i in range(count)], rng=0, windows=(3, 5, 7))
    sharp = torch.tensor(np.stack([p.sharp for p in pairs]).transpose(0, 3, 1, 2) / 255.0, dtype=torch.float32)
    blur = torch.tensor(np.stack([p.blurred for p in pairs]).transpose(0, 3, 1, 2) / 255.0, dtype=torch.float32)
    before = float(np.mean([psnr(p.blurred, p.sharp) for p in pairs]))
    net = DRNet(zero_residual=True).train()
    opt = torch.optim.Adam(net.parameters(), 1e-3)
    after = before
    for step in range(1, max_steps + 1):
        outs = net(blur)
        loss = deblur_loss(outs, sharp)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 10 == 0:
            est = np.round(outs[-1].detach().clamp(0, 1).numpy() * 255).transpose(0, 2, 3, 1)
            after = float(np.mean([psnr(e, p.sharp) for e, p in zip(est, pairs)]))
            if after - before >= target_db:
                return step, before, after
    return None, before, after


def ssl_toy_run(epochs=5, seed=0):
    from cataractkit.ssl import ClipStore, ContrastiveModel, SmallEncoder, full_schedule, moving_shapes_video, pretrain

    store = ClipStore.from_videos({f"v{i}": moving_shapes_video(size=32, seed=seed * 10 + i) for i in range(8)})
    torch.manual_seed(seed)
    sched = full_schedule(1, 32, strategies=("block_aug",))[0]
    return pretrain(store, ContrastiveModel(SmallEncoder()), sched, epochs=epochs, seed=seed).epoch_losses


@criterion("Overfit smoke tests")
def test_overfit_smoke():
    parts, ok = [], True
    for nid in ("deeppyram", "recalnet", "adaptnet", "unet"):
        t = time.time()
        step, dice = overfit_segmenter(nid)
        ok &= step is not None
        parts.append(f"{nid} Dice {dice:.3f} at step {step} ({time.time() - t:.0f}s)")
    step, before, after = overfit_drnet()
    ok &= step is not None
    parts.append(f"drnet PSNR {before:.2f} -> {after:.2f} dB (+{after - before:.2f}) at step {step}")
    losses = ssl_toy_run()
    drop = (losses[0] - losses[-1]) / abs(losses[0])
    ok &= drop >= 0.10
    parts.append(f"ssl epoch loss {losses[0]:.3f} -> {losses[-1]:.3f} ({drop:.0%} drop)")
    return ok, "; ".join(parts)


# --------------------------------------------------------------------------
# property suites
# --------------------------------------------------------------------------

@criterion("Temporal pipeline")
def test_temporal_pipeline():
    import test_temporal as T

    checks = [T.test_single_flip_corrected, T.test_mean_filter_matches_window_oracle,
              T.test_clip_sample_segment_bounds, T.test_clip_sample_strictly_increasing_within_segments,
              T.test_one_vs_rest_scale_invariance, T.test_segment_round_trip]
    failures = [f for f in map(run_property, checks) if f]
    return not failures, f"{len(checks) - len(failures)}/{len(checks)} properties hold" + (
        f"; {failures[0]}" if failures else "")


@criterion("SSL invariants")
def test_ssl_invariants():
    import test_ssl as S

    checks = [S.test_hf_remove_idempotent_and_band_limited, S.test_suitability_examples,
              S.test_suitability_boundary_inclusive, S.test_rigid_block_locality, S.test_deformable_block_locality]
    failures = [f for f in map(run_property, checks) if f]
    return not failures, f"{len(checks) - len(failures)}/{len(checks)} properties hold" + (
        f"; {failures[0]}" if failures else "")


@criterion("Deblur simulation")
def test_deblur_simulation():
    import test_deblursim as D
    from cataractkit.deblursim import gaussian_blur, gaussian_kernel, psnr_table

    img = D.pink_noise_image(32, seed=3)
    identity = np.array_equal(gaussian_blur(img, 1), img)
    norm = max(abs(gaussian_kernel(w).sum() - 1) for w in (1, 3, 5, 7))
    rows = psnr_table(D.monotone_corpus(), windows=(1, 3, 5, 7))
    monotone = sum(r["w1"] >= r["w3"] >= r["w5"] >= r["w7"] for r in rows)
    ok = identity and norm <= 1e-12 and monotone == len(rows) == 20
    return ok, f"w=1 identity {identity}; kernel sum error {norm:.1e}; monotone on {monotone}/{len(rows)} images"


if __name__ == "__main__":
    for name, fn in list(globals().items()):
        if name.startswith("test_") and callable(fn):
            try:
                fn()
            except Exception:  # noqa: BLE001 - already recorded
                pass
    print("\n".join(_report.lines()))
    sys.exit(0 if all(ok for _, ok, _ in _report.RESULTS) else 1)
