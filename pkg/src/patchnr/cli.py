"""Command line interface for patch-prior training, degradation and reconstruction.

Every stochastic subcommand requires an explicit --seed so runs are
reproducible; commands that write artifacts also drop a JSON manifest next to
the main output.  Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import os
import sys
import traceback

import numpy as np

from . import io as pio
from . import metrics as pmetrics
from . import presets as ppresets
from . import report as preport
from . import synth
from .flow import (
    FlowConfig,
    TrainConfig,
    nll,
    train_cflow,
    train_flow,
)
from .fidelity import gaussian_fidelity, poisson_fidelity
from .operators import (
    BlurDownsampleOp,
    ConvolutionOp,
    IdentityOp,
    RadonGeometry,
    RadonOp,
    fbp,
    simulate_observation,
)
from .patchops import PatchGeometry, extract_patches, sample_patch_indices
from .priors import EMConfig, gmm_fit
from .solver import (
    ReconstructConfig,
    default_init,
    make_cpatchnr_prior,
    make_epll_prior,
    make_patchnr_prior,
    reconstruct,
)

__all__ = ["main", "task_operator"]


# ---------------------------------------------------------------------------
# input assembly
# ---------------------------------------------------------------------------


def _join(directory, name):
    return os.path.join(str(directory), name)


def _parse_shape(text):
    """Parse "96" or "96x128" into a (h, w) tuple."""
    parts = text.lower().split("x")
    if len(parts) == 1:
        n = int(parts[0])
        return (n, n)
    if len(parts) == 2:
        return (int(parts[0]), int(parts[1]))
    raise ValueError("shape must be N or HxW, got %r" % text)


def _collect_images(args, need_seed=True):
    """Resolve --images / --make-texture / --make-phantom into arrays.

    Returns a list of float64 images.  Synthetic sources honor --size and
    derive per-image seeds from --seed.
    """
    images = []
    if args.images:
        for path in args.images:
            images.append(pio.read_image(path))
    n_synth = getattr(args, "make_texture", 0) or 0
    if n_synth:
        if need_seed and args.seed is None:
            raise ValueError("--make-texture requires --seed")
        base = 0 if args.seed is None else args.seed
        shape = _parse_shape(args.size)
        for i in range(n_synth):
            images.append(synth.make_texture(shape, seed=base + 7919 * i))
    if getattr(args, "make_phantom", None):
        shape = _parse_shape(args.size)
        images.append(synth.make_phantom(shape, kind=args.make_phantom))
    if not images:
        raise ValueError("no input images: pass --images, --make-texture or --make-phantom")
    return images


def _dense_patches(image, patch_size):
    """Every stride-1 patch of one image, vectorized row-major."""
    geom = PatchGeometry(image.shape[0], image.shape[1], patch_size, patch_size)
    return extract_patches(image, geom, np.arange(geom.n_patches))


def _gather_patches(images, patch_size, limit=None, seed=0):
    """Extract all patches from each image; subsample to `limit` if set."""
    patches = np.concatenate(
        [_dense_patches(img, patch_size) for img in images], axis=0)
    if limit is not None and patches.shape[0] > limit:
        rng = np.random.default_rng(seed)
        keep = rng.choice(patches.shape[0], size=limit, replace=False)
        patches = patches[keep]
    return patches


# ---------------------------------------------------------------------------
# task wiring
# ---------------------------------------------------------------------------


# denoising-style setup for quick runs; not one of the published profiles
_IDENTITY_PRESET = {
    "task": "identity", "lam": 0.1, "n_subset": 40000, "iterations": 300,
    "lr": 0.01, "init": "observation", "crop": 0,
    "operator": {"kind": "identity"},
    "fidelity": {"kind": "gaussian", "sigma": 0.05},
}


def _task_preset(task):
    if task == "identity":
        return {k: (dict(v) if isinstance(v, dict) else v)
                for k, v in _IDENTITY_PRESET.items()}
    return ppresets.get_preset(task)


def _scaled_ct_geometry(task, shape):
    """Fan out the reference CT geometry to an arbitrary image size.

    The presets record the full-size setup (362x362 image, 513 bins, 1000
    angles).  For smaller inputs the bin/angle counts scale with the image so
    desk-size runs stay faithful to the sampling density.
    """
    spec = ppresets.get_preset(task)["operator"]
    ref_n = spec["shape"][0]
    n = max(shape)
    n_bins = max(3, int(round(spec["n_bins"] * n / ref_n)))
    n_angles = max(8, int(round(spec["n_angles"] * n / ref_n)))
    geom = RadonGeometry(shape, domain=tuple(spec["domain"]), n_bins=n_bins,
                         n_angles=n_angles)
    if task == "ct_limited":
        drop = max(1, int(round(spec["drop"] * n_angles / spec["n_angles"])))
        geom = geom.limited(drop=drop)
    return geom


def task_operator(task, in_shape, kernel=None):
    """Build the forward operator a task preset prescribes for `in_shape`."""
    if task == "sr":
        spec = ppresets.get_preset(task)["operator"]
        return BlurDownsampleOp(in_shape, kernel_size=spec["kernel_size"],
                                sigma=spec["sigma"], stride=spec["stride"])
    if task in ("ct_full", "ct_limited"):
        return RadonOp(_scaled_ct_geometry(task, in_shape))
    if task == "deblur":
        if kernel is None:
            kernel = ppresets.default_blur_kernel()
        return ConvolutionOp(in_shape, kernel)
    if task == "identity":
        return IdentityOp(in_shape)
    raise ValueError("unknown task %r" % task)


def _task_noise(task, args=None):
    fid = _task_preset(task)["fidelity"]
    sigma = getattr(args, "sigma", None) if args is not None else None
    n0 = getattr(args, "n0", None) if args is not None else None
    if fid["kind"] == "gaussian":
        return ("gaussian", sigma if sigma is not None else fid["sigma"])
    return ("poisson_ct", n0 if n0 is not None else fid["n0"])


def _infer_in_shape(task, obs_shape, shape_flag):
    if shape_flag:
        if isinstance(shape_flag, (list, tuple)):
            return tuple(int(v) for v in shape_flag)
        return _parse_shape(shape_flag)
    if task == "sr":
        stride = ppresets.get_preset(task)["operator"]["stride"]
        return (stride * obs_shape[0], stride * obs_shape[1])
    if task in ("deblur", "identity"):
        return obs_shape
    # CT: invert the bin-count scaling used by _scaled_ct_geometry.
    spec = ppresets.get_preset(task)["operator"]
    n = int(round(obs_shape[1] * spec["shape"][0] / spec["n_bins"]))
    return (n, n)


def _manifest_for(args, outputs, inputs=None, metrics=None):
    config = {k: v for k, v in sorted(vars(args).items())
              if k not in ("func",) and v is not None}
    main_out = outputs[0]
    pio.write_manifest(str(main_out) + ".manifest.json",
                       command=args.command,
                       config=config,
                       seed=getattr(args, "seed", None),
                       inputs=inputs or [],
                       outputs=list(outputs),
                       metrics=metrics)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train_flow(args):
    images = _collect_images(args)
    patches = _gather_patches(images, args.patch_size,
                              limit=args.max_patches, seed=args.seed)
    fcfg = FlowConfig(patch_dim=args.patch_size ** 2, n_blocks=args.blocks,
                      hidden=args.hidden, seed=args.seed)
    tcfg = TrainConfig(lr=args.lr, batch_size=args.batch, steps=args.steps,
                       seed=args.seed)
    flow, trace = train_flow(patches, tcfg, fcfg)
    pio.save_checkpoint(flow, args.out)
    outputs = [args.out]
    if args.report:
        rdir = preport.ensure_dir(args.report)
        curve, csv = _join(rdir, "train_loss.png"), _join(rdir, "train_loss.csv")
        preport.save_loss_curve(trace, curve, title="patch flow training")
        preport.write_csv(csv, ["step", "loss"],
                          [(i, float(v)) for i, v in enumerate(trace)])
        outputs += [curve, csv]
    _manifest_for(args, outputs, inputs=list(args.images or []),
                  metrics={"final_loss": float(trace[-1])})
    print("trained flow on %d patches, final loss %.4f -> %s"
          % (patches.shape[0], trace[-1], args.out))
    return 0


def cmd_train_cflow(args):
    images = _collect_images(args)
    conditions = [pio.read_image(p) for p in args.conditions]
    if len(conditions) != len(images):
        raise ValueError("need one --conditions image per input image")
    pat, cond = [], []
    for img, cimg in zip(images, conditions):
        if img.shape != cimg.shape:
            raise ValueError("condition image shape %s != image shape %s"
                             % (cimg.shape, img.shape))
        pat.append(_dense_patches(img, args.patch_size))
        cond.append(_dense_patches(cimg, args.patch_size))
    patches = np.concatenate(pat, axis=0)
    conds = np.concatenate(cond, axis=0)
    if args.max_patches is not None and patches.shape[0] > args.max_patches:
        rng = np.random.default_rng(args.seed)
        keep = rng.choice(patches.shape[0], size=args.max_patches, replace=False)
        patches, conds = patches[keep], conds[keep]
    dim = args.patch_size ** 2
    fcfg = FlowConfig(patch_dim=dim, n_blocks=args.blocks, hidden=args.hidden,
                      cond_dim=dim, seed=args.seed)
    tcfg = TrainConfig(lr=args.lr, batch_size=args.batch, steps=args.steps,
                       seed=args.seed)
    flow, trace = train_cflow(patches, conds, tcfg, fcfg)
    pio.save_checkpoint(flow, args.out)
    outputs = [args.out]
    if args.report:
        curve = _join(preport.ensure_dir(args.report), "train_loss.png")
        preport.save_loss_curve(trace, curve, title="conditional patch flow training")
        outputs.append(curve)
    _manifest_for(args, outputs,
                  inputs=list(args.images or []) + list(args.conditions),
                  metrics={"final_loss": float(trace[-1])})
    print("trained conditional flow on %d patch pairs, final loss %.4f -> %s"
          % (patches.shape[0], trace[-1], args.out))
    return 0


def cmd_fit_gmm(args):
    images = _collect_images(args)
    patches = _gather_patches(images, args.patch_size,
                              limit=args.max_patches, seed=args.seed)
    cfg = EMConfig(max_iter=args.max_iter, seed=args.seed)
    gmm, trace = gmm_fit(patches, args.components, cfg)
    pio.save_checkpoint(gmm, args.out)
    outputs = [args.out]
    if args.report:
        csv = _join(preport.ensure_dir(args.report), "em_loglik.csv")
        preport.write_csv(csv, ["iteration", "mean_loglik"],
                          [(i, float(v)) for i, v in enumerate(trace)])
        outputs.append(csv)
    _manifest_for(args, outputs, inputs=list(args.images or []),
                  metrics={"final_loglik": float(trace[-1])})
    print("fit %d-component GMM on %d patches, mean loglik %.4f -> %s"
          % (args.components, patches.shape[0], trace[-1], args.out))
    return 0


def cmd_degrade(args):
    images = _collect_images(args)
    if len(images) != 1:
        raise ValueError("degrade expects exactly one input image")
    x = images[0]
    op = task_operator(args.task, x.shape, kernel=_maybe_kernel(args))
    noise = _task_noise(args.task, args)
    y = simulate_observation(op, x, noise_model=noise, seed=args.seed)
    pio.write_image(y, args.out)
    outputs = [args.out]
    if args.save_input:
        pio.write_image(x, args.save_input)
        outputs.append(args.save_input)
    _manifest_for(args, outputs, inputs=list(args.images or []))
    print("degraded %s -> %s  (task=%s, noise=%s %.4g)"
          % (x.shape, y.shape, args.task, noise[0], noise[1]))
    return 0


def _maybe_kernel(args):
    path = getattr(args, "kernel", None)
    if path is None:
        return None
    return pio.read_image(path)


def _square_patch_geometry(in_shape, patch_dim):
    s = int(round(patch_dim ** 0.5))
    if s * s != patch_dim:
        raise ValueError("model patch dimension %d is not a square" % patch_dim)
    return PatchGeometry(in_shape[0], in_shape[1], s, s)


def _build_prior(args, in_shape, n_subset):
    if args.prior == "none":
        return None
    if args.model is None:
        raise ValueError("--prior %s needs --model" % args.prior)
    model = pio.load_checkpoint(args.model)
    if args.prior == "patchnr":
        geom = _square_patch_geometry(in_shape, model.dim)
        return make_patchnr_prior(model, geom, n_subset)
    if args.prior == "cpatchnr":
        if args.cond is None:
            raise ValueError("--prior cpatchnr needs --cond")
        cond_img = pio.read_image(args.cond)
        if cond_img.shape != tuple(in_shape):
            raise ValueError("condition image shape %s != image shape %s"
                             % (cond_img.shape, tuple(in_shape)))
        geom = _square_patch_geometry(in_shape, model.dim)
        return make_cpatchnr_prior(model, cond_img, geom, n_subset)
    geom = _square_patch_geometry(in_shape, model.means.shape[1])
    return make_epll_prior(model, geom, n_subset)


def _merge_config(args, cfg):
    """Fill reconstruct args from a TOML experiment config; flags win."""
    for key in ("task", "lam", "iterations", "lr", "n_subset", "init",
                "prior", "crop", "sigma", "n0"):
        src = cfg.get(key) if key not in ("sigma", "n0") \
            else cfg.get("fidelity", {}).get(key)
        if src is not None and getattr(args, key) is None:
            setattr(args, key, src)
    if cfg.get("clamp_final"):
        args.clamp_final = True
    paths = cfg.get("paths", {})
    for src, attr in (("observation", "obs"), ("output", "out"),
                      ("condition", "cond"), ("input", "ref")):
        if paths.get(src) is not None and getattr(args, attr) is None:
            setattr(args, attr, paths[src])
    if args.model is None:
        args.model = paths.get("gmm") if args.prior == "epll" else paths.get("flow")
    op = cfg.get("operator", {})
    if op.get("kernel_path") is not None and args.kernel is None:
        args.kernel = op["kernel_path"]
    if op.get("shape") is not None and args.shape is None:
        args.shape = op["shape"]


def cmd_reconstruct(args):
    if args.config:
        _merge_config(args, pio.load_config(args.config))
    if args.task is None or args.obs is None or args.out is None:
        raise ValueError("reconstruct needs --task, --obs and --out "
                         "(directly or via --config)")
    if args.prior is None:
        args.prior = "patchnr"
    if args.crop is None:
        args.crop = 0
    y = pio.read_image(args.obs)
    preset = _task_preset(args.task)
    in_shape = _infer_in_shape(args.task, y.shape, args.shape)
    op = task_operator(args.task, in_shape, kernel=_maybe_kernel(args))

    lam = preset["lam"] if args.lam is None else args.lam
    iters = preset["iterations"] if args.iterations is None else args.iterations
    lr = preset["lr"] if args.lr is None else args.lr
    n_subset = preset["n_subset"] if args.n_subset is None else args.n_subset
    init = preset["init"] if args.init is None else args.init
    if args.prior == "none":
        lam = 0.0

    # The preset lambdas are calibrated against the unscaled squared error,
    # so --sigma only rescales the data term when given explicitly.
    fid = preset["fidelity"]
    if fid["kind"] == "gaussian":
        sig = args.sigma

        def fidelity(fx, yy):
            return gaussian_fidelity(fx, yy, sigma=sig)
    else:
        n0 = args.n0 if args.n0 is not None else fid["n0"]

        def fidelity(fx, yy):
            return poisson_fidelity(fx, yy, n0)

    prior = _build_prior(args, in_shape, n_subset)
    cfg = ReconstructConfig(iterations=iters, lr=lr, lam=lam, n_subset=n_subset,
                            seed=args.seed, init=init,
                            clamp_final=args.clamp_final,
                            log_every=args.log_every)
    x0 = default_init(y, op, init)
    x, trace = reconstruct(y, op, fidelity, prior, cfg, x0=x0)
    pio.write_image(x, args.out)
    outputs = [args.out]

    metrics = None
    if args.ref:
        ref = pio.read_image(args.ref)
        rep = pmetrics.metric_report(x, ref, crop=args.crop)
        metrics = {"psnr": rep.psnr, "ssim": rep.ssim,
                   "blur_effect": rep.blur_effect}
        print("psnr %.2f dB  ssim %.4f  blur %.4f"
              % (rep.psnr, rep.ssim, rep.blur_effect))
    if args.report:
        rdir = preport.ensure_dir(args.report)
        tr_png = _join(rdir, "objective.png")
        tr_csv = _join(rdir, "objective.csv")
        panel = _join(rdir, "reconstruction.png")
        preport.save_objective_trace(trace, tr_png)
        preport.write_csv(tr_csv, ["iteration", "fidelity", "prior", "objective"],
                          [(i, float(f), float(p), float(o))
                           for i, (f, p, o) in enumerate(trace)])
        panel_imgs = {"observation": y, "init": x0, "reconstruction": x}
        if args.ref:
            panel_imgs["reference"] = pio.read_image(args.ref)
        preport.save_image_panel(panel_imgs, panel)
        outputs += [tr_png, tr_csv, panel]
    _manifest_for(args, outputs, inputs=[args.obs], metrics=metrics)
    print("reconstructed %s from %s  (task=%s, prior=%s, lam=%g, %d iters)"
          % (x.shape, y.shape, args.task, args.prior, lam, iters))
    return 0


def cmd_fbp(args):
    sino = pio.read_image(args.obs)
    in_shape = _infer_in_shape(args.task, sino.shape, args.shape)
    geom = _scaled_ct_geometry(args.task, in_shape)
    if sino.shape != geom.sino_shape:
        raise ValueError("sinogram shape %s does not match geometry %s"
                         % (sino.shape, geom.sino_shape))
    x = fbp(geom, sino, filter=args.filter,
            frequency_scaling=args.frequency_scaling)
    pio.write_image(x, args.out)
    _manifest_for(args, [args.out], inputs=[args.obs])
    print("filtered backprojection %s -> %s (%s, fs=%.3f)"
          % (sino.shape, x.shape, args.filter, args.frequency_scaling))
    return 0


def cmd_evaluate(args):
    ref = pio.read_image(args.ref)
    rows = []
    for path in args.inputs:
        x = pio.read_image(path)
        rep = pmetrics.metric_report(x, ref, crop=args.crop,
                                     range_mode=args.range)
        rows.append((path, round(rep.psnr, 4), round(rep.ssim, 6),
                     round(rep.blur_effect, 6)))
        print("%-40s  psnr %8.2f  ssim %.4f  blur %.4f"
              % (path, rep.psnr, rep.ssim, rep.blur_effect))
    header = ["image", "psnr", "ssim", "blur_effect"]
    outputs = []
    if args.csv:
        preport.write_csv(args.csv, header, rows)
        outputs.append(args.csv)
    if args.report:
        rdir = preport.ensure_dir(args.report)
        csv_path = _join(rdir, "metrics.csv")
        preport.write_csv(csv_path, header, rows)
        panel = _join(rdir, "evaluated.png")
        imgs = {"reference": ref}
        for path in args.inputs[:5]:
            imgs[path.rsplit("/", 1)[-1]] = pio.read_image(path)
        preport.save_image_panel(imgs, panel)
        outputs.extend([csv_path, panel])
    if outputs:
        _manifest_for(args, outputs, inputs=[args.ref] + list(args.inputs))
    return 0


def cmd_score_patches(args):
    flow = pio.load_checkpoint(args.model)
    groups = {}
    rows = []
    for path in args.images:
        img = pio.read_image(path)
        geom = PatchGeometry(img.shape[0], img.shape[1],
                             args.patch_size, args.patch_size)
        if args.sample is not None and args.sample < geom.n_patches:
            if args.seed is None:
                raise ValueError("--sample requires --seed")
            rng = np.random.default_rng(args.seed)
            idx = sample_patch_indices(geom, args.sample, rng)
        else:
            idx = np.arange(geom.n_patches)
        patches = extract_patches(img, geom, idx)
        values = nll(flow, patches)
        name = path.rsplit("/", 1)[-1]
        groups[name] = values
        rows.append((path, patches.shape[0], round(float(values.mean()), 4),
                     round(float(values.std()), 4)))
        print("%-40s  %6d patches  mean nll %10.4f  std %8.4f"
              % (path, patches.shape[0], values.mean(), values.std()))
    outputs = []
    if args.csv:
        preport.write_csv(args.csv, ["image", "n_patches", "mean_nll", "std_nll"], rows)
        outputs.append(args.csv)
    if args.report:
        hist = _join(preport.ensure_dir(args.report), "nll_histogram.png")
        preport.save_nll_histograms(groups, hist)
        outputs.append(hist)
    if outputs:
        _manifest_for(args, outputs, inputs=list(args.images))
    return 0


def cmd_analysis(args):
    from . import analysis as pana
    from .flow import make_affine_flow

    seed = args.seed if args.seed is not None else 0
    rng = np.random.default_rng(seed)
    rows = []

    # 1. closed-form induced patch density vs. empirical histogram
    inst = pana.TinyInstance(
        (2, 2), PatchGeometry(2, 2, 1, 2),
        components=[(0.6, np.array([-1.0, 0.5, 0.2, -0.4]),
                     np.array([0.4, 0.7, 0.5, 0.6])),
                    (0.4, np.array([1.2, -0.3, -0.8, 0.9]),
                     np.array([0.6, 0.3, 0.8, 0.5]))])
    err = pana.induced_patch_density_check(inst, n_samples=200_000, seed=seed)
    rows.append(("induced_density_sup_error", err, err < 0.05))

    # 2. Gaussian sandwich on a bi-Lipschitz affine flow
    scales = rng.uniform(0.7, 1.4, size=4)
    flow, k_lip, l_lip = make_affine_flow(scales, rng.normal(size=4) * 0.3)
    slack = pana.density_sandwich_check(flow, k_lip, l_lip, n_points=20_000, seed=seed)
    rows.append(("density_sandwich_min_slack", slack, slack >= -1e-9))

    # 3. tail decay slope on a single 2x2 patch (d = 4, brute-forceable)
    geom = PatchGeometry(2, 2, 2, 2)
    flow2, k2, l2 = make_affine_flow(np.full(4, 2.0), np.full(4, 1.0))
    radii = np.array([60.0, 80.0, 110.0, 160.0])
    res = pana.tail_decay_check(flow2, geom, rho=4.0, radii=radii,
                                k_lip=k2, l_lip=l2, n_dirs=32,
                                n_box_samples=10_000, seed=seed)
    pred = -4.0 / (2.0 * 4.0 * 2.0 ** 2)
    slope_err = abs(res["slope"] - pred) / abs(pred)
    rows.append(("tail_decay_slope_rel_error", slope_err, slope_err < 0.05))

    # 4. expanding-box mass stabilization for a flow whose pushforward
    #    sits well inside the small box
    flow3, k3, l3 = make_affine_flow(np.ones(4), np.full(4, 0.3))
    res3 = pana.tail_decay_check(flow3, geom, rho=4.0,
                                 radii=np.array([2.0, 3.0, 4.0, 6.0]),
                                 k_lip=k3, l_lip=l3, n_dirs=32,
                                 n_box_samples=400_000, seed=seed)
    rows.append(("box_mass_rel_change", res3["box_rel_change"],
                 res3["box_rel_change"] < 0.01))

    ok = all(r[2] for r in rows)
    for name, value, passed in rows:
        print("%-32s  %12.6g  %s" % (name, value, "pass" if passed else "FAIL"))
    if args.report:
        rdir = preport.ensure_dir(args.report)
        preport.write_csv(_join(rdir, "analysis.csv"), ["check", "value", "pass"],
                          [(n, float(v), bool(p)) for n, v, p in rows])
        preport.save_decay_curve(res["radii"], res["log_phi_max"],
                                 res["slope"], _join(rdir, "tail_decay.png"))
    return 0 if ok else 1


def cmd_presets(args):
    print("%-12s %8s %10s %8s %8s" % ("task", "lambda", "n_subset", "iters", "lr"))
    for task, lam, n_subset, iters, lr in ppresets.preset_rows():
        print("%-12s %8g %10d %8d %8g" % (task, lam, n_subset, iters, lr))
    tp = ppresets.TRAIN_PRESET
    print("\ntraining: lr %g, batch %d, %d steps, %d hidden, %d blocks"
          % (tp["lr"], tp["batch_size"], tp["steps"], tp["hidden"], tp["n_blocks"]))
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def _add_source_args(p, phantom=False):
    p.add_argument("--images", nargs="+", default=None, help="input image files")
    p.add_argument("--make-texture", type=int, default=0, metavar="N",
                   help="generate N synthetic texture images")
    if phantom:
        p.add_argument("--make-phantom", choices=["head", "disk"], default=None,
                       help="generate a synthetic phantom")
    p.add_argument("--size", default="96", help="synthetic image size (N or HxW)")


def _add_train_args(p):
    p.add_argument("--patch-size", type=int, default=6)
    p.add_argument("--steps", type=int, default=5000)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--hidden", type=int, default=512)
    p.add_argument("--blocks", type=int, default=5)
    p.add_argument("--max-patches", type=int, default=None,
                   help="cap the training patch pool")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="checkpoint output path")
    p.add_argument("--report", default=None, help="directory for figures/CSV")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="patchnr",
        description="patch-prior image reconstruction: train priors, degrade, reconstruct, evaluate")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-flow", help="train a coupling-flow patch prior")
    _add_source_args(p)
    _add_train_args(p)
    p.set_defaults(func=cmd_train_flow)

    p = sub.add_parser("train-cflow", help="train a conditional coupling-flow patch prior")
    _add_source_args(p)
    p.add_argument("--conditions", nargs="+", required=True,
                   help="condition images aligned with --images")
    _add_train_args(p)
    p.set_defaults(func=cmd_train_cflow)

    p = sub.add_parser("fit-gmm", help="fit a Gaussian mixture patch prior")
    _add_source_args(p)
    p.add_argument("--patch-size", type=int, default=6)
    p.add_argument("--components", type=int, default=20)
    p.add_argument("--max-iter", type=int, default=100)
    p.add_argument("--max-patches", type=int, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_fit_gmm)

    p = sub.add_parser("degrade", help="apply a task's forward operator and noise")
    _add_source_args(p, phantom=True)
    p.add_argument("--task", required=True,
                   choices=["sr", "ct_full", "ct_limited", "deblur", "identity"])
    p.add_argument("--kernel", default=None, help="blur kernel image (deblur)")
    p.add_argument("--sigma", type=float, default=None, help="override noise std")
    p.add_argument("--n0", type=float, default=None, help="override photon count")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--save-input", default=None,
                   help="also save the clean input image")
    p.set_defaults(func=cmd_degrade)

    p = sub.add_parser("reconstruct", help="variational reconstruction with a patch prior")
    p.add_argument("--config", default=None,
                   help="TOML experiment config; explicit flags override it")
    p.add_argument("--task", default=None,
                   choices=["sr", "ct_full", "ct_limited", "deblur", "identity"])
    p.add_argument("--obs", default=None, help="observation image/sinogram")
    p.add_argument("--prior", default=None,
                   choices=["patchnr", "cpatchnr", "epll", "none"])
    p.add_argument("--model", default=None, help="prior checkpoint")
    p.add_argument("--cond", default=None, help="condition image (cpatchnr)")
    p.add_argument("--shape", default=None, help="image shape (N or HxW)")
    p.add_argument("--kernel", default=None)
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--n-subset", type=int, default=None)
    p.add_argument("--init", default=None,
                   choices=["observation", "zeros", "bicubic", "fbp"])
    p.add_argument("--sigma", type=float, default=None,
                   help="scale the squared-error term by 1/(2 sigma^2)")
    p.add_argument("--n0", type=float, default=None,
                   help="photon count for the Poisson data term")
    p.add_argument("--clamp-final", action="store_true")
    p.add_argument("--log-every", type=int, default=50)
    p.add_argument("--ref", default=None, help="reference image for metrics")
    p.add_argument("--crop", type=int, default=None)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("fbp", help="filtered backprojection baseline")
    p.add_argument("--task", default="ct_full", choices=["ct_full", "ct_limited"])
    p.add_argument("--obs", required=True, help="sinogram")
    p.add_argument("--shape", default=None)
    p.add_argument("--filter", default="Hann", choices=["Hann", "Ram-Lak"])
    p.add_argument("--frequency-scaling", type=float, default=0.641)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fbp)

    p = sub.add_parser("evaluate", help="PSNR/SSIM/blur metrics against a reference")
    p.add_argument("--ref", required=True)
    p.add_argument("--inputs", nargs="+", required=True)
    p.add_argument("--crop", type=int, default=0)
    p.add_argument("--range", default="unit", choices=["unit", "adaptive"])
    p.add_argument("--csv", default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("score-patches", help="per-image patch NLL under a trained flow")
    p.add_argument("--model", required=True)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--patch-size", type=int, default=6)
    p.add_argument("--sample", type=int, default=None,
                   help="score a random patch subset instead of all patches")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--csv", default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_score_patches)

    p = sub.add_parser("analysis", help="run the density/decay verification suite")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--report", default=None)
    p.set_defaults(func=cmd_analysis)

    p = sub.add_parser("presets", help="print the task hyperparameter profiles")
    p.set_defaults(func=cmd_presets)

    return parser


def _failing_module(exc):
    """Name the deepest package module on the exception's traceback."""
    module = "cli"
    for frame, _ in traceback.walk_tb(exc.__traceback__):
        name = frame.f_globals.get("__name__", "")
        if name.startswith("patchnr"):
            module = name.rsplit(".", 1)[-1]
    return module


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; normalize other codes
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single CLI failure funnel
        print("error (%s): %s" % (_failing_module(exc), exc), file=sys.stderr)
        if getattr(args, "debug", False):
            traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
