"""Command-line surface: training, explaining, evaluating, searching, serving.

Every run writes a manifest recording the resolved command line, configuration,
seeds, input hashes and output files; ``masklab rerun <manifest>`` replays it.
A ``--config FILE`` option (simple ``key=value`` lines) supplies defaults that
explicit flags override.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .datasets import dump_dataset, make_dataset, read_image_png, write_image_png
from .errors import MaskLabError
from .manifest import RunManifest, load_manifest, sha256_file, write_manifest
from .metrics import curve_to_json, deletion_curve, insertion_curve, write_curve_csv
from .models import (TrainConfig, blur_baseline, load_toy_cnn, save_toy_cnn,
                     score, train_toy)
from .optimizer import igos_config, igospp_config, mask2018_config, optimize
from .perturbation import (PatchGrid, PatchSubset, apply_mask, mask_from_json,
                           mask_to_json, subset_to_mask, upsample, write_mask_png)
from .reports import save_curve_plot, save_heatmap_figure, save_stats_figure
from .sag import (SearchConfig, beam_search_mse, build_sag, diverse_roots,
                  mse_statistics, sag_to_dot, sag_to_json)
from .srae import (SraeConfig, XnnBatch, collect_xnn_batch, faithfulness_metric,
                   orthogonality_metric, save_srae, train_srae)

_METHODS = {"igos": igos_config, "igospp": igospp_config, "mask2018": mask2018_config}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    argv = _fold_config_file(argv)
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args, argv)
    except (MaskLabError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _fold_config_file(argv):
    """Splice key=value pairs from --config FILE in front of explicit flags."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        return argv
    path = argv[i + 1]
    pairs = []
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        pairs += [f"--{key.strip().replace('_', '-')}", value.strip()]
    head = 2 if argv and argv[0] == "xnn" else 1
    rest = [a for j, a in enumerate(argv) if j not in (i, i + 1)]
    return rest[:head] + pairs + rest[head:]


def _build_parser():
    parser = argparse.ArgumentParser(prog="masklab", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-toy", help="train the bundled CNN on the synthetic dataset")
    _common(p)
    p.add_argument("--out", required=True, help="model file to write (.sfm)")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--dataset-seed", type=int, default=0)
    p.add_argument("--dataset-size", type=int, default=450)
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--learning-rate", type=float, default=0.08)
    p.add_argument("--hidden-dim", type=int, default=32)
    p.add_argument("--dump-images", default=None, help="also dump the dataset as PNGs + labels.csv")
    p.add_argument("--dump-count", type=int, default=None)
    p.set_defaults(handler=_cmd_train_toy)

    p = sub.add_parser("explain", help="optimize a heatmap for one image")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--class", dest="class_index", type=int, required=True)
    p.add_argument("--method", choices=sorted(_METHODS), default="igospp")
    p.add_argument("--resolution", type=int, choices=(7, 28, 224), default=7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iterations", type=int, default=None)
    p.add_argument("--metric-steps", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(handler=_cmd_explain)

    p = sub.add_parser("evaluate", help="deletion/insertion curves for a saved mask")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--class", dest="class_index", type=int, required=True)
    p.add_argument("--mask", required=True, help="mask JSON file")
    p.add_argument("--steps", type=int, default=49)
    p.add_argument("--baseline-sigma", type=float, default=2.0)
    p.add_argument("--baseline-epsilon", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_evaluate)

    p = sub.add_parser("sag", help="beam-search explanations and build the attention graph")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--class", dest="class_index", type=int, required=True)
    p.add_argument("--beam", type=int, default=50)
    p.add_argument("--tau", type=float, default=0.9)
    p.add_argument("--overlap", type=int, default=1)
    p.add_argument("--max-size", type=int, default=10)
    p.add_argument("--max-roots", type=int, default=5)
    p.add_argument("--grid", type=int, default=7)
    p.add_argument("--baseline-sigma", type=float, default=2.0)
    p.add_argument("--baseline-epsilon", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_sag)

    p = sub.add_parser("stats", help="corpus-level explanation statistics")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--images", required=True, help="directory of PNG images")
    p.add_argument("--class", dest="class_index", type=int, required=True)
    p.add_argument("--beam", type=int, default=30)
    p.add_argument("--tau", type=float, default=0.9)
    p.add_argument("--overlap", type=int, default=1)
    p.add_argument("--max-size", type=int, default=8)
    p.add_argument("--grid", type=int, default=7)
    p.add_argument("--baseline-sigma", type=float, default=2.0)
    p.add_argument("--baseline-epsilon", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_stats)

    p = sub.add_parser("xnn", help="explanation-space tools")
    xnn_sub = p.add_subparsers(dest="xnn_command", required=True)
    p = xnn_sub.add_parser("train", help="fit the explanation autoencoder to a trained scorer")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--class", dest="class_index", type=int, required=True)
    p.add_argument("--n", dest="n_features", type=int, default=2)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--q", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dataset-seed", type=int, default=0)
    p.add_argument("--dataset-size", type=int, default=450)
    p.add_argument("--holdout-fraction", type=float, default=0.25)
    p.add_argument("--max-epochs", type=int, default=4000)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=_cmd_xnn_train)

    p = sub.add_parser("serve", help="HTTP service for the explorer UI")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--images", default=None)
    p.add_argument("--sags", default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8008)
    p.add_argument("--grid", type=int, default=7)
    p.add_argument("--baseline-sigma", type=float, default=2.0)
    p.add_argument("--baseline-epsilon", type=float, default=0.05)
    p.set_defaults(handler=_cmd_serve)

    p = sub.add_parser("render", help="write the masked image for a patch subset")
    _common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--patches", default="", help="comma-separated patch indices")
    p.add_argument("--class", dest="class_index", type=int, default=None)
    p.add_argument("--grid", type=int, default=7)
    p.add_argument("--baseline-sigma", type=float, default=2.0)
    p.add_argument("--baseline-epsilon", type=float, default=0.05)
    p.add_argument("--out", required=True, help="PNG path to write")
    p.set_defaults(handler=_cmd_render)

    p = sub.add_parser("rerun", help="replay a recorded run manifest")
    p.add_argument("manifest")
    p.add_argument("--out", default=None, help="redirect the recorded --out target")
    p.set_defaults(handler=_cmd_rerun)

    return parser


def _common(p):
    p.add_argument("--config", default=None,
                   help="key=value file supplying defaults (flags override)")


def _manifest(args, argv, config, seeds, inputs, outputs, wall_time, path):
    manifest = RunManifest(
        tool="masklab",
        version=__version__,
        command=[args.command] + (["train"] if args.command == "xnn" else []) + argv_tail(argv, args),
        config=config,
        seeds=seeds,
        input_hashes={str(p): sha256_file(p) for p in inputs},
        outputs=[str(o) for o in outputs],
        wall_time=wall_time,
    )
    write_manifest(path, manifest)


def argv_tail(argv, args):
    head = 2 if args.command == "xnn" else 1
    return argv[head:]


# ---------------------------------------------------------------------------
# command handlers


def _cmd_train_toy(args, argv):
    started = time.perf_counter()
    dataset = make_dataset(args.dataset_seed, args.dataset_size)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                         learning_rate=args.learning_rate, hidden_dim=args.hidden_dim)
    report = train_toy(dataset, config, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_toy_cnn(out, report.model)
    outputs = [out]
    if args.dump_images:
        names = dump_dataset(dataset, args.dump_images, args.dump_count)
        outputs += [Path(args.dump_images) / n for n in names]
    print(f"held-out accuracy: {report.holdout_accuracy:.4f}")
    _manifest(args, argv, config=asdict(config),
              seeds={"seed": args.seed, "dataset_seed": args.dataset_seed},
              inputs=[], outputs=outputs,
              wall_time=time.perf_counter() - started,
              path=str(out) + ".manifest.json")
    return 0


def _load_inputs(args):
    model = load_toy_cnn(args.model)
    image = read_image_png(args.image)
    return model, image


def _cmd_explain(args, argv):
    started = time.perf_counter()
    model, image = _load_inputs(args)
    overrides = {"seed": args.seed}
    if args.max_iterations is not None:
        overrides["max_iterations"] = args.max_iterations
    if args.metric_steps is not None:
        overrides["metric_steps"] = args.metric_steps
    config = _METHODS[args.method](args.resolution, **overrides)
    result = optimize(model, image, args.class_index, config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    heat_full = upsample(result.heatmap, image.shape[0], image.shape[1])
    (out / "mask.json").write_text(mask_to_json(result.mask))
    write_mask_png(out / "heatmap.png", result.mask)
    save_heatmap_figure(out / "overlay.png", image, heat_full, title=args.method)
    write_curve_csv(out / "deletion.csv", result.deletion)
    write_curve_csv(out / "insertion.csv", result.insertion)
    (out / "curves.json").write_text(json.dumps(
        {"deletion": json.loads(curve_to_json(result.deletion)),
         "insertion": json.loads(curve_to_json(result.insertion))},
        sort_keys=True, indent=2))
    save_curve_plot(out / "curves.svg", result.deletion, result.insertion,
                    title=f"{args.method} @ {args.resolution}x{args.resolution}")
    print(f"deletion auc {result.deletion.auc:.4f}  insertion auc {result.insertion.auc:.4f}")
    outputs = [out / n for n in ("mask.json", "heatmap.png", "overlay.png",
                                 "deletion.csv", "insertion.csv", "curves.json", "curves.svg")]
    _manifest(args, argv, config=asdict(config),
              seeds={"seed": args.seed},
              inputs=[args.model, args.image], outputs=outputs,
              wall_time=time.perf_counter() - started,
              path=out / "manifest.json")
    return 0


def _cmd_evaluate(args, argv):
    started = time.perf_counter()
    model, image = _load_inputs(args)
    mask = mask_from_json(Path(args.mask).read_text())
    heat_full = upsample(1.0 - mask, image.shape[0], image.shape[1])
    baseline = blur_baseline(image, args.baseline_sigma, model, args.class_index,
                             args.baseline_epsilon)
    deletion = deletion_curve(model, image, heat_full, args.class_index, args.steps, baseline)
    insertion = insertion_curve(model, image, heat_full, args.class_index, args.steps, baseline)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_curve_csv(out / "deletion.csv", deletion)
    write_curve_csv(out / "insertion.csv", insertion)
    (out / "curves.json").write_text(json.dumps(
        {"deletion": json.loads(curve_to_json(deletion)),
         "insertion": json.loads(curve_to_json(insertion))},
        sort_keys=True, indent=2))
    save_curve_plot(out / "curves.svg", deletion, insertion)
    print(f"deletion auc {deletion.auc:.4f}  insertion auc {insertion.auc:.4f}")
    outputs = [out / n for n in ("deletion.csv", "insertion.csv", "curves.json", "curves.svg")]
    _manifest(args, argv,
              config={"steps": args.steps, "baseline_sigma": args.baseline_sigma,
                      "baseline_epsilon": args.baseline_epsilon},
              seeds={}, inputs=[args.model, args.image, args.mask], outputs=outputs,
              wall_time=time.perf_counter() - started,
              path=out / "manifest.json")
    return 0


def _search_config(args, image, model):
    baseline = blur_baseline(image, args.baseline_sigma, model, args.class_index,
                             args.baseline_epsilon)
    return SearchConfig(
        baseline=baseline,
        grid_rows=args.grid,
        grid_cols=args.grid,
        beam_width=args.beam,
        max_subset_size=args.max_size,
        threshold_ratio=args.tau,
        diversity_overlap=args.overlap,
    )


def _cmd_sag(args, argv):
    started = time.perf_counter()
    model, image = _load_inputs(args)
    config = _search_config(args, image, model)
    mses = beam_search_mse(model, image, args.class_index, config)
    roots = diverse_roots(mses, args.overlap, args.max_roots)
    sag = build_sag(model, image, args.class_index, roots, config,
                    image_id=Path(args.image).stem)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sag.json").write_text(sag_to_json(sag) + "\n")
    (out / "sag.dot").write_text(sag_to_dot(sag))
    print(f"{len(mses)} minimal explanations, {len(roots)} diverse roots, "
          f"{len(sag.nodes)} SAG nodes")
    _manifest(args, argv,
              config={"beam": args.beam, "tau": args.tau, "overlap": args.overlap,
                      "max_size": args.max_size, "max_roots": args.max_roots,
                      "grid": args.grid, "baseline_sigma": args.baseline_sigma,
                      "baseline_epsilon": args.baseline_epsilon,
                      "mse_found": len(mses)},
              seeds={}, inputs=[args.model, args.image],
              outputs=[out / "sag.json", out / "sag.dot"],
              wall_time=time.perf_counter() - started,
              path=out / "manifest.json")
    return 0


def _cmd_stats(args, argv):
    started = time.perf_counter()
    model = load_toy_cnn(args.model)
    image_paths = sorted(Path(args.images).glob("*.png"))
    if not image_paths:
        print("error: no PNG images found", file=sys.stderr)
        return 1
    per_image = []
    empty_images = []
    for path in image_paths:
        image = read_image_png(path)
        config = _search_config(args, image, model)
        mses = beam_search_mse(model, image, args.class_index, config)
        per_image.append(mses)
        if not mses:
            empty_images.append(path.name)
    stats = mse_statistics(per_image, args.overlap, args.max_size)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "stats.csv", "w", newline="") as fh:
        fh.write("budget,explainable_fraction\n")
        for size, frac in zip(stats.subset_sizes, stats.explainable_fraction):
            fh.write(f"{size},{frac:.10g}\n")
    (out / "stats.json").write_text(json.dumps({
        "image_count": stats.image_count,
        "subset_sizes": stats.subset_sizes,
        "explainable_fraction": stats.explainable_fraction,
        "mse_counts": {str(k): v for k, v in stats.mse_counts.items()},
        "diverse_counts": {str(k): v for k, v in stats.diverse_counts.items()},
        "multi_explanation_fraction": stats.multi_explanation_fraction,
    }, sort_keys=True, indent=2))
    save_stats_figure(out / "stats.svg", stats)
    print(f"{stats.image_count} images, multi-explanation fraction "
          f"{stats.multi_explanation_fraction:.3f}")
    _manifest(args, argv,
              config={"beam": args.beam, "tau": args.tau, "overlap": args.overlap,
                      "max_size": args.max_size, "grid": args.grid,
                      "baseline_sigma": args.baseline_sigma,
                      "baseline_epsilon": args.baseline_epsilon,
                      "images_without_mse": empty_images},
              seeds={}, inputs=[args.model] + [str(p) for p in image_paths],
              outputs=[out / "stats.csv", out / "stats.json", out / "stats.svg"],
              wall_time=time.perf_counter() - started,
              path=out / "manifest.json")
    return 0


def _cmd_xnn_train(args, argv):
    started = time.perf_counter()
    model = load_toy_cnn(args.model)
    dataset = make_dataset(args.dataset_seed, args.dataset_size)
    n_hold = int(round(len(dataset) * args.holdout_fraction))
    batch = collect_xnn_batch(model, dataset.images[n_hold:], args.class_index)
    heldout = collect_xnn_batch(model, dataset.images[:n_hold], args.class_index)
    config = SraeConfig(n_features=args.n_features, beta=args.beta, eta=args.eta,
                        q=args.q, seed=args.seed, max_epochs=args.max_epochs,
                        learning_rate=args.learning_rate)
    srae = train_srae(batch, config)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_srae(out / "srae.sfm", srae)
    metrics = {
        "train": faithfulness_metric(srae, batch),
        "heldout": faithfulness_metric(srae, heldout),
    }
    if args.n_features >= 2:
        metrics["orthogonality"] = orthogonality_metric(srae, heldout)
    (out / "metrics.json").write_text(json.dumps(metrics, sort_keys=True, indent=2))
    print(f"held-out faithfulness mse {metrics['heldout']['mse']:.6g}")
    _manifest(args, argv,
              config={"n_features": args.n_features, "beta": args.beta,
                      "eta": args.eta, "q": args.q,
                      "max_epochs": args.max_epochs,
                      "learning_rate": args.learning_rate,
                      "holdout_fraction": args.holdout_fraction},
              seeds={"seed": args.seed, "dataset_seed": args.dataset_seed},
              inputs=[args.model],
              outputs=[out / "srae.sfm", out / "metrics.json"],
              wall_time=time.perf_counter() - started,
              path=out / "manifest.json")
    return 0


def _cmd_serve(args, argv):
    import uvicorn

    from .service import create_app, load_session

    session = load_session(args.model, args.images, args.sags,
                           grid_rows=args.grid, grid_cols=args.grid,
                           baseline_sigma=args.baseline_sigma,
                           baseline_epsilon=args.baseline_epsilon)
    uvicorn.run(create_app(session), host=args.host, port=args.port)
    return 0


def _cmd_render(args, argv):
    started = time.perf_counter()
    model, image = _load_inputs(args)
    grid = PatchGrid(args.grid, args.grid, image.shape[0], image.shape[1])
    patches = tuple(int(t) for t in args.patches.split(",") if t.strip() != "")
    subset = PatchSubset(grid, patches)
    if args.class_index is None:
        from .models import gaussian_blur
        baseline = gaussian_blur(image, args.baseline_sigma)
    else:
        baseline = blur_baseline(image, args.baseline_sigma, model, args.class_index,
                                 args.baseline_epsilon)
    masked = apply_mask(image, baseline, subset_to_mask(subset))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_image_png(out, masked)
    _manifest(args, argv,
              config={"patches": list(patches), "grid": args.grid,
                      "baseline_sigma": args.baseline_sigma,
                      "baseline_epsilon": args.baseline_epsilon},
              seeds={}, inputs=[args.model, args.image], outputs=[out],
              wall_time=time.perf_counter() - started,
              path=str(out) + ".manifest.json")
    return 0


def _cmd_rerun(args, argv):
    manifest = load_manifest(args.manifest)
    command = list(manifest.command)
    if args.out is not None:
        if "--out" not in command:
            print("error: recorded command has no --out to redirect", file=sys.stderr)
            return 1
        command[command.index("--out") + 1] = args.out
    return main(command)


if __name__ == "__main__":
    sys.exit(main())
