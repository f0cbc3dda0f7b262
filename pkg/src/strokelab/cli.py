"""Batch command line front-end binding the whole pipeline.

Subcommands cover the full workflow: ``register`` and ``fit-levels``
produce per-drawing sidecars, ``analyze`` turns a dataset plus sidecars
into report tables, ``train-disturbers`` fits the three disturbance models
of one style, ``synthesize`` draws new sketches over a tracing, and
``rasterize`` / ``export-svg`` / ``compare-synthetic`` are one-shot
utilities.

Dataset convention: a flat directory of exchange-format sketch JSON files,
one sketch per file.  Drawings pair with the tracing sharing their
prompt_id, so each prompt needs exactly one sketch with group "tracing".
Pipeline products are sidecar files named after the sketch file --
``<name>.reg.json`` for the pixel-level registration, ``<name>.levels.json``
for the multi-level fit.  Sidecars are searched next to the sketches
unless a separate sidecar directory is given, so a dataset directory that
has been through ``register`` and ``fit-levels`` is self-contained.

Exit codes: 0 on success, 1 on validation or usage errors, 2 on I/O
errors.  Progress goes to stderr; every file is written atomically and
re-running a subcommand on identical inputs yields byte-identical outputs.
"""

from __future__ import annotations

import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import click
import numpy as np

from . import __version__
from .analysis import (
    Histogram,
    closest_distance_histogram,
    compare_line_image,
    compute_cdr,
    is_valid_drawing,
    ordering_costs,
    pixel_displacement_histogram,
    scaffold_errors,
    temporal_profile,
    valid_strokes,
)
from .config import CONFIG_FORMAT_VERSION, Config, load_config
from .core import Sketch, closest_point_on_polyline
from .disturber import (
    KINDS,
    MODEL_FORMAT_VERSION,
    DisturberSet,
    TrainConfig,
    build_training_pairs,
    load_disturber_set,
    save_disturber_set,
    train_disturber,
)
from .errors import StrokeLabError, ValidationError
from .pixreg import RegistrationConfig, register_pixel_level, score
from .raster import rasterize
from .report import DrawingRecord, emit_report
from .simfit import MultiLevelRegistration, fit_levels
from .sketch_io import (
    FORMAT_VERSION,
    export_png,
    export_svg,
    load_sketch,
    save_sketch,
    sketch_from_dict,
    sketch_to_dict,
    write_text_atomic,
)
from .synthesis import synthesize

PROG = "strokelab"

_STYLE_CHOICES = ("novice", "professional", "N", "P")
_STYLE_ALIASES = {"n": "novice", "p": "professional"}

_VERSION_MESSAGE = (
    f"%(prog)s %(version)s (sketch format {FORMAT_VERSION}, "
    f"model format {MODEL_FORMAT_VERSION}, config format {CONFIG_FORMAT_VERSION})"
)


# ---------------------------------------------------------------------------
# Shared plumbing


def _progress(tag: str, message: str) -> None:
    click.echo(f"[{tag}] {message}", err=True)


def _write_json(path: Path, obj: dict) -> None:
    write_text_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _echo_config(out_dir: Path, cfg: Config) -> None:
    _write_json(out_dir / "effective-config.json", cfg.to_dict())


def _make_out_dir(value: str | None, cfg: Config, flag: str) -> Path:
    value = value or cfg.io.output_dir
    if not value:
        raise ValidationError(f"{flag} is required (or set io.output_dir in the config)")
    out = Path(value)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dataset_dir(value: str | None, cfg: Config) -> Path:
    value = value or cfg.io.dataset_dir
    if not value:
        raise ValidationError("--dataset is required (or set io.dataset_dir in the config)")
    root = Path(value)
    if not root.is_dir():
        raise ValidationError(f"dataset directory {root} does not exist")
    return root


def _is_sketch_file(path: Path) -> bool:
    name = path.name
    if not name.endswith(".json") or name == "effective-config.json":
        return False
    return not (name.endswith(".reg.json") or name.endswith(".levels.json"))


def _load_dataset(root: Path) -> tuple[dict[str, Sketch], list[tuple[str, Sketch]]]:
    """All sketches under root, split into tracings by prompt and drawings by file."""
    files = sorted(p for p in root.iterdir() if p.is_file() and _is_sketch_file(p))
    if not files:
        raise ValidationError(f"no sketch files in {root}")
    tracings: dict[str, Sketch] = {}
    drawings: list[tuple[str, Sketch]] = []
    for path in files:
        sketch = load_sketch(path)
        if sketch.group == "tracing":
            if sketch.prompt_id in tracings:
                raise ValidationError(f"prompt {sketch.prompt_id!r} has more than one tracing")
            tracings[sketch.prompt_id] = sketch
        else:
            drawings.append((path.name[: -len(".json")], sketch))
    return tracings, drawings


def _tracing_for(tracings: dict[str, Sketch], sketch: Sketch, name: str) -> Sketch:
    try:
        return tracings[sketch.prompt_id]
    except KeyError:
        raise ValidationError(f"{name}: no tracing for prompt {sketch.prompt_id!r}") from None


def _read_sidecar(path: Path, hint: str) -> dict:
    if not path.is_file():
        raise ValidationError(f"missing sidecar {path} ({hint})")
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: expected a JSON object")
    return obj


def _reg_e_star(side: Path, name: str) -> float | None:
    """Best registration score from the reg sidecar, when one exists."""
    path = side / f"{name}.reg.json"
    if not path.is_file():
        return None
    obj = _read_sidecar(path, "re-run register")
    try:
        return max(float(it["E"]) for it in obj["iterations"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"{path}: malformed registration sidecar") from exc


def _map_jobs(fn, items, jobs: int) -> list:
    """fn over items, optionally on a thread pool; result order follows items."""
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _normalize_style(style: str) -> str:
    style = style.lower()
    return _STYLE_ALIASES.get(style, style)


def _merge_histograms(parts: list[Histogram]) -> Histogram:
    total = parts[0].counts.copy()
    for h in parts[1:]:
        total = total + h.counts
    return Histogram(parts[0].bin_edges, total)


def _mean_closest_distance(src: Sketch, dst: Sketch) -> float:
    """Mean over src content points of the distance to dst's nearest stroke."""
    polys = [s.xy for s in dst.content_strokes()]
    pts = src.points_xy()
    if not polys or not len(pts):
        raise ValidationError("both sketches need content strokes to compare")
    best = np.full(len(pts), np.inf)
    for poly in polys:
        if len(poly) < 2:
            continue
        dist, _, _ = closest_point_on_polyline(pts, poly)
        best = np.minimum(best, dist)
    return float(best.mean())


# ---------------------------------------------------------------------------
# Command group


@click.group(name=PROG, no_args_is_help=False)
@click.version_option(version=__version__, prog_name=PROG, message=_VERSION_MESSAGE)
@click.option(
    "--config",
    "config_path",
    type=click.Path(dir_okay=False),
    default=None,
    help="JSON config file; command line flags override its values.",
)
@click.pass_context
def cli(ctx: click.Context, config_path: str | None) -> None:
    """Register, analyze, and synthesize vector sketches in batch."""
    ctx.obj = load_config(config_path)


@cli.command()
@click.option("--dataset", "dataset_dir", type=click.Path(file_okay=False), default=None)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--iters", type=int, default=None, help="registration iterations")
@click.option("--omega", type=float, default=None, help="precision weight in the score")
@click.option("--tolerance", type=int, default=None, help="pixel match tolerance")
@click.option("--sigma-field", type=float, default=None, help="displacement smoothing sigma")
@click.pass_obj
def register(cfg: Config, dataset_dir, out_dir, jobs, iters, omega, tolerance, sigma_field):
    """Register every drawing onto its prompt's tracing (.reg.json sidecars)."""
    cfg = cfg.override(
        "registration", iters=iters, omega=omega, tolerance=tolerance, sigma_field=sigma_field
    )
    root = _dataset_dir(dataset_dir, cfg)
    out = _make_out_dir(out_dir, cfg, "--out-dir")
    tracings, drawings = _load_dataset(root)
    for name, sketch in drawings:
        _tracing_for(tracings, sketch, name)

    reg_cfg = RegistrationConfig(
        iterations=cfg.registration.iters,
        omega=cfg.registration.omega,
        tolerance=cfg.registration.tolerance,
        sigma_field=cfg.registration.sigma_field,
    )

    def work(item):
        name, sketch = item
        return name, register_pixel_level(sketch, tracings[sketch.prompt_id], reg_cfg)

    results = _map_jobs(work, drawings, jobs)
    _echo_config(out, cfg)
    for name, result in results:
        payload = result.to_dict()
        payload["registered"] = sketch_to_dict(result.registered)
        _write_json(out / f"{name}.reg.json", payload)
        state = "valid" if result.is_valid() else "invalid"
        _progress(
            "register",
            f"{name}: E*={result.best.E:.4f} at iteration {result.chosen} ({state})",
        )


@cli.command("fit-levels")
@click.option("--dataset", "dataset_dir", type=click.Path(file_okay=False), default=None)
@click.option(
    "--reg-dir",
    type=click.Path(file_okay=False),
    default=None,
    help="where .reg.json sidecars live [default: the dataset directory]",
)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
@click.pass_obj
def fit_levels_cmd(cfg: Config, dataset_dir, reg_dir, out_dir):
    """Fit sketch- and stroke-level transforms (.levels.json sidecars)."""
    root = _dataset_dir(dataset_dir, cfg)
    out = _make_out_dir(out_dir, cfg, "--out-dir")
    side = Path(reg_dir) if reg_dir else root
    tracings, drawings = _load_dataset(root)
    _echo_config(out, cfg)
    for name, sketch in drawings:
        payload = _read_sidecar(side / f"{name}.reg.json", "run register first")
        if "registered" not in payload:
            raise ValidationError(f"{name}.reg.json has no registered sketch")
        registered = sketch_from_dict(payload["registered"], where=f"{name}.reg.json")
        multi = fit_levels(sketch, registered)
        _write_json(out / f"{name}.levels.json", multi.to_dict())
        t = multi.sketch_transform
        _progress(
            "fit-levels",
            f"{name}: sketch transform theta={t.theta_deg:.2f} deg "
            f"scale={t.scale:.4f} shift={t.translation_norm:.2f} px",
        )


@cli.command()
@click.option("--dataset", "dataset_dir", type=click.Path(file_okay=False), default=None)
@click.option(
    "--sidecars",
    "sidecar_dir",
    type=click.Path(file_okay=False),
    default=None,
    help="where .reg.json/.levels.json sidecars live [default: the dataset directory]",
)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None)
@click.option("--jobs", type=click.IntRange(min=1), default=1, show_default=True)
@click.option("--rho", type=float, default=None, help="commonly-drawn-region radius, px")
@click.option("--bins", type=int, default=None, help="temporal bins per drawing")
@click.option("--tolerance", type=int, default=None, help="pixel match tolerance")
@click.pass_obj
def analyze(cfg: Config, dataset_dir, sidecar_dir, out_dir, jobs, rho, bins, tolerance):
    """Error, temporal, and ordering tables plus histograms and region maps."""
    cfg = cfg.override("analysis", rho=rho, bins=bins).override("registration", tolerance=tolerance)
    root = _dataset_dir(dataset_dir, cfg)
    out = _make_out_dir(out_dir, cfg, "--out")
    side = Path(sidecar_dir) if sidecar_dir else root
    tracings, drawings = _load_dataset(root)

    def work(item):
        name, sketch = item
        tracing = _tracing_for(tracings, sketch, name)
        multi = MultiLevelRegistration.from_dict(
            _read_sidecar(side / f"{name}.levels.json", "run register and fit-levels first")
        )
        errors = scaffold_errors(
            multi,
            tracing,
            tolerance=cfg.registration.tolerance,
            omega=cfg.registration.omega,
            e_star=_reg_e_star(side, name),
        )
        record = DrawingRecord(
            prompt_id=sketch.prompt_id,
            user_id=sketch.user_id,
            group=sketch.group,
            errors=errors,
            temporal=temporal_profile(sketch, bins=cfg.analysis.bins),
            ordering=ordering_costs(sketch),
        )
        return record, multi

    analysed = _map_jobs(work, drawings, jobs)
    records = [record for record, _ in analysed]

    # Valid drawings only feed the cross-drawing aggregates; every drawing
    # keeps its row in the error table either way.
    by_group: dict[str, list[tuple[str, MultiLevelRegistration]]] = {}
    for record, multi in analysed:
        if record.errors.valid:
            by_group.setdefault(record.group, []).append((record.prompt_id, multi))

    histograms: dict[str, dict[str, Histogram]] = {}
    for group in sorted(by_group):
        items = by_group[group]
        closest = [
            closest_distance_histogram(
                [m.pixel_level for p, m in items if p == prompt], [tracings[prompt]]
            )
            for prompt in sorted({p for p, _ in items})
        ]
        displacement = [
            pixel_displacement_histogram(m.stroke_level, m.pixel_level) for _, m in items
        ]
        histograms[group] = {
            "closest_distance": _merge_histograms(closest),
            "pixel_displacement": _merge_histograms(displacement),
        }

    emit_report(records, out, histograms)
    _echo_config(out, cfg)
    _progress("analyze", f"{len(records)} drawings -> {out / 'drawing_errors.csv'}")

    for group in sorted(by_group):
        per_prompt: dict[str, list[Sketch]] = {}
        for prompt, multi in by_group[group]:
            per_prompt.setdefault(prompt, []).append(multi.pixel_level)
        for prompt in sorted(per_prompt):
            levels = per_prompt[prompt]
            if len(levels) < 2:
                continue
            cdr = compute_cdr(levels, radius=cfg.analysis.rho)
            png = out / f"cdr_{prompt}_{group}.png"
            export_png(cdr, png)
            _progress(
                "analyze",
                f"{png.name}: {int(cdr.foreground_mask().sum())} common px "
                f"over {len(levels)} drawings",
            )


@cli.command("compare-synthetic")
@click.option("--synthetic", "synthetic_path", type=click.Path(dir_okay=False), required=True)
@click.option("--tracing", "tracing_path", type=click.Path(dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--tolerance", type=int, default=None, help="pixel match tolerance")
@click.pass_obj
def compare_synthetic(cfg: Config, synthetic_path, tracing_path, out_path, tolerance):
    """Agreement metrics between a synthetic drawing and its tracing."""
    cfg = cfg.override("registration", tolerance=tolerance)
    synthetic = load_sketch(synthetic_path)
    tracing = load_sketch(tracing_path)
    p, r = compare_line_image(
        rasterize(synthetic, width=1.0), tracing, tolerance=cfg.registration.tolerance
    )
    payload = {
        "format_version": 1,
        "synthetic": Path(synthetic_path).name,
        "tracing": Path(tracing_path).name,
        "precision": p,
        "recall": r,
        "score": cfg.registration.omega * p + r,
        "mean_distance_to_tracing": _mean_closest_distance(synthetic, tracing),
        "mean_distance_from_tracing": _mean_closest_distance(tracing, synthetic),
    }
    _write_json(Path(out_path), payload)
    _progress(
        "compare-synthetic",
        f"{payload['synthetic']}: P={p:.4f} R={r:.4f} "
        f"mean distance {payload['mean_distance_to_tracing']:.2f} px",
    )


@cli.command("train-disturbers")
@click.option("--dataset", "dataset_dir", type=click.Path(file_okay=False), default=None)
@click.option(
    "--sidecars",
    "sidecar_dir",
    type=click.Path(file_okay=False),
    default=None,
    help="where .reg.json/.levels.json sidecars live [default: the dataset directory]",
)
@click.option("--style", type=click.Choice(_STYLE_CHOICES, case_sensitive=False), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.option("--seed", type=int, default=None, help="training seed [default: synthesis.seed]")
@click.option("--epochs", type=int, default=200, show_default=True)
@click.option("--lr", type=float, default=0.01, show_default=True)
@click.pass_obj
def train_disturbers(cfg: Config, dataset_dir, sidecar_dir, style, out_dir, seed, epochs, lr):
    """Fit the extrinsic, intrinsic, and point disturbers of one style."""
    cfg = cfg.override("synthesis", seed=seed)
    style = _normalize_style(style)
    root = _dataset_dir(dataset_dir, cfg)
    side = Path(sidecar_dir) if sidecar_dir else root
    tracings, drawings = _load_dataset(root)

    multis: list[MultiLevelRegistration] = []
    filters: list[list[bool]] = []
    for name, sketch in drawings:
        if sketch.group != style:
            continue
        tracing = _tracing_for(tracings, sketch, name)
        multi = MultiLevelRegistration.from_dict(
            _read_sidecar(side / f"{name}.levels.json", "run register and fit-levels first")
        )
        e_star = _reg_e_star(side, name)
        if e_star is None:
            e_star = score(
                rasterize(multi.pixel_level, width=1.0),
                rasterize(tracing, width=1.0),
                omega=cfg.registration.omega,
                tolerance=cfg.registration.tolerance,
            ).E
        if not is_valid_drawing(e_star):
            _progress("train", f"skipping {name}: E*={e_star:.4f} (invalid registration)")
            continue
        multis.append(multi)
        filters.append(valid_strokes(multi.stroke_level, tracing))
    if not multis:
        raise ValidationError(f"no validly registered {style} drawings to train on")

    pairs = build_training_pairs(multis, style, stroke_filter=filters)
    if not pairs["extrinsic"]:
        raise ValidationError(
            "no strokes passed the overlap validity filter; nothing to train on"
        )
    train_cfg = TrainConfig(epochs=epochs, lr=lr, seed=cfg.synthesis.seed)
    models = {}
    for kind in KINDS:
        model = train_disturber(
            pairs[kind], kind, train_cfg, style, hidden=cfg.synthesis.mlp_sizes
        )
        models[kind] = model
        _progress(
            "train",
            f"{kind}: {len(pairs[kind])} pairs, best epoch {model.metadata['best_epoch']}, "
            f"loss {model.metadata['final_loss']:.6f}",
        )

    out = _make_out_dir(out_dir, cfg, "--out")
    _echo_config(out, cfg)
    written = save_disturber_set(
        DisturberSet(style, models["extrinsic"], models["intrinsic"], models["point"]), out
    )
    for path in written:
        _progress("train", f"wrote {path}")


@cli.command()
@click.option("--tracing", "tracing_path", type=click.Path(dir_okay=False), required=True)
@click.option("--style", type=click.Choice(_STYLE_CHOICES, case_sensitive=False), required=True)
@click.option("--n1", type=float, default=0.0, show_default=True, help="extrinsic noise level")
@click.option("--n2", type=float, default=0.0, show_default=True, help="intrinsic noise level")
@click.option("--seed", type=int, default=None, help="sampling seed [default: synthesis.seed]")
@click.option("--models", "models_dir", type=click.Path(file_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--svg", "svg_path", type=click.Path(dir_okay=False), default=None)
@click.pass_obj
def synthesize_cmd(cfg: Config, tracing_path, style, n1, n2, seed, models_dir, out_path, svg_path):
    """Draw one synthetic sketch over a tracing at the given noise levels."""
    cfg = cfg.override("synthesis", seed=seed)
    style = _normalize_style(style)
    tracing = load_sketch(tracing_path)
    models = load_disturber_set(models_dir, style)
    result = synthesize(
        tracing,
        style,
        n1,
        n2,
        models,
        seed=cfg.synthesis.seed,
        eps_c=cfg.synthesis.eps_c,
        w_s=cfg.synthesis.w_s,
        w_m=cfg.synthesis.w_m,
    )
    save_sketch(result, out_path)
    if svg_path:
        export_svg(result, svg_path)
    _progress(
        "synthesize",
        f"{Path(out_path).name}: {len(result.strokes)} strokes, "
        f"style={style} n1={n1} n2={n2} seed={cfg.synthesis.seed}",
    )


@cli.command("rasterize")
@click.option("--input", "input_path", type=click.Path(dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--line-width", type=float, default=None, help="override every stroke's width")
@click.option("--all-strokes", is_flag=True, help="include scaffold strokes")
def rasterize_cmd(input_path, out_path, line_width, all_strokes):
    """Render a sketch JSON to a binary PNG."""
    sketch = load_sketch(input_path)
    image = rasterize(sketch, width=line_width, content_only=not all_strokes)
    export_png(image, Path(out_path))
    h, w = image.data.shape
    _progress(
        "rasterize",
        f"{Path(out_path).name}: {w}x{h}, {int(image.foreground_mask().sum())} stroke px",
    )


@cli.command("export-svg")
@click.option("--input", "input_path", type=click.Path(dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def export_svg_cmd(input_path, out_path):
    """Write a sketch JSON as an SVG, one path per stroke in draw order."""
    sketch = load_sketch(input_path)
    export_svg(sketch, Path(out_path))
    _progress("export-svg", f"{Path(out_path).name}: {len(sketch.strokes)} paths")


# ---------------------------------------------------------------------------
# Entry points


def run(argv: list[str] | None = None) -> int:
    """Dispatch one invocation and map failures onto the exit code contract."""
    try:
        cli.main(args=argv, prog_name=PROG, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        if exc.ctx is not None:
            click.echo(exc.ctx.get_usage(), err=True)
        click.echo(f"{PROG}: error: {exc.format_message()}", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.exceptions.Abort:
        click.echo(f"{PROG}: aborted", err=True)
        return 130
    except StrokeLabError as exc:
        if isinstance(exc.__cause__, OSError):
            click.echo(f"{PROG}: i/o error: {exc}", err=True)
            return 2
        click.echo(f"{PROG}: error: {exc}", err=True)
        return 1
    except OSError as exc:
        click.echo(f"{PROG}: i/o error: {exc}", err=True)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
