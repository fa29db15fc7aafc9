"""Command-line interface: ``fame {train,bench,params,explain,gradcheck}``.

Exit codes: 0 success, 1 configuration error, 2 data error, 3 training error.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import experiment as xp
from .data import DataError, prepare
from .explain import count_active_rules, export_mf_curves, importance, trace
from .model import VARIANTS, DimensionError, ModelSpec, canonical_variant, count_params, load_model, predict, save_model
from .training import TrainConfig, gradient_suite, train

EXIT_CONFIG, EXIT_DATA, EXIT_TRAIN = 1, 2, 3

# config key -> TrainConfig field
TRAIN_KEYS = {"lr": "lr", "lambda": "lam", "mbs": "batch_size", "epochs": "epochs",
              "loss": "loss", "seed": "seed", "snapshot": "snapshot"}


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _schema() -> dict:
    return json.loads(resources.files("fame").joinpath("config.schema.json").read_text(encoding="utf-8"))


def _where(path) -> str:
    return ".".join(str(p) for p in path) or "<root>"


def validate_config(doc: dict) -> None:
    """Raise CliError(1) naming the offending key on any schema violation."""
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise CliError(EXIT_CONFIG, f"config error at {_where(e.absolute_path)}: {e.message}")


def load_config(path, overrides: dict | None = None) -> dict:
    """Read, apply ``{section: {key: value}}`` overrides, and validate."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise CliError(EXIT_CONFIG, f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"config file is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise CliError(EXIT_CONFIG, "config error at <root>: expected an object")
    for section, values in (overrides or {}).items():
        for key, value in values.items():
            if value is not None:
                doc.setdefault(section, {})[key] = value
                if section == "train":  # flags beat per-dataset overrides too
                    doc.get("dataset", {}).get("train_overrides", {}).pop(key, None)
    validate_config(doc)
    base = Path(path).resolve().parent
    ds = doc["dataset"]
    ds["path"] = str((base / ds["path"]).resolve())
    if "output" in doc and "dir" in doc["output"]:
        doc["output"]["dir"] = str((base / doc["output"]["dir"]).resolve())
    return doc


def _train_config(section: dict, extra: dict | None = None) -> TrainConfig:
    merged = {**section, **(extra or {})}
    return TrainConfig(**{TRAIN_KEYS[k]: v for k, v in merged.items()})


def _dataset(doc: dict) -> xp.DatasetSpec:
    ds = doc["dataset"]
    return xp.DatasetSpec(
        name=ds.get("name", Path(ds["path"]).stem),
        path=ds["path"],
        target=ds["target"],
        encoding=ds.get("encoding"),
        ratio=ds.get("split_ratio", 0.7),
        split_seed=ds.get("split_seed", 0),
        delimiter=ds.get("delimiter", ","),
        train_overrides={TRAIN_KEYS[k]: v for k, v in ds.get("train_overrides", {}).items()},
    )


def _prepare(ds: xp.DatasetSpec):
    try:
        return prepare(ds.path, ds.target, ds.encoding, ds.ratio, ds.split_seed, ds.delimiter)
    except (OSError, DataError) as exc:
        raise CliError(EXIT_DATA, f"dataset error: {exc}") from None


def _out_dir(doc: dict, flag) -> Path:
    out = Path(flag or doc.get("output", {}).get("dir", "."))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _json_line(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# --- commands ----------------------------------------------------------------------

def cmd_train(args) -> int:
    doc = load_config(args.config, {
        "model": {"variant": args.variant, "P": args.P, "D": args.D},
        "train": {"lr": args.lr, "lambda": args.lam, "mbs": args.mbs, "epochs": args.epochs,
                  "loss": args.loss, "seed": args.seed, "snapshot": args.snapshot},
    })
    if "model" not in doc:
        raise CliError(EXIT_CONFIG, "config error at model: section required for training")
    ds = _dataset(doc)
    try:
        tcfg = _train_config(doc.get("train", {}), doc["dataset"].get("train_overrides"))
        m = doc["model"]
        variant = canonical_variant(m["variant"])
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"config error at model/train: {exc}") from None
    data, norm = _prepare(ds)
    M = data.train.features.shape[1]
    try:
        spec = ModelSpec(variant=variant, P=m.get("P", 5), D=m.get("D"), M=M)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, f"config error at model.D: {exc}") from None
    t0 = time.perf_counter()
    try:
        model, history = train(data, spec, tcfg)
    except (FloatingPointError, ValueError) as exc:
        raise CliError(EXIT_TRAIN, f"training error in train/model: {exc}") from None
    seconds = time.perf_counter() - t0
    out = _out_dir(doc, args.out)
    extra = {
        "dataset": {"name": ds.name, "path": ds.path, "target": ds.target, "encoding": ds.encoding,
                    "split_ratio": ds.ratio, "split_seed": ds.split_seed, "delimiter": ds.delimiter},
        "features": list(data.train.feature_names),
        "normalizer": {"means": norm.means.tolist(), "stds": norm.stds.tolist()},
        "train": {k: getattr(tcfg, f) for k, f in TRAIN_KEYS.items()},
    }
    model_path = out / "model.json"
    save_model(model_path, model, extra)
    history.to_csv(out / "history.csv")
    _json_line({
        "variant": spec.variant, "P": spec.P, "D": spec.D, "M": spec.M, "loss": tcfg.loss, "seed": tcfg.seed,
        "n_params": count_params(spec),
        "test_rmse": xp.rmse(predict(model, data.test.features), data.test.targets),
        "train_rmse": xp.rmse(predict(model, data.train.features), data.train.targets),
        "best_epoch": history.best_epoch + 1, "seconds": round(seconds, 3), "model": str(model_path),
    })
    return 0


def cmd_bench(args) -> int:
    doc = load_config(args.config, {"experiment": {"workers": args.workers}})
    ds = _dataset(doc)
    ex = doc.get("experiment", {})
    try:
        variants = tuple(canonical_variant(v) for v in ex.get("variants", VARIANTS))
        cfg = xp.ExperimentConfig(
            dataset=ds,
            variants=variants,
            Ds=tuple(ex.get("D", (2, 4, 8))),
            P=ex.get("P", 5),
            losses=tuple(ex.get("losses", ("L2",))),
            seeds=tuple(ex.get("seeds", range(1, 11))),
            train=_train_config(doc.get("train", {})),
            workers=ex.get("workers", 1),
        )
        cfg.train_config("L2", 0)  # rejects bad per-dataset overrides early
    except (ValueError, TypeError) as exc:
        raise CliError(EXIT_CONFIG, f"config error at experiment/train: {exc}") from None
    data, _ = _prepare(ds)
    out = _out_dir(doc, args.out)
    t0 = time.perf_counter()
    try:
        results = xp.run_suite(cfg, data)
        code = 0
    except xp.SuiteError as exc:
        print(f"error: training error in experiment: {exc}", file=sys.stderr)
        results, code = exc.partial, EXIT_TRAIN
    _write_bench(results, out)
    if code == 0:
        _json_line({"runs": len(results), "seconds": round(time.perf_counter() - t0, 3), "out": str(out)})
    return code


def _write_bench(results, out: Path) -> None:
    xp.write_results(results, out / "results.csv")
    xp.write_timings(results, out / "timings.csv")
    summaries = xp.summarize(results)
    xp.write_summary(summaries, out / "summary.csv")
    xp.write_ranks(xp.rank_tables(summaries) if summaries else {}, out / "ranks.csv")
    if summaries:
        csv_text, text = xp.render_table(summaries)
        for name, body in (("table.csv", csv_text), ("table.txt", text)):
            (out / name).write_text(body, encoding="utf-8", newline="\n")


def cmd_params(args) -> int:
    try:
        spec = ModelSpec(variant=args.variant, P=args.P, D=args.D, M=args.M)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    print(count_params(spec))
    return 0


def cmd_explain(args) -> int:
    try:
        model, extra = load_model(args.model)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(EXIT_DATA, f"cannot read model file: {exc}") from None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    features = extra.get("features")
    if args.mode == "importance":
        if not model.spec.projected:
            raise CliError(EXIT_CONFIG, f"{model.spec.variant} has no projection layer; importance needs W")
        importance(model, features).to_csv(out / "importance.csv")
        _json_line({"mode": "importance", "file": str(out / "importance.csv")})
        return 0
    if args.mode == "trace":
        if not model.spec.additive:
            raise CliError(EXIT_CONFIG, f"{model.spec.variant} is not additive; traces need FAM/FAME models")
        if not args.input:
            raise CliError(EXIT_CONFIG, "--input is required for mode=trace")
        try:
            x = np.array([float(v) for v in args.input.split(",")])
        except ValueError:
            raise CliError(EXIT_CONFIG, f"--input must be comma-separated numbers, got {args.input!r}") from None
        if x.shape != (model.spec.M,):
            raise CliError(EXIT_DATA, f"--input has {x.size} values, the model expects M={model.spec.M}")
        if args.raw:
            norm = extra.get("normalizer")
            if norm is None:
                raise CliError(EXIT_DATA, "model file carries no normalizer; pass z-scored input")
            x = (x - np.asarray(norm["means"][:-1])) / np.asarray(norm["stds"][:-1])
        t = trace(x, model)
        t.to_json(out / "trace.json")
        _json_line({"mode": "trace", "prediction": t.prediction, "file": str(out / "trace.json")})
        return 0
    # mfs: needs the training rows
    if args.config:
        ds = _dataset(load_config(args.config))
    elif "dataset" in extra:
        d = extra["dataset"]
        ds = xp.DatasetSpec(d.get("name", "data"), d["path"], d["target"], d.get("encoding"),
                            d.get("split_ratio", 0.7), d.get("split_seed", 0), d.get("delimiter", ","))
    else:
        raise CliError(EXIT_CONFIG, "mode=mfs needs --config or a model file that records its dataset")
    data, _ = _prepare(ds)
    if data.train.features.shape[1] != model.spec.M:
        raise CliError(EXIT_DATA, f"dataset has M={data.train.features.shape[1]}, model expects M={model.spec.M}")
    curves = export_mf_curves(model, data.train.features, args.resolution)
    curves.to_csv(out / "mf_curves.csv")
    _json_line({"mode": "mfs", "file": str(out / "mf_curves.csv"),
                "max_active": [int(v) for v in count_active_rules(curves)]})
    return 0


def cmd_gradcheck(args) -> int:
    try:
        variants = [canonical_variant(v) for v in args.variants] if args.variants else None
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from None
    checks = gradient_suite(variants=variants, seeds=range(args.seeds), P=args.P, M=args.M, batch=args.batch)
    worst = max(checks, key=lambda c: c.error)
    _json_line({"checks": len(checks), "max_error": worst.error, "worst": f"{worst.variant}/{worst.loss}/seed{worst.seed}",
                "tolerance": args.tol, "passed": worst.error < args.tol})
    return 0 if worst.error < args.tol else EXIT_TRAIN


# --- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fame", description="Fuzzy additive models: training, benchmarks, explanations.")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one model from a config file")
    t.add_argument("config")
    t.add_argument("--variant")
    t.add_argument("--P", type=int)
    t.add_argument("--D", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--lambda", dest="lam", type=float)
    t.add_argument("--mbs", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--loss", choices=["L2", "LF"])
    t.add_argument("--seed", type=int)
    t.add_argument("--snapshot", choices=["best", "final"])
    t.add_argument("--out", help="output directory (overrides output.dir)")
    t.set_defaults(func=cmd_train)

    b = sub.add_parser("bench", help="run an experiment grid")
    b.add_argument("config")
    b.add_argument("--workers", type=int)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)

    c = sub.add_parser("params", help="print the learnable-parameter count")
    c.add_argument("--variant", required=True)
    c.add_argument("--P", type=int, default=5)
    c.add_argument("--D", type=int)
    c.add_argument("--M", type=int, required=True)
    c.set_defaults(func=cmd_params)

    e = sub.add_parser("explain", help="export importance, a prediction trace or MF curves")
    e.add_argument("model")
    e.add_argument("--mode", choices=["mfs", "trace", "importance"], required=True)
    e.add_argument("--config", help="config whose dataset supplies training rows (mode=mfs)")
    e.add_argument("--input", help="comma-separated feature vector (mode=trace)")
    e.add_argument("--raw", action="store_true", help="--input is in original units; z-score it first")
    e.add_argument("--resolution", type=int, default=512)
    e.add_argument("--out", default=".")
    e.set_defaults(func=cmd_explain)

    g = sub.add_parser("gradcheck", help="finite-difference check of the analytic gradients")
    g.add_argument("--variants", nargs="*")
    g.add_argument("--seeds", type=int, default=5)
    g.add_argument("--P", type=int, default=5)
    g.add_argument("--M", type=int, default=8)
    g.add_argument("--batch", type=int, default=16)
    g.add_argument("--tol", type=float, default=1e-5)
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (DataError, DimensionError) as exc:
        print(f"error: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
