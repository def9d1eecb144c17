"""Command-line entry point: ``fudd <command> --config run.json [overrides]``.

Settings resolve as flags > environment > config file. The environment only
supplies the API key (``FUDD_API_KEY``). Exit codes: 0 success, 2 bad
configuration, 3 bad input data, 4 backend failure, 5 classification failure.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path

from . import catalog, classifier, diffgen, gateway, pipeline
from .embedders import HashingEmbedder, LookupEmbedder
from .vectors import MatrixFormatError

EXIT_CONFIG, EXIT_DATA, EXIT_BACKEND, EXIT_PIPELINE = 2, 3, 4, 5

DEFAULTS: dict = {
    "manifest": None,
    "cache_dir": "fudd-cache",
    "text_embedder": {"kind": "lookup", "path": None, "dim": 64, "seed": 0},
    "templates": None,
    "prefixes": None,
    "pair_examples": None,
    "naive_examples": None,
    "fixtures": None,
    "backend": {
        "endpoint": "https://api.openai.com/v1",
        "model": "gpt-3.5-turbo-0301",
        "temperature": 0.0,
        "max_output_tokens": 1024,
        "timeout": 60.0,
        "parallelism": 4,
        "retry": {"max_attempts": 3, "base_delay": 1.0, "factor": 2.0, "max_delay": 60.0},
        "price_per_1k_input": 0.001,
        "price_per_1k_output": 0.002,
    },
    "experiment": {
        "method": "fudd",
        "base_method": "single_template",
        "k": 5,
        "ks": [1, 2, 3, 5, 10],
        "augment": False,
        "mix_base": False,
        "similarity_mode": "strict",
        "cache_mode": "open",
        "parallelism": 1,
        "skip_errors": False,
    },
    "output": {"dir": "fudd-out"},
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {path + key!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {path + key!r} must be an object")
            out[key] = _merge(base[key], value, f"{path}{key}.")
        else:
            out[key] = value
    return out


def load_config(path: str | None) -> tuple[dict, Path]:
    if path is None:
        return copy.deepcopy(DEFAULTS), Path.cwd()
    p = Path(path)
    try:
        raw = json.loads(p.read_text("utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return _merge(DEFAULTS, raw), p.resolve().parent


class Run:
    """Resolved configuration plus lazily built resources."""

    def __init__(self, cfg: dict, root: Path):
        self.cfg = cfg
        self.root = root

    def path(self, value) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.root / p

    @property
    def exp(self) -> dict:
        return self.cfg["experiment"]

    def manifest(self) -> catalog.DatasetManifest:
        if not self.cfg["manifest"]:
            raise ConfigError("config needs 'manifest'")
        return catalog.load_manifest(self.path(self.cfg["manifest"]))

    def embedder(self):
        spec = self.cfg["text_embedder"]
        if spec["kind"] == "lookup":
            if not spec["path"]:
                raise ConfigError("text_embedder.path is required for the lookup embedder")
            return LookupEmbedder.from_file(self.path(spec["path"]))
        if spec["kind"] == "hashing":
            return HashingEmbedder(int(spec["dim"]), int(spec["seed"]))
        raise ConfigError(f"unknown text_embedder.kind {spec['kind']!r}")

    def templates(self):
        return catalog.load_templates(self.path(self.cfg["templates"]))

    def prefixes(self):
        return diffgen.load_prefixes(self.path(self.cfg["prefixes"]))

    def backend(self):
        if self.cfg["fixtures"]:
            obj = json.loads(self.path(self.cfg["fixtures"]).read_text("utf-8"))
            return gateway.FixtureBackend.from_json(obj)
        b = self.cfg["backend"]
        return gateway.HTTPChatBackend(b["endpoint"], os.environ.get(gateway.API_KEY_ENV), float(b["timeout"]))

    def params(self):
        b = self.cfg["backend"]
        return gateway.GenerationParams(b["model"], float(b["temperature"]), int(b["max_output_tokens"]))

    def policy(self):
        return gateway.RetryPolicy(**self.cfg["backend"]["retry"])

    def examples(self, key: str, default: str):
        from .prompts import load_exchanges

        return load_exchanges(self.path(self.cfg[key]), default=default)

    def cache(self) -> gateway.PairCache:
        return gateway.PairCache(self.path(self.cfg["cache_dir"]))

    def gateway(self, manifest, backend=None) -> gateway.Gateway:
        return gateway.Gateway(
            manifest.classes,
            backend if backend is not None else self.backend(),
            self.cache(),
            params=self.params(),
            examples=self.examples("pair_examples", "pair_examples.json"),
            policy=self.policy(),
            parallelism=int(self.cfg["backend"]["parallelism"]),
            naive_cache=gateway.NaiveCache(self.path(self.cfg["cache_dir"])),
            naive_examples=self.examples("naive_examples", "naive_examples.json"),
        )

    def out_dir(self) -> Path:
        d = self.path(self.cfg["output"]["dir"])
        d.mkdir(parents=True, exist_ok=True)
        return d

    def eval_kwargs(self, manifest) -> dict:
        e = self.exp
        return dict(
            gateway=self.gateway(manifest),
            templates=self.templates(),
            prefixes=self.prefixes(),
            base_method=e["base_method"],
            mix_base=bool(e["mix_base"]),
            parallelism=int(e["parallelism"]),
            skip_errors=bool(e["skip_errors"]),
        )


def cmd_embed_classes(run: Run, args) -> int:
    manifest = run.manifest()
    source = args.source or run.exp["base_method"]
    gw = run.gateway(manifest) if source == "naive_llm" else None
    classes = sorted(manifest.classes, key=lambda c: c.class_id)
    table = pipeline.build_base_table(classes, source, run.embedder(), templates=run.templates(), gateway=gw)
    out = Path(args.output) if args.output else run.out_dir() / f"classes.{source}.emb"
    classifier.save_table(table, out)
    if gw is not None:
        gw.close()
    print(f"wrote {len(table)} class embeddings (dim {table.dim}) to {out}")
    return 0


def cmd_generate(run: Run, args) -> int:
    manifest = run.manifest()
    k = int(args.k or run.exp["k"])
    mode = args.cache_mode or run.exp["cache_mode"]
    classes = sorted(manifest.classes, key=lambda c: c.class_id)
    table = pipeline.build_base_table(classes, run.exp["base_method"], run.embedder(), templates=run.templates())
    cache = run.cache()
    backend = None if args.dry_run else run.backend()
    summary = gateway.precompute_restricted_cache(
        manifest, table, k, backend, cache, params=run.params(),
        examples=run.examples("pair_examples", "pair_examples.json"), policy=run.policy(),
        parallelism=int(run.cfg["backend"]["parallelism"]), dry_run=args.dry_run, freeze=(mode == "restricted"),
    )
    print(json.dumps({**vars(summary), "k": k, "cache_mode": cache.mode}, indent=2, sort_keys=True))
    if summary.failures:
        return EXIT_BACKEND
    return 0


def _eval_one(run: Run, manifest, method, k, kwargs):
    return pipeline.evaluate(manifest, method, run.embedder(), k=k, augment=bool(run.exp["augment"]), **kwargs)


def cmd_eval(run: Run, args) -> int:
    manifest = run.manifest()
    method = args.method or run.exp["method"]
    k = int(args.k or run.exp["k"])
    kwargs = run.eval_kwargs(manifest)
    report = _eval_one(run, manifest, method, k, kwargs)
    kwargs["gateway"].close()
    out = Path(args.output) if args.output else run.out_dir() / f"report.{method}.k{k}.json"
    pipeline.write_report(report, out, traces_path=args.traces)
    sys.stdout.write(pipeline.format_table([report]))
    return 0


def cmd_sweep_k(run: Run, args) -> int:
    manifest = run.manifest()
    ks = [int(x) for x in args.ks.split(",")] if args.ks else [int(x) for x in run.exp["ks"]]
    kwargs = run.eval_kwargs(manifest)
    reports = pipeline.sweep_k(manifest, ks, run.embedder(), augment=bool(run.exp["augment"]), **kwargs)
    kwargs["gateway"].close()
    out = run.out_dir()
    for r in reports:
        pipeline.write_report(r, out / f"report.fudd.k{r.k}.json")
    plot = Path(args.output) if args.output else out / "accuracy_vs_k.tsv"
    plot.write_text(pipeline.plot_data(reports), "utf-8")
    sys.stdout.write(pipeline.format_table(reports))
    return 0


def cmd_ablate(run: Run, args) -> int:
    manifest = run.manifest()
    k = int(args.k or run.exp["k"])
    kwargs = run.eval_kwargs(manifest)
    prefixes = kwargs.pop("prefixes")
    diff, non_diff = pipeline.ablation_non_differential(
        manifest, k, run.embedder(), prefixes=prefixes, similarity_mode=args.mode or run.exp["similarity_mode"],
        **kwargs,
    )
    kwargs["gateway"].close()
    out = run.out_dir()
    pipeline.write_report(diff, out / f"ablation.differential.k{k}.json")
    pipeline.write_report(non_diff, out / f"ablation.non_differential.k{k}.json")
    sys.stdout.write(pipeline.format_table([diff, non_diff]))
    return 0


def cmd_estimate_cost(run: Run, args) -> int:
    b = run.cfg["backend"]
    n = args.queries
    if args.classes is not None:
        n = gateway.full_pair_count(args.classes)
    cost = gateway.estimate_cost(n, args.input_tokens, args.output_tokens, b["price_per_1k_input"],
                                 b["price_per_1k_output"])
    print(f"{n} queries x ({args.input_tokens:g} in + {args.output_tokens:g} out tokens) = ${cost:.4f} (~${cost:.2f})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fudd", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config")
        p.set_defaults(fn=fn)
        return p

    p = add("embed-classes", cmd_embed_classes, "build and save a class-embedding table")
    p.add_argument("--source", choices=["single_template", "template_set", "naive_llm"])
    p.add_argument("--output")

    p = add("generate", cmd_generate, "fill the pairwise-description cache")
    p.add_argument("--k", type=int)
    p.add_argument("--cache-mode", choices=["open", "restricted"])
    p.add_argument("--dry-run", action="store_true", help="count prompts without calling the backend")

    p = add("eval", cmd_eval, "evaluate one method on the manifest")
    p.add_argument("--method", choices=[m.value for m in pipeline.Method])
    p.add_argument("--k", type=int)
    p.add_argument("--output")
    p.add_argument("--traces")

    p = add("sweep-k", cmd_sweep_k, "evaluate FuDD for several k")
    p.add_argument("--ks", help="comma separated, e.g. 1,2,3")
    p.add_argument("--output", help="plot-data file")

    p = add("ablate", cmd_ablate, "differential vs non-differential descriptions")
    p.add_argument("--k", type=int)
    p.add_argument("--mode", choices=["strict", "relaxed"])

    p = add("estimate-cost", cmd_estimate_cost, "LLM cost for a number of prompts")
    p.add_argument("--queries", type=float, default=1000)
    p.add_argument("--classes", type=int, help="price every pair of this many classes")
    p.add_argument("--input-tokens", type=float, default=gateway.DEFAULT_INPUT_TOKENS)
    p.add_argument("--output-tokens", type=float, default=gateway.DEFAULT_OUTPUT_TOKENS)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg, root = load_config(args.config)
        return args.fn(Run(cfg, root), args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (catalog.ManifestError, MatrixFormatError, FileNotFoundError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except gateway.BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (pipeline.EvaluationError, pipeline.PipelineError, ValueError) as exc:
        print(f"classification error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
