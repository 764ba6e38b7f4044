"""Command-line entry point: ``clientprint <subcommand> [flags]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

Any flag may also come from ``--config FILE``, a plain ``key = value`` file
(keys are flag names, with dashes or underscores; ``#`` starts a comment).
Flags given on the command line win over the file.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import json
import logging
import os
import sys
from datetime import datetime, timezone

from . import experiments as ex
from . import ingest, knn, mlp, synth, tuning
from .dataset import DatasetError, LabeledDataset, client_index, from_client_names
from .features import DEFAULT_IDEAL_REWARD, MODES, SchemaError, extract_features

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("clientprint")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    """``"9,10,11"`` or ``"9-14"`` (inclusive) or a mix."""
    out = []
    for part in str(text).split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty integer list")
    return out


def _pair(text: str) -> tuple[int, int]:
    vals = _int_list(text) if "," in str(text) else [int(x) for x in str(text).split("-")]
    if len(vals) != 2:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")
    return vals[0], vals[1]


def _add_classifier_flags(p):
    g = p.add_argument_group("classifier")
    g.add_argument("--classifier", choices=("knn", "mlp"), default="knn")
    g.add_argument("--k", type=int, default=9, help="KNN neighbours")
    g.add_argument("--hidden", type=_int_list, default=[391, 870], help="MLP hidden sizes, e.g. 391,870")
    g.add_argument("--lr", type=float, default=1e-3)
    g.add_argument("--batch-size", type=int, default=64)
    g.add_argument("--max-epochs", type=int, default=200)
    g.add_argument("--patience", type=int, default=10)
    g.add_argument("--l2", type=float, default=0.0)


def _add_report_flags(p, plot=False):
    p.add_argument("--report", help="write the JSON report here")
    if plot:
        p.add_argument("--plot", help="write an SVG curve plot here")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--config", help="key = value file supplying flag defaults")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="clientprint", description="Consensus-client block fingerprinting toolkit.")
    sub = parser.add_subparsers(dest="command", metavar="SUBCOMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset or raw records")
    p.add_argument("--per-class", type=int, default=1000)
    p.add_argument("--mode", choices=MODES, default="default")
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--profiles", help="JSON profile set (default: built-in six clients)")
    p.add_argument("--no-shift", action="store_true", help="zero every mode shift")
    p.add_argument("--records", action="store_true", help="emit raw reward records instead of features")
    p.add_argument("--ideal-reward", type=float, default=DEFAULT_IDEAL_REWARD)
    p.add_argument("--out", required=True)

    p = sub.add_parser("extract", parents=[common], help="raw records -> feature dataset")
    p.add_argument("--records", required=True)
    p.add_argument("--label", help="client label for records that carry none")
    p.add_argument("--mode", choices=MODES, help="mode for records that carry none (default: default)")
    p.add_argument("--ideal-reward", type=float, default=DEFAULT_IDEAL_REWARD)
    p.add_argument("--out", required=True)

    p = sub.add_parser("fetch", parents=[common], help="fetch reward records from a beacon node")
    p.add_argument("--base-url", required=True)
    p.add_argument("--path-template", default=ingest.BeaconSourceConfig.path_template)
    p.add_argument("--start", type=int, required=True)
    p.add_argument("--end", type=int, required=True)
    p.add_argument("--timeout", type=float, default=10.0)
    p.add_argument("--retries", type=int, default=3)
    p.add_argument("--rate", type=float, default=10.0, help="max requests per second")
    p.add_argument("--token", help="bearer token")
    p.add_argument("--label", help="operator-assigned client label")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", parents=[common], help="train a classifier")
    p.add_argument("--data", required=True)
    _add_classifier_flags(p)
    p.add_argument("--val-fraction", type=float, default=ex.VAL_FRACTION)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", parents=[common], help="evaluate a model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    _add_report_flags(p)

    p = sub.add_parser("sweep-k", parents=[common], help="cross-validated KNN accuracy per K")
    p.add_argument("--data", required=True)
    p.add_argument("--ks", type=_int_list, default=list(range(1, 21)))
    p.add_argument("--cv", type=int, default=5)
    _add_report_flags(p, plot=True)

    p = sub.add_parser("sweep-size", parents=[common], help="cross-validated accuracy per training size")
    p.add_argument("--data", required=True)
    p.add_argument("--sizes", type=_int_list, required=True, help="per-class sizes")
    p.add_argument("--cv", type=int, default=5)
    _add_classifier_flags(p)
    _add_report_flags(p, plot=True)

    p = sub.add_parser("search-mlp", parents=[common], help="random search over MLP architectures")
    p.add_argument("--data", required=True)
    p.add_argument("--n-trials", type=int, default=30)
    p.add_argument("--layers", type=_pair, default=(1, 10), help="LO,HI layer count")
    p.add_argument("--sizes", type=_pair, default=(100, 2000), help="LO,HI layer width")
    p.add_argument("--cv", type=int, default=5)
    _add_classifier_flags(p)
    _add_report_flags(p)

    p = sub.add_parser("mode-transfer", parents=[common], help="train on one mode, test on two")
    p.add_argument("--train", required=True)
    p.add_argument("--test-same", required=True)
    p.add_argument("--test-other", required=True)
    _add_classifier_flags(p)
    _add_report_flags(p)

    for name, helptext in (("merge-train", "equal-parts merge of two modes"),
                           ("twelve-class", "client x mode classification")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--default", required=True, help="default-mode dataset")
        p.add_argument("--other", required=True, help="other-mode (e.g. all_subnets) dataset")
        p.add_argument("--cv", type=int, default=5)
        if name == "merge-train":
            p.add_argument("--test-fraction", type=float, default=0.2)
        _add_classifier_flags(p)
        _add_report_flags(p)

    p = sub.add_parser("classify", parents=[common], help="classify raw records with a model")
    p.add_argument("--model", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--ideal-reward", type=float, default=DEFAULT_IDEAL_REWARD)
    p.add_argument("--out", help="JSON lines output (default stdout)")

    p = sub.add_parser("serve", parents=[common], help="HTTP classification service")
    p.add_argument("--model", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--ideal-reward", type=float, default=DEFAULT_IDEAL_REWARD)
    return parser


def read_config(path) -> dict[str, str]:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"))
    with open(path, encoding="utf-8") as f:
        cp.read_string("[cli]\n" + f.read())
    return {k.replace("-", "_"): v for k, v in cp["cli"].items()}


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config(known.config)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((a for a in argv if a in subparsers.choices), None)
    if command is None:
        return
    sp = subparsers.choices[command]
    dests = {a.dest: a for a in sp._actions}
    unknown = sorted(set(values) - set(dests))
    if unknown:
        raise UsageError(f"unknown key(s) in {known.config}: {', '.join(unknown)}")
    defaults = {}
    for key, raw in values.items():
        action = dests[key]
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            defaults[key] = raw.strip().lower() in ("1", "true", "yes", "on")
        else:
            defaults[key] = raw
        action.required = False
    sp.set_defaults(**defaults)


def classifier_config(args) -> ex.ClassifierConfig:
    if args.classifier == "knn":
        return knn.KnnConfig(k=args.k)
    return mlp.MlpConfig(hidden_sizes=tuple(args.hidden), learning_rate=args.lr, batch_size=args.batch_size,
                         max_epochs=args.max_epochs, patience=args.patience, seed=args.seed, l2=args.l2)


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


def _emit(reports, args, plot_xlabel=None) -> None:
    reports = list(reports)
    stamp = _timestamp()
    for r in reports:
        r.timestamp = stamp
        if r.seed is None:
            r.seed = args.seed
        sys.stdout.write(r.to_table() + "\n")
    if getattr(args, "report", None):
        if len(reports) == 1:
            text = reports[0].to_json()
        else:
            text = json.dumps({"reports": [r.to_dict() for r in reports]}, indent=2, sort_keys=True) + "\n"
        with open(args.report, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
    if plot_xlabel and getattr(args, "plot", None):
        ex.plot_curve(reports[0], args.plot, plot_xlabel)


def _generator_config(args) -> synth.GeneratorConfig:
    profiles = synth.load_profiles(args.profiles) if args.profiles else synth.DEFAULT_PROFILES
    if args.no_shift:
        profiles = tuple(synth.ClientProfile(p.client, p.feature_means, p.feature_stds) for p in profiles)
    return synth.GeneratorConfig(profiles, args.separation, args.per_class, args.seed)


def cmd_synth(args):
    cfg = _generator_config(args)
    if args.records:
        ingest.save_records(synth.generate_records(cfg, args.mode, args.ideal_reward), args.out)
    else:
        ingest.save_dataset(synth.generate(cfg, args.mode), args.out)


def cmd_extract(args):
    records = ingest.load_records(args.records)
    vectors, clients, modes = [], [], []
    for i, r in enumerate(records):
        label = r.label or args.label
        if label is None:
            raise DatasetError(f"record {i} (slot {r.slot}) has no label; pass --label")
        client_index(label)
        vectors.append(extract_features(r, args.ideal_reward))
        clients.append(label)
        modes.append(r.mode or args.mode or "default")
    ingest.save_dataset(from_client_names(vectors, clients, modes), args.out)


def cmd_fetch(args):
    cfg = ingest.BeaconSourceConfig(args.base_url, (args.start, args.end), args.path_template, args.timeout,
                                    args.retries, args.rate, bearer_token=args.token)
    result = ingest.fetch_rewards(cfg)
    records = [dataclasses.replace(r, label=args.label, mode=args.mode) for r in result.records]
    ingest.save_records(records, args.out)
    print(f"{len(records)} record(s), {len(result.skipped)} skipped, {len(result.failed)} failed")
    if not result.ok:
        print(result.error_summary(), file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def cmd_train(args):
    ds = ingest.load_dataset(args.data)
    model = ex.fit_classifier(classifier_config(args), ds, args.seed, args.val_fraction)
    ingest.save_model(model, args.out)
    print(f"trained {model.kind} on {len(ds)} samples -> {args.out} (id {ingest.model_id(args.out)})")


def cmd_eval(args):
    model = ingest.load_model(args.model)
    ds = ingest.load_dataset(args.data)
    rep = ex.evaluate(model, ds)
    rep.metrics["model_id"] = ingest.model_id(args.model)
    _emit([rep], args)


def cmd_sweep_k(args):
    _emit([ex.k_sweep(ingest.load_dataset(args.data), args.ks, args.cv, args.seed)], args, "k")


def cmd_sweep_size(args):
    ds = ingest.load_dataset(args.data)
    rep = ex.size_sweep(ds, args.sizes, classifier_config(args), args.cv, args.seed)
    _emit([rep], args, "samples per class")


def cmd_search_mlp(args):
    ds = ingest.load_dataset(args.data)
    space = tuning.SearchSpace(tuple(args.layers), tuple(args.sizes), args.n_trials, args.cv, args.seed)
    base = classifier_config(argparse.Namespace(**{**vars(args), "classifier": "mlp"}))
    trials = tuning.random_search_mlp(ds, space, base)
    for t in trials:
        print(f"{t.mean_accuracy:.4f}  {t.params['hidden_sizes']}")
    if args.report:
        doc = {"kind": "random_search_mlp", "space": dataclasses.asdict(space), "base": base.describe(),
               "dataset": ds.describe(), "trials": [t.to_dict() for t in trials], "timestamp": _timestamp()}
        with open(args.report, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def cmd_mode_transfer(args):
    train, same, other = (ingest.load_dataset(p) for p in (args.train, args.test_same, args.test_other))
    _emit(ex.mode_transfer(train, same, other, classifier_config(args), args.seed), args)


def cmd_merge_train(args):
    a, b = ingest.load_dataset(args.default), ingest.load_dataset(args.other)
    _emit(ex.merged_training(a, b, classifier_config(args), args.seed, args.cv, args.test_fraction), args)


def cmd_twelve_class(args):
    a, b = ingest.load_dataset(args.default), ingest.load_dataset(args.other)
    _emit([ex.twelve_class_experiment(a, b, classifier_config(args), args.seed, args.cv)], args)


def cmd_classify(args):
    from .service import Classifier

    clf = Classifier.from_file(args.model, args.ideal_reward)
    records = ingest.load_records(args.records)
    responses = clf.classify_records([ingest.record_to_dict(r) for r in records])
    lines = "".join(json.dumps(r, sort_keys=True) + "\n" for r in responses)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="\n") as f:
            f.write(lines)
    else:
        sys.stdout.write(lines)


def cmd_serve(args):
    from .service import serve

    serve(args.model, args.host, args.port, args.ideal_reward)


COMMANDS = {
    "synth": cmd_synth, "extract": cmd_extract, "fetch": cmd_fetch, "train": cmd_train, "eval": cmd_eval,
    "sweep-k": cmd_sweep_k, "sweep-size": cmd_sweep_size, "search-mlp": cmd_search_mlp,
    "mode-transfer": cmd_mode_transfer, "merge-train": cmd_merge_train, "twelve-class": cmd_twelve_class,
    "classify": cmd_classify, "serve": cmd_serve,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"clientprint: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, configparser.Error) as e:
        print(f"clientprint: cannot read config: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args) or EXIT_OK
    except mlp.NumericError as e:
        print(f"clientprint: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ingest.FormatError, DatasetError, SchemaError, synth.ProfileError, OSError, ValueError) as e:
        print(f"clientprint: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
