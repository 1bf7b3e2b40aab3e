"""Command line entry point: ``microcrack <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
import argparse
import logging
import sys
from pathlib import Path

log = logging.getLogger("microcrack")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _parser():
    p = _Parser(prog="microcrack", description="Micro-crack segmentation from synthetic wave fields.")
    sub = p.add_subparsers(dest="cmd", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    g = sub.add_parser("gen-data", help="simulate a synthetic wave-field dataset")
    g.add_argument("--n", type=int, required=True, help="number of samples")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True, help="dataset file; a .json sidecar is written next to it")

    t = sub.add_parser("train", help="train one model from a key=value config file")
    t.add_argument("--config", required=True)
    t.add_argument("--result", help="write the ExperimentResult JSON here")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--threshold", type=float, default=0.5)

    r = sub.add_parser("grid", help="run the 4 activations x 4 losses grid")
    r.add_argument("--data", required=True)
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--config", help="base training config")
    r.add_argument("--epochs", type=int)

    m = sub.add_parser("mda", help="2D manifold embedding of one layer's features")
    m.add_argument("--ckpt", required=True)
    m.add_argument("--data", required=True)
    m.add_argument("--layer", type=int, required=True, help="layer id (see param-count --layers)")
    m.add_argument("--out", required=True, help="CSV path; the SVG goes next to it")
    m.add_argument("--neighbors", type=int, default=10)
    m.add_argument("--no-svg", action="store_true")

    c = sub.add_parser("param-count", help="print the parameter count of a model config")
    c.add_argument("--config")
    c.add_argument("--layers", action="store_true", help="also print the layer table with ids")
    return p


def _gen_data(a):
    from .wavegen import generate_dataset

    if a.n < 1:
        raise UsageError("--n must be at least 1")
    generate_dataset(a.n, a.seed, a.out)
    print(f"wrote {a.n} samples to {a.out}")


def _train(a):
    from .harness import load_train_config, train

    cfg = load_train_config(a.config)
    if not Path(cfg.data).is_file():
        raise FileNotFoundError(f"dataset not found: {cfg.data}")
    _, res = train(cfg, log=log.info)
    if a.result:
        Path(a.result).write_text(res.to_json() + "\n")
    print(f"dsc={res.dsc:.4f} accuracy={res.accuracy:.4f} final_loss={res.final_train_loss:.6f} ({res.split})")


def _eval(a):
    from .harness import evaluate, render_report

    res = evaluate(a.ckpt, a.data, a.threshold)
    print(render_report([res]), end="")
    print(f"DSC {res.dsc:.4f}  pixel accuracy {res.accuracy:.4f}")


def _grid(a):
    from .harness import grid, load_train_config

    cfg = load_train_config(a.config, data=a.data, epochs=a.epochs)
    if not Path(cfg.data).is_file():
        raise FileNotFoundError(f"dataset not found: {cfg.data}")
    results = grid(cfg, a.out, log=log.info)
    print((Path(a.out) / "report.txt").read_text(encoding="utf-8"), end="")
    failed = sum(r.status != "ok" for r in results)
    if failed:
        print(f"{failed} of {len(results)} cells failed")


def _mda(a):
    from .harness import fit_temporal
    from .mda import mda_run
    from .model import load_checkpoint
    from .wavegen import load_arrays

    model = load_checkpoint(a.ckpt)
    x, _, _ = load_arrays(a.data)
    x = fit_temporal(x, model.config.temporal_len)
    if not 0 <= a.layer < len(model.layers):
        raise UsageError(f"--layer must be in 0..{len(model.layers) - 1}")
    points, labels = mda_run(model, x, a.layer, a.out, a.neighbors, svg=not a.no_svg)
    print(f"embedded {len(points)} samples from layer {a.layer} into {a.out} ({labels.k} bins)")


def _param_count(a):
    from .harness import load_model_config
    from .model import build

    model = build(load_model_config(a.config))
    if a.layers:
        print(model.summary())
    n = model.parameter_count()
    print(n)
    print(f"reference 1136000, delta {n - 1136000:+d} ({(n - 1136000) / 1136000:+.2%})")


COMMANDS = {"gen-data": _gen_data, "train": _train, "eval": _eval, "grid": _grid,
            "mda": _mda, "param-count": _param_count}


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    try:
        a = _parser().parse_args(argv)
        COMMANDS[a.cmd](a)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 1
    except Exception as e:  # noqa: BLE001
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
