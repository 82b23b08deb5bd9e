"""Command-line entry point: ``manicode {encode,train,verify,gendata,learndict}``.

Exit codes: 0 ok, 2 bad flags, 3 file errors, 4 coder errors, 5 divergence,
6 failed property check, 7 sampling stall.
"""

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import analysis, toy_gan
from .coders import KINDS, CoderConfig, CoderError, encode
from .core import make_rng
from .dictionary import Dictionary, dl_loss, dl_step
from .io import (
    FormatError,
    metrics_csv,
    read_config,
    read_dictionary,
    read_matrix,
    scatter_svg,
    serialize_config,
    write_dictionary,
    write_matrix,
)

EXIT_OK, EXIT_FLAGS, EXIT_FILE, EXIT_CODER, EXIT_DIVERGED, EXIT_CHECK, EXIT_STALL = 0, 2, 3, 4, 5, 6, 7

log = logging.getLogger("manicode")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _coder_flags(p, default="LCSA"):
    p.add_argument("--coder", default=default, choices=[k for k in KINDS if k != "DAE"])
    p.add_argument("--sigma", type=float, default=1.2)
    p.add_argument("--kprime", type=int, default=8)
    p.add_argument("--kappa", type=float, default=0.1)
    p.add_argument("--tau", type=int, default=3)
    p.add_argument("--rho", type=float, default=1e-6)
    p.add_argument("--iters", type=int, default=5)


def _coder_cfg(a):
    return CoderConfig(kind=a.coder, sigma=a.sigma, kprime=a.kprime, kappa=a.kappa, tau=a.tau, rho=a.rho, iters=a.iters)


def _load_dict(path):
    p = Path(path)
    if p.with_name(p.name + ".meta").exists():
        return read_dictionary(p)
    return Dictionary(read_matrix(p))


def cmd_encode(a):
    x = read_matrix(a.input)
    m = _load_dict(a.dict)
    codes = encode(x, m, _coder_cfg(a), make_rng(a.seed))
    write_matrix(a.out, codes.alpha)
    print(repr(analysis.mean_reconstruction_error(x, m, codes)))
    return EXIT_OK


def _write_checkpoints(out, result):
    ck = out / "checkpoints"
    ck.mkdir(parents=True, exist_ok=True)
    for i, layer in enumerate(result.generator.layers):
        write_matrix(ck / f"gen_{i}_w.mtx", layer.w)
        write_matrix(ck / f"gen_{i}_b.mtx", layer.b)
    disc = result.discriminator
    for i, blk in enumerate(disc.blocks):
        write_matrix(ck / f"disc_{i}_w.mtx", blk.layer.w)
        write_matrix(ck / f"disc_{i}_b.mtx", blk.layer.b)
        if blk.dictionary is not None:
            write_dictionary(ck / f"dict_{i}.mtx", blk.dictionary)
        if blk.dae is not None:
            for name, arr in blk.dae.params().items():
                write_matrix(ck / f"dae_{i}_{name}.mtx", arr)
    write_matrix(ck / "disc_head_w.mtx", disc.head.w)
    write_matrix(ck / "disc_head_b.mtx", disc.head.b)
    st = result.meta_state
    (ck / "meta.txt").write_text(
        f"beta={st.beta!r}\ngamma={st.gamma!r}\nr_stat={st.r_stat!r}\nfrozen={str(st.frozen).lower()}\n"
    )


def cmd_train(a):
    cfg = read_config(a.config, toy_gan.TrainConfig)
    if a.seed is not None:
        cfg = toy_gan.with_overrides(cfg, seed=a.seed)
    if a.steps is not None:
        cfg = toy_gan.with_overrides(cfg, steps=a.steps)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    result = toy_gan.train(cfg)
    rows = [toy_gan.metrics_row(m) for m in result.history]
    (out / "metrics.csv").write_text(metrics_csv(rows, toy_gan.CSV_HEADER))
    (out / "config.txt").write_text(serialize_config(cfg))
    write_matrix(out / "samples.mtx", result.samples)
    (out / "samples.svg").write_text(scatter_svg(result.samples, toy_gan.mode_centers(cfg.dataset)))
    _write_checkpoints(out, result)
    last = result.history[-1]
    print(f"modes={last.modes_covered} hq={last.high_quality_frac!r} beta={last.beta!r}")
    return EXIT_OK


def _parse_dims(text):
    try:
        d, k, kp = (int(v) for v in text.split(","))
    except ValueError as err:
        raise UsageError(f"--dims expects d,k,kprime, got {text!r}") from err
    return d, k, kp


def cmd_verify(a):
    d, k, kp = _parse_dims(a.dims)
    if a.samples < 1 or not 1 <= kp < k or d < 1 or a.sigma <= 0:
        raise UsageError("need samples >= 1, 1 <= kprime < k, d >= 1 and sigma > 0")
    factor = a.k_factor * (0.5 if a.halve_k else 1.0)
    report = analysis.run_suite(d, k, kp, a.sigma, a.samples, a.seed, k_factor=factor)
    text = report.to_text()
    if a.out:
        Path(a.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK if report.passed else EXIT_CHECK


def cmd_gendata(a):
    names = {n.lower(): n for n in toy_gan.DATASETS}
    kind = names.get(a.dataset.lower())
    if kind is None:
        raise UsageError(f"unknown dataset {a.dataset!r}; choose from {', '.join(toy_gan.DATASETS)}")
    if a.n < 1:
        raise UsageError("--n must be >= 1")
    write_matrix(a.out, toy_gan.make_dataset(kind, a.n, make_rng(a.seed)))
    return EXIT_OK


def learn_dictionary(x, k, steps, cfg, rng, lr=2e-3, init="data", jitter=0.1, norm_cap=None, trace=None):
    """Offline fitting loop: encode, take one dictionary step, repeat; returns (dictionary, final loss)."""
    d, n = x.shape
    if init == "data":
        cols = rng.choice(n, size=k, replace=n < k)
        scale = jitter * float(np.std(x)) if n > 1 else jitter
        atoms = x[:, cols] + scale * rng.normal(size=(d, k))
    else:
        from .dictionary import init_dictionary

        atoms = init_dictionary(d, k, rng).atoms
    dic = Dictionary(atoms, lr=lr, norm_cap=norm_cap)
    for _ in range(steps):
        codes = encode(x, dic, cfg, rng)
        dic, loss = dl_step(dic, x, codes)
        if trace is not None:
            trace.append(loss)
    final = dl_loss(x, dic.atoms, encode(x, dic, cfg, rng).alpha)
    return dic, final


def cmd_learndict(a):
    x = read_matrix(a.input)
    cfg = _coder_cfg(a)
    cap = a.norm_cap if a.norm_cap > 0 else None
    trace = []
    dic, final = learn_dictionary(x, a.k, a.steps, cfg, make_rng(a.seed), a.lr, a.init, norm_cap=cap, trace=trace)
    write_dictionary(a.out, dic)
    if a.trace:
        Path(a.trace).write_text("".join(f"{v!r}\n" for v in trace))
    print(repr(final))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="manicode", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    e = sub.add_parser("encode", help="encode columns of a matrix file")
    e.add_argument("--input", required=True)
    e.add_argument("--dict", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, default=0)
    _coder_flags(e)
    e.set_defaults(func=cmd_encode)

    t = sub.add_parser("train", help="train the toy GAN")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--steps", type=int)
    t.add_argument("--out-dir", default="run")
    t.set_defaults(func=cmd_train)

    v = sub.add_parser("verify", help="run the property suite")
    v.add_argument("--dims", default="8,64,8")
    v.add_argument("--sigma", type=float, default=1.2)
    v.add_argument("--samples", type=int, default=1000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out")
    v.add_argument("--halve-k", action="store_true", help=argparse.SUPPRESS)
    v.add_argument("--k-factor", type=float, default=1.0, help=argparse.SUPPRESS)
    v.set_defaults(func=cmd_verify)

    g = sub.add_parser("gendata", help="sample a 2-D toy dataset")
    g.add_argument("--dataset", required=True)
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gendata)

    ld = sub.add_parser("learndict", help="fit a dictionary to a matrix file")
    ld.add_argument("--input", required=True)
    ld.add_argument("--k", type=int, required=True)
    ld.add_argument("--steps", type=int, default=100)
    ld.add_argument("--lr", type=float, default=2e-3)
    ld.add_argument("--init", choices=("data", "random"), default="data")
    ld.add_argument("--norm-cap", type=float, default=0.0)
    ld.add_argument("--seed", type=int, default=0)
    ld.add_argument("--out", required=True)
    ld.add_argument("--trace")
    _coder_flags(ld, default="HA")
    ld.set_defaults(func=cmd_learndict)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except UsageError as err:
        print(err, file=sys.stderr)
        return EXIT_FLAGS
    except (OSError, FormatError) as err:
        print(f"file error: {err}", file=sys.stderr)
        return EXIT_FILE
    except toy_gan.DivergenceError as err:
        print(f"diverged: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except analysis.SamplingStall as err:
        print(f"sampling stall: {err}", file=sys.stderr)
        return EXIT_STALL
    except (CoderError, ValueError) as err:
        print(f"coder error: {err}", file=sys.stderr)
        return EXIT_CODER


if __name__ == "__main__":
    sys.exit(main())
