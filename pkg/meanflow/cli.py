"""Command-line entry point: `meanflow <command> [options]`.

Exit codes: 0 ok, 1 usage or input error, 2 config error, 3 training
diverged, 4 verification failed.
"""
import argparse
import dataclasses
import sys

import numpy as np

from . import api
from . import autodiff
from . import checkpoint
from . import config as config_lib
from . import datasets
from . import errors
from . import metrics
from . import oracle
from . import utils
from .algorithms import mlp

FLAG = "[MEANFLOW]"
EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DIVERGED, EXIT_VERIFY = 0, 1, 2, 3, 4
LIMIT_DELTA = 1e-6

print_flagged = utils.flagged_print(FLAG)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_u_fn(path, live=False):
    ckpt = checkpoint.load(path)
    params = ckpt.params.live if live else ckpt.params.ema
    return ckpt, mlp.make_u_fn(ckpt.run_config.network, params)


def _parse_tangent(text):
    """'a,b,c' or 'v,b,c'; a leading 'v' stands for coefficient 1 on v."""
    head, sep, rest = text.partition(',')
    if head.strip() == 'v' and sep:
        values = [1.0] + utils.parse_float_list(rest, '--jvp-tangent')
    else:
        values = utils.parse_float_list(text, '--jvp-tangent')
    if len(values) != 3:
        raise errors.GridError(f"Argument --jvp-tangent needs 3 values, was '{text}'.")
    return tuple(values)


def parse_grid(text):
    """'z=lo:hi:n,r=N,t=lo:hi:n' into (z_values, r_fractions, t_values)."""
    fields = {}
    for item in text.split(','):
        key, eq, value = item.partition('=')
        if not eq:
            raise errors.GridError(f"Grid entry '{item}' should look like key=value.")
        fields[key.strip()] = value.strip()
    missing = {'z', 'r', 't'} - set(fields)
    extra = set(fields) - {'z', 'r', 't'}
    if missing or extra:
        raise errors.GridError((f"Grid needs exactly z, r and t entries, "
                                f"was '{text}'."))
    try:
        n_r = int(fields['r'])
    except ValueError:
        raise errors.GridError(f"Grid entry r should be an integer, was '{fields['r']}'.")
    if n_r < 1:
        raise errors.GridError(f"Grid entry r needs n >= 1, was {n_r}.")
    r_fractions = np.linspace(0.0, 1.0, n_r) if n_r > 1 else np.zeros(1)
    return (utils.parse_range(fields['z'], 'z'), r_fractions,
            utils.parse_range(fields['t'], 't'))


def _resolve_gmm(data_text, ckpt):
    if data_text is not None:
        return datasets.gmm_from_spec(data_text)
    if ckpt is not None:
        gmm = datasets.gmm_from_data_config(ckpt.run_config.data)
        if gmm is not None:
            return gmm
    raise errors.GridError(("A Gaussian-mixture --data spec is required "
                            "(gaussian:..., point:... or ring:...)."))


def cmd_train(args):
    run_config = config_lib.load_run_config(args.config)
    if args.seed is not None:
        run_config = dataclasses.replace(
            run_config,
            training=dataclasses.replace(run_config.training, seed=args.seed))
    dataset = datasets.dataset_from_config(run_config.data)
    trainer = api.Trainer(run_config, dataset, out_dir=args.out,
                          verbose=not args.quiet)
    df = trainer.fit()
    print_flagged("done", iterations=int(trainer.state.step),
                  weighted_loss=float(df['weighted_loss'].iloc[-1]),
                  checkpoint=trainer.checkpoint_path)
    return EXIT_OK


def cmd_sample(args):
    ckpt, u_fn = _load_u_fn(args.ckpt, args.live)
    net_config = ckpt.run_config.network
    labels = None
    if args.class_id is not None:
        labels = np.full((args.n,), args.class_id)
        mlp.resolve_labels(labels, (args.n,), net_config.num_classes)
    rng = autodiff.make_rng(args.seed)
    samples = api.generate(u_fn, rng, args.n, net_config.input_dim,
                           args.steps, labels)
    datasets.save_csv(datasets.Dataset(np.asarray(samples), labels,
                                       num_classes=net_config.num_classes),
                      args.out)
    print_flagged("sampled", n=args.n, steps=args.steps, out=args.out)
    return EXIT_OK


def cmd_verify(args):
    z_values, r_fractions, t_values = parse_grid(args.grid)
    ckpt, u_fn = (None, None)
    if args.ckpt is not None:
        ckpt, u_fn = _load_u_fn(args.ckpt, args.live)
    gmm = _resolve_gmm(args.data, ckpt)
    tangent = _parse_tangent(args.jvp_tangent)

    df = oracle.field_grid(gmm, z_values, r_fractions, t_values, u_fn=u_fn,
                           h=args.h, fd_step=args.fd_step, tangent=tangent)
    z_points = oracle.lattice(z_values, gmm.dim)
    u_cols = [f'u_{i}' for i in range(gmm.dim)]

    # u(z, t - delta, t) tends to v(z, t)
    field = oracle.OracleAvgVelocity(gmm, args.h)
    limit_gap = 0.0
    for t in t_values:
        if t > LIMIT_DELTA:
            u = field(z_points, float(t) - LIMIT_DELTA, float(t))
            gap = u - oracle.marginal_velocity(gmm, z_points, float(t))
            limit_gap = max(limit_gap, float(np.max(np.abs(gap))))
    additivity = 0.0
    for t in t_values:
        for f in r_fractions:
            r = float(f) * float(t)
            if t - r > 2 * args.h:
                gap = oracle.additivity_gap(gmm, z_points, r, 0.5 * (r + t),
                                            float(t), args.h)
                additivity = max(additivity, float(np.max(gap)))

    summary = {
        'max_residual': float(df['residual'].max()),
        'limit_gap': limit_gap,
        'additivity_gap': additivity,
    }
    if u_fn is not None:
        net_cols = [f'net_u_{i}' for i in range(gmm.dim)]
        err = df[net_cols].to_numpy() - df[u_cols].to_numpy()
        summary['network_rmse'] = float(np.sqrt(np.mean(np.sum(err ** 2, axis=-1))))
        residuals = [np.asarray(oracle.network_identity_residual(
            u_fn, gmm, z_points, float(f) * float(t), float(t)))
            for t in t_values for f in r_fractions]
        summary['network_residual'] = float(np.max(residuals))
    print_flagged("verify", **summary)
    if args.out is not None:
        df.to_csv(args.out, index=False, float_format='%.17g',
                  lineterminator='\n')

    failures = []
    if summary['max_residual'] > args.tol:
        failures.append(f"identity residual {summary['max_residual']:.3g} > {args.tol:g}")
    if limit_gap > args.tol:
        failures.append(f"limit gap {limit_gap:.3g} > {args.tol:g}")
    if additivity > args.additivity_tol:
        failures.append(f"additivity gap {additivity:.3g} > {args.additivity_tol:g}")
    if failures:
        raise errors.VerificationError(failures)
    return EXIT_OK


def _eval_options(args, eval_config):
    # command-line flags override the checkpoint's [eval] section
    options = {}
    for name in ('n', 'metric', 'steps', 'bandwidth', 'seed'):
        value = getattr(args, name)
        options[name] = getattr(eval_config, name) if value is None else value
    return config_lib.EvalConfig(**options)


def cmd_eval(args):
    ckpt, u_fn = _load_u_fn(args.ckpt, args.live)
    net_config = ckpt.run_config.network
    opts = _eval_options(args, ckpt.run_config.eval)
    data_rng = autodiff.make_rng(ckpt.run_config.data.seed)
    if args.data is not None:
        reference = datasets.dataset_from_spec(args.data, data_rng, opts.n)
    else:
        reference = datasets.dataset_from_config(
            dataclasses.replace(ckpt.run_config.data,
                                n=max(opts.n, ckpt.run_config.data.n)))
    n = min(opts.n, len(reference))
    labels = None
    if net_config.num_classes > 0 and reference.labels is not None:
        labels = reference.labels[:n]

    rng = autodiff.make_rng(opts.seed)
    samples = {f'{opts.steps}-NFE': api.generate(
        u_fn, rng, n, net_config.input_dim, opts.steps, labels)}
    if args.baseline is not None:
        _, baseline_fn = _load_u_fn(args.baseline, args.live)
        samples[f'FM-{args.baseline_steps}'] = api.generate_baseline(
            baseline_fn, rng, n, net_config.input_dim, args.baseline_steps,
            labels)

    reference = datasets.Dataset(reference.points[:n], spec=reference.spec)
    bandwidth = opts.bandwidth
    if bandwidth != metrics.MEDIAN:
        bandwidth = float(bandwidth)
    report = metrics.compute_report(samples, reference, (opts.metric,),
                                    bandwidth)
    print(metrics.render_report(report))
    if args.out is not None:
        report.to_csv(args.out, index=False, float_format='%.17g',
                      lineterminator='\n')
    return EXIT_OK


def cmd_export_field(args):
    t_values = utils.parse_float_list(args.t, '--t')
    ckpt, u_fn = (None, None)
    if args.ckpt is not None:
        ckpt, u_fn = _load_u_fn(args.ckpt, args.live)
    gmm = _resolve_gmm(args.data, ckpt)
    if gmm.dim > 2:
        raise errors.GridError(f"Field export supports 1D or 2D data, got {gmm.dim}D.")
    z_values = utils.parse_range(args.z, '--z')
    r_fractions = np.linspace(0.0, 1.0, args.r) if args.r > 1 else np.zeros(1)
    df = oracle.field_grid(gmm, z_values, r_fractions, t_values, u_fn=u_fn,
                           h=args.h)
    df.to_csv(args.out, index=False, float_format='%.17g', lineterminator='\n')
    if args.chart is not None:
        value = 'net_u_0' if u_fn is not None else 'u_0'
        api.render_field(df, value=value, save_path=args.chart)
    print_flagged("exported", blocks=len(t_values), rows=len(df), out=args.out)
    return EXIT_OK


def make_parser():
    parser = _Parser(prog='meanflow',
                     description="One-step generative modeling with average velocities.")
    subparsers = parser.add_subparsers(dest='command', parser_class=_Parser)
    subparsers.required = True

    p = subparsers.add_parser('train', help="train a network from a run config")
    p.add_argument('--config', required=True)
    p.add_argument('--seed', type=int, default=None,
                   help="overrides [training] seed")
    p.add_argument('--out', required=True, help="run directory")
    p.add_argument('--quiet', action='store_true')
    p.set_defaults(func=cmd_train)

    p = subparsers.add_parser('sample', help="draw samples from a checkpoint")
    p.add_argument('--ckpt', required=True)
    p.add_argument('--n', type=int, default=1000)
    p.add_argument('--steps', type=int, default=1)
    p.add_argument('--class', dest='class_id', type=int, default=None)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--live', action='store_true', help="use live, not EMA, weights")
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_sample)

    p = subparsers.add_parser('verify', help="oracle identity and consistency checks")
    p.add_argument('--ckpt', default=None)
    p.add_argument('--data', default=None,
                   help="gaussian:mean=..,var=.. | point:x0=.. | ring:k=..,radius=..,var=..")
    p.add_argument('--grid', default='z=-2:3:10,r=10,t=0.1:1:10')
    p.add_argument('--tol', type=float, default=1e-4)
    p.add_argument('--additivity-tol', type=float, default=1e-6)
    p.add_argument('--jvp-tangent', default='1,0,1',
                   help="coefficients of (v, r, t) in the derivative direction")
    p.add_argument('--h', type=float, default=oracle.DEFAULT_STEP,
                   help="integration step")
    p.add_argument('--fd-step', type=float, default=1e-4)
    p.add_argument('--live', action='store_true')
    p.add_argument('--out', default=None)
    p.set_defaults(func=cmd_verify)

    p = subparsers.add_parser('eval', help="sample-quality report")
    p.add_argument('--ckpt', required=True)
    p.add_argument('--data', default=None,
                   help="reference data; defaults to the checkpoint's [data]")
    p.add_argument('--metric', choices=['mmd', 'w1', 'moments'], default=None,
                   help="defaults to the checkpoint's [eval] metric")
    p.add_argument('--n', type=int, default=None)
    p.add_argument('--steps', type=int, default=None)
    p.add_argument('--baseline', default=None,
                   help="Flow Matching checkpoint (trained with ratio_r_neq_t = 0)")
    p.add_argument('--baseline-steps', type=int, default=100)
    p.add_argument('--bandwidth', default=None)
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--live', action='store_true')
    p.add_argument('--out', default=None)
    p.set_defaults(func=cmd_eval)

    p = subparsers.add_parser('export-field', help="u over a (z, r) lattice per t")
    p.add_argument('--ckpt', default=None)
    p.add_argument('--data', default=None)
    p.add_argument('--t', required=True, help="comma-separated times")
    p.add_argument('--z', default='-3:3:25',
                   help="lo:hi:n; write --z=-1:1:5 when lo is negative")
    p.add_argument('--r', type=int, default=11, help="r fractions of t in [0, 1]")
    p.add_argument('--h', type=float, default=oracle.DEFAULT_STEP)
    p.add_argument('--live', action='store_true')
    p.add_argument('--chart', default=None, help="optional .html heatmap")
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_export_field)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except errors.ConfigError as e:
        print(f"{FLAG} config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except errors.DivergenceError as e:
        print(f"{FLAG} {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except errors.VerificationError as e:
        print(f"{FLAG} {e}", file=sys.stderr)
        return EXIT_VERIFY
    except (ValueError, OSError) as e:
        print(f"{FLAG} error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
