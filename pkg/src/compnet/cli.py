"""Command line: train, eval, gradcheck, bench, prune, viz, synth."""

import os
import sys

import click
from threadpoolctl import threadpool_limits

from . import bench as bench_mod
from . import data as data_mod
from . import gradcheck as gradcheck_mod
from . import optim
from .config import ConfigError, load_config
from .model_io import ModelFormatError, load_model, save_model
from .prune import PruneReport, prune_bank
from .tensor import ShapeError
from .viz import emit_image, feature_images

_USER_ERRORS = (
    ConfigError,
    data_mod.DataError,
    ModelFormatError,
    ShapeError,
    ValueError,
    OSError,
)


def _load_data(data_dir):
    """A data dir is either CIFAR-10 binary batches or train/ + test/
    subdirectories of PGM images with labels.csv indexes."""
    if os.path.isfile(os.path.join(data_dir, data_mod.CIFAR_TRAIN_FILES[0])):
        return data_mod.load_cifar10(data_dir)
    if os.path.isfile(os.path.join(data_dir, "train", "labels.csv")):
        train = data_mod.load_pgm_dataset(os.path.join(data_dir, "train"))
        test = data_mod.load_pgm_dataset(
            os.path.join(data_dir, "test"), class_count=train.class_count
        )
        return data_mod.normalize_pair(train, test)
    raise data_mod.DataError(
        f"{data_dir} holds neither CIFAR-10 batches "
        f"({data_mod.CIFAR_TRAIN_FILES[0]} ...) nor PGM datasets "
        f"(train/labels.csv, test/labels.csv)"
    )


def _int_list(text):
    try:
        values = tuple(int(p) for p in text.split(",") if p.strip())
    except ValueError:
        raise click.BadParameter(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise click.BadParameter("list is empty")
    return values


@click.group()
def main():
    """Convolutional networks whose filters are mixtures of 2-d Gaussians."""


@main.command()
@click.option("--config", "config_src", required=True,
              help="Preset name or config file path.")
@click.option("--data-dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Model file to write; history CSV lands next to it.")
@click.option("--iterations", default=5000, show_default=True)
@click.option("--batch-size", default=100, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--eval-interval", default=100, show_default=True)
@click.option("--deterministic", is_flag=True,
              help="Pin math libraries to one thread so repeated runs are "
                   "bit-identical.")
def train(config_src, data_dir, out, iterations, batch_size, seed,
          eval_interval, deterministic):
    """Train a model; write the model file and an iteration history CSV."""
    try:
        cfg = load_config(config_src)
        train_ds, test_ds = _load_data(data_dir)
        net = cfg.build(train_ds.images.shape[1:], seed=seed)
        tcfg = optim.TrainConfig(batch_size=batch_size, iterations=iterations,
                                 seed=seed, eval_interval=eval_interval)
        with threadpool_limits(limits=1 if deterministic else None):
            history = optim.train(net, train_ds.images, train_ds.labels, tcfg,
                                  test_ds.images, test_ds.labels)
        save_model(out, net, cfg, seed, iterations)
        optim.write_history_csv(history, out + ".history.csv")
    except _USER_ERRORS as e:
        raise click.ClickException(str(e))
    click.echo(f"model: {out}")
    click.echo(f"history: {out}.history.csv")
    click.echo(f"final test accuracy: {history[-1].test_accuracy:.4f}")


@main.command("eval")
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--data-dir", required=True,
              type=click.Path(exists=True, file_okay=False))
def eval_cmd(model_path, data_dir):
    """Print a stored model's loss and accuracy on the test split."""
    try:
        net, _, _, _ = load_model(model_path)
        _, test_ds = _load_data(data_dir)
        loss, acc = optim.evaluate(net, test_ds.images, test_ds.labels)
    except _USER_ERRORS as e:
        raise click.ClickException(str(e))
    click.echo(f"test loss: {loss:.6f}")
    click.echo(f"test accuracy: {acc:.4f}")


@main.command()
@click.option("--cases", default=50, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--perturb-scale", default=0.0, show_default=True,
              help="Corrupt analytic gradients by this relative amount "
                   "(negative control: any nonzero value must fail).")
def gradcheck(cases, seed, perturb_scale):
    """Check analytic gradients against finite differences."""
    report = gradcheck_mod.run_suite(cases=cases, seed=seed,
                                     perturb_scale=perturb_scale)
    click.echo(report.text())
    if not report.ok:
        sys.exit(1)


@main.command()
@click.option("--kernels", default="5,9,11,15", show_default=True,
              help="Comma-separated square kernel sizes (each >= 4).")
@click.option("--components", default="2,3,4,5", show_default=True,
              help="Comma-separated component counts per filter slice.")
@click.option("--repeats", default=7, show_default=True)
@click.option("--map-size", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", default=None, type=click.Path(dir_okay=False),
              help="Write a results CSV here.")
def bench(kernels, components, repeats, map_size, seed, out):
    """Time direct vs separable convolution on one core."""
    try:
        rows = bench_mod.run_benchmark(
            kernels=_int_list(kernels), components=_int_list(components),
            repeats=repeats, map_size=map_size, seed=seed,
        )
    except _USER_ERRORS as e:
        raise click.ClickException(str(e))
    click.echo(bench_mod.format_rows(rows))
    if out:
        bench_mod.write_bench_csv(rows, out)
        click.echo(f"csv: {out}")


@main.command()
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--merge-tau", default=0.5, show_default=True,
              help="Merge components whose means sit within "
                   "tau * max(sigma_i, sigma_j).")
@click.option("--prune-fraction", default=0.02, show_default=True,
              help="Discard components under this fraction of the layer's "
                   "largest |weight|.")
@click.option("--data-dir", default=None,
              type=click.Path(exists=True, file_okay=False),
              help="When given, also report test loss before and after.")
@click.option("--report", "report_path", default=None,
              type=click.Path(dir_okay=False), help="Write a report CSV here.")
def prune(model_path, out, merge_tau, prune_fraction, data_dir, report_path):
    """Merge overlapping components, drop tiny ones, write the smaller model."""
    try:
        net, cfg, seed, iterations = load_model(model_path)
        test_ds = _load_data(data_dir)[1] if data_dir else None
        if test_ds is not None:
            loss_before, _ = optim.evaluate(net, test_ds.images, test_ds.labels)
        per_layer = []
        for li, layer in enumerate(net.comp_layers(), start=1):
            layer.bank, rep = prune_bank(layer.bank, tau=merge_tau,
                                         fraction=prune_fraction)
            per_layer.append((li, rep))
        if not per_layer:
            raise click.ClickException("model has no compositional layers")
        total = PruneReport(
            components_before=sum(r.components_before for _, r in per_layer),
            merged=sum(r.merged for _, r in per_layer),
            discarded=sum(r.discarded for _, r in per_layer),
            components_after=sum(r.components_after for _, r in per_layer),
        )
        if test_ds is not None:
            loss_after, acc_after = optim.evaluate(net, test_ds.images,
                                                   test_ds.labels)
            total.loss_before, total.loss_after = loss_before, loss_after
        save_model(out, net, cfg, seed, iterations)
    except _USER_ERRORS as e:
        raise click.ClickException(str(e))
    for li, rep in per_layer:
        click.echo(f"layer {li}:")
        click.echo("  " + rep.text().replace("\n", "\n  "))
    click.echo("total:")
    click.echo("  " + total.text().replace("\n", "\n  "))
    if test_ds is not None:
        click.echo(f"test accuracy after: {acc_after:.4f}")
    if report_path:
        header = ("layer,components_before,merged,discarded,components_after,"
                  "loss_before,loss_after\n")
        with open(report_path, "w") as fh:
            fh.write(header)
            for li, rep in per_layer:
                fh.write(f"{li},{rep.csv_row()}\n")
            fh.write(f"total,{total.csv_row()}\n")
        click.echo(f"report: {report_path}")
    click.echo(f"model: {out}")


@main.command()
@click.option("--model", "model_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--layer", default=1, show_default=True,
              help="1-based index among the compositional conv layers.")
@click.option("--feature", default=None, type=int,
              help="Feature index; all features when omitted.")
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False))
def viz(model_path, layer, feature, out_dir):
    """Back-project features to pixel space; write blob and boundary PGMs."""
    try:
        net, _, _, _ = load_model(model_path)
        chain = net.comp_layers()
        if not 1 <= layer <= len(chain):
            raise IndexError(f"layer must be in [1, {len(chain)}], got {layer}")
        features = range(chain[layer - 1].bank.f) if feature is None else [feature]
        os.makedirs(out_dir, exist_ok=True)
        for fi in features:
            blobs, boundary, _ = feature_images(net, layer, fi)
            stem = os.path.join(out_dir, f"layer{layer}_feature{fi}")
            emit_image(blobs, stem + "_blobs.pgm")
            emit_image(boundary, stem + "_boundary.pgm")
    except _USER_ERRORS + (IndexError,) as e:
        raise click.ClickException(str(e))
    click.echo(f"wrote {2 * len(list(features))} images to {out_dir}")


@main.command()
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False))
@click.option("--train-count", default=400, show_default=True)
@click.option("--test-count", default=100, show_default=True)
@click.option("--classes", default=4, show_default=True)
@click.option("--dims", default="32x32", show_default=True,
              help="Image size as WIDTHxHEIGHT.")
@click.option("--seed", default=0, show_default=True)
def synth(out_dir, train_count, test_count, classes, dims, seed):
    """Generate a synthetic shape dataset usable as --data-dir."""
    try:
        parts = dims.lower().split("x")
        if len(parts) != 2:
            raise ValueError(f"dims must look like 32x32, got {dims!r}")
        size = (int(parts[0]), int(parts[1]))
        train = data_mod.synth_shapes(seed, train_count, classes, dims=size)
        test = data_mod.synth_shapes(seed + 1, test_count, classes, dims=size)
        data_mod.export_pgm_dataset(train, os.path.join(out_dir, "train"))
        data_mod.export_pgm_dataset(test, os.path.join(out_dir, "test"))
    except _USER_ERRORS as e:
        raise click.ClickException(str(e))
    click.echo(f"wrote {train_count}+{test_count} images under {out_dir}")
