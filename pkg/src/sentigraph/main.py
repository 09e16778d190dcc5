import logging
import sys

import click

from .commands import register_pipeline_commands


@click.group(name="sentigraph", invoke_without_command=True)
@click.option("-v", "--version", "version", is_flag=True, help="Get version of package.")
@click.option("--verbose", "verbose", is_flag=True, help="Log debug messages.")
@click.option("-q", "--quiet", "quiet", is_flag=True, help="Only log warnings and errors.")
@click.pass_context
def run_app(ctx: click.Context, version: bool = False, verbose: bool = False, quiet: bool = False):
    """Graph-guided sentiment pretraining pipeline "sentigraph".

    Mine aspect/sentiment terms and pairs from a review corpus, build a semantic
    graph of synonyms and pairs, pretrain a small encoder on it and fine-tune it
    on sentiment tasks.

    Configuration options:
    - Config file: Set via "-c/--config" on any subcommand or SENTIGRAPH_CONFIG environment variable
    - Output directory: Set via "-o/--output-dir" or SENTIGRAPH_OUTPUT_DIR environment variable
    - Single settings: "--set key=value", repeatable; these win over the config file
    """
    if version is True:
        from sentigraph import __version__

        click.echo(__version__)
        sys.exit(0)

    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)

    if ctx.invoked_subcommand is None:
        click.echo(ctx.get_help())


register_pipeline_commands(run_app)


if __name__ == "__main__":
    run_app()
