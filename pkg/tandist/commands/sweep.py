import argparse
import logging

from tandist.commands.subcommand import ExperimentCommand, Subcommand
from tandist.experiments import run_sweep

logger = logging.getLogger(__name__)


@Subcommand.register(
    name="sweep",
    description="one-step registration error and its bound along the filter-radius or noise axis",
)
class SweepCommand(ExperimentCommand):
    def setup(self) -> None:
        super().setup()
        self.parser.add_argument(
            "axis",
            choices=["rho", "nu"],
            help="sweep over the configured filter radii or noise levels",
        )

    def run(self, args: argparse.Namespace) -> None:
        config = self.load_config(args)
        table = run_sweep(config, args.axis)
        path = table.save_csv(config.out_dir / f"sweep_{args.axis}.csv", config.preamble())
        logger.info("Wrote %d rows to %s", len(table), path)
        table.show()
        print(path)
