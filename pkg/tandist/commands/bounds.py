import argparse
import logging

from tandist.commands.subcommand import ExperimentCommand, Subcommand
from tandist.experiments import geometry_report

logger = logging.getLogger(__name__)


@Subcommand.register(
    name="bounds",
    description="print geometric constants, decay factor and convergence conditions of the configured pattern",
)
class BoundsCommand(ExperimentCommand):
    def run(self, args: argparse.Namespace) -> None:
        config = self.load_config(args)
        table = geometry_report(config)
        path = table.save_csv(config.out_dir / "bounds.csv", config.preamble())
        logger.info("Wrote %d rows to %s", len(table), path)
        table.show()
