import argparse
import logging

from tandist.commands.subcommand import ExperimentCommand, Subcommand
from tandist.experiments import run_classification

logger = logging.getLogger(__name__)


@Subcommand.register(
    name="classify",
    description="two-class synthetic classification: misclassification rate and likeliness per filter radius",
)
class ClassifyCommand(ExperimentCommand):
    def run(self, args: argparse.Namespace) -> None:
        config = self.load_config(args)
        rates, report = run_classification(config)
        preamble = config.preamble()
        path = rates.save_csv(config.out_dir / "classify.csv", preamble)
        logger.info("Wrote %d rows to %s", len(rates), path)
        if config.classify.report is not None:
            report_path = report.save_csv(config.out_dir / config.classify.report, preamble)
            logger.info("Wrote %d rows to %s", len(report), report_path)
        rates.show()
        print(path)
