import argparse

from tandist.commands.subcommand import ExperimentCommand, Subcommand
from tandist.experiments import schedule_table


@Subcommand.register(
    name="schedule",
    description="print the filter radius of every level of the configured schedule",
)
class ScheduleCommand(ExperimentCommand):
    def run(self, args: argparse.Namespace) -> None:
        config = self.load_config(args)
        schedule_table(config).show()
