# Command implementations behind the CLI subcommands
from .analysis import cmd_evaluate, cmd_mcdropout
from .common import RunContext
from .dataset import cmd_split
from .extract import cmd_extract, cmd_synth
from .training import cmd_finetune, cmd_gridsearch, cmd_pretrain, cmd_train

__all__ = [
    "RunContext",
    "cmd_evaluate",
    "cmd_extract",
    "cmd_finetune",
    "cmd_gridsearch",
    "cmd_mcdropout",
    "cmd_pretrain",
    "cmd_split",
    "cmd_synth",
    "cmd_train",
]
