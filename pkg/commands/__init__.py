from commands.ablate import cmd_ablate
from commands.count import cmd_count
from commands.evaluate import cmd_eval
from commands.export_features import cmd_export_features
from commands.gradcheck import cmd_gradcheck
from commands.train import cmd_train

__all__ = ["cmd_ablate", "cmd_count", "cmd_eval", "cmd_export_features", "cmd_gradcheck", "cmd_train"]
