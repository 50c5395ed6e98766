from .base import Argument as Argument
from .base import Command as Command
from .base import Option as Option
from .base import Parser as Parser
