from rich.console import Console
from rich.theme import Theme

theme = Theme({
    'error': 'bold red',
    'flagged': 'yellow',
    'simulating': 'cyan',
    'success': 'bold green',
    'warning': 'yellow',
    # Overridden defaults
    'progress.elapsed': 'none',
    'progress.percentage': 'none',
    'progress.remaining': 'none',
    'rule.line': 'none'
})

console = Console(theme=theme, highlight=False, stderr=True)
