from blinker import Namespace

_signals = Namespace()

simulation_warning = _signals.signal('simulation-warning')
point_flagged = _signals.signal('point-flagged')
